//! Loop-invariant detection, twice: the dependence-graph recursion that walks
//! data dependence sources transitively (finding whole invariant chains), and
//! the operand/alias transliteration of the classic low-level approach, kept
//! as the comparison baseline.

use super::LoopStructure;
use crate::alias::{access_address, ModRefSummaries, PointsToResult};
use crate::ir::*;
use crate::pdg::{DepClass, DependenceGraph};
use std::collections::{BTreeSet, HashSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantSet {
    pub loop_id: LoopId,
    pub members: BTreeSet<InstrId>,
}

fn never_invariant(ins: &Instruction, idx: &ModuleIndex, l: &LoopStructure) -> bool {
    // header phis encode iteration state; terminators encode control
    if ins.op.is_terminator() {
        return true;
    }
    if ins.op == Opcode::Phi && idx.block_of_instr(ins.id) == l.header {
        return true;
    }
    false
}

/// Dependence-graph invariance: an instruction is invariant when every data
/// dependence source (register and memory) is outside the loop or itself
/// invariant. Cycles are broken by the visiting stack: an instruction
/// re-encountered while on the stack answers false for that path.
pub fn is_invariant(m: &ModuleIR, i: InstrId, l: &LoopStructure, ldg: &DependenceGraph) -> bool {
    let idx = ModuleIndex::new(m);
    let mut stack = Vec::new();
    let mut known_true = HashSet::new();
    invariant_rec(&idx, i, l, ldg, &mut stack, &mut known_true)
}

fn invariant_rec(
    idx: &ModuleIndex,
    i: InstrId,
    l: &LoopStructure,
    ldg: &DependenceGraph,
    stack: &mut Vec<InstrId>,
    known_true: &mut HashSet<InstrId>,
) -> bool {
    if known_true.contains(&i) {
        return true;
    }
    if stack.contains(&i) {
        return false;
    }
    let ins = idx.instr(i);
    if never_invariant(ins, idx, l) {
        return false;
    }
    stack.push(i);
    let mut ok = true;
    for e in ldg.edges_to(i) {
        if e.class != DepClass::Data {
            continue;
        }
        let j = e.src;
        let in_loop = idx
            .try_home(j)
            .map(|_| idx.func_of_instr(j).id == l.func && l.blocks.contains(&idx.block_of_instr(j)))
            .unwrap_or(false);
        if in_loop && !invariant_rec(idx, j, l, ldg, stack, known_true) {
            ok = false;
            break;
        }
    }
    stack.pop();
    if ok {
        known_true.insert(i);
    }
    ok
}

/// All invariant instructions of a loop (header phis and terminators are
/// excluded by construction).
pub fn invariants_of_loop(m: &ModuleIR, l: &LoopStructure, ldg: &DependenceGraph) -> InvariantSet {
    let idx = ModuleIndex::new(m);
    let f = &m.functions[l.func.0 as usize];
    let mut known_true = HashSet::new();
    let mut members = BTreeSet::new();
    for b in &f.blocks {
        if !l.blocks.contains(&b.id) {
            continue;
        }
        for ins in &b.instrs {
            let mut stack = Vec::new();
            if invariant_rec(&idx, ins.id, l, ldg, &mut stack, &mut known_true) {
                members.insert(ins.id);
            }
        }
    }
    InvariantSet { loop_id: l.id, members }
}

/// Faithful transliteration of the operand/alias baseline:
///  - any operand defined inside the loop disqualifies;
///  - a load is disqualified by any in-loop instruction that may modify its
///    location;
///  - a store must dominate every in-loop memory use, and its nearest
///    dominating aliasing access must be outside the loop;
///  - a call must modify nothing, read only through its pointer arguments,
///    and no sub-loop instruction may touch what those arguments reach.
pub fn naive_is_invariant(
    m: &ModuleIR,
    i: InstrId,
    l: &LoopStructure,
    dom: &DominatorInfo,
    pts: &PointsToResult,
    modref: &ModRefSummaries,
) -> bool {
    let idx = ModuleIndex::new(m);
    let ins = idx.instr(i);
    if never_invariant(ins, &idx, l) {
        return false;
    }
    let f = &m.functions[l.func.0 as usize];
    let in_loop = |id: InstrId| -> bool {
        idx.func_of_instr(id).id == l.func && l.blocks.contains(&idx.block_of_instr(id))
    };
    let dominates_instr = |a: InstrId, b: InstrId| -> bool {
        let (fa, ba, pa) = idx.home(a);
        let (fb, bb, pb) = idx.home(b);
        if fa != fb {
            return false;
        }
        if ba == bb {
            return pa < pb;
        }
        dom.dominates(m.functions[fa].blocks[ba].id, m.functions[fb].blocks[bb].id)
    };

    // operands defined inside the loop
    for u in ins.uses() {
        if let Some(DefSite::Instr { id, .. }) = f.def_site(u) {
            if in_loop(id) {
                return false;
            }
        }
    }

    let loop_instrs: Vec<&Instruction> = f
        .blocks
        .iter()
        .filter(|b| l.blocks.contains(&b.id))
        .flat_map(|b| b.instrs.iter())
        .collect();

    match ins.op {
        Opcode::Load => {
            let my_objs = pts.objects_of(f.id, access_address(ins).unwrap());
            for j in &loop_instrs {
                let mods = match j.op {
                    Opcode::Store => pts.objects_of(f.id, access_address(j).unwrap()),
                    Opcode::Call | Opcode::Icall => modref.call_objects(m, pts, j, f.id).0,
                    _ => continue,
                };
                if !mods.is_disjoint(&my_objs) {
                    return false;
                }
            }
        }
        Opcode::Store => {
            // conservatively require the store to dominate every in-loop
            // memory use
            for j in &loop_instrs {
                let is_use = match j.op {
                    Opcode::Load => true,
                    Opcode::Call | Opcode::Icall => {
                        !modref.call_objects(m, pts, j, f.id).1.is_empty()
                    }
                    _ => false,
                };
                if is_use && !dominates_instr(i, j.id) {
                    return false;
                }
            }
            // nearest dominating aliasing access must not be in the loop
            if let Some(nearest) = nearest_dominating_memory_access(m, &idx, dom, pts, modref, i) {
                if in_loop(nearest) {
                    return false;
                }
            }
        }
        Opcode::Call | Opcode::Icall => {
            let (mods, refs) = modref.call_objects(m, pts, ins, f.id);
            if !mods.is_empty() {
                return false;
            }
            // only memory accesses through pointer arguments are tolerated
            let mut arg_objs = BTreeSet::new();
            for a in &ins.operands[1..] {
                arg_objs.extend(pts.objects_of(f.id, a));
            }
            if !refs.is_subset(&arg_objs) {
                return false;
            }
            // sub-loop instructions must not touch argument memory
            for sub in sub_loops_blocks(l, m) {
                for b in &f.blocks {
                    if !sub.contains(&b.id) {
                        continue;
                    }
                    for j in &b.instrs {
                        let touched: BTreeSet<_> = match j.op {
                            Opcode::Load | Opcode::Store => {
                                pts.objects_of(f.id, access_address(j).unwrap())
                            }
                            Opcode::Call | Opcode::Icall => {
                                let (jm, jr) = modref.call_objects(m, pts, j, f.id);
                                jm.union(&jr).copied().collect()
                            }
                            _ => continue,
                        };
                        if !touched.is_disjoint(&arg_objs) {
                            return false;
                        }
                    }
                }
            }
        }
        _ => {}
    }
    true
}

/// Block sets of loops strictly nested inside `l`.
fn sub_loops_blocks(l: &LoopStructure, m: &ModuleIR) -> Vec<BTreeSet<BlockId>> {
    let f = &m.functions[l.func.0 as usize];
    let dom = compute_dominators(f, Direction::Forward);
    match super::detect_loops(f, &dom) {
        Ok(loops) => loops
            .into_iter()
            .filter(|s| s.header != l.header && s.blocks.is_subset(&l.blocks))
            .map(|s| s.blocks)
            .collect(),
        Err(_) => Vec::new(),
    }
}

/// Walk dominators upward from `i` to the nearest memory access that may
/// alias its location.
fn nearest_dominating_memory_access(
    m: &ModuleIR,
    idx: &ModuleIndex,
    dom: &DominatorInfo,
    pts: &PointsToResult,
    modref: &ModRefSummaries,
    i: InstrId,
) -> Option<InstrId> {
    let (fi, bi, pos) = idx.home(i);
    let f = &m.functions[fi];
    let ins = idx.instr(i);
    let my_objs = pts.objects_of(f.id, access_address(ins)?);
    let aliases = |j: &Instruction| -> bool {
        match j.op {
            Opcode::Load | Opcode::Store => {
                !pts.objects_of(f.id, access_address(j).unwrap()).is_disjoint(&my_objs)
            }
            Opcode::Call | Opcode::Icall => {
                let (jm, jr) = modref.call_objects(m, pts, j, f.id);
                !jm.is_disjoint(&my_objs) || !jr.is_disjoint(&my_objs)
            }
            _ => false,
        }
    };
    // same block, earlier positions, then up the dominator tree
    let mut cur_block = bi;
    let mut limit = pos;
    loop {
        let b = &f.blocks[cur_block];
        for j in b.instrs[..limit].iter().rev() {
            if aliases(j) {
                return Some(j.id);
            }
        }
        let up = dom.idom.get(&b.id)?;
        cur_block = f.blocks.iter().position(|x| x.id == *up).unwrap();
        limit = f.blocks[cur_block].instrs.len();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alias::compute_points_to;
    use crate::callgraph::build_call_graph;
    use crate::ir::parse_module;
    use crate::loops::LoopAnalysis;
    use crate::pdg::{build_pdg, loop_dg_raw};

    const CHAIN: &str = "\
func @main(%out1: i64) -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %cnd = slt %i, 8
  brcond %cnd, body, done
body:
  %a = add %out1, 5
  %b = mul %a, 3
  %c = sub %b, 1
  %i2 = add %i, 1
  br header
done:
  ret 0
}";

    fn setup(src: &str) -> (ModuleIR, LoopAnalysis, DependenceGraph) {
        let m = parse_module(src).unwrap();
        assert!(verify_module(&m).is_empty());
        let la = LoopAnalysis::of_module(&m);
        let pts = compute_points_to(&m);
        let cg = build_call_graph(&m, &pts);
        let pdg = build_pdg(&m, &pts, &cg);
        let ldg = loop_dg_raw(&pdg, &m, &la.loops[0]);
        (m, la, ldg)
    }

    #[test]
    fn transitive_chain_found_by_pdg_algorithm_only() {
        let (m, la, ldg) = setup(CHAIN);
        let l = &la.loops[0];
        let f = &m.functions[0];
        let by_name =
            |n: &str| f.instrs().find(|i| i.result.as_deref() == Some(n)).unwrap().id;
        assert!(is_invariant(&m, by_name("a"), l, &ldg));
        assert!(is_invariant(&m, by_name("b"), l, &ldg));
        assert!(is_invariant(&m, by_name("c"), l, &ldg));
        assert!(!is_invariant(&m, by_name("i2"), l, &ldg));

        let pts = compute_points_to(&m);
        let modref = ModRefSummaries::compute(&m, &pts);
        let dom = compute_dominators(f, Direction::Forward);
        assert!(naive_is_invariant(&m, by_name("a"), l, &dom, &pts, &modref));
        assert!(!naive_is_invariant(&m, by_name("b"), l, &dom, &pts, &modref));
        assert!(!naive_is_invariant(&m, by_name("c"), l, &dom, &pts, &modref));
    }

    #[test]
    fn clobbered_load_is_not_invariant_for_either() {
        let (m, la, ldg) = setup(
            "global @g: i64[1]
func @main() -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %cnd = slt %i, 8
  brcond %cnd, body, done
body:
  %v = load @g
  %v1 = add %v, 1
  store %v1, @g
  %i2 = add %i, 1
  br header
done:
  ret 0
}",
        );
        let l = &la.loops[0];
        let f = &m.functions[0];
        let load = f.instrs().find(|i| i.op == Opcode::Load).unwrap().id;
        assert!(!is_invariant(&m, load, l, &ldg));
        let pts = compute_points_to(&m);
        let modref = ModRefSummaries::compute(&m, &pts);
        let dom = compute_dominators(f, Direction::Forward);
        assert!(!naive_is_invariant(&m, load, l, &dom, &pts, &modref));
    }

    #[test]
    fn invariant_load_from_unwritten_global() {
        let (m, la, ldg) = setup(
            "global @g: i64[1] = [42]
func @main() -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %cnd = slt %i, 8
  brcond %cnd, body, done
body:
  %v = load @g
  %i2 = add %i, 1
  br header
done:
  ret 0
}",
        );
        let l = &la.loops[0];
        let f = &m.functions[0];
        let load = f.instrs().find(|i| i.op == Opcode::Load).unwrap().id;
        assert!(is_invariant(&m, load, l, &ldg));
        let inv = invariants_of_loop(&m, l, &ldg);
        assert!(inv.members.contains(&load));
    }
}
