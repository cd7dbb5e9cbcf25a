//! Client transformations: dependence-checked instruction scheduling,
//! loop-invariant code motion over the nesting forest, and dead-function
//! elimination over the complete call graph.

use crate::alias::{compute_points_to, ModRefSummaries};
use crate::callgraph::{address_taken, build_call_graph, reachable_functions};
use crate::ir::*;
use crate::loops::{
    build_forest, hoist_to_preheader, LoopAnalysis, LoopContext,
};
use crate::pdg::{build_pdg, DependenceGraph};
use std::collections::BTreeSet;
use std::fmt;

/// A position to move an instruction to: before a specific instruction, or
/// at the end of a block just before its terminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MovePoint {
    Before(InstrId),
    BlockEndBeforeTerminator(BlockId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MoveError {
    Illegal(String),
    Unknown(String),
}

impl fmt::Display for MoveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MoveError::Illegal(w) => write!(f, "illegal move: {}", w),
            MoveError::Unknown(w) => write!(f, "unknown entity: {}", w),
        }
    }
}

impl std::error::Error for MoveError {}

fn resolve_point(m: &ModuleIR, idx: &ModuleIndex, p: MovePoint) -> Option<(usize, usize, usize)> {
    match p {
        MovePoint::Before(i) => idx.try_home(i),
        MovePoint::BlockEndBeforeTerminator(b) => {
            let (fi, bi) = idx.block_home(b);
            let n = m.functions[fi].blocks[bi].instrs.len();
            Some((fi, bi, n - 1))
        }
    }
}

/// Dependence-checked legality of moving `i` to point `p`.
///
/// Same-block moves are positional: no dependence edge into or out of `i` may
/// connect it to an instruction inside the crossed span. Cross-block moves
/// are restricted to control-equivalent blocks (mutual dom/post-dom) in the
/// same loop; every dependence source must dominate the new point and no
/// dependence may connect `i` to the crossed region.
pub fn can_move_before(m: &ModuleIR, pdg: &DependenceGraph, i: InstrId, p: MovePoint) -> bool {
    let idx = ModuleIndex::new(m);
    let Some((fi, bi, pos)) = idx.try_home(i) else { return false };
    let Some((tfi, tbi, tpos)) = resolve_point(m, &idx, p) else { return false };
    if fi != tfi {
        return false;
    }
    let f = &m.functions[fi];
    let ins = &f.blocks[bi].instrs[pos];
    if ins.op.is_terminator() || ins.op == Opcode::Phi {
        return false;
    }
    // output order is not a dependence edge; effectful-on-output
    // instructions (and calls, which may print) stay where they are
    if matches!(ins.op, Opcode::Print | Opcode::Call | Opcode::Icall) {
        return false;
    }
    // phis must stay a prefix of their block
    if f.blocks[tbi].instrs.get(tpos).map(|x| x.op == Opcode::Phi).unwrap_or(false) {
        return false;
    }
    let connected = |a: InstrId, b: InstrId| -> bool {
        pdg.edges_from(a).any(|e| e.dst == b) || pdg.edges_to(a).any(|e| e.src == b)
    };

    if bi == tbi {
        if tpos == pos || tpos == pos + 1 {
            return true; // no-op move
        }
        let span: Vec<&Instruction> = if tpos < pos {
            f.blocks[bi].instrs[tpos..pos].iter().collect()
        } else {
            f.blocks[bi].instrs[pos + 1..tpos].iter().collect()
        };
        return span.iter().all(|j| !connected(i, j.id));
    }

    // cross-block: control-equivalent, same innermost loop
    let dom = compute_dominators(f, Direction::Forward);
    let pdom = compute_dominators(f, Direction::Post);
    let b_id = f.blocks[bi].id;
    let t_id = f.blocks[tbi].id;
    let hoist = dom.dominates(t_id, b_id) && pdom.dominates(b_id, t_id);
    let sink = dom.dominates(b_id, t_id) && pdom.dominates(t_id, b_id);
    if !hoist && !sink {
        return false;
    }
    let la = LoopAnalysis::of_module(m);
    let loop_of = |b: BlockId| la.innermost_of_block(f.id, b).map(|l| l.id);
    if loop_of(b_id) != loop_of(t_id) {
        return false;
    }
    // crossed region: instructions on paths between the two points
    let cfg = Cfg::of(f);
    let reach = cfg.reach_closure();
    let (from_bi, to_bi) = if hoist { (tbi, bi) } else { (bi, tbi) };
    let mut crossed: Vec<InstrId> = Vec::new();
    for (xi, xb) in f.blocks.iter().enumerate() {
        let between = (reach[from_bi][xi] || xi == from_bi) && (reach[xi][to_bi] || xi == to_bi);
        if !between {
            continue;
        }
        for (k, j) in xb.instrs.iter().enumerate() {
            let inside = if xi == from_bi {
                let split = if hoist { tpos } else { pos + 1 };
                k >= split
            } else if xi == to_bi {
                let split = if hoist { pos } else { tpos };
                k < split
            } else {
                true
            };
            if inside && j.id != i {
                crossed.push(j.id);
            }
        }
    }
    if crossed.iter().any(|j| connected(i, *j)) {
        return false;
    }
    // SSA: sources must dominate the new point (hoist may outrun a def)
    if hoist {
        for e in pdg.edges_to(i) {
            let Some((sfi, sbi, spos)) = idx.try_home(e.src) else { continue };
            if sfi != fi {
                continue;
            }
            let ok = if sbi == tbi {
                spos < tpos
            } else {
                dom.dominates(f.blocks[sbi].id, t_id)
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

/// Apply a legality-checked move; the returned module re-verifies.
pub fn move_before(m: &ModuleIR, pdg: &DependenceGraph, i: InstrId, p: MovePoint) -> Result<ModuleIR, MoveError> {
    if !can_move_before(m, pdg, i, p) {
        return Err(MoveError::Illegal(format!("instr #{} cannot move there", i.0)));
    }
    let idx = ModuleIndex::new(m);
    let (fi, bi, pos) = idx.try_home(i).ok_or(MoveError::Unknown(format!("instr #{}", i.0)))?;
    let (_, tbi, mut tpos) =
        resolve_point(m, &idx, p).ok_or(MoveError::Unknown("move point".to_string()))?;
    let mut m2 = m.clone();
    let f = &mut m2.functions[fi];
    let ins = f.blocks[bi].instrs.remove(pos);
    if bi == tbi && pos < tpos {
        tpos -= 1;
    }
    f.blocks[tbi].instrs.insert(tpos, ins);
    assign_ids(&mut m2);
    let diags = verify_module(&m2);
    if !diags.is_empty() {
        return Err(MoveError::Illegal(format!("verification failed: {}", diags[0])));
    }
    Ok(m2)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LicmReport {
    /// (function name, loop ordinal at the time of the hoist, instructions hoisted)
    pub hoists: Vec<(String, u32, usize)>,
}

impl LicmReport {
    pub fn total(&self) -> usize {
        self.hoists.iter().map(|(_, _, n)| n).sum()
    }
}

/// Loop-invariant code motion: loops are visited innermost first through the
/// nesting forest; each loop is hoisted to a fixpoint before moving outward,
/// and analyses are recomputed after every change (hoisting may expose new
/// invariants in enclosing loops).
pub fn licm(m: &ModuleIR) -> (ModuleIR, LicmReport) {
    licm_gated(m, &|_| true)
}

/// LICM over the loops accepted by the gate (hotness thresholds).
pub fn licm_gated(m: &ModuleIR, gate: &dyn Fn(&LoopContext) -> bool) -> (ModuleIR, LicmReport) {
    let mut cur = m.clone();
    let mut report = LicmReport::default();
    loop {
        let la = LoopAnalysis::of_module(&cur);
        let forest = build_forest(&la.loops);
        let mut changed = false;
        'sweep: for lid in forest.postorder() {
            let Some(l) = la.by_id(lid) else { continue };
            if la.irreducible.contains(&l.func) {
                continue;
            }
            let fn_name = cur.functions[l.func.0 as usize].name.clone();
            let Some(header_label) = header_label_of(&cur, l) else { continue };
            let mut hoisted_here = 0usize;
            loop {
                let la_now = LoopAnalysis::of_module(&cur);
                let Some(l_now) = find_loop_by_label(&cur, &la_now, &fn_name, &header_label)
                else {
                    break;
                };
                let pts = compute_points_to(&cur);
                let cg = build_call_graph(&cur, &pts);
                let pdg = build_pdg(&cur, &pts, &cg);
                let modref = ModRefSummaries::compute(&cur, &pts);
                let ctx = LoopContext::build(&cur, &pdg, &l_now);
                if !gate(&ctx) {
                    break;
                }
                let mut did = false;
                for i in ctx.invariants.members.iter().copied() {
                    if let Ok(next) = hoist_to_preheader(
                        &cur,
                        &l_now,
                        i,
                        &ctx.invariants.members,
                        &pts,
                        &modref,
                    ) {
                        cur = next;
                        hoisted_here += 1;
                        did = true;
                        break;
                    }
                }
                if !did {
                    break;
                }
            }
            if hoisted_here > 0 {
                report.hoists.push((fn_name, lid.0, hoisted_here));
                changed = true;
                break 'sweep; // ids shifted; restart the sweep
            }
        }
        if !changed {
            break;
        }
    }
    (cur, report)
}

/// Re-find a loop across module edits by function name and header label
/// (labels are stable under the transforms in this crate).
fn find_loop_by_label(
    m: &ModuleIR,
    la: &LoopAnalysis,
    fn_name: &str,
    header_label: &str,
) -> Option<crate::loops::LoopStructure> {
    let f = m.function(fn_name)?;
    let hb = f.blocks[f.block_index(header_label)?].id;
    la.loops.iter().find(|l| l.func == f.id && l.header == hb).cloned()
}

fn header_label_of(m: &ModuleIR, l: &crate::loops::LoopStructure) -> Option<String> {
    let f = m.functions.iter().find(|f| f.id == l.func)?;
    f.blocks.iter().find(|b| b.id == l.header).map(|b| b.label.clone())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DfeReport {
    pub removed: Vec<String>,
}

/// Remove functions unreachable from main (plus functions address-taken in
/// surviving code). Surviving instructions are untouched, so the instruction
/// count never increases. Modules without a main are left alone: in library
/// mode every function is an entry point.
pub fn dead_function_elimination(m: &ModuleIR) -> (ModuleIR, DfeReport) {
    if m.function("main").is_none() {
        return (m.clone(), DfeReport::default());
    }
    let pts = compute_points_to(m);
    let cg = build_call_graph(m, &pts);
    let mut keep: BTreeSet<FuncId> =
        reachable_functions(&cg, &[m.function("main").unwrap().id].into_iter().collect());
    // functions address-taken within kept code stay, iterated to fixpoint
    let taken = address_taken(m);
    loop {
        let mut grew = false;
        for f in &m.functions {
            if !keep.contains(&f.id) {
                continue;
            }
            for ins in f.instrs() {
                if ins.op == Opcode::Funcptr {
                    if let ValueRef::Func(n) = &ins.operands[0] {
                        if let Some(g) = m.function(n) {
                            if keep.insert(g.id) {
                                grew = true;
                            }
                            for r in reachable_functions(&cg, &[g.id].into_iter().collect()) {
                                if keep.insert(r) {
                                    grew = true;
                                }
                            }
                        }
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }
    let _ = taken;
    let mut m2 = m.clone();
    let removed: Vec<String> = m2
        .functions
        .iter()
        .filter(|f| !keep.contains(&f.id))
        .map(|f| f.name.clone())
        .collect();
    m2.functions.retain(|f| keep.contains(&f.id));
    assign_ids(&mut m2);
    (m2, DfeReport { removed })
}
