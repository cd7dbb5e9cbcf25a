//! Loop structures, the nesting forest with deletion-reattachment, invariant
//! detection, induction variables, and small loop-shape transformations.

mod builder;
mod context;
mod invariant;
mod iv;

pub use builder::{create_preheader, hoist_to_preheader, HoistError};
pub use context::{loop_report_line, LoopContext};
pub use invariant::{invariants_of_loop, is_invariant, naive_is_invariant, InvariantSet};
pub use iv::{
    detect_ivs, fresh_name, governing_iv, scale_iv_step, ComparePred, GoverningIVInfo,
    InductionVariable, StepperError,
};

use crate::ir::*;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopStructure {
    pub id: LoopId,
    pub func: FuncId,
    pub header: BlockId,
    pub preheader: Option<BlockId>,
    pub latches: BTreeSet<BlockId>,
    /// (exiting block inside the loop, exit target outside it)
    pub exits: Vec<(BlockId, BlockId)>,
    pub blocks: BTreeSet<BlockId>,
    pub parent: Option<LoopId>,
    pub depth: u32,
}

impl LoopStructure {
    pub fn contains_block(&self, b: BlockId) -> bool {
        self.blocks.contains(&b)
    }
}

/// All loops of a module, with deterministic ids: functions in order, loops
/// within a function by header ordinal.
#[derive(Debug, Clone, Default)]
pub struct LoopAnalysis {
    pub loops: Vec<LoopStructure>,
    /// Functions skipped because their CFG is irreducible.
    pub irreducible: BTreeSet<FuncId>,
}

impl LoopAnalysis {
    pub fn of_module(m: &ModuleIR) -> LoopAnalysis {
        let mut out = LoopAnalysis::default();
        for f in &m.functions {
            let dom = compute_dominators(f, Direction::Forward);
            match detect_loops_numbered(f, &dom, out.loops.len() as u32) {
                Ok(mut ls) => out.loops.append(&mut ls),
                Err(_) => {
                    out.irreducible.insert(f.id);
                }
            }
        }
        out
    }

    pub fn by_id(&self, id: LoopId) -> Option<&LoopStructure> {
        self.loops.iter().find(|l| l.id == id)
    }

    pub fn loops_of_func(&self, f: FuncId) -> impl Iterator<Item = &LoopStructure> {
        self.loops.iter().filter(move |l| l.func == f)
    }

    /// Innermost loop containing a block.
    pub fn innermost_of_block(&self, f: FuncId, b: BlockId) -> Option<&LoopStructure> {
        self.loops
            .iter()
            .filter(|l| l.func == f && l.blocks.contains(&b))
            .max_by_key(|l| l.depth)
    }

    /// All loops containing a block, outermost first.
    pub fn loops_of_block(&self, f: FuncId, b: BlockId) -> Vec<&LoopStructure> {
        let mut v: Vec<&LoopStructure> = self
            .loops
            .iter()
            .filter(|l| l.func == f && l.blocks.contains(&b))
            .collect();
        v.sort_by_key(|l| l.depth);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrreducibleCfg {
    pub func: FuncId,
}

impl std::fmt::Display for IrreducibleCfg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "irreducible control flow in function {}", self.func)
    }
}

/// Natural-loop detection from back edges; loops sharing a header are merged.
/// Fails on irreducible CFGs (a retreating edge whose target does not
/// dominate its source).
pub fn detect_loops(f: &FunctionIR, dom: &DominatorInfo) -> Result<Vec<LoopStructure>, IrreducibleCfg> {
    detect_loops_numbered(f, dom, 0)
}

fn detect_loops_numbered(
    f: &FunctionIR,
    dom: &DominatorInfo,
    first_id: u32,
) -> Result<Vec<LoopStructure>, IrreducibleCfg> {
    let cfg = Cfg::of(f);
    let n = cfg.n;
    let bid = |i: usize| f.blocks[i].id;

    // back edges: t -> h with h dominating t
    let mut back_edges: BTreeMap<usize, Vec<usize>> = BTreeMap::new(); // header -> latches
    let mut non_back = vec![Vec::new(); n];
    for b in 0..n {
        for &s in &cfg.succs[b] {
            if dom.dominates(bid(s), bid(b)) {
                back_edges.entry(s).or_default().push(b);
            } else {
                non_back[b].push(s);
            }
        }
    }
    // reducibility: removing back edges must leave the graph acyclic
    {
        let mut indeg = vec![0usize; n];
        for b in 0..n {
            for &s in &non_back[b] {
                indeg[s] += 1;
            }
        }
        let mut q: Vec<usize> = (0..n).filter(|&b| indeg[b] == 0).collect();
        let mut seen = 0;
        while let Some(b) = q.pop() {
            seen += 1;
            for &s in &non_back[b] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    q.push(s);
                }
            }
        }
        if seen != n {
            return Err(IrreducibleCfg { func: f.id });
        }
    }

    let mut loops = Vec::new();
    for (h, latches) in &back_edges {
        // loop body: reverse reachability from latches without passing header
        let mut blocks: BTreeSet<usize> = [*h].into_iter().collect();
        let mut stack: Vec<usize> = Vec::new();
        for &l in latches {
            if blocks.insert(l) {
                stack.push(l);
            }
        }
        while let Some(b) = stack.pop() {
            for &p in &cfg.preds[b] {
                if !blocks.contains(&p) {
                    blocks.insert(p);
                    stack.push(p);
                }
            }
        }
        let block_ids: BTreeSet<BlockId> = blocks.iter().map(|&b| bid(b)).collect();
        let mut exits = Vec::new();
        for &b in &blocks {
            for &s in &cfg.succs[b] {
                if !blocks.contains(&s) {
                    exits.push((bid(b), bid(s)));
                }
            }
        }
        exits.sort();
        exits.dedup();
        // preheader: unique outside predecessor of the header whose only
        // successor is the header
        let outside_preds: Vec<usize> = cfg.preds[*h]
            .iter()
            .copied()
            .filter(|p| !blocks.contains(p))
            .collect();
        let preheader = match outside_preds.as_slice() {
            [p] if cfg.succs[*p].len() == 1 => Some(bid(*p)),
            _ => None,
        };
        loops.push(LoopStructure {
            id: LoopId(0),
            func: f.id,
            header: bid(*h),
            preheader,
            latches: latches.iter().map(|&l| bid(l)).collect(),
            exits,
            blocks: block_ids,
            parent: None,
            depth: 0,
        });
    }

    // number by header ordinal, then wire parents by block-set containment
    loops.sort_by_key(|l| l.header);
    for (k, l) in loops.iter_mut().enumerate() {
        l.id = LoopId(first_id + k as u32);
    }
    let snapshot: Vec<(LoopId, BTreeSet<BlockId>)> =
        loops.iter().map(|l| (l.id, l.blocks.clone())).collect();
    for l in loops.iter_mut() {
        // parent = smallest strict superset
        let mut best: Option<(usize, LoopId)> = None;
        for (oid, oblocks) in &snapshot {
            if *oid != l.id && oblocks.is_superset(&l.blocks) && oblocks.len() > l.blocks.len() {
                if best.map(|(sz, _)| oblocks.len() < sz).unwrap_or(true) {
                    best = Some((oblocks.len(), *oid));
                }
            }
        }
        l.parent = best.map(|(_, id)| id);
    }
    // depths
    let parent_of: BTreeMap<LoopId, Option<LoopId>> =
        loops.iter().map(|l| (l.id, l.parent)).collect();
    for l in loops.iter_mut() {
        let mut d = 1;
        let mut p = l.parent;
        while let Some(pid) = p {
            d += 1;
            p = parent_of[&pid];
        }
        l.depth = d;
    }
    Ok(loops)
}

/// Containment forest over loops, adjusting on deletion: a deleted node's
/// children are reattached to its parent, preserving order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoopForest {
    pub roots: Vec<LoopId>,
    pub children: BTreeMap<LoopId, Vec<LoopId>>,
}

pub fn build_forest(loops: &[LoopStructure]) -> LoopForest {
    let mut fr = LoopForest::default();
    for l in loops {
        fr.children.entry(l.id).or_default();
    }
    for l in loops {
        match l.parent {
            Some(p) => fr.children.entry(p).or_default().push(l.id),
            None => fr.roots.push(l.id),
        }
    }
    fr
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLoop(pub LoopId);

impl std::fmt::Display for UnknownLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "loop {} is not in the forest", self.0)
    }
}

pub fn forest_delete_node(fr: &LoopForest, l: LoopId) -> Result<LoopForest, UnknownLoop> {
    if !fr.children.contains_key(&l) {
        return Err(UnknownLoop(l));
    }
    let mut out = fr.clone();
    let orphans = out.children.remove(&l).unwrap_or_default();
    let replace = |list: &mut Vec<LoopId>| {
        if let Some(pos) = list.iter().position(|&x| x == l) {
            list.splice(pos..pos + 1, orphans.iter().copied());
        }
    };
    if fr.roots.contains(&l) {
        replace(&mut out.roots);
    } else {
        for kids in out.children.values_mut() {
            replace(kids);
        }
    }
    Ok(out)
}

impl LoopForest {
    /// Loop ids in post-order (innermost before enclosing).
    pub fn postorder(&self) -> Vec<LoopId> {
        let mut out = Vec::new();
        fn go(fr: &LoopForest, l: LoopId, out: &mut Vec<LoopId>) {
            for &c in fr.children.get(&l).map(|v| v.as_slice()).unwrap_or(&[]) {
                go(fr, c, out);
            }
            out.push(l);
        }
        for &r in &self.roots {
            go(self, r, &mut out);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Containment invariant used by the fuzz tests: every child's block set
    /// is contained in its parent's.
    pub fn check_containment(&self, loops: &[LoopStructure]) -> bool {
        let by_id: BTreeMap<LoopId, &LoopStructure> = loops.iter().map(|l| (l.id, l)).collect();
        self.children.iter().all(|(p, kids)| {
            kids.iter().all(|c| match (by_id.get(p), by_id.get(c)) {
                (Some(pl), Some(cl)) => cl.blocks.is_subset(&pl.blocks),
                _ => true,
            })
        })
    }
}
