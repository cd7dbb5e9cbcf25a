//! Generic bitvector data-flow engine: per-instruction gen/kill with
//! block-granularity transfer composition, a worklist ordered by (reverse)
//! post-order with deeper loop nesting prioritized, and the two built-in
//! instances clients need, liveness and reaching definitions.

use crate::ir::*;
use crate::loops::LoopAnalysis;
use std::collections::{BTreeMap, BinaryHeap};

/// A fixed-width bitset over a dense universe.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitSet {
    words: Vec<u64>,
    len: usize,
}

impl BitSet {
    pub fn new(len: usize) -> BitSet {
        BitSet { words: vec![0; (len + 63) / 64], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn full(len: usize) -> BitSet {
        let mut s = BitSet::new(len);
        for w in s.words.iter_mut() {
            *w = u64::MAX;
        }
        s.trim();
        s
    }

    fn trim(&mut self) {
        let extra = self.words.len() * 64 - self.len;
        if extra > 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= u64::MAX >> extra;
            }
        }
    }

    pub fn union_with(&mut self, other: &BitSet) -> bool {
        let mut changed = false;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            let n = *a | b;
            changed |= n != *a;
            *a = n;
        }
        changed
    }

    pub fn intersect_with(&mut self, other: &BitSet) -> bool {
        let mut changed = false;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            let n = *a & b;
            changed |= n != *a;
            *a = n;
        }
        changed
    }

    pub fn subtract(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.contains(i))
    }

    pub fn ones(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Meet {
    Union,
    Intersection,
}

/// A data-flow problem over one function. Gen/kill are per instruction;
/// `edge_gen` lets an instance inject facts on a specific CFG edge (liveness
/// attributes phi uses to predecessor block ends this way).
#[derive(Debug, Clone)]
pub struct DataFlowProblem {
    pub direction: FlowDirection,
    pub meet: Meet,
    pub universe: usize,
    pub gen: BTreeMap<InstrId, BitSet>,
    pub kill: BTreeMap<InstrId, BitSet>,
    pub boundary: BitSet,
    pub edge_gen: BTreeMap<(BlockId, BlockId), BitSet>,
}

impl DataFlowProblem {
    pub fn new(direction: FlowDirection, meet: Meet, universe: usize) -> DataFlowProblem {
        DataFlowProblem {
            direction,
            meet,
            universe,
            gen: BTreeMap::new(),
            kill: BTreeMap::new(),
            boundary: BitSet::new(universe),
            edge_gen: BTreeMap::new(),
        }
    }

    fn gen_of(&self, i: InstrId) -> BitSet {
        self.gen.get(&i).cloned().unwrap_or_else(|| BitSet::new(self.universe))
    }

    fn kill_of(&self, i: InstrId) -> BitSet {
        self.kill.get(&i).cloned().unwrap_or_else(|| BitSet::new(self.universe))
    }

    /// gen/kill must be disjoint per instruction and within the universe.
    pub fn well_formed(&self) -> bool {
        self.gen.iter().all(|(i, g)| {
            let k = self.kill_of(*i);
            g.len() == self.universe && g.iter().all(|b| !k.contains(b))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataFlowResult {
    pub instr_in: BTreeMap<InstrId, BitSet>,
    pub instr_out: BTreeMap<InstrId, BitSet>,
}

impl DataFlowResult {
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, s) in &self.instr_in {
            let ins: Vec<String> = s.iter().map(|b| b.to_string()).collect();
            let outs: Vec<String> =
                self.instr_out[i].iter().map(|b| b.to_string()).collect();
            out.push_str(&format!("IN[{}] = {{{}}}\n", i.0, ins.join(", ")));
            out.push_str(&format!("OUT[{}] = {{{}}}\n", i.0, outs.join(", ")));
        }
        out
    }
}

/// Maximal-fixpoint worklist solve: block transfers are composed once, block
/// order follows reverse post-order (forward) or post-order (backward), and
/// blocks in deeper loops are taken first.
pub fn solve(p: &DataFlowProblem, m: &ModuleIR, f: &FunctionIR) -> DataFlowResult {
    solve_with_priority(p, m, f, None)
}

/// Same fixpoint under an arbitrary priority permutation (used to check
/// confluence: the result must not depend on worklist order).
pub fn solve_with_priority(
    p: &DataFlowProblem,
    m: &ModuleIR,
    f: &FunctionIR,
    priority_override: Option<&[u64]>,
) -> DataFlowResult {
    let cfg = Cfg::of(f);
    let n = cfg.n;
    let po = cfg.postorder(0);
    let mut order_index = vec![0usize; n];
    {
        // canonical processing order
        let seq: Vec<usize> = match p.direction {
            FlowDirection::Forward => po.iter().rev().copied().collect(),
            FlowDirection::Backward => po.clone(),
        };
        for (k, b) in seq.iter().enumerate() {
            order_index[*b] = k;
        }
    }
    // loop depth priority
    let la = LoopAnalysis::of_module(m);
    let depth_of: Vec<u64> = f
        .blocks
        .iter()
        .map(|b| {
            la.innermost_of_block(f.id, b.id).map(|l| l.depth as u64).unwrap_or(0)
        })
        .collect();

    // composed block transfer (forward order within the block; mirrored for
    // backward problems)
    let bottom = || match p.meet {
        Meet::Union => BitSet::new(p.universe),
        Meet::Intersection => BitSet::full(p.universe),
    };
    let mut block_gen: Vec<BitSet> = Vec::with_capacity(n);
    let mut block_kill: Vec<BitSet> = Vec::with_capacity(n);
    for b in &f.blocks {
        let mut g = BitSet::new(p.universe);
        let mut k = BitSet::new(p.universe);
        let instrs: Vec<&Instruction> = match p.direction {
            FlowDirection::Forward => b.instrs.iter().collect(),
            FlowDirection::Backward => b.instrs.iter().rev().collect(),
        };
        for ins in instrs {
            let ig = p.gen_of(ins.id);
            let ik = p.kill_of(ins.id);
            g.subtract(&ik);
            g.union_with(&ig);
            k.subtract(&ig);
            k.union_with(&ik);
        }
        block_gen.push(g);
        block_kill.push(k);
    }

    // block-level fixpoint on IN (forward: at block entry; backward: at exit)
    let mut inb: Vec<BitSet> = (0..n).map(|_| bottom()).collect();
    let mut outb: Vec<BitSet> = (0..n).map(|_| bottom()).collect();
    let edges_in: Vec<Vec<usize>> = match p.direction {
        FlowDirection::Forward => cfg.preds.clone(),
        FlowDirection::Backward => cfg.succs.clone(),
    };
    let is_boundary = |b: usize| match p.direction {
        FlowDirection::Forward => b == 0,
        FlowDirection::Backward => cfg.succs[b].is_empty(),
    };
    let bid = |i: usize| f.blocks[i].id;

    #[derive(PartialEq, Eq)]
    struct Item(u64, std::cmp::Reverse<usize>, usize);
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            (self.0, &self.1).cmp(&(o.0, &o.1))
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }

    let prio = |b: usize| -> (u64, std::cmp::Reverse<usize>) {
        match priority_override {
            Some(p) => (p[b], std::cmp::Reverse(0)),
            None => (depth_of[b], std::cmp::Reverse(order_index[b])),
        }
    };
    let mut heap: BinaryHeap<Item> = BinaryHeap::new();
    let mut queued = vec![false; n];
    for b in 0..n {
        let (d, o) = prio(b);
        heap.push(Item(d, o, b));
        queued[b] = true;
    }
    while let Some(Item(_, _, b)) = heap.pop() {
        queued[b] = false;
        // meet over incoming
        let mut acc = if is_boundary(b) { p.boundary.clone() } else { bottom() };
        for &q in &edges_in[b] {
            let mut inc = outb[q].clone();
            let ekey = match p.direction {
                FlowDirection::Forward => (bid(q), bid(b)),
                FlowDirection::Backward => (bid(b), bid(q)),
            };
            if let Some(extra) = p.edge_gen.get(&ekey) {
                inc.union_with(extra);
            }
            match p.meet {
                Meet::Union => {
                    acc.union_with(&inc);
                }
                Meet::Intersection => {
                    acc.intersect_with(&inc);
                }
            }
        }
        // entry/exit blocks with incoming edges still meet the boundary in
        if is_boundary(b) && !edges_in[b].is_empty() {
            match p.meet {
                Meet::Union => {
                    acc.union_with(&p.boundary);
                }
                Meet::Intersection => {
                    acc.intersect_with(&p.boundary);
                }
            }
        }
        let changed_in = inb[b] != acc;
        if changed_in {
            inb[b] = acc;
        }
        let mut o = inb[b].clone();
        o.subtract(&block_kill[b]);
        o.union_with(&block_gen[b]);
        if o != outb[b] || changed_in {
            let spread = o != outb[b];
            outb[b] = o;
            if spread {
                let targets: &Vec<usize> = match p.direction {
                    FlowDirection::Forward => &cfg.succs[b],
                    FlowDirection::Backward => &cfg.preds[b],
                };
                for &t in targets {
                    if !queued[t] {
                        let (d, ord) = prio(t);
                        heap.push(Item(d, ord, t));
                        queued[t] = true;
                    }
                }
            }
        }
    }

    // per-instruction sets from the block solution
    let mut instr_in = BTreeMap::new();
    let mut instr_out = BTreeMap::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        let mut cur = inb[bi].clone();
        let seq: Vec<&Instruction> = match p.direction {
            FlowDirection::Forward => b.instrs.iter().collect(),
            FlowDirection::Backward => b.instrs.iter().rev().collect(),
        };
        for ins in seq {
            instr_in.insert(ins.id, cur.clone());
            cur.subtract(&p.kill_of(ins.id));
            cur.union_with(&p.gen_of(ins.id));
            instr_out.insert(ins.id, cur.clone());
        }
    }
    if p.direction == FlowDirection::Backward {
        // for backward problems the walk above produced OUT before IN
        std::mem::swap(&mut instr_in, &mut instr_out);
    }
    DataFlowResult { instr_in, instr_out }
}

// ---------------------------------------------------------------------------
// built-in instances
// ---------------------------------------------------------------------------

/// Universe mapping for value-indexed problems: parameters first, then
/// value-defining instructions in textual order.
#[derive(Debug, Clone)]
pub struct ValueUniverse {
    pub names: Vec<String>,
    by_name: BTreeMap<String, usize>,
}

impl ValueUniverse {
    pub fn of(f: &FunctionIR) -> ValueUniverse {
        let mut names = Vec::new();
        for (p, _) in &f.params {
            names.push(p.clone());
        }
        for ins in f.instrs() {
            if let Some(r) = &ins.result {
                names.push(r.clone());
            }
        }
        let by_name = names.iter().enumerate().map(|(k, n)| (n.clone(), k)).collect();
        ValueUniverse { names, by_name }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Backward union liveness over SSA values; phi arm uses are attributed to
/// the incoming edge.
pub fn liveness(m: &ModuleIR, f: &FunctionIR) -> (DataFlowProblem, DataFlowResult, ValueUniverse) {
    let u = ValueUniverse::of(f);
    let mut p = DataFlowProblem::new(FlowDirection::Backward, Meet::Union, u.len());
    for b in &f.blocks {
        for ins in &b.instrs {
            let mut g = BitSet::new(u.len());
            if ins.op == Opcode::Phi {
                for (lbl, v) in ins.phi_arms() {
                    if let Some(n) = v.as_ssa() {
                        if let Some(k) = u.index(n) {
                            let pred = f.blocks[f.block_index(lbl).unwrap()].id;
                            p.edge_gen
                                .entry((pred, b.id))
                                .or_insert_with(|| BitSet::new(u.len()))
                                .insert(k);
                        }
                    }
                }
            } else {
                for n in ins.uses() {
                    if let Some(k) = u.index(n) {
                        g.insert(k);
                    }
                }
            }
            if !g.is_empty() {
                p.gen.insert(ins.id, g);
            }
            if let Some(r) = &ins.result {
                if let Some(k) = u.index(r) {
                    let mut kill = BitSet::new(u.len());
                    kill.insert(k);
                    p.kill.insert(ins.id, kill);
                }
            }
        }
    }
    let r = solve(&p, m, f);
    (p, r, u)
}

/// Universe of defining instructions, in textual order.
#[derive(Debug, Clone)]
pub struct DefUniverse {
    pub defs: Vec<InstrId>,
    by_id: BTreeMap<InstrId, usize>,
}

impl DefUniverse {
    pub fn of(f: &FunctionIR) -> DefUniverse {
        let defs: Vec<InstrId> =
            f.instrs().filter(|i| i.result.is_some()).map(|i| i.id).collect();
        let by_id = defs.iter().enumerate().map(|(k, d)| (*d, k)).collect();
        DefUniverse { defs, by_id }
    }

    pub fn index(&self, i: InstrId) -> Option<usize> {
        self.by_id.get(&i).copied()
    }
}

/// Forward union reaching definitions. In SSA nothing is ever killed, so the
/// kill sets are empty.
pub fn reaching_definitions(
    m: &ModuleIR,
    f: &FunctionIR,
) -> (DataFlowProblem, DataFlowResult, DefUniverse) {
    let u = DefUniverse::of(f);
    let mut p = DataFlowProblem::new(FlowDirection::Forward, Meet::Union, u.defs.len());
    for ins in f.instrs() {
        if let Some(k) = u.index(ins.id) {
            let mut g = BitSet::new(u.defs.len());
            g.insert(k);
            p.gen.insert(ins.id, g);
        }
    }
    let r = solve(&p, m, f);
    (p, r, u)
}
