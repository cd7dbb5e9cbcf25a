//! Instruction-level profiler: execution counters for instructions, blocks,
//! loops (invocations and header executions), and functions, plus metadata
//! embedding and the hotness query layer over re-read profiles.

use super::exec::{run_with_hooks, ExecResult, Hooks, RunError, Trap};
use crate::ir::*;
use crate::loops::{LoopAnalysis, LoopStructure};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProfileData {
    pub instr_count: BTreeMap<InstrId, u64>,
    pub block_count: BTreeMap<BlockId, u64>,
    pub loop_invocations: BTreeMap<LoopId, u64>,
    /// Header executions per loop (>= invocations whenever invoked).
    pub loop_total_iterations: BTreeMap<LoopId, u64>,
    pub function_invocations: BTreeMap<FuncId, u64>,
}

impl ProfileData {
    pub fn total_steps(&self) -> u64 {
        self.instr_count.values().sum()
    }

    fn merge(&mut self, other: ProfileData) {
        for (k, v) in other.instr_count {
            *self.instr_count.entry(k).or_default() += v;
        }
        for (k, v) in other.block_count {
            *self.block_count.entry(k).or_default() += v;
        }
        for (k, v) in other.loop_invocations {
            *self.loop_invocations.entry(k).or_default() += v;
        }
        for (k, v) in other.loop_total_iterations {
            *self.loop_total_iterations.entry(k).or_default() += v;
        }
        for (k, v) in other.function_invocations {
            *self.function_invocations.entry(k).or_default() += v;
        }
    }
}

/// Per-function loop lookup tables for the hook.
struct LoopTables {
    /// per function: block index -> loop id if the block is a header
    header: Vec<Vec<Option<LoopId>>>,
    /// block id by (function, block index)
    bid: Vec<Vec<BlockId>>,
}

impl LoopTables {
    fn build(m: &ModuleIR, la: &LoopAnalysis) -> LoopTables {
        let mut header = Vec::new();
        let mut bid = Vec::new();
        for f in &m.functions {
            let mut fh = Vec::new();
            let mut fb = Vec::new();
            for b in &f.blocks {
                fh.push(la.loops.iter().find(|l| l.header == b.id).map(|l| l.id));
                fb.push(b.id);
            }
            header.push(fh);
            bid.push(fb);
        }
        LoopTables { header, bid }
    }
}

struct ProfileHook<'a> {
    tables: &'a LoopTables,
    loops: &'a BTreeMap<LoopId, LoopStructure>,
    data: ProfileData,
    /// (function, previous block index) per frame
    frames: Vec<(usize, Option<usize>)>,
}

impl Hooks for ProfileHook<'_> {
    fn instr(&mut self, id: InstrId) {
        *self.data.instr_count.entry(id).or_default() += 1;
    }

    fn block(&mut self, func: usize, block: usize) {
        let bid = self.tables.bid[func][block];
        *self.data.block_count.entry(bid).or_default() += 1;
        let prev = self.frames.last().and_then(|(_, p)| *p);
        if let Some(l) = self.tables.header[func][block] {
            // every header execution is an iteration; entering from outside
            // the loop starts an invocation
            *self.data.loop_total_iterations.entry(l).or_default() += 1;
            let from_inside = prev
                .map(|p| {
                    let pb = self.tables.bid[func][p];
                    self.loops[&l].blocks.contains(&pb)
                })
                .unwrap_or(false);
            if !from_inside {
                *self.data.loop_invocations.entry(l).or_default() += 1;
            }
        }
        if let Some(top) = self.frames.last_mut() {
            top.1 = Some(block);
        }
    }

    fn enter_func(&mut self, func: usize) {
        *self.data.function_invocations.entry(FuncId(func as u32)).or_default() += 1;
        self.frames.push((func, None));
    }

    fn exit_func(&mut self) {
        self.frames.pop();
    }
}

/// Run the module once per input vector and sum the counters. A trap on any
/// input discards everything and reports the trap.
pub fn collect_profile(
    m: &ModuleIR,
    inputs: &[Vec<i64>],
    budget: u64,
) -> Result<ProfileData, ProfileError> {
    let la = LoopAnalysis::of_module(m);
    let tables = LoopTables::build(m, &la);
    let loops: BTreeMap<LoopId, LoopStructure> =
        la.loops.iter().map(|l| (l.id, l.clone())).collect();
    let mut total = ProfileData::default();
    for args in inputs {
        let hook = ProfileHook { tables: &tables, loops: &loops, data: ProfileData::default(), frames: Vec::new() };
        let (result, hook) =
            run_with_hooks(m, args, budget, hook).map_err(ProfileError::Run)?;
        if let Some(t) = result.trap {
            return Err(ProfileError::Trapped(t));
        }
        total.merge(hook.data);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileError {
    Run(RunError),
    Trapped(Trap),
    StaleIds(String),
}

impl std::fmt::Display for ProfileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProfileError::Run(e) => write!(f, "{}", e),
            ProfileError::Trapped(t) => write!(f, "program trapped during profiling: {}", t),
            ProfileError::StaleIds(w) => write!(f, "profile does not match module: {}", w),
        }
    }
}

impl std::error::Error for ProfileError {}

/// Embed counters as `!prof <kind> <ordinal> <count>` metadata. Re-embedding
/// replaces the previous profile. Ordinals are validated against the module.
pub fn embed_profile(m: &ModuleIR, p: &ProfileData) -> Result<ModuleIR, ProfileError> {
    let n_instr = m.instr_count() as u32;
    let n_block = m.block_count() as u32;
    let n_func = m.functions.len() as u32;
    let n_loop = LoopAnalysis::of_module(m).loops.len() as u32;
    for id in p.instr_count.keys() {
        if id.0 >= n_instr {
            return Err(ProfileError::StaleIds(format!("instr ordinal {}", id.0)));
        }
    }
    for id in p.block_count.keys() {
        if id.0 >= n_block {
            return Err(ProfileError::StaleIds(format!("block ordinal {}", id.0)));
        }
    }
    for id in p.loop_invocations.keys().chain(p.loop_total_iterations.keys()) {
        if id.0 >= n_loop {
            return Err(ProfileError::StaleIds(format!("loop ordinal {}", id.0)));
        }
    }
    for id in p.function_invocations.keys() {
        if id.0 >= n_func {
            return Err(ProfileError::StaleIds(format!("function ordinal {}", id.0)));
        }
    }
    let mut lines = Vec::new();
    for (k, v) in &p.instr_count {
        lines.push(format!("instr {} {}", k.0, v));
    }
    for (k, v) in &p.block_count {
        lines.push(format!("block {} {}", k.0, v));
    }
    for (k, v) in &p.loop_invocations {
        lines.push(format!("loop-inv {} {}", k.0, v));
    }
    for (k, v) in &p.loop_total_iterations {
        lines.push(format!("loop-iter {} {}", k.0, v));
    }
    for (k, v) in &p.function_invocations {
        lines.push(format!("func {} {}", k.0, v));
    }
    let mut m2 = m.clone();
    m2.set_metadata("prof", lines, true);
    Ok(m2)
}

/// Parse embedded `!prof` metadata back into counters.
pub fn read_profile(m: &ModuleIR) -> Option<ProfileData> {
    let mut p = ProfileData::default();
    let mut any = false;
    for line in m.metadata_values("prof") {
        let mut it = line.split_whitespace();
        let kind = it.next()?;
        let ord: u32 = it.next()?.parse().ok()?;
        let count: u64 = it.next()?.parse().ok()?;
        any = true;
        match kind {
            "instr" => {
                p.instr_count.insert(InstrId(ord), count);
            }
            "block" => {
                p.block_count.insert(BlockId(ord), count);
            }
            "loop-inv" => {
                p.loop_invocations.insert(LoopId(ord), count);
            }
            "loop-iter" => {
                p.loop_total_iterations.insert(LoopId(ord), count);
            }
            "func" => {
                p.function_invocations.insert(FuncId(ord), count);
            }
            _ => return None,
        }
    }
    any.then_some(p)
}

/// Fraction of all executed instructions attributable to the loop.
pub fn hotness_of_loop(m: &ModuleIR, p: &ProfileData, l: &LoopStructure) -> f64 {
    let total = p.total_steps();
    if total == 0 {
        return 0.0;
    }
    let idx = ModuleIndex::new(m);
    let f = &m.functions[l.func.0 as usize];
    let mut in_loop = 0u64;
    for ins in f.instrs() {
        if l.blocks.contains(&idx.block_of_instr(ins.id)) {
            in_loop += p.instr_count.get(&ins.id).copied().unwrap_or(0);
        }
    }
    in_loop as f64 / total as f64
}

/// Conservation check used by tests: block counts times block lengths must
/// equal total steps.
pub fn conserves_steps(m: &ModuleIR, p: &ProfileData, result: &ExecResult) -> bool {
    let mut sum = 0u64;
    for f in &m.functions {
        for b in &f.blocks {
            sum += p.block_count.get(&b.id).copied().unwrap_or(0) * b.instrs.len() as u64;
        }
    }
    sum == result.steps
}
