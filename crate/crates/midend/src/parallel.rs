//! The DOALL client and its supporting abstractions: environments (live-in /
//! live-out / reduction slots), outlined task functions taking (env-base,
//! chunk-offset, chunk-factor), the applicability check over the classified
//! SCC condensation, the chunked outlining transform, and the task runner
//! that executes dispatch sites in randomized order or with true overlap.

use crate::alias::ModRefSummaries;
use crate::interp::{
    ExecResult, GroupExec, Machine, Memory, NoHooks, ParallelGroups, Prog, RunError, Trap, Val,
};
use crate::ir::*;
use crate::loops::{ComparePred, LoopContext};
use crate::sccdag::{ReductionInfo, ReductionOp, SccKind};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    LiveIn,
    LiveOut,
    Reduction,
}

/// Where a slot's value comes from: a parameter or an instruction result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ValueSource {
    Param(FuncId, usize),
    Instr(InstrId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSlot {
    pub index: usize,
    pub role: SlotRole,
    pub source: ValueSource,
    pub name: String,
}

/// Live-in/live-out slot layout for one loop. Reduction slots are privatized
/// per task at transform time (one backing cell per task).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Environment {
    pub slots: Vec<EnvSlot>,
}

impl Environment {
    pub fn live_ins(&self) -> impl Iterator<Item = &EnvSlot> {
        self.slots.iter().filter(|s| s.role == SlotRole::LiveIn)
    }

    pub fn live_outs(&self) -> impl Iterator<Item = &EnvSlot> {
        self.slots.iter().filter(|s| s.role == SlotRole::LiveOut)
    }

    pub fn reductions(&self) -> impl Iterator<Item = &EnvSlot> {
        self.slots.iter().filter(|s| s.role == SlotRole::Reduction)
    }
}

/// Values defined outside the loop and used inside become live-in slots;
/// values defined inside and used outside become live-out slots, except that
/// reduction accumulators get reduction slots. Slot order is deterministic:
/// parameters by position, then instructions by ordinal.
pub fn compute_live_in_out(m: &ModuleIR, ctx: &LoopContext) -> Environment {
    let l = &ctx.structure;
    let idx = ModuleIndex::new(m);
    let f = &m.functions[l.func.0 as usize];
    let in_loop =
        |i: InstrId| l.blocks.contains(&idx.block_of_instr(i)) && idx.func_of_instr(i).id == l.func;

    let mut live_in: BTreeSet<(ValueSource, String)> = BTreeSet::new();
    for b in &f.blocks {
        if !l.blocks.contains(&b.id) {
            continue;
        }
        for ins in &b.instrs {
            for u in ins.uses() {
                match f.def_site(u) {
                    Some(DefSite::Param(k)) => {
                        live_in.insert((ValueSource::Param(f.id, k), u.to_string()));
                    }
                    Some(DefSite::Instr { id, .. }) if !in_loop(id) => {
                        live_in.insert((ValueSource::Instr(id), u.to_string()));
                    }
                    _ => {}
                }
            }
        }
    }

    // reduction accumulators (phi and update values are the same reduction)
    let mut reduction_defs: BTreeSet<InstrId> = BTreeSet::new();
    for kind in &ctx.sccdag.kinds {
        if let SccKind::Reducible(r) = kind {
            reduction_defs.insert(r.accumulator_phi);
            reduction_defs.insert(r.update);
        }
    }

    let mut live_out: BTreeSet<(ValueSource, String, bool)> = BTreeSet::new();
    for b in &f.blocks {
        if !l.blocks.contains(&b.id) {
            continue;
        }
        for ins in &b.instrs {
            let Some(r) = &ins.result else { continue };
            let used_outside = f.instrs().any(|user| {
                !in_loop(user.id)
                    && (user.uses().contains(&r.as_str())
                        || (user.op == Opcode::Phi
                            && user.phi_arms().any(|(_, v)| v.as_ssa() == Some(r))))
            });
            if used_outside {
                let is_red = reduction_defs.contains(&ins.id);
                live_out.insert((ValueSource::Instr(ins.id), r.clone(), is_red));
            }
        }
    }

    let mut env = Environment::default();
    for (source, name) in live_in {
        env.slots.push(EnvSlot { index: env.slots.len(), role: SlotRole::LiveIn, source, name });
    }
    for (source, name, is_red) in live_out {
        let role = if is_red { SlotRole::Reduction } else { SlotRole::LiveOut };
        env.slots.push(EnvSlot { index: env.slots.len(), role, source, name });
    }
    env
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedReduction {
    pub info: ReductionInfo,
    /// First backing cell of this reduction's per-task range.
    pub slot_base: usize,
}

/// The applicability verdict for one loop.
#[derive(Debug, Clone)]
pub struct ParallelPlan {
    pub loop_id: LoopId,
    pub num_tasks: i64,
    pub reductions: Vec<PlannedReduction>,
    pub rejected_reason: Option<String>,
}

impl ParallelPlan {
    pub fn applicable(&self) -> bool {
        self.rejected_reason.is_none()
    }
}

/// DOALL applicability: a governing IV with a literal step, a single exit
/// through the governing branch, every SCC Independent, Reducible, or the
/// governing-IV SCC, no printing in the body, and no live-outs beyond
/// reductions and the IV's final value.
pub fn doall_check(
    m: &ModuleIR,
    ctx: &LoopContext,
    modref: &ModRefSummaries,
) -> ParallelPlan {
    let l = &ctx.structure;
    let reject = |why: String| ParallelPlan {
        loop_id: l.id,
        num_tasks: 1,
        reductions: Vec::new(),
        rejected_reason: Some(why),
    };
    let Some(gov_iv) = ctx.governing_iv() else {
        return reject("no governing induction variable".to_string());
    };
    let Some(gov) = gov_iv.governing.as_ref() else {
        return reject("no governing induction variable".to_string());
    };
    if gov_iv.literal_step().map(|s| s == 0).unwrap_or(true) {
        return reject("governing step is not a nonzero literal".to_string());
    }
    let gov_cmp_ok = matches!(
        ModuleIndex::new(m).instr(gov.exit_compare).op,
        Opcode::Slt | Opcode::Sle | Opcode::Sgt | Opcode::Sge
    );
    if !gov_cmp_ok {
        return reject("governing compare is not an inequality".to_string());
    }
    if !gov.exit_at_header {
        // a post-test loop always runs its body once, so empty chunks would
        // still execute; only the while shape distributes safely
        return reject("loop exit is not decided at the header".to_string());
    }
    // direction agreement keeps every task loop finite
    let step_lit = gov_iv.literal_step().unwrap_or(0);
    let dir_ok = match gov.continue_pred {
        ComparePred::Lt | ComparePred::Le => step_lit > 0,
        ComparePred::Gt | ComparePred::Ge => step_lit < 0,
        _ => false,
    };
    if !dir_ok {
        return reject("step direction does not approach the bound".to_string());
    }
    // single exit, through the governing branch
    let exit_blocks: BTreeSet<BlockId> = l.exits.iter().map(|(b, _)| *b).collect();
    let idx = ModuleIndex::new(m);
    if exit_blocks.len() != 1 || idx.block_of_instr(gov.exit_branch) != *exit_blocks.iter().next().unwrap()
    {
        return reject("loop has exits besides the governing branch".to_string());
    }
    // no printing inside (directly or through callees)
    let f = &m.functions[l.func.0 as usize];
    for b in &f.blocks {
        if !l.blocks.contains(&b.id) {
            continue;
        }
        for ins in &b.instrs {
            match ins.op {
                Opcode::Print => {
                    return reject(format!("print at instr #{} inside the loop", ins.id.0))
                }
                Opcode::Call | Opcode::Icall => {
                    let callees: Vec<FuncId> = match ins.op {
                        Opcode::Call => ins
                            .callee()
                            .and_then(|n| m.function(n))
                            .map(|g| g.id)
                            .into_iter()
                            .collect(),
                        _ => Vec::new(),
                    };
                    if ins.op == Opcode::Icall || callees.iter().any(|c| modref.may_print[c]) {
                        if ins.op == Opcode::Icall {
                            return reject("indirect call inside the loop".to_string());
                        }
                        return reject(format!(
                            "callee of instr #{} may print",
                            ins.id.0
                        ));
                    }
                }
                _ => {}
            }
        }
    }
    // SCC classification
    let gov_scc = ctx.sccdag.scc_of(gov_iv.header_phi);
    let mut reductions = Vec::new();
    for (k, kind) in ctx.sccdag.kinds.iter().enumerate() {
        match kind {
            SccKind::Independent => {}
            SccKind::Reducible(r) => reductions.push(PlannedReduction { info: r.clone(), slot_base: 0 }),
            SccKind::Sequential => {
                if Some(k) == gov_scc {
                    continue; // regenerated per chunk
                }
                let first = ctx.sccdag.sccs[k].members.iter().next().unwrap();
                return reject(format!(
                    "DOALL rejected: SCC#{} Sequential (instr #{} {})",
                    k,
                    first.0,
                    instr_to_string(idx.instr(*first))
                ));
            }
        }
    }
    // live-outs: only reductions and the governing IV's final value
    let env = compute_live_in_out(m, ctx);
    let iv_defs: BTreeSet<InstrId> = [gov_iv.header_phi, gov_iv.update].into_iter().collect();
    for s in env.live_outs() {
        match s.source {
            ValueSource::Instr(i) if iv_defs.contains(&i) => {}
            _ => {
                return reject(format!(
                    "live-out %{} is neither a reduction nor the governing IV",
                    s.name
                ))
            }
        }
    }
    ParallelPlan { loop_id: l.id, num_tasks: 1, reductions, rejected_reason: None }
}

/// A task: the outlined loop body, taking (env-base, chunk-offset,
/// chunk-factor).
#[derive(Debug, Clone)]
pub struct Task {
    /// Name of the outlined function in the transformed module.
    pub body: String,
    pub source_loop: LoopId,
}

#[derive(Debug, Clone)]
pub struct DoallError(pub String);

impl fmt::Display for DoallError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "doall: {}", self.0)
    }
}

impl std::error::Error for DoallError {}

/// A prefix such that no name or label in the function starts with
/// `prefix_`.
fn fresh_prefix(f: &FunctionIR, base: &str) -> String {
    let mut names: BTreeSet<&str> = f.params.iter().map(|(n, _)| n.as_str()).collect();
    for b in &f.blocks {
        names.insert(b.label.as_str());
        for ins in &b.instrs {
            if let Some(r) = &ins.result {
                names.insert(r.as_str());
            }
        }
    }
    let clear = |cand: &str| !names.iter().any(|n| n.starts_with(&format!("{}_", cand)));
    if clear(base) {
        return base.to_string();
    }
    let mut k = 0;
    loop {
        let cand = format!("{}{}", base, k);
        if clear(&cand) {
            return cand;
        }
        k += 1;
    }
}

fn print_function(f: &FunctionIR) -> String {
    let params: Vec<String> = f.params.iter().map(|(n, t)| format!("%{}: {}", n, t)).collect();
    let ret = f.ret.map(|t| t.to_string()).unwrap_or_else(|| "void".to_string());
    let mut out = format!("func @{}({}) -> {} {{\n", f.name, params.join(", "), ret);
    for b in &f.blocks {
        out.push_str(&format!("{}:\n", b.label));
        for ins in &b.instrs {
            out.push_str(&format!("  {}\n", instr_to_string(ins)));
        }
    }
    out.push_str("}\n");
    out
}

/// Strided DOALL outlining. The loop body becomes a task function whose IV
/// starts at `start + offset*step` and strides by `factor*step`; reduction
/// accumulators are privatized to the op identity and merged after the
/// dispatch calls; the governing IV's final value is recomputed from the
/// bound. With N = 1 the transformed module computes exactly the original
/// results.
pub fn doall_transform(
    m: &ModuleIR,
    ctx: &LoopContext,
    plan: &ParallelPlan,
    num_tasks: i64,
) -> Result<(ModuleIR, Task), DoallError> {
    if !plan.applicable() {
        return Err(DoallError(plan.rejected_reason.clone().unwrap_or_default()));
    }
    if num_tasks < 1 {
        return Err(DoallError("need at least one task".to_string()));
    }
    if plan.loop_id != ctx.structure.id {
        return Err(DoallError("plan does not match the loop".to_string()));
    }
    let l = &ctx.structure;
    let idx = ModuleIndex::new(m);
    let gov_iv = ctx.governing_iv().ok_or_else(|| DoallError("no governing IV".to_string()))?;
    let gov = gov_iv.governing.clone().unwrap();
    let step = gov_iv.literal_step().ok_or_else(|| DoallError("non-literal step".to_string()))?;
    let raw_step = match gov_iv.step {
        ValueRef::Lit(s) => s,
        _ => return Err(DoallError("non-literal step".to_string())),
    };

    let f = &m.functions[l.func.0 as usize];
    let fn_name = f.name.clone();
    let env = compute_live_in_out(m, ctx);
    let live_ins: Vec<EnvSlot> = env.live_ins().cloned().collect();
    let n_live_in = live_ins.len();
    let mut reductions: Vec<PlannedReduction> = plan.reductions.clone();
    for (k, r) in reductions.iter_mut().enumerate() {
        r.slot_base = n_live_in + k * num_tasks as usize;
    }
    let env_cells = n_live_in + reductions.len() * num_tasks as usize;

    let label_of = |b: BlockId| -> String {
        let bi = f.blocks.iter().position(|x| x.id == b).unwrap();
        f.blocks[bi].label.clone()
    };
    let header_label = label_of(l.header);
    let exit_target_label = label_of(l.exits[0].1);
    let exiting_label = label_of(l.exits[0].0);
    let loop_block_labels: Vec<String> = f
        .blocks
        .iter()
        .filter(|b| l.blocks.contains(&b.id))
        .map(|b| b.label.clone())
        .collect();
    let latch_labels: BTreeSet<String> = l.latches.iter().map(|b| label_of(*b)).collect();

    let phi_name = idx.instr(gov_iv.header_phi).result.clone().unwrap();
    let upd_name = idx.instr(gov_iv.update).result.clone().unwrap();
    let mut task_name = format!("{}_l{}_task", fn_name, l.id.0);
    while m.function(&task_name).is_some() {
        task_name.push('x');
    }

    // ---- the task function ---------------------------------------------
    let tp = fresh_prefix(f, "t");
    let entry_label = format!("{}_entry", tp);
    let done_label = format!("{}_done", tp);
    let mut task_src = String::new();
    task_src.push_str(&format!(
        "func @{}(%{tp}_env: ptr, %{tp}_off: i64, %{tp}_fac: i64) -> void {{\n",
        task_name,
        tp = tp
    ));
    task_src.push_str(&format!("{}:\n", entry_label));
    let mut livein_map: BTreeMap<String, String> = BTreeMap::new();
    for (k, slot) in live_ins.iter().enumerate() {
        let local = format!("{}_li_{}", tp, slot.name);
        task_src.push_str(&format!("  %{}_p{} = gep %{}_env, {}\n", tp, k, tp, k));
        task_src.push_str(&format!("  %{} = load %{}_p{}\n", local, tp, k));
        livein_map.insert(slot.name.clone(), local);
    }
    task_src.push_str(&format!("  %{}_delta = mul %{}_off, {}\n", tp, tp, step));
    let start_txt = rename_operand(&gov_iv.start, &livein_map);
    task_src.push_str(&format!("  %{}_start = add {}, %{}_delta\n", tp, start_txt, tp));
    task_src.push_str(&format!("  %{}_stride = mul %{}_fac, {}\n", tp, tp, raw_step));
    for (j, r) in reductions.iter().enumerate() {
        task_src.push_str(&format!("  %{}_redix{} = add {}, %{}_off\n", tp, j, r.slot_base, tp));
        task_src.push_str(&format!("  %{}_redp{} = gep %{}_env, %{}_redix{}\n", tp, j, tp, tp, j));
    }
    task_src.push_str(&format!("  br {}\n", header_label));

    let red_by_phi: BTreeMap<InstrId, (usize, PlannedReduction)> = reductions
        .iter()
        .enumerate()
        .map(|(j, r)| (r.info.accumulator_phi, (j, r.clone())))
        .collect();

    for lbl in &loop_block_labels {
        let b = &f.blocks[f.block_index(lbl).unwrap()];
        task_src.push_str(&format!("{}:\n", b.label));
        for ins in &b.instrs {
            let mut ins2 = ins.clone();
            rename_instr(&mut ins2, &livein_map);
            let in_header = b.id == l.header;
            if ins.id == gov_iv.header_phi {
                let arms = ins2.operands.len() / 2;
                for a in 0..arms {
                    let is_latch = matches!(&ins2.operands[2*a], ValueRef::Label(x) if latch_labels.contains(x));
                    if !is_latch {
                        ins2.operands[2 * a] = ValueRef::Label(entry_label.clone());
                        ins2.operands[2 * a + 1] = ValueRef::Ssa(format!("{}_start", tp));
                    }
                }
            } else if ins.id == gov_iv.update {
                for op in ins2.operands.iter_mut() {
                    if *op == ValueRef::Lit(raw_step) {
                        *op = ValueRef::Ssa(format!("{}_stride", tp));
                    }
                }
            } else if let Some((_, r)) = red_by_phi.get(&ins.id) {
                let arms = ins2.operands.len() / 2;
                for a in 0..arms {
                    let is_latch = matches!(&ins2.operands[2*a], ValueRef::Label(x) if latch_labels.contains(x));
                    if !is_latch {
                        ins2.operands[2 * a] = ValueRef::Label(entry_label.clone());
                        ins2.operands[2 * a + 1] = ValueRef::Lit(r.info.identity);
                    }
                }
            } else if ins.op == Opcode::Phi && in_header {
                let arms = ins2.operands.len() / 2;
                for a in 0..arms {
                    let is_latch = matches!(&ins2.operands[2*a], ValueRef::Label(x) if latch_labels.contains(x));
                    if !is_latch {
                        ins2.operands[2 * a] = ValueRef::Label(entry_label.clone());
                    }
                }
            }
            if ins.id == gov.exit_branch {
                for op in ins2.operands.iter_mut() {
                    if matches!(op, ValueRef::Label(x) if *x == exit_target_label) {
                        *op = ValueRef::Label(done_label.clone());
                    }
                }
            }
            task_src.push_str(&format!("  {}\n", instr_to_string(&ins2)));
        }
    }
    task_src.push_str(&format!("{}:\n", done_label));
    for (j, r) in reductions.iter().enumerate() {
        let acc = idx.instr(r.info.accumulator_phi).result.clone().unwrap();
        task_src.push_str(&format!("  store %{}, %{}_redp{}\n", acc, tp, j));
    }
    task_src.push_str("  ret\n}\n");

    // ---- rewrite the host ------------------------------------------------
    let (m1, l1) = crate::loops::create_preheader(m, l);
    let f1 = m1.function(&fn_name).unwrap();
    let ph_label = {
        let bi = f1.blocks.iter().position(|b| Some(b.id) == l1.preheader).unwrap();
        f1.blocks[bi].label.clone()
    };
    let hp = fresh_prefix(f1, "dx");
    let dispatch_label = format!("{}_dispatch", hp);
    let merge_label = format!("{}_merge", hp);
    let env_name = format!("{}_env", hp);

    // names of loop-defined values visible after the loop, mapped to their
    // merge-block replacements
    let mut out_map: BTreeMap<String, String> = BTreeMap::new();
    let needs_iv_final = env.live_outs().any(|s| {
        matches!(s.source, ValueSource::Instr(i) if i == gov_iv.header_phi || i == gov_iv.update)
    });
    if needs_iv_final {
        out_map.insert(phi_name.clone(), format!("{}_iv_final", hp));
        out_map.insert(upd_name.clone(), format!("{}_iv_final", hp));
    }
    for (j, r) in reductions.iter().enumerate() {
        let acc = idx.instr(r.info.accumulator_phi).result.clone().unwrap();
        let upd = idx.instr(r.info.update).result.clone().unwrap();
        out_map.insert(acc, format!("{}_red_out{}", hp, j));
        out_map.insert(upd, format!("{}_red_out{}", hp, j));
    }

    let mut out = String::new();
    for g in &m1.globals {
        let init = match &g.init {
            Some(v) => format!(
                " = [{}]",
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
            ),
            None => String::new(),
        };
        out.push_str(&format!("global @{}: i64[{}]{}\n", g.name, g.size, init));
    }
    for func in &m1.functions {
        if func.name != fn_name {
            out.push_str(&print_function(func));
            continue;
        }
        let params: Vec<String> =
            func.params.iter().map(|(n, t)| format!("%{}: {}", n, t)).collect();
        let ret = func.ret.map(|t| t.to_string()).unwrap_or_else(|| "void".to_string());
        out.push_str(&format!("func @{}({}) -> {} {{\n", func.name, params.join(", "), ret));
        for b in &func.blocks {
            if loop_block_labels.contains(&b.label) {
                continue;
            }
            out.push_str(&format!("{}:\n", b.label));
            let is_ph = b.label == ph_label;
            let n_instrs = b.instrs.len();
            for (k, ins) in b.instrs.iter().enumerate() {
                if is_ph && k == n_instrs - 1 {
                    out.push_str(&format!("  %{} = alloca {}\n", env_name, env_cells.max(1)));
                    for (s_idx, slot) in live_ins.iter().enumerate() {
                        out.push_str(&format!(
                            "  %{}_in{} = gep %{}, {}\n",
                            hp, s_idx, env_name, s_idx
                        ));
                        out.push_str(&format!("  store %{}, %{}_in{}\n", slot.name, hp, s_idx));
                    }
                    out.push_str(&format!("  br {}\n", dispatch_label));
                } else {
                    let mut ins2 = ins.clone();
                    rename_instr(&mut ins2, &out_map);
                    if ins2.op == Opcode::Phi {
                        for op in ins2.operands.iter_mut() {
                            if matches!(op, ValueRef::Label(x) if *x == exiting_label) {
                                *op = ValueRef::Label(merge_label.clone());
                            }
                        }
                    }
                    out.push_str(&format!("  {}\n", instr_to_string(&ins2)));
                }
            }
        }
        // dispatch block: one call per task
        out.push_str(&format!("{}:\n", dispatch_label));
        for t in 0..num_tasks {
            out.push_str(&format!("  call @{}(%{}, {}, {})\n", task_name, env_name, t, num_tasks));
        }
        out.push_str(&format!("  br {}\n", merge_label));
        // merge block: fold reductions, recompute the governing IV
        out.push_str(&format!("{}:\n", merge_label));
        for (j, r) in reductions.iter().enumerate() {
            let start_v = reduction_start_value(m, ctx, r);
            let mut acc_txt = start_v;
            for t in 0..num_tasks {
                out.push_str(&format!(
                    "  %{}_m{}_p{} = gep %{}, {}\n",
                    hp,
                    j,
                    t,
                    env_name,
                    r.slot_base + t as usize
                ));
                out.push_str(&format!("  %{}_m{}_v{} = load %{}_m{}_p{}\n", hp, j, t, hp, j, t));
                let next = format!("{}_m{}_acc{}", hp, j, t);
                out.push_str(&fold_step(&next, r.info.op, &acc_txt, &format!("%{}_m{}_v{}", hp, j, t)));
                acc_txt = format!("%{}", next);
            }
            out.push_str(&format!("  %{}_red_out{} = add {}, 0\n", hp, j, acc_txt));
        }
        if needs_iv_final {
            let start_txt = format!("{}", gov_iv.start);
            let bound_txt = format!("{}", gov.bound);
            // effective exclusive-style bound for the ceil formula
            let eff = match gov.continue_pred {
                ComparePred::Lt | ComparePred::Gt => bound_txt,
                ComparePred::Le => {
                    out.push_str(&format!("  %{}_fin_bd = add {}, 1\n", hp, bound_txt));
                    format!("%{}_fin_bd", hp)
                }
                ComparePred::Ge => {
                    out.push_str(&format!("  %{}_fin_bd = sub {}, 1\n", hp, bound_txt));
                    format!("%{}_fin_bd", hp)
                }
                _ => bound_txt,
            };
            out.push_str(&format!("  %{}_fin_d = sub {}, {}\n", hp, eff, start_txt));
            out.push_str(&format!("  %{}_fin_d2 = add %{}_fin_d, {}\n", hp, hp, step - step.signum()));
            out.push_str(&format!("  %{}_fin_q = sdiv %{}_fin_d2, {}\n", hp, hp, step));
            out.push_str(&format!("  %{}_fin_neg = slt %{}_fin_q, 0\n", hp, hp));
            out.push_str(&format!("  %{}_fin_b = select %{}_fin_neg, 0, %{}_fin_q\n", hp, hp, hp));
            out.push_str(&format!("  %{}_fin_m = mul %{}_fin_b, {}\n", hp, hp, step));
            out.push_str(&format!("  %{}_iv_final = add {}, %{}_fin_m\n", hp, start_txt, hp));
        }
        out.push_str(&format!("  br {}\n", exit_target_label));
        out.push_str("}\n");
    }
    out.push_str(&task_src);
    for e in &m1.metadata {
        out.push_str(&format!("!{} {}\n", e.key, e.text));
    }
    let red_txt = if reductions.is_empty() {
        "-".to_string()
    } else {
        reductions
            .iter()
            .map(|r| format!("{}:{}", r.slot_base, r.info.op.name()))
            .collect::<Vec<_>>()
            .join(",")
    };
    out.push_str(&format!(
        "!doall fn={} dispatch={} task={} tasks={} livein={} red={}\n",
        fn_name, dispatch_label, task_name, num_tasks, n_live_in, red_txt
    ));

    let m2 = parse_module(&out).map_err(|e| DoallError(format!("generated IR invalid: {}", e)))?;
    let diags = verify_module(&m2);
    if !diags.is_empty() {
        return Err(DoallError(format!("generated module fails verification: {}", diags[0])));
    }
    Ok((m2, Task { body: task_name, source_loop: l.id }))
}

/// The accumulator's original start value (its entry arm).
fn reduction_start_value(m: &ModuleIR, ctx: &LoopContext, r: &PlannedReduction) -> String {
    let idx = ModuleIndex::new(m);
    let phi = idx.instr(r.info.accumulator_phi);
    let l = &ctx.structure;
    let f = &m.functions[l.func.0 as usize];
    let latch_labels: BTreeSet<&str> = l
        .latches
        .iter()
        .map(|b| f.blocks[f.blocks.iter().position(|x| x.id == *b).unwrap()].label.as_str())
        .collect();
    phi.phi_arms()
        .find(|(lbl, _)| !latch_labels.contains(lbl))
        .map(|(_, v)| format!("{}", v))
        .unwrap_or_else(|| r.info.identity.to_string())
}

fn fold_step(dst: &str, op: ReductionOp, a: &str, b: &str) -> String {
    match op {
        ReductionOp::Add => format!("  %{} = add {}, {}\n", dst, a, b),
        ReductionOp::Mul => format!("  %{} = mul {}, {}\n", dst, a, b),
        ReductionOp::And => format!("  %{} = and {}, {}\n", dst, a, b),
        ReductionOp::Or => format!("  %{} = or {}, {}\n", dst, a, b),
        ReductionOp::Xor => format!("  %{} = xor {}, {}\n", dst, a, b),
        ReductionOp::MinPattern => format!(
            "  %{dst}_c = slt {a}, {b}\n  %{dst} = select %{dst}_c, {a}, {b}\n",
            dst = dst,
            a = a,
            b = b
        ),
        ReductionOp::MaxPattern => format!(
            "  %{dst}_c = sgt {a}, {b}\n  %{dst} = select %{dst}_c, {a}, {b}\n",
            dst = dst,
            a = a,
            b = b
        ),
    }
}

fn rename_operand(v: &ValueRef, map: &BTreeMap<String, String>) -> String {
    match v {
        ValueRef::Ssa(n) => match map.get(n) {
            Some(local) => format!("%{}", local),
            None => format!("%{}", n),
        },
        other => format!("{}", other),
    }
}

fn rename_instr(ins: &mut Instruction, map: &BTreeMap<String, String>) {
    for op in ins.operands.iter_mut() {
        if let ValueRef::Ssa(n) = op {
            if let Some(local) = map.get(n) {
                *op = ValueRef::Ssa(local.clone());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// execution of transformed modules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelMode {
    /// Tasks run one by one in a randomized order (order-independence oracle).
    SequentialAnyOrder,
    /// Tasks run concurrently on threads sharing the heap.
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParallelError {
    Run(RunError),
    Trap(Trap),
    ContractViolation(String),
    NoDispatch(String),
}

impl fmt::Display for ParallelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParallelError::Run(e) => write!(f, "{}", e),
            ParallelError::Trap(t) => write!(f, "trap: {}", t),
            ParallelError::ContractViolation(w) => write!(f, "task contract violated: {}", w),
            ParallelError::NoDispatch(w) => write!(f, "bad dispatch metadata: {}", w),
        }
    }
}

impl std::error::Error for ParallelError {}

#[derive(Debug, Clone)]
struct DispatchInfo {
    func: String,
    dispatch_label: String,
}

fn parse_dispatch_meta(m: &ModuleIR) -> Result<Vec<DispatchInfo>, ParallelError> {
    let mut out = Vec::new();
    for line in m.metadata_values("doall") {
        let mut kv = BTreeMap::new();
        for item in line.split_whitespace() {
            if let Some((k, v)) = item.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| {
            kv.get(k).cloned().ok_or_else(|| ParallelError::NoDispatch(format!("missing {}", k)))
        };
        out.push(DispatchInfo { func: get("fn")?, dispatch_label: get("dispatch")? });
    }
    Ok(out)
}

/// Execute a transformed module. Dispatch blocks (from `!doall` metadata) run
/// their task calls in a seeded random order, or on threads with true
/// overlap. Task write sets must be pairwise disjoint and tasks must not
/// print; violations are reported, never silently absorbed.
pub fn run_parallel(
    m: &ModuleIR,
    args: &[i64],
    budget: u64,
    mode: ParallelMode,
    seed: u64,
) -> Result<ExecResult, ParallelError> {
    let dispatches = parse_dispatch_meta(m)?;
    let prog = Prog::resolve(m).map_err(ParallelError::Run)?;
    let main = prog.func_index("main").ok_or(ParallelError::Run(RunError::NoMain))?;
    let main_fn = m.function("main").unwrap();
    if main_fn.params.len() != args.len() {
        return Err(ParallelError::Run(RunError::ArityMismatch {
            expected: main_fn.params.len(),
            got: args.len(),
        }));
    }
    let mut blocks = BTreeSet::new();
    for d in &dispatches {
        let fi = prog
            .func_index(&d.func)
            .ok_or_else(|| ParallelError::NoDispatch(format!("no function @{}", d.func)))?;
        let f = m.function(&d.func).unwrap();
        let bi = f
            .block_index(&d.dispatch_label)
            .ok_or_else(|| ParallelError::NoDispatch(format!("no block {}", d.dispatch_label)))?;
        blocks.insert((fi, bi));
    }
    let groups = ParallelGroups::new(
        blocks,
        match mode {
            ParallelMode::SequentialAnyOrder => GroupExec::Shuffled(seed),
            ParallelMode::Concurrent => GroupExec::Threads,
        },
    );
    let mem = Memory::for_module(m);
    let steps = AtomicU64::new(0);
    let mut machine = Machine::new(&prog, &mem, &steps, budget, NoHooks).with_groups(&groups);
    let vals: Vec<Val> = args.iter().map(|&a| Val::Int(a)).collect();
    let (exit, trap) = match machine.run_call(main, vals) {
        Ok(Val::Int(n)) => (n, None),
        Ok(_) => (0, None),
        Err(t) => (0, Some(t)),
    };
    let result = ExecResult {
        output: std::mem::take(&mut machine.out),
        exit,
        steps: steps.load(Ordering::Relaxed),
        trap,
    };
    // contract checks over the recorded task runs
    let mut runs = groups.take_runs();
    runs.sort_by_key(|r| (r.group, r.instance, r.ordinal));
    for r in &runs {
        if r.printed {
            return Err(ParallelError::ContractViolation(format!(
                "task {} of group {:?} printed",
                r.ordinal, r.group
            )));
        }
    }
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, b) = (&runs[i], &runs[j]);
            if a.group == b.group && a.instance == b.instance {
                if let Some((obj, cell)) = a.writes.intersection(&b.writes).next() {
                    return Err(ParallelError::ContractViolation(format!(
                        "tasks {} and {} both wrote cell {} of object {}",
                        a.ordinal, b.ordinal, cell, obj
                    )));
                }
            }
        }
    }
    Ok(result)
}
