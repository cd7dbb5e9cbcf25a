//! Induction variables as SCCs of the loop's dependence condensation: basic
//! IVs (header phi stepped by a loop-invariant amount), affine derived IVs,
//! governing-IV identification with closed-form trip counts, and the stepper
//! that rewrites start/step for chunked iteration.

use super::{create_preheader, InvariantSet, LoopStructure};
use crate::ir::*;
use crate::sccdag::SccDag;
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoverningIVInfo {
    pub exit_compare: InstrId,
    pub exit_branch: InstrId,
    pub bound: ValueRef,
    /// The predicate, normalized so that true means "take another iteration"
    /// with the IV on the left.
    pub continue_pred: ComparePred,
    /// Whether the compare tests the updated value rather than the phi.
    pub tests_update: bool,
    /// Whether the exit branch sits in the loop header (while shape).
    pub exit_at_header: bool,
    /// Closed-form body-execution count, when start/step/bound are literals.
    pub trip_count: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedInfo {
    /// The basic IV this one is an affine function of (its header phi).
    pub of_phi: InstrId,
    pub scale: ValueRef,
    pub offset: ValueRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InductionVariable {
    /// Members of the SCC embodying this IV (includes exit compare/branch for
    /// governing IVs; singleton for derived IVs).
    pub scc: BTreeSet<InstrId>,
    /// The defining header phi (basic) or the defining instruction (derived).
    pub def: InstrId,
    pub header_phi: InstrId,
    pub start: ValueRef,
    pub step: ValueRef,
    /// The update instruction of the underlying basic IV.
    pub update: InstrId,
    /// Whether the update subtracts the step.
    pub negated_step: bool,
    pub derived_from: Option<DerivedInfo>,
    pub governing: Option<GoverningIVInfo>,
}

impl InductionVariable {
    pub fn is_basic(&self) -> bool {
        self.derived_from.is_none()
    }

    /// Literal step, folding a subtracting update into a negative step.
    pub fn literal_step(&self) -> Option<i64> {
        match self.step {
            ValueRef::Lit(s) => Some(if self.negated_step { -s } else { s }),
            _ => None,
        }
    }

    pub fn literal_start(&self) -> Option<i64> {
        match self.start {
            ValueRef::Lit(s) => Some(s),
            _ => None,
        }
    }
}

fn is_loop_invariant_value(
    m: &ModuleIR,
    l: &LoopStructure,
    inv: &InvariantSet,
    v: &ValueRef,
) -> bool {
    match v {
        ValueRef::Lit(_) | ValueRef::Global(_) | ValueRef::Func(_) => true,
        ValueRef::Ssa(n) => {
            let f = &m.functions[l.func.0 as usize];
            match f.def_site(n) {
                Some(DefSite::Param(_)) => true,
                Some(DefSite::Instr { id, .. }) => {
                    let idx = ModuleIndex::new(m);
                    !l.blocks.contains(&idx.block_of_instr(id)) || inv.members.contains(&id)
                }
                None => false,
            }
        }
        ValueRef::Label(_) => false,
    }
}

/// Detect basic and derived induction variables. Works on while-shaped and
/// do-while-shaped loops alike: the shape never matters, only the phi/update
/// cycle inside the condensation.
pub fn detect_ivs(
    m: &ModuleIR,
    l: &LoopStructure,
    dag: &SccDag,
    inv: &InvariantSet,
) -> Vec<InductionVariable> {
    let idx = ModuleIndex::new(m);
    let f = &m.functions[l.func.0 as usize];
    let latch_labels: BTreeSet<&str> = l
        .latches
        .iter()
        .map(|b| f.blocks[f.blocks.iter().position(|x| x.id == *b).unwrap()].label.as_str())
        .collect();

    let mut out = Vec::new();
    // basic IVs: one per header phi whose latch arm is add/sub of the phi by
    // an invariant step
    let header_block = &f.blocks[f.blocks.iter().position(|b| b.id == l.header).unwrap()];
    for phi in header_block.instrs.iter().filter(|i| i.op == Opcode::Phi) {
        let phi_name = phi.result.as_deref().unwrap();
        let mut update_name = None;
        let mut start = None;
        let mut ok = true;
        for (lbl, v) in phi.phi_arms() {
            if latch_labels.contains(lbl) {
                match (update_name, v.as_ssa()) {
                    (None, Some(n)) => update_name = Some(n),
                    (Some(prev), Some(n)) if prev == n => {}
                    _ => ok = false,
                }
            } else {
                match &start {
                    None => start = Some(v.clone()),
                    Some(prev) if prev == v => {}
                    _ => ok = false,
                }
            }
        }
        let (Some(update_name), Some(start), true) = (update_name, start, ok) else { continue };
        let Some(DefSite::Instr { id: upd_id, .. }) = f.def_site(update_name) else { continue };
        if !l.blocks.contains(&idx.block_of_instr(upd_id)) {
            continue;
        }
        let upd = idx.instr(upd_id);
        let (step, negated) = match upd.op {
            Opcode::Add => {
                let (a, b) = (&upd.operands[0], &upd.operands[1]);
                if matches!(a, ValueRef::Ssa(n) if n == phi_name) {
                    (b.clone(), false)
                } else if matches!(b, ValueRef::Ssa(n) if n == phi_name) {
                    (a.clone(), false)
                } else {
                    continue;
                }
            }
            Opcode::Sub => {
                let (a, b) = (&upd.operands[0], &upd.operands[1]);
                if matches!(a, ValueRef::Ssa(n) if n == phi_name) {
                    (b.clone(), true)
                } else {
                    continue;
                }
            }
            _ => continue,
        };
        if !is_loop_invariant_value(m, l, inv, &step) {
            continue;
        }
        if !is_loop_invariant_value(m, l, inv, &start) {
            continue;
        }
        let scc = dag
            .scc_of(phi.id)
            .map(|k| dag.sccs[k].members.clone())
            .unwrap_or_else(|| [phi.id].into_iter().collect());
        if !scc.contains(&upd_id) {
            continue; // the phi/update pair must share a cycle
        }
        out.push(InductionVariable {
            scc,
            def: phi.id,
            header_phi: phi.id,
            start,
            step,
            update: upd_id,
            negated_step: negated,
            derived_from: None,
            governing: None,
        });
    }

    // derived IVs: affine images of a basic IV through mul/add/sub by
    // invariants, found by one forward sweep in textual order
    let mut derived: Vec<InductionVariable> = Vec::new();
    let basic_names: Vec<(String, InstrId)> = out
        .iter()
        .map(|iv| (idx.instr(iv.header_phi).result.clone().unwrap(), iv.header_phi))
        .collect();
    let affine_of = |name: &str, derived: &Vec<InductionVariable>| -> Option<InstrId> {
        if let Some((_, phi)) = basic_names.iter().find(|(n, _)| n == name) {
            return Some(*phi);
        }
        derived
            .iter()
            .find(|d| idx.instr(d.def).result.as_deref() == Some(name))
            .map(|d| d.header_phi)
    };
    for b in &f.blocks {
        if !l.blocks.contains(&b.id) {
            continue;
        }
        for ins in &b.instrs {
            if !matches!(ins.op, Opcode::Add | Opcode::Sub | Opcode::Mul) {
                continue;
            }
            if out.iter().any(|iv| iv.update == ins.id) {
                continue; // the basic update itself is not a derived IV
            }
            let (a, b_op) = (&ins.operands[0], &ins.operands[1]);
            let (base, coeff_side) = match (a.as_ssa().and_then(|n| affine_of(n, &derived)), b_op) {
                (Some(phi), other) if is_loop_invariant_value(m, l, inv, other) => (phi, other),
                _ => match (b_op.as_ssa().and_then(|n| affine_of(n, &derived)), a) {
                    (Some(phi), other)
                        if ins.op != Opcode::Sub && is_loop_invariant_value(m, l, inv, other) =>
                    {
                        (phi, other)
                    }
                    _ => continue,
                },
            };
            let (scale, offset) = match ins.op {
                Opcode::Mul => (coeff_side.clone(), ValueRef::Lit(0)),
                Opcode::Add => (ValueRef::Lit(1), coeff_side.clone()),
                Opcode::Sub => (ValueRef::Lit(1), coeff_side.clone()),
                _ => unreachable!(),
            };
            let parent =
                out.iter().find(|iv| iv.header_phi == base).cloned().unwrap_or_else(|| {
                    derived.iter().find(|d| d.header_phi == base).unwrap().clone()
                });
            derived.push(InductionVariable {
                scc: [ins.id].into_iter().collect(),
                def: ins.id,
                header_phi: base,
                start: parent.start.clone(),
                step: parent.step.clone(),
                update: parent.update,
                negated_step: parent.negated_step,
                derived_from: Some(DerivedInfo { of_phi: base, scale, offset }),
                governing: None,
            });
        }
    }
    out.extend(derived);
    out
}

/// A comparison predicate, normalized so that `true` means "take another
/// iteration".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparePred {
    Lt,
    Le,
    Gt,
    Ge,
    Ne,
    Eq,
}

impl ComparePred {
    fn of(op: Opcode) -> Option<ComparePred> {
        Some(match op {
            Opcode::Slt => ComparePred::Lt,
            Opcode::Sle => ComparePred::Le,
            Opcode::Sgt => ComparePred::Gt,
            Opcode::Sge => ComparePred::Ge,
            Opcode::Ne => ComparePred::Ne,
            Opcode::Eq => ComparePred::Eq,
            _ => return None,
        })
    }

    fn negate(self) -> ComparePred {
        match self {
            ComparePred::Lt => ComparePred::Ge,
            ComparePred::Le => ComparePred::Gt,
            ComparePred::Gt => ComparePred::Le,
            ComparePred::Ge => ComparePred::Lt,
            ComparePred::Ne => ComparePred::Eq,
            ComparePred::Eq => ComparePred::Ne,
        }
    }

    /// Mirror for a swapped compare (bound OP iv instead of iv OP bound).
    fn swap(self) -> ComparePred {
        match self {
            ComparePred::Lt => ComparePred::Gt,
            ComparePred::Le => ComparePred::Ge,
            ComparePred::Gt => ComparePred::Lt,
            ComparePred::Ge => ComparePred::Le,
            p => p,
        }
    }

    pub fn holds(self, v: i64, bound: i64) -> bool {
        match self {
            ComparePred::Lt => v < bound,
            ComparePred::Le => v <= bound,
            ComparePred::Gt => v > bound,
            ComparePred::Ge => v >= bound,
            ComparePred::Ne => v != bound,
            ComparePred::Eq => v == bound,
        }
    }
}

/// Smallest k >= 0 with pred(start + k*step, bound) false; None when the
/// sequence never fails (a statically infinite loop).
fn first_failing(pred: ComparePred, start: i64, step: i64, bound: i64) -> Option<i64> {
    let s = start as i128;
    let d = step as i128;
    let b = bound as i128;
    let ceil_div = |num: i128, den: i128| -> i128 {
        debug_assert!(den > 0);
        if num <= 0 {
            0
        } else {
            (num + den - 1) / den
        }
    };
    let k = match pred {
        ComparePred::Lt => {
            if s >= b {
                0
            } else if d <= 0 {
                return None;
            } else {
                ceil_div(b - s, d)
            }
        }
        ComparePred::Le => {
            if s > b {
                0
            } else if d <= 0 {
                return None;
            } else {
                ceil_div(b + 1 - s, d)
            }
        }
        ComparePred::Gt => {
            if s <= b {
                0
            } else if d >= 0 {
                return None;
            } else {
                ceil_div(s - b, -d)
            }
        }
        ComparePred::Ge => {
            if s < b {
                0
            } else if d >= 0 {
                return None;
            } else {
                ceil_div(s - (b - 1), -d)
            }
        }
        ComparePred::Ne => {
            if s == b {
                0
            } else if d == 0 {
                return None;
            } else {
                let diff = b - s;
                if diff % d != 0 || diff / d < 0 {
                    return None;
                }
                diff / d
            }
        }
        ComparePred::Eq => {
            if s != b {
                0
            } else if d == 0 {
                return None;
            } else {
                1
            }
        }
    };
    i64::try_from(k).ok()
}

/// Identify the unique induction variable whose compare against an invariant
/// bound feeds an exit branch, with a closed-form body count when start,
/// step, and bound are literals.
pub fn governing_iv(
    m: &ModuleIR,
    l: &LoopStructure,
    ivs: &[InductionVariable],
    inv: &InvariantSet,
) -> Option<(usize, GoverningIVInfo)> {
    let idx = ModuleIndex::new(m);
    let f = &m.functions[l.func.0 as usize];
    let mut candidates: Vec<(usize, GoverningIVInfo)> = Vec::new();
    for (bid, _) in &l.exits {
        let b = &f.blocks[f.blocks.iter().position(|x| x.id == *bid).unwrap()];
        let term = b.terminator();
        if term.op != Opcode::Brcond {
            continue;
        }
        let Some(cond_name) = term.operands[0].as_ssa() else { continue };
        let Some(DefSite::Instr { id: cmp_id, .. }) = f.def_site(cond_name) else { continue };
        let cmp = idx.instr(cmp_id);
        if !cmp.op.is_cmp() {
            continue;
        }
        for (k, iv) in ivs.iter().enumerate() {
            if !iv.is_basic() {
                continue;
            }
            let phi_name = idx.instr(iv.header_phi).result.as_deref().unwrap();
            let upd_name = idx.instr(iv.update).result.as_deref().unwrap();
            let is_iv_val = |v: &ValueRef| {
                matches!(v, ValueRef::Ssa(n) if n == phi_name || n == upd_name)
            };
            let (lhs, rhs) = (&cmp.operands[0], &cmp.operands[1]);
            let (iv_side_is_lhs, bound) = if is_iv_val(lhs) && !is_iv_val(rhs) {
                (true, rhs.clone())
            } else if is_iv_val(rhs) && !is_iv_val(lhs) {
                (false, lhs.clone())
            } else {
                continue;
            };
            if !is_loop_invariant_value(m, l, inv, &bound) {
                continue;
            }
            let tested_upd = matches!(
                (if iv_side_is_lhs { lhs } else { rhs }).as_ssa(),
                Some(n) if n == upd_name
            );
            // normalize the predicate: IV on the left, true continues
            let Some(mut pred) = ComparePred::of(cmp.op) else { continue };
            if !iv_side_is_lhs {
                pred = pred.swap();
            }
            let tgt = |o: &ValueRef| match o {
                ValueRef::Label(x) => f.blocks[f.block_index(x).unwrap()].id,
                _ => unreachable!(),
            };
            let t_true = tgt(&term.operands[1]);
            let t_false = tgt(&term.operands[2]);
            let true_continues = l.blocks.contains(&t_true);
            let false_continues = l.blocks.contains(&t_false);
            if true_continues == false_continues {
                continue; // both or neither stay inside
            }
            if false_continues {
                pred = pred.negate();
            }
            // pre-test shape: the exit is decided at the header before the
            // body runs; a self-loop header is its own latch and tests after
            let exit_at_header = *bid == l.header && !l.latches.contains(bid);
            let trip_count = trip_count_for(iv, pred, tested_upd, &bound, exit_at_header);
            candidates.push((
                k,
                GoverningIVInfo {
                    exit_compare: cmp_id,
                    exit_branch: term.id,
                    bound,
                    continue_pred: pred,
                    tests_update: tested_upd,
                    exit_at_header,
                    trip_count,
                },
            ));
        }
    }
    candidates.sort_by_key(|(k, g)| (*k, g.exit_branch));
    candidates.dedup_by_key(|(k, g)| (*k, g.exit_branch));
    match candidates.as_slice() {
        [single] => Some(single.clone()),
        _ => None,
    }
}

fn trip_count_for(
    iv: &InductionVariable,
    pred: ComparePred,
    tested_upd: bool,
    bound: &ValueRef,
    exit_at_header: bool,
) -> Option<i64> {
    let start = iv.literal_start()?;
    let step = iv.literal_step()?;
    let ValueRef::Lit(bound) = *bound else { return None };
    // tested value at test k: phi form start + k*step, update form shifts by
    // one step
    let test_start = if tested_upd { start.checked_add(step)? } else { start };
    let k0 = first_failing(pred, test_start, step, bound)?;
    // pre-test (exit at header): bodies = k0; post-test: the body of the
    // failing test already ran, bodies = k0 + 1
    if exit_at_header {
        Some(k0)
    } else {
        k0.checked_add(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepperError {
    NotBasic,
    NonLiteralStep,
    BadFactorOffset,
    UnsupportedShape(String),
}

impl fmt::Display for StepperError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepperError::NotBasic => write!(f, "only basic induction variables can be stepped"),
            StepperError::NonLiteralStep => write!(f, "step must be a literal"),
            StepperError::BadFactorOffset => write!(f, "need factor >= 1 and 0 <= offset < factor"),
            StepperError::UnsupportedShape(s) => write!(f, "unsupported loop shape: {}", s),
        }
    }
}

impl std::error::Error for StepperError {}

/// Rewrite the loop so the IV visits start + offset*step, then strides by
/// factor*step. With factor 1 and offset 0 the module is unchanged.
pub fn scale_iv_step(
    m: &ModuleIR,
    l: &LoopStructure,
    iv: &InductionVariable,
    factor: i64,
    offset: i64,
) -> Result<ModuleIR, StepperError> {
    if !iv.is_basic() {
        return Err(StepperError::NotBasic);
    }
    let step = match &iv.step {
        ValueRef::Lit(s) => *s,
        _ => return Err(StepperError::NonLiteralStep),
    };
    if factor < 1 || offset < 0 || offset >= factor {
        return Err(StepperError::BadFactorOffset);
    }
    let gov = iv.governing.as_ref().ok_or_else(|| {
        StepperError::UnsupportedShape("no governing compare".to_string())
    })?;
    let idx = ModuleIndex::new(m);
    let cmp = idx.instr(gov.exit_compare);
    if !matches!(cmp.op, Opcode::Slt | Opcode::Sle | Opcode::Sgt | Opcode::Sge) {
        return Err(StepperError::UnsupportedShape(format!(
            "compare '{}' is not an inequality",
            cmp.op.name()
        )));
    }
    if factor == 1 && offset == 0 {
        return Ok(m.clone());
    }

    // capture stable names before any mutation (ids are reassigned by edits)
    let phi_name = idx.instr(iv.header_phi).result.clone().unwrap();
    let upd_name = idx.instr(iv.update).result.clone().unwrap();
    let f_orig = &m.functions[l.func.0 as usize];
    let fn_name = f_orig.name.clone();
    let latch_labels: BTreeSet<String> = l
        .latches
        .iter()
        .map(|b| f_orig.blocks[f_orig.blocks.iter().position(|x| x.id == *b).unwrap()].label.clone())
        .collect();

    let mut m2 = m.clone();
    let effective = iv.literal_step().ok_or(StepperError::NonLiteralStep)?;
    let delta = offset.checked_mul(effective).ok_or(StepperError::BadFactorOffset)?;
    let new_start: ValueRef = match (&iv.start, delta) {
        (_, 0) => iv.start.clone(),
        (ValueRef::Lit(s), d) => ValueRef::Lit(s.wrapping_add(d)),
        (start, _) => {
            // materialize start + delta at the end of the preheader
            let start = start.clone();
            let (m3, l3) = create_preheader(&m2, l);
            m2 = m3;
            let ph = l3.preheader.expect("created");
            let f = m2.function_mut(&fn_name).unwrap();
            let fresh = fresh_name(f, "ivs");
            let bi = f.blocks.iter().position(|b| b.id == ph).unwrap();
            let at = f.blocks[bi].instrs.len() - 1;
            f.blocks[bi].instrs.insert(
                at,
                Instruction {
                    id: InstrId(0),
                    op: Opcode::Add,
                    result: Some(fresh.clone()),
                    operands: vec![start, ValueRef::Lit(delta)],
                },
            );
            ValueRef::Ssa(fresh)
        }
    };

    let f = m2.function_mut(&fn_name).unwrap();
    for b in &mut f.blocks {
        for ins in &mut b.instrs {
            if ins.op == Opcode::Phi && ins.result.as_deref() == Some(phi_name.as_str()) {
                let arms = ins.operands.len() / 2;
                for k in 0..arms {
                    let is_latch_arm = match &ins.operands[2 * k] {
                        ValueRef::Label(lbl) => latch_labels.contains(lbl),
                        _ => false,
                    };
                    if !is_latch_arm {
                        ins.operands[2 * k + 1] = new_start.clone();
                    }
                }
            }
            if ins.result.as_deref() == Some(upd_name.as_str()) {
                for op in ins.operands.iter_mut() {
                    if *op == ValueRef::Lit(step) {
                        *op = ValueRef::Lit(
                            step.checked_mul(factor).ok_or(StepperError::BadFactorOffset)?,
                        );
                    }
                }
            }
        }
    }
    assign_ids(&mut m2);
    Ok(m2)
}

/// A result name not used anywhere in the function.
pub fn fresh_name(f: &FunctionIR, base: &str) -> String {
    let mut used: BTreeSet<&str> = f.params.iter().map(|(n, _)| n.as_str()).collect();
    for ins in f.instrs() {
        if let Some(r) = &ins.result {
            used.insert(r);
        }
    }
    let mut k = 0;
    loop {
        let cand = format!("{}{}", base, k);
        if !used.contains(cand.as_str()) {
            return cand;
        }
        k += 1;
    }
}
