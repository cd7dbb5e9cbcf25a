//! Structural loop edits: dedicated preheader creation and hoisting an
//! instruction into it. Both return fresh modules with reassigned ids; the
//! caller re-derives any analyses it still needs.

use super::iv::fresh_name;
use super::{LoopAnalysis, LoopStructure};
use crate::alias::{ModRefSummaries, OffsetInfo, PointsToResult};
use crate::ir::*;
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HoistError {
    NotInvariant,
    UnsafeToHoist(String),
    UnknownLoop,
}

impl fmt::Display for HoistError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HoistError::NotInvariant => write!(f, "instruction is not invariant in the loop"),
            HoistError::UnsafeToHoist(why) => write!(f, "unsafe to hoist: {}", why),
            HoistError::UnknownLoop => write!(f, "loop not found after edit"),
        }
    }
}

impl std::error::Error for HoistError {}

fn fresh_label(f: &FunctionIR, base: &str) -> String {
    let used: BTreeSet<&str> = f.blocks.iter().map(|b| b.label.as_str()).collect();
    if !used.contains(base) {
        return base.to_string();
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

/// Re-find a loop in a rewritten module by its header label.
fn refind_loop(m: &ModuleIR, fn_name: &str, header_label: &str) -> Option<LoopStructure> {
    let f = m.function(fn_name)?;
    let header = f.blocks[f.block_index(header_label)?].id;
    LoopAnalysis::of_module(m).loops.iter().find(|l| l.header == header).cloned()
}

/// Ensure the loop has a dedicated preheader: a block whose single successor
/// is the header, carrying every entry edge. Identity when one already
/// exists. Entry phi arms are merged; when several outside predecessors feed
/// different values, a phi is introduced in the preheader.
pub fn create_preheader(m: &ModuleIR, l: &LoopStructure) -> (ModuleIR, LoopStructure) {
    if l.preheader.is_some() {
        return (m.clone(), l.clone());
    }
    let mut m2 = m.clone();
    let fi = l.func.0 as usize;
    let fn_name = m.functions[fi].name.clone();
    let f = &mut m2.functions[fi];
    let header_bi = f.blocks.iter().position(|b| b.id == l.header).unwrap();
    let header_label = f.blocks[header_bi].label.clone();
    let latch_labels: BTreeSet<String> = l
        .latches
        .iter()
        .map(|b| f.blocks[f.blocks.iter().position(|x| x.id == *b).unwrap()].label.clone())
        .collect();
    let outside_pred_labels: Vec<String> = f
        .blocks
        .iter()
        .filter(|b| {
            !l.blocks.contains(&b.id)
                && b.successor_labels().iter().any(|s| *s == header_label)
        })
        .map(|b| b.label.clone())
        .collect();

    let ph_label = fresh_label(f, &format!("{}_ph", header_label));

    // collect header phi rewrites first: outside arms move to the preheader
    struct PhiFix {
        instr_pos: usize,
        outside_arms: Vec<(String, ValueRef)>,
    }
    let mut fixes: Vec<PhiFix> = Vec::new();
    for (pos, ins) in f.blocks[header_bi].instrs.iter().enumerate() {
        if ins.op != Opcode::Phi {
            continue;
        }
        let outside_arms: Vec<(String, ValueRef)> = ins
            .phi_arms()
            .filter(|(lbl, _)| !latch_labels.contains(*lbl))
            .map(|(lbl, v)| (lbl.to_string(), v.clone()))
            .collect();
        fixes.push(PhiFix { instr_pos: pos, outside_arms });
    }

    // build the preheader block, with merge phis when needed
    let mut ph_instrs: Vec<Instruction> = Vec::new();
    let mut incoming_value: Vec<ValueRef> = Vec::new();
    for fix in &fixes {
        let distinct: BTreeSet<String> =
            fix.outside_arms.iter().map(|(_, v)| format!("{}", v)).collect();
        if fix.outside_arms.len() > 1 && distinct.len() > 1 {
            let fresh = fresh_name(f, "ph_merge");
            let mut operands = Vec::new();
            for (lbl, v) in &fix.outside_arms {
                operands.push(ValueRef::Label(lbl.clone()));
                operands.push(v.clone());
            }
            ph_instrs.push(Instruction {
                id: InstrId(0),
                op: Opcode::Phi,
                result: Some(fresh.clone()),
                operands,
            });
            incoming_value.push(ValueRef::Ssa(fresh));
        } else {
            incoming_value.push(fix.outside_arms[0].1.clone());
        }
    }
    ph_instrs.push(Instruction {
        id: InstrId(0),
        op: Opcode::Br,
        result: None,
        operands: vec![ValueRef::Label(header_label.clone())],
    });

    // rewrite header phis: outside arms collapse into one preheader arm
    for (k, fix) in fixes.iter().enumerate() {
        let ins = &mut f.blocks[header_bi].instrs[fix.instr_pos];
        let mut operands = Vec::new();
        operands.push(ValueRef::Label(ph_label.clone()));
        operands.push(incoming_value[k].clone());
        let arms = ins.operands.len() / 2;
        for a in 0..arms {
            if let ValueRef::Label(lbl) = &ins.operands[2 * a] {
                if latch_labels.contains(lbl) {
                    operands.push(ins.operands[2 * a].clone());
                    operands.push(ins.operands[2 * a + 1].clone());
                }
            }
        }
        ins.operands = operands;
    }

    // redirect outside predecessors to the preheader
    for b in &mut f.blocks {
        if outside_pred_labels.contains(&b.label) {
            let term = b.instrs.last_mut().unwrap();
            for op in term.operands.iter_mut() {
                if matches!(op, ValueRef::Label(lbl) if *lbl == header_label) {
                    *op = ValueRef::Label(ph_label.clone());
                }
            }
        }
    }

    // insert the preheader right before the header
    f.blocks.insert(
        header_bi,
        BasicBlock { id: BlockId(0), label: ph_label, instrs: ph_instrs },
    );
    assign_ids(&mut m2);
    let l2 = refind_loop(&m2, &fn_name, &header_label).expect("loop survives preheader creation");
    (m2, l2)
}

/// Is the instruction safe to execute even on loop-skipping paths?
pub fn speculatable(ins: &Instruction, func: FuncId, pts: &PointsToResult) -> bool {
    use Opcode::*;
    match ins.op {
        Add | Sub | Mul | And | Or | Xor | Shl | Lshr | Eq | Ne | Slt | Sle | Sgt | Sge
        | Select | Gep | Funcptr | Alloca => true,
        Sdiv | Srem => matches!(ins.operands[1], ValueRef::Lit(d) if d != 0),
        Load => {
            // provably in-bounds: every (object, offset) pair is a known
            // constant cell inside the object
            let set = pts.of_operand(func, &ins.operands[0]);
            !set.is_empty()
                && set.iter().all(|(o, off)| match off {
                    OffsetInfo::Const(k) => {
                        let obj = pts.table.get(*o);
                        *k >= 0 && (*k as u64) < obj.size
                    }
                    OffsetInfo::Top => false,
                })
        }
        _ => false,
    }
}

/// Move an invariant instruction to the end of the loop's preheader.
///
/// Safety: stores are rejected; calls only when they neither write memory nor
/// print; everything else must either dominate all loop exits (it ran on
/// every complete trip anyway) or be speculatable.
pub fn hoist_to_preheader(
    m: &ModuleIR,
    l: &LoopStructure,
    i: InstrId,
    invariants: &BTreeSet<InstrId>,
    pts: &PointsToResult,
    modref: &ModRefSummaries,
) -> Result<ModuleIR, HoistError> {
    if !invariants.contains(&i) {
        return Err(HoistError::NotInvariant);
    }
    let idx = ModuleIndex::new(m);
    let ins = idx.instr(i).clone();
    let func = l.func;
    match ins.op {
        Opcode::Store => {
            return Err(HoistError::UnsafeToHoist("stores are never hoisted".to_string()))
        }
        Opcode::Print => {
            return Err(HoistError::UnsafeToHoist("print is effectful".to_string()))
        }
        Opcode::Call | Opcode::Icall => {
            let (mods, _refs) = modref.call_objects(m, pts, &ins, func);
            if !mods.is_empty() {
                return Err(HoistError::UnsafeToHoist("callee writes memory".to_string()));
            }
            let callees: Vec<FuncId> = match ins.op {
                Opcode::Call => {
                    ins.callee().and_then(|n| m.function(n)).map(|g| g.id).into_iter().collect()
                }
                _ => pts.icall_candidates(m, func, &ins.operands[0], ins.operands.len() - 1),
            };
            if callees.is_empty() {
                return Err(HoistError::UnsafeToHoist("unresolved callee".to_string()));
            }
            if callees.iter().any(|c| modref.may_print[c]) {
                return Err(HoistError::UnsafeToHoist("callee may print".to_string()));
            }
        }
        _ => {}
    }

    // every operand must already live outside the loop, or SSA would break
    let f_ref = &m.functions[func.0 as usize];
    for u in ins.uses() {
        if let Some(DefSite::Instr { id, .. }) = f_ref.def_site(u) {
            if l.blocks.contains(&idx.block_of_instr(id)) {
                return Err(HoistError::UnsafeToHoist(format!(
                    "operand %{} is still defined inside the loop",
                    u
                )));
            }
        }
    }

    // dominate-all-exits or speculatable
    let dom = compute_dominators(&m.functions[func.0 as usize], Direction::Forward);
    let my_block = idx.block_of_instr(i);
    let dominates_exits = l.exits.iter().all(|(b, _)| dom.dominates(my_block, *b));
    if !dominates_exits && !speculatable(&ins, func, pts) {
        return Err(HoistError::UnsafeToHoist(
            "does not dominate the exits and may trap".to_string(),
        ));
    }

    let fn_name = m.functions[func.0 as usize].name.clone();
    let header_label = {
        let f = &m.functions[func.0 as usize];
        f.blocks[f.blocks.iter().position(|b| b.id == l.header).unwrap()].label.clone()
    };
    // the instruction is re-found after preheader creation by result name (or
    // by shape for result-less instructions, which cannot be hoisted anyway)
    let result_name =
        ins.result.clone().ok_or_else(|| HoistError::UnsafeToHoist("no result".to_string()))?;

    let (mut m2, _l2) = create_preheader(m, l);
    let f = m2.function_mut(&fn_name).unwrap();
    // remove from its block
    let mut removed = None;
    for b in &mut f.blocks {
        if let Some(pos) =
            b.instrs.iter().position(|x| x.result.as_deref() == Some(result_name.as_str()))
        {
            removed = Some(b.instrs.remove(pos));
            break;
        }
    }
    let removed = removed.ok_or(HoistError::UnknownLoop)?;
    // insert before the preheader's terminator
    let header_bi = f.block_index(&header_label).ok_or(HoistError::UnknownLoop)?;
    let ph = &mut f.blocks[header_bi - 1];
    let at = ph.instrs.len() - 1;
    ph.instrs.insert(at, removed);
    assign_ids(&mut m2);
    Ok(m2)
}
