//! The canonical per-loop bundle: structure, refined loop dependence graph,
//! classified SCC condensation, invariants, induction variables, and the
//! governing IV. Built in stages because the pieces feed each other: the raw
//! loop graph yields a first condensation, that yields IVs, the governing IV
//! refines the memory carried flags, and only then is the condensation
//! classified for clients.

use super::{detect_ivs, governing_iv, invariants_of_loop, InductionVariable, InvariantSet, LoopStructure};
use crate::ir::*;
use crate::pdg::{loop_dg_raw, refine_loop_carried, DependenceGraph, GoverningIvBrief};
use crate::sccdag::{build_sccdag, classify_all, SccDag};

#[derive(Debug, Clone)]
pub struct LoopContext {
    pub structure: LoopStructure,
    pub ldg: DependenceGraph,
    pub sccdag: SccDag,
    pub invariants: InvariantSet,
    pub ivs: Vec<InductionVariable>,
    /// Index into `ivs` of the governing IV, when one exists.
    pub governing: Option<usize>,
}

impl LoopContext {
    pub fn build(m: &ModuleIR, pdg: &DependenceGraph, l: &LoopStructure) -> LoopContext {
        let mut ldg = loop_dg_raw(pdg, m, l);
        let invariants = invariants_of_loop(m, l, &ldg);
        let dag0 = build_sccdag(&ldg);
        let mut ivs = detect_ivs(m, l, &dag0, &invariants);
        let gov = governing_iv(m, l, &ivs, &invariants);
        let governing = gov.as_ref().map(|(k, _)| *k);
        if let Some((k, info)) = gov {
            let brief = ivs[k]
                .literal_step()
                .map(|step| GoverningIvBrief { phi: ivs[k].header_phi, step });
            ivs[k].governing = Some(info);
            refine_loop_carried(&mut ldg, m, l, brief);
        }
        let mut sccdag = build_sccdag(&ldg);
        classify_all(&mut sccdag, &ldg, l, m);
        LoopContext { structure: l.clone(), ldg, sccdag, invariants, ivs, governing }
    }

    pub fn governing_iv(&self) -> Option<&InductionVariable> {
        self.governing.map(|k| &self.ivs[k])
    }
}

/// One line of the loop report:
/// `loop L<id> fn=@f depth=d hot=h invariants=n/naive=m ivs=k governing={yes(trip=t)|no}`
pub fn loop_report_line(
    m: &ModuleIR,
    ctx: &LoopContext,
    naive_count: usize,
    hotness: Option<f64>,
) -> String {
    let l = &ctx.structure;
    let f = &m.functions[l.func.0 as usize];
    let hot = match hotness {
        Some(h) => format!("{:.3}", h),
        None => "n/a".to_string(),
    };
    let governing = match ctx.governing_iv() {
        Some(iv) => match iv.governing.as_ref().and_then(|g| g.trip_count) {
            Some(t) => format!("yes(trip={})", t),
            None => "yes(trip=?)".to_string(),
        },
        None => "no".to_string(),
    };
    format!(
        "loop L{} fn=@{} depth={} hot={} invariants={}/naive={} ivs={} governing={}",
        l.id.0,
        f.name,
        l.depth,
        hot,
        ctx.invariants.members.len(),
        naive_count,
        ctx.ivs.len(),
        governing
    )
}
