//! The augmented SCCDAG of a loop: Tarjan condensation of the loop dependence
//! graph (control + data edges), with each SCC classified Independent,
//! Sequential, or Reducible, and reduction descriptors for the reducible ones.

use crate::ir::*;
use crate::loops::LoopStructure;
use crate::pdg::{Carried, DependenceGraph};
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scc {
    pub id: usize,
    pub members: BTreeSet<InstrId>,
    pub has_internal_loop_carried: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReductionOp {
    Add,
    Mul,
    And,
    Or,
    Xor,
    MinPattern,
    MaxPattern,
}

impl ReductionOp {
    pub fn identity(self) -> i64 {
        match self {
            ReductionOp::Add | ReductionOp::Or | ReductionOp::Xor => 0,
            ReductionOp::Mul => 1,
            ReductionOp::And => -1,
            ReductionOp::MinPattern => i64::MAX,
            ReductionOp::MaxPattern => i64::MIN,
        }
    }

    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            ReductionOp::Add => a.wrapping_add(b),
            ReductionOp::Mul => a.wrapping_mul(b),
            ReductionOp::And => a & b,
            ReductionOp::Or => a | b,
            ReductionOp::Xor => a ^ b,
            ReductionOp::MinPattern => a.min(b),
            ReductionOp::MaxPattern => a.max(b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReductionOp::Add => "add",
            ReductionOp::Mul => "mul",
            ReductionOp::And => "and",
            ReductionOp::Or => "or",
            ReductionOp::Xor => "xor",
            ReductionOp::MinPattern => "min",
            ReductionOp::MaxPattern => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionInfo {
    pub accumulator_phi: InstrId,
    pub update: InstrId,
    pub op: ReductionOp,
    pub identity: i64,
    /// An external use of the accumulator (the live-out), when present.
    pub live_out: Option<InstrId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SccKind {
    Independent,
    Sequential,
    Reducible(ReductionInfo),
}

impl SccKind {
    pub fn name(&self) -> &'static str {
        match self {
            SccKind::Independent => "independent",
            SccKind::Sequential => "sequential",
            SccKind::Reducible(_) => "reducible",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SccDag {
    pub sccs: Vec<Scc>,
    /// Condensation edges, deduplicated.
    pub edges: BTreeSet<(usize, usize)>,
    pub kinds: Vec<SccKind>,
}

impl SccDag {
    pub fn scc_of(&self, i: InstrId) -> Option<usize> {
        self.sccs.iter().position(|s| s.members.contains(&i))
    }

    pub fn is_acyclic(&self) -> bool {
        // Kahn over the condensation
        let n = self.sccs.len();
        let mut indeg = vec![0usize; n];
        for (_, d) in &self.edges {
            indeg[*d] += 1;
        }
        let mut q: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(x) = q.pop() {
            seen += 1;
            for (s, d) in &self.edges {
                if *s == x {
                    indeg[*d] -= 1;
                    if indeg[*d] == 0 {
                        q.push(*d);
                    }
                }
            }
        }
        seen == n
    }

    pub fn to_dot(&self, m: &ModuleIR) -> String {
        let idx = ModuleIndex::new(m);
        let mut out = String::from("digraph sccdag {\n");
        for (k, s) in self.sccs.iter().enumerate() {
            let color = match &self.kinds[k] {
                SccKind::Independent => "green",
                SccKind::Sequential => "red",
                SccKind::Reducible(_) => "blue",
            };
            let mut label = String::new();
            for i in &s.members {
                let _ = write!(label, "I{}: {}\\n", i.0, instr_to_string(idx.instr(*i)));
            }
            let _ = writeln!(
                out,
                "  s{} [shape=box, color={}, label=\"SCC#{} [{}]\\n{}\"];",
                k,
                color,
                k,
                self.kinds[k].name(),
                label.replace('"', "'")
            );
        }
        for (s, d) in &self.edges {
            let _ = writeln!(out, "  s{} -> s{};", s, d);
        }
        out.push_str("}\n");
        out
    }
}

/// Tarjan condensation over the internal nodes and internal edges of a loop
/// dependence graph. SCCs are ordered by minimum member ordinal.
pub fn build_sccdag(ldg: &DependenceGraph) -> SccDag {
    let nodes: Vec<InstrId> = ldg.internal.iter().copied().collect();
    let index_of: HashMap<InstrId, usize> =
        nodes.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    let n = nodes.len();
    let mut succs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in &ldg.edges {
        if let (Some(&s), Some(&d)) = (index_of.get(&e.src), index_of.get(&e.dst)) {
            succs[s].insert(d);
        }
    }

    struct St<'a> {
        succs: &'a [BTreeSet<usize>],
        index: usize,
        idx: Vec<Option<usize>>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        comps: Vec<Vec<usize>>,
    }
    fn strongconnect(v: usize, st: &mut St) {
        st.idx[v] = Some(st.index);
        st.low[v] = st.index;
        st.index += 1;
        st.stack.push(v);
        st.on[v] = true;
        for &w in st.succs[v].iter() {
            if st.idx[w].is_none() {
                strongconnect(w, st);
                st.low[v] = st.low[v].min(st.low[w]);
            } else if st.on[w] {
                st.low[v] = st.low[v].min(st.idx[w].unwrap());
            }
        }
        if st.low[v] == st.idx[v].unwrap() {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().expect("tarjan stack");
                st.on[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            st.comps.push(comp);
        }
    }

    let mut st = St {
        succs: &succs,
        index: 0,
        idx: vec![None; n],
        low: vec![0; n],
        on: vec![false; n],
        stack: Vec::new(),
        comps: Vec::new(),
    };
    for v in 0..n {
        if st.idx[v].is_none() {
            strongconnect(v, &mut st);
        }
    }

    let mut comps: Vec<BTreeSet<InstrId>> = st
        .comps
        .into_iter()
        .map(|c| c.into_iter().map(|k| nodes[k]).collect())
        .collect();
    comps.sort_by_key(|c| *c.iter().next().unwrap());

    let scc_index: HashMap<InstrId, usize> = comps
        .iter()
        .enumerate()
        .flat_map(|(k, c)| c.iter().map(move |i| (*i, k)))
        .collect();
    let mut edges = BTreeSet::new();
    for e in &ldg.edges {
        if let (Some(&s), Some(&d)) = (scc_index.get(&e.src), scc_index.get(&e.dst)) {
            if s != d {
                edges.insert((s, d));
            }
        }
    }
    let sccs: Vec<Scc> = comps
        .into_iter()
        .enumerate()
        .map(|(id, members)| Scc { id, members, has_internal_loop_carried: false })
        .collect();
    let kinds = vec![SccKind::Independent; sccs.len()];
    SccDag { sccs, edges, kinds }
}

fn scc_carried(s: &Scc, ldg: &DependenceGraph, l: &LoopStructure) -> bool {
    s.members.iter().any(|i| {
        ldg.edges_from(*i).any(|e| {
            s.members.contains(&e.dst)
                && matches!(e.carried_for(l.id), Carried::True | Carried::Unknown)
        })
    })
}

/// Independent iff no member-to-member edge is (or may be) loop-carried;
/// otherwise Reducible when the reduction pattern matches; else Sequential.
pub fn classify_scc(
    s: &Scc,
    ldg: &DependenceGraph,
    l: &LoopStructure,
    m: &ModuleIR,
) -> SccKind {
    if !scc_carried(s, ldg, l) {
        return SccKind::Independent;
    }
    match detect_reduction(s, ldg, l, m) {
        Some(r) => SccKind::Reducible(r),
        None => SccKind::Sequential,
    }
}

/// Classify every SCC of a dag in place and fill the carried flags.
pub fn classify_all(dag: &mut SccDag, ldg: &DependenceGraph, l: &LoopStructure, m: &ModuleIR) {
    for k in 0..dag.sccs.len() {
        dag.sccs[k].has_internal_loop_carried = scc_carried(&dag.sccs[k], ldg, l);
        dag.kinds[k] = classify_scc(&dag.sccs[k], ldg, l, m);
    }
}

/// The reduction pattern: an accumulator header phi whose latch arm applies a
/// commutative-associative op to the phi and an out-of-SCC value, with no
/// memory traffic inside the SCC and no in-loop uses outside it. Min/max are
/// the cmp+select encoding; both instructions join the SCC.
pub fn detect_reduction(
    s: &Scc,
    _ldg: &DependenceGraph,
    l: &LoopStructure,
    m: &ModuleIR,
) -> Option<ReductionInfo> {
    let idx = ModuleIndex::new(m);
    let f = &m.functions[l.func.0 as usize];
    // no member may touch memory
    if s.members.iter().any(|i| idx.instr(*i).op.touches_memory()) {
        return None;
    }
    // exactly one header phi in the SCC
    let phis: Vec<InstrId> = s
        .members
        .iter()
        .copied()
        .filter(|i| {
            idx.instr(*i).op == Opcode::Phi && idx.block_of_instr(*i) == l.header
        })
        .collect();
    let [phi_id] = phis.as_slice() else { return None };
    let phi = idx.instr(*phi_id);
    let phi_name = phi.result.as_deref()?;

    // the latch arm: a single update value for all latches
    let latch_labels: BTreeSet<&str> = l
        .latches
        .iter()
        .map(|b| f.blocks[f.blocks.iter().position(|x| x.id == *b).unwrap()].label.as_str())
        .collect();
    let mut update_name: Option<&str> = None;
    for (lbl, v) in phi.phi_arms() {
        if latch_labels.contains(lbl) {
            match (update_name, v.as_ssa()) {
                (None, Some(n)) => update_name = Some(n),
                (Some(prev), Some(n)) if prev == n => {}
                _ => return None,
            }
        }
    }
    let update_name = update_name?;
    let DefSite::Instr { id: update_id, .. } = f.def_site(update_name)? else { return None };
    if !s.members.contains(&update_id) {
        return None;
    }
    let upd = idx.instr(update_id);

    let value_is = |v: &ValueRef, name: &str| matches!(v, ValueRef::Ssa(n) if n == name);
    let outside_scc = |v: &ValueRef| match v {
        ValueRef::Ssa(n) => match f.def_site(n) {
            Some(DefSite::Instr { id, .. }) => !s.members.contains(&id),
            _ => true,
        },
        _ => true,
    };

    let op = match upd.op {
        Opcode::Add => Some(ReductionOp::Add),
        Opcode::Mul => Some(ReductionOp::Mul),
        Opcode::And => Some(ReductionOp::And),
        Opcode::Or => Some(ReductionOp::Or),
        Opcode::Xor => Some(ReductionOp::Xor),
        Opcode::Select => None,
        _ => return None,
    };

    let mut expected: BTreeSet<InstrId> = [*phi_id, update_id].into_iter().collect();
    let op = match op {
        Some(op) => {
            // update = op(phi, x) with x from outside the SCC
            let (a, b) = (&upd.operands[0], &upd.operands[1]);
            let ok = (value_is(a, phi_name) && outside_scc(b))
                || (value_is(b, phi_name) && outside_scc(a));
            if !ok {
                return None;
            }
            op
        }
        None => {
            // min/max: select over a compare of {phi, x}
            let cond = upd.operands[0].as_ssa()?;
            let DefSite::Instr { id: cmp_id, .. } = f.def_site(cond)? else { return None };
            if !s.members.contains(&cmp_id) {
                return None;
            }
            let cmp = idx.instr(cmp_id);
            if !cmp.op.is_cmp() {
                return None;
            }
            expected.insert(cmp_id);
            let (ca, cb) = (&cmp.operands[0], &cmp.operands[1]);
            let (sa, sb) = (&upd.operands[1], &upd.operands[2]);
            // identify which operand is the accumulator
            let phi_in_cmp_lhs = value_is(ca, phi_name);
            let phi_in_cmp_rhs = value_is(cb, phi_name);
            if phi_in_cmp_lhs == phi_in_cmp_rhs {
                return None;
            }
            let other_cmp = if phi_in_cmp_lhs { cb } else { ca };
            if !outside_scc(other_cmp) {
                return None;
            }
            // select arms must be {phi, other}
            let arms_ok = (value_is(sa, phi_name) && sb == other_cmp)
                || (value_is(sb, phi_name) && sa == other_cmp);
            if !arms_ok {
                return None;
            }
            // normalize to min or max: when the condition is true the select
            // yields its first arm
            let lt = matches!(cmp.op, Opcode::Slt | Opcode::Sle);
            let gt = matches!(cmp.op, Opcode::Sgt | Opcode::Sge);
            if !lt && !gt {
                return None;
            }
            // cond says: lhs (op) rhs. The selected-on-true arm keeps the
            // smaller side for min, larger for max.
            let true_arm_is_cmp_lhs = (value_is(sa, phi_name) && phi_in_cmp_lhs)
                || (!value_is(sa, phi_name) && !phi_in_cmp_lhs);
            match (lt, true_arm_is_cmp_lhs) {
                (true, true) | (false, false) => ReductionOp::MinPattern,
                _ => ReductionOp::MaxPattern,
            }
        }
    };

    if s.members != expected {
        return None;
    }

    // external uses of phi/update must be outside the loop (live-outs)
    let mut live_out = None;
    for member in [*phi_id, update_id] {
        let name = idx.instr(member).result.as_deref().unwrap();
        for user in f.instrs() {
            if user.id == *phi_id || user.id == update_id {
                continue;
            }
            let uses_it = user.uses().contains(&name)
                || (user.op == Opcode::Phi && user.phi_arms().any(|(_, v)| value_is(v, name)));
            if uses_it {
                if l.blocks.contains(&idx.block_of_instr(user.id)) {
                    if !s.members.contains(&user.id) {
                        return None; // consumed inside the loop: not privatizable
                    }
                } else {
                    live_out.get_or_insert(user.id);
                }
            }
        }
    }

    Some(ReductionInfo {
        accumulator_phi: *phi_id,
        update: update_id,
        op,
        identity: op.identity(),
        live_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alias::compute_points_to;
    use crate::callgraph::build_call_graph;
    use crate::ir::parse_module;
    use crate::loops::LoopAnalysis;
    use crate::pdg::{build_pdg, loop_dg_raw};

    fn dag_for(src: &str) -> (ModuleIR, LoopAnalysis, DependenceGraph, SccDag) {
        let m = parse_module(src).unwrap();
        assert!(verify_module(&m).is_empty(), "{:?}", verify_module(&m));
        let la = LoopAnalysis::of_module(&m);
        let pts = compute_points_to(&m);
        let cg = build_call_graph(&m, &pts);
        let pdg = build_pdg(&m, &pts, &cg);
        let ldg = loop_dg_raw(&pdg, &m, &la.loops[0]);
        let mut dag = build_sccdag(&ldg);
        let l = la.loops[0].clone();
        classify_all(&mut dag, &ldg, &l, &m);
        (m, la, ldg, dag)
    }

    const SUM_LOOP: &str = "\
func @main() -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %s = phi [entry: 0], [body: %s2]
  %c = slt %i, 10
  brcond %c, body, done
body:
  %s2 = add %s, %i
  %i2 = add %i, 1
  br header
done:
  ret %s
}";

    #[test]
    fn accumulator_is_reducible() {
        let (m, _, _, dag) = dag_for(SUM_LOOP);
        assert!(dag.is_acyclic());
        let f = &m.functions[0];
        let s_phi = f
            .instrs()
            .find(|i| i.result.as_deref() == Some("s"))
            .unwrap()
            .id;
        let k = dag.scc_of(s_phi).unwrap();
        match &dag.kinds[k] {
            SccKind::Reducible(r) => {
                assert_eq!(r.op, ReductionOp::Add);
                assert_eq!(r.identity, 0);
                assert!(r.live_out.is_some());
            }
            other => panic!("expected reducible, got {:?}", other.name()),
        }
    }

    #[test]
    fn subtraction_is_not_a_reduction() {
        let src = SUM_LOOP.replace("%s2 = add %s, %i", "%s2 = sub %s, %i");
        let (m, _, _, dag) = dag_for(&src);
        let f = &m.functions[0];
        let s_phi = f.instrs().find(|i| i.result.as_deref() == Some("s")).unwrap().id;
        let k = dag.scc_of(s_phi).unwrap();
        assert_eq!(dag.kinds[k].name(), "sequential");
    }

    #[test]
    fn max_via_cmp_select() {
        let (m, _, _, dag) = dag_for(
            "global @a: i64[4] = [3, 9, 2, 7]
func @main() -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %best = phi [entry: -9223372036854775807], [body: %best2]
  %c = slt %i, 4
  brcond %c, body, done
body:
  %p = gep @a, %i
  %v = load %p
  %isbig = sgt %v, %best
  %best2 = select %isbig, %v, %best
  %i2 = add %i, 1
  br header
done:
  ret %best
}",
        );
        let f = &m.functions[0];
        let phi = f.instrs().find(|i| i.result.as_deref() == Some("best")).unwrap().id;
        let k = dag.scc_of(phi).unwrap();
        match &dag.kinds[k] {
            SccKind::Reducible(r) => assert_eq!(r.op, ReductionOp::MaxPattern),
            other => panic!("expected max reduction, got {}", other.name()),
        }
    }

    #[test]
    fn pointer_chase_is_sequential() {
        let (m, _, _, dag) = dag_for(
            "global @next: i64[8] = [1, 2, 3, 4, 5, 6, 7, 0]
func @main() -> i64 {
entry:
  br header
header:
  %cur = phi [entry: 0], [body: %nxt]
  %n = phi [entry: 0], [body: %n2]
  %c = slt %n, 6
  brcond %c, body, done
body:
  %p = gep @next, %cur
  %nxt = load %p
  %n2 = add %n, 1
  br header
done:
  ret %cur
}",
        );
        let f = &m.functions[0];
        let cur = f.instrs().find(|i| i.result.as_deref() == Some("cur")).unwrap().id;
        let k = dag.scc_of(cur).unwrap();
        assert_eq!(dag.kinds[k].name(), "sequential");
    }
}
