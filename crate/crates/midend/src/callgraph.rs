//! Complete program call graph: direct edges plus indirect-call edges
//! resolved through points-to sets, with may/must certainty, per-call-site
//! sub-edges, island computation, and reachability.

use crate::alias::PointsToResult;
use crate::ir::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Certainty {
    May,
    Must,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallEdge {
    pub caller: FuncId,
    pub callee: FuncId,
    pub certainty: Certainty,
    /// Call-site instructions realizing this edge.
    pub sub_edges: BTreeSet<InstrId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Island {
    pub members: BTreeSet<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    pub nodes: Vec<FuncId>,
    pub edges: Vec<CallEdge>,
    /// Call sites whose resolved callee set is empty (unsound input).
    pub unresolved_icalls: Vec<InstrId>,
}

impl CallGraph {
    pub fn edge(&self, caller: FuncId, callee: FuncId) -> Option<&CallEdge> {
        self.edges.iter().find(|e| e.caller == caller && e.callee == callee)
    }

    pub fn callees_of(&self, f: FuncId) -> impl Iterator<Item = &CallEdge> {
        self.edges.iter().filter(move |e| e.caller == f)
    }

    pub fn callers_of(&self, f: FuncId) -> impl Iterator<Item = &CallEdge> {
        self.edges.iter().filter(move |e| e.callee == f)
    }

    pub fn dump(&self, m: &ModuleIR) -> String {
        let name = |id: FuncId| m.functions[id.0 as usize].name.as_str();
        let mut out = String::new();
        for e in &self.edges {
            let sites: Vec<String> = e.sub_edges.iter().map(|s| format!("#{}", s.0)).collect();
            let _ = writeln!(
                out,
                "{} -> {} [{}] via {}",
                name(e.caller),
                name(e.callee),
                match e.certainty {
                    Certainty::May => "may",
                    Certainty::Must => "must",
                },
                sites.join(",")
            );
        }
        out
    }

    pub fn to_dot(&self, m: &ModuleIR) -> String {
        let name = |id: FuncId| m.functions[id.0 as usize].name.as_str();
        let mut out = String::from("digraph callgraph {\n");
        for f in &self.nodes {
            let _ = writeln!(out, "  \"{}\";", name(*f));
        }
        for e in &self.edges {
            let style = match e.certainty {
                Certainty::Must => "solid",
                Certainty::May => "dashed",
            };
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [style={}, label=\"{}\"];",
                name(e.caller),
                name(e.callee),
                style,
                e.sub_edges.len()
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Build the complete call graph. Direct sites give must edges; icall sites
/// contribute every arity-matching function in the target's points-to set,
/// must only when that candidate set is a singleton.
pub fn build_call_graph(m: &ModuleIR, pts: &PointsToResult) -> CallGraph {
    let mut edges: BTreeMap<(FuncId, FuncId), (Certainty, BTreeSet<InstrId>)> = BTreeMap::new();
    let mut unresolved = Vec::new();
    for f in &m.functions {
        for ins in f.instrs() {
            match ins.op {
                Opcode::Call => {
                    if let Some(g) = ins.callee().and_then(|n| m.function(n)) {
                        let e = edges
                            .entry((f.id, g.id))
                            .or_insert((Certainty::May, BTreeSet::new()));
                        e.0 = Certainty::Must;
                        e.1.insert(ins.id);
                    }
                }
                Opcode::Icall => {
                    let cands =
                        pts.icall_candidates(m, f.id, &ins.operands[0], ins.operands.len() - 1);
                    if cands.is_empty() {
                        unresolved.push(ins.id);
                        continue;
                    }
                    let certainty =
                        if cands.len() == 1 { Certainty::Must } else { Certainty::May };
                    for c in cands {
                        let e = edges
                            .entry((f.id, c))
                            .or_insert((Certainty::May, BTreeSet::new()));
                        if certainty == Certainty::Must {
                            e.0 = Certainty::Must;
                        }
                        e.1.insert(ins.id);
                    }
                }
                _ => {}
            }
        }
    }
    CallGraph {
        nodes: m.functions.iter().map(|f| f.id).collect(),
        edges: edges
            .into_iter()
            .map(|((caller, callee), (certainty, sub_edges))| CallEdge {
                caller,
                callee,
                certainty,
                sub_edges,
            })
            .collect(),
        unresolved_icalls: unresolved,
    }
}

/// Connected components of the undirected edge relation, ordered by minimum
/// member name.
pub fn islands(cg: &CallGraph, m: &ModuleIR) -> Vec<Island> {
    let n = cg.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    for e in &cg.edges {
        let a = find(&mut parent, e.caller.0 as usize);
        let b = find(&mut parent, e.callee.0 as usize);
        if a != b {
            parent[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for f in &cg.nodes {
        let r = find(&mut parent, f.0 as usize);
        groups
            .entry(r)
            .or_default()
            .insert(m.functions[f.0 as usize].name.clone());
    }
    let mut out: Vec<Island> = groups.into_values().map(|members| Island { members }).collect();
    out.sort_by(|a, b| a.members.iter().next().cmp(&b.members.iter().next()));
    out
}

/// Forward closure over may+must edges from the given roots.
pub fn reachable_functions(cg: &CallGraph, roots: &BTreeSet<FuncId>) -> BTreeSet<FuncId> {
    let mut seen: BTreeSet<FuncId> = roots.clone();
    let mut stack: Vec<FuncId> = roots.iter().copied().collect();
    while let Some(f) = stack.pop() {
        for e in cg.callees_of(f) {
            if seen.insert(e.callee) {
                stack.push(e.callee);
            }
        }
    }
    seen
}

/// Functions whose address is taken (funcptr) anywhere in the module.
pub fn address_taken(m: &ModuleIR) -> BTreeSet<FuncId> {
    let mut out = BTreeSet::new();
    for f in &m.functions {
        for ins in f.instrs() {
            if ins.op == Opcode::Funcptr {
                if let ValueRef::Func(n) = &ins.operands[0] {
                    if let Some(g) = m.function(n) {
                        out.insert(g.id);
                    }
                }
            }
        }
    }
    out
}
