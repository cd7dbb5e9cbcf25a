//! The attributed dependence graph: whole-program PDG, function and loop
//! views with internal/external node sets, control dependences via
//! post-dominance frontiers, and the loop-carried refinement rules.

use crate::alias::{access_address, ModRefSummaries, ObjId, PointsToResult};
use crate::callgraph::{CallGraph, Certainty};
use crate::ir::*;
use crate::loops::LoopStructure;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DepClass {
    Control,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataKind {
    Raw,
    Waw,
    War,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Raw => "raw",
            DataKind::Waw => "waw",
            DataKind::War => "war",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Medium {
    Register,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Carried {
    True,
    False,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependenceEdge {
    pub src: InstrId,
    pub dst: InstrId,
    pub class: DepClass,
    pub data_kind: Option<DataKind>,
    pub medium: Option<Medium>,
    pub certainty: Certainty,
    /// Loop-carried status per loop; absent means unknown.
    pub carried: BTreeMap<LoopId, Carried>,
}

impl DependenceEdge {
    pub fn carried_for(&self, l: LoopId) -> Carried {
        self.carried.get(&l).copied().unwrap_or(Carried::Unknown)
    }

    pub fn is_memory(&self) -> bool {
        self.medium == Some(Medium::Memory)
    }
}

/// Dependence graph with internal (in-region) and external (boundary) nodes.
#[derive(Debug, Clone, Default)]
pub struct DependenceGraph {
    pub internal: BTreeSet<InstrId>,
    pub external: BTreeSet<InstrId>,
    pub edges: Vec<DependenceEdge>,
    in_adj: HashMap<InstrId, Vec<usize>>,
    out_adj: HashMap<InstrId, Vec<usize>>,
}

impl DependenceGraph {
    pub fn new(internal: BTreeSet<InstrId>, external: BTreeSet<InstrId>) -> Self {
        DependenceGraph { internal, external, ..Default::default() }
    }

    pub fn push_edge(&mut self, e: DependenceEdge) {
        let idx = self.edges.len();
        self.in_adj.entry(e.dst).or_default().push(idx);
        self.out_adj.entry(e.src).or_default().push(idx);
        self.edges.push(e);
    }

    /// Edges whose destination is `i` (its dependence sources).
    pub fn edges_to(&self, i: InstrId) -> impl Iterator<Item = &DependenceEdge> {
        self.in_adj.get(&i).into_iter().flatten().map(move |&k| &self.edges[k])
    }

    /// Edges whose source is `i`.
    pub fn edges_from(&self, i: InstrId) -> impl Iterator<Item = &DependenceEdge> {
        self.out_adj.get(&i).into_iter().flatten().map(move |&k| &self.edges[k])
    }

    pub fn contains_node(&self, i: InstrId) -> bool {
        self.internal.contains(&i) || self.external.contains(&i)
    }

    pub fn may_memory_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| e.is_memory() && e.certainty == Certainty::May)
            .count()
    }

    pub fn memory_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.is_memory()).count()
    }

    /// Does a static edge of this data kind exist between the two nodes?
    pub fn has_data_edge(&self, src: InstrId, dst: InstrId, kind: DataKind) -> bool {
        self.edges_from(src)
            .any(|e| e.dst == dst && e.class == DepClass::Data && e.data_kind == Some(kind))
    }
}

// ---------------------------------------------------------------------------
// control dependence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ControlDependenceInfo {
    /// instruction -> set of (branch instruction, taken-edge successor block)
    pub deps: BTreeMap<InstrId, BTreeSet<(InstrId, BlockId)>>,
    /// block-level view used by the PDG builder
    pub block_deps: BTreeMap<BlockId, BTreeSet<(InstrId, BlockId)>>,
}

/// Standard construction: b is control-dependent on edge (t, s) iff b
/// post-dominates s but does not strictly post-dominate t.
pub fn control_dependences(f: &FunctionIR) -> ControlDependenceInfo {
    let pdom = compute_dominators(f, Direction::Post);
    let ipdom = |b: BlockId| pdom.idom.get(&b).copied();
    let mut info = ControlDependenceInfo::default();
    for t in &f.blocks {
        let succ = t.successor_labels();
        if succ.len() < 2 {
            continue;
        }
        let branch = t.terminator().id;
        for lbl in succ {
            let s = f.blocks[f.block_index(lbl).unwrap()].id;
            let stop = ipdom(t.id);
            let mut runner = Some(s);
            while let Some(y) = runner {
                if Some(y) == stop {
                    break;
                }
                info.block_deps.entry(y).or_default().insert((branch, s));
                runner = ipdom(y);
            }
        }
    }
    for b in &f.blocks {
        if let Some(set) = info.block_deps.get(&b.id) {
            for ins in &b.instrs {
                info.deps.insert(ins.id, set.clone());
            }
        }
    }
    info
}

// ---------------------------------------------------------------------------
// whole-program PDG
// ---------------------------------------------------------------------------

/// Alias backing for PDG memory edges: the points-to analysis, or the
/// alias-free baseline in which every access pair may conflict.
#[derive(Clone, Copy)]
pub enum AliasMode {
    PointsTo,
    AllPairs,
}

enum AccKind {
    Mem { is_store: bool },
    Call { mods: BTreeSet<ObjId>, refs: BTreeSet<ObjId> },
}

struct Access {
    id: InstrId,
    fi: usize,
    bi: usize,
    pos: usize,
    kind: AccKind,
}

impl Access {
    fn reads(&self) -> bool {
        match &self.kind {
            AccKind::Mem { is_store } => !is_store,
            AccKind::Call { refs, .. } => !refs.is_empty(),
        }
    }

    fn writes(&self) -> bool {
        match &self.kind {
            AccKind::Mem { is_store } => *is_store,
            AccKind::Call { mods, .. } => !mods.is_empty(),
        }
    }
}

pub struct PdgBuilder<'a> {
    pub m: &'a ModuleIR,
    pub pts: &'a PointsToResult,
    pub cg: &'a CallGraph,
    pub modref: ModRefSummaries,
    pub mode: AliasMode,
}

impl<'a> PdgBuilder<'a> {
    pub fn new(m: &'a ModuleIR, pts: &'a PointsToResult, cg: &'a CallGraph) -> Self {
        PdgBuilder { m, pts, cg, modref: ModRefSummaries::compute(m, pts), mode: AliasMode::PointsTo }
    }

    pub fn with_mode(mut self, mode: AliasMode) -> Self {
        self.mode = mode;
        self
    }

    /// Build the module-wide PDG: internal = every instruction, external = ∅.
    pub fn build(&self) -> DependenceGraph {
        let mut internal = BTreeSet::new();
        for f in &self.m.functions {
            for ins in f.instrs() {
                internal.insert(ins.id);
            }
        }
        let mut dg = DependenceGraph::new(internal, BTreeSet::new());
        self.add_register_edges(&mut dg);
        self.add_control_edges(&mut dg);
        self.add_interprocedural_edges(&mut dg);
        self.add_memory_edges(&mut dg);
        dg
    }

    fn add_register_edges(&self, dg: &mut DependenceGraph) {
        for f in &self.m.functions {
            let mut def_of: HashMap<&str, InstrId> = HashMap::new();
            for ins in f.instrs() {
                if let Some(r) = &ins.result {
                    def_of.insert(r.as_str(), ins.id);
                }
            }
            for ins in f.instrs() {
                let mut seen = HashSet::new();
                for u in ins.uses() {
                    if let Some(&d) = def_of.get(u) {
                        if seen.insert(d) {
                            dg.push_edge(DependenceEdge {
                                src: d,
                                dst: ins.id,
                                class: DepClass::Data,
                                data_kind: Some(DataKind::Raw),
                                medium: Some(Medium::Register),
                                certainty: Certainty::Must,
                                carried: BTreeMap::new(),
                            });
                        }
                    }
                }
            }
        }
    }

    fn add_control_edges(&self, dg: &mut DependenceGraph) {
        for f in &self.m.functions {
            let cd = control_dependences(f);
            for b in &f.blocks {
                let Some(set) = cd.block_deps.get(&b.id) else { continue };
                let branches: BTreeSet<InstrId> = set.iter().map(|(t, _)| *t).collect();
                for ins in &b.instrs {
                    for t in &branches {
                        dg.push_edge(DependenceEdge {
                            src: *t,
                            dst: ins.id,
                            class: DepClass::Control,
                            data_kind: None,
                            medium: None,
                            certainty: Certainty::Must,
                            carried: BTreeMap::new(),
                        });
                    }
                }
            }
        }
    }

    fn add_interprocedural_edges(&self, dg: &mut DependenceGraph) {
        for f in &self.m.functions {
            let mut def_of: HashMap<&str, InstrId> = HashMap::new();
            for ins in f.instrs() {
                if let Some(r) = &ins.result {
                    def_of.insert(r.as_str(), ins.id);
                }
            }
            for ins in f.instrs() {
                let (callees, args, certainty): (Vec<&FunctionIR>, &[ValueRef], Certainty) =
                    match ins.op {
                        Opcode::Call => {
                            let g = ins.callee().and_then(|n| self.m.function(n));
                            (g.into_iter().collect(), &ins.operands[1..], Certainty::Must)
                        }
                        Opcode::Icall => {
                            let cands = self.pts.icall_candidates(
                                self.m,
                                f.id,
                                &ins.operands[0],
                                ins.operands.len() - 1,
                            );
                            let c = if cands.len() == 1 { Certainty::Must } else { Certainty::May };
                            (
                                cands
                                    .iter()
                                    .map(|id| &self.m.functions[id.0 as usize])
                                    .collect(),
                                &ins.operands[1..],
                                c,
                            )
                        }
                        _ => continue,
                    };
                for g in callees {
                    // argument -> parameter uses
                    for ((pname, _), arg) in g.params.iter().zip(args) {
                        let src = match arg {
                            ValueRef::Ssa(n) => def_of.get(n.as_str()).copied().unwrap_or(ins.id),
                            _ => ins.id,
                        };
                        for tgt in g.instrs() {
                            if tgt.uses().contains(&pname.as_str()) {
                                dg.push_edge(DependenceEdge {
                                    src,
                                    dst: tgt.id,
                                    class: DepClass::Data,
                                    data_kind: Some(DataKind::Raw),
                                    medium: Some(Medium::Register),
                                    certainty,
                                    carried: BTreeMap::new(),
                                });
                            }
                        }
                    }
                    // returned value -> call result
                    if ins.result.is_some() {
                        for b in &g.blocks {
                            let t = b.terminator();
                            if t.op == Opcode::Ret && !t.operands.is_empty() {
                                dg.push_edge(DependenceEdge {
                                    src: t.id,
                                    dst: ins.id,
                                    class: DepClass::Data,
                                    data_kind: Some(DataKind::Raw),
                                    medium: Some(Medium::Register),
                                    certainty,
                                    carried: BTreeMap::new(),
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    fn collect_accesses(&self) -> Vec<Access> {
        let mut out = Vec::new();
        for (fi, f) in self.m.functions.iter().enumerate() {
            for (bi, b) in f.blocks.iter().enumerate() {
                for (pos, ins) in b.instrs.iter().enumerate() {
                    let kind = match ins.op {
                        Opcode::Load => AccKind::Mem { is_store: false },
                        Opcode::Store => AccKind::Mem { is_store: true },
                        Opcode::Call | Opcode::Icall => {
                            let (mods, refs) = match self.mode {
                                AliasMode::PointsTo => {
                                    self.modref.call_objects(self.m, self.pts, ins, f.id)
                                }
                                AliasMode::AllPairs => {
                                    let all: BTreeSet<ObjId> = self
                                        .pts
                                        .table
                                        .objects
                                        .iter()
                                        .map(|o| o.id)
                                        .collect();
                                    (all.clone(), all)
                                }
                            };
                            if mods.is_empty() && refs.is_empty() {
                                continue;
                            }
                            AccKind::Call { mods, refs }
                        }
                        _ => continue,
                    };
                    out.push(Access { id: ins.id, fi, bi, pos, kind });
                }
            }
        }
        out
    }

    /// May instruction `a` execute strictly before (some execution of) `b`?
    fn may_follow(
        &self,
        a: &Access,
        b: &Access,
        reach: &[Vec<Vec<bool>>],
        repeats: &[bool],
    ) -> bool {
        if a.fi != b.fi {
            return true; // calls interleave conservatively
        }
        if repeats[a.fi] {
            return true; // re-invocation reorders everything
        }
        let r = &reach[a.fi];
        if a.bi == b.bi {
            if a.pos < b.pos {
                true
            } else {
                r[a.bi][a.bi] // block re-executes within one activation
            }
        } else {
            r[a.bi][b.bi]
        }
    }

    fn pair_certainty(&self, a: &Access, b: &Access, m: &ModuleIR) -> Option<Certainty> {
        if matches!(self.mode, AliasMode::AllPairs) {
            return Some(Certainty::May);
        }
        let fa = m.functions[a.fi].id;
        let fb = m.functions[b.fi].id;
        match (&a.kind, &b.kind) {
            (AccKind::Mem { .. }, AccKind::Mem { .. }) => {
                let ia = self.instr_of(a);
                let ib = self.instr_of(b);
                let va = access_address(ia).unwrap();
                let vb = access_address(ib).unwrap();
                match self.pts.alias(fa, va, fb, vb) {
                    crate::alias::AliasAnswer::NoAlias => None,
                    crate::alias::AliasAnswer::MayAlias => Some(Certainty::May),
                    crate::alias::AliasAnswer::MustAlias => Some(Certainty::Must),
                }
            }
            _ => Some(Certainty::May), // object-set overlap checked per kind
        }
    }

    fn instr_of(&self, a: &Access) -> &Instruction {
        &self.m.functions[a.fi].blocks[a.bi].instrs[a.pos]
    }

    /// Objects relevant to the reading side / writing side of an access.
    fn obj_side(&self, a: &Access, write: bool) -> BTreeSet<ObjId> {
        match &a.kind {
            AccKind::Mem { .. } => {
                let ins = self.instr_of(a);
                let f = self.m.functions[a.fi].id;
                self.pts.objects_of(f, access_address(ins).unwrap())
            }
            AccKind::Call { mods, refs } => {
                if write {
                    mods.clone()
                } else {
                    refs.clone()
                }
            }
        }
    }

    fn add_memory_edges(&self, dg: &mut DependenceGraph) {
        let accesses = self.collect_accesses();
        let reach: Vec<Vec<Vec<bool>>> = self
            .m
            .functions
            .iter()
            .map(|f| Cfg::of(f).reach_closure())
            .collect();
        // a function may re-run if anything calls it
        let repeats: Vec<bool> = self
            .m
            .functions
            .iter()
            .map(|f| self.cg.callers_of(f.id).next().is_some())
            .collect();
        let mut seen: HashSet<(InstrId, InstrId, DataKind)> = HashSet::new();
        for a in &accesses {
            for b in &accesses {
                if !self.may_follow(a, b, &reach, &repeats) {
                    continue;
                }
                let mut kinds: Vec<DataKind> = Vec::new();
                if a.writes() && b.reads() {
                    kinds.push(DataKind::Raw);
                }
                if a.writes() && b.writes() {
                    kinds.push(DataKind::Waw);
                }
                if a.reads() && b.writes() {
                    kinds.push(DataKind::War);
                }
                if kinds.is_empty() {
                    continue;
                }
                for kind in kinds {
                    if seen.contains(&(a.id, b.id, kind)) {
                        continue;
                    }
                    // side-specific overlap test
                    let certainty = match (&a.kind, &b.kind) {
                        (AccKind::Mem { .. }, AccKind::Mem { .. }) => {
                            match self.pair_certainty(a, b, self.m) {
                                Some(c) => c,
                                None => continue,
                            }
                        }
                        _ => {
                            if matches!(self.mode, AliasMode::AllPairs) {
                                Certainty::May
                            } else {
                                let (aw, br) = match kind {
                                    DataKind::Raw => (true, false),
                                    DataKind::Waw => (true, true),
                                    DataKind::War => (false, true),
                                };
                                let sa = self.obj_side(a, aw);
                                let sb = self.obj_side(b, br);
                                if sa.is_disjoint(&sb) {
                                    continue;
                                }
                                Certainty::May
                            }
                        }
                    };
                    seen.insert((a.id, b.id, kind));
                    dg.push_edge(DependenceEdge {
                        src: a.id,
                        dst: b.id,
                        class: DepClass::Data,
                        data_kind: Some(kind),
                        medium: Some(Medium::Memory),
                        certainty,
                        carried: BTreeMap::new(),
                    });
                }
            }
        }
    }
}

/// Whole-program PDG with the points-to backed alias layer.
pub fn build_pdg(m: &ModuleIR, pts: &PointsToResult, cg: &CallGraph) -> DependenceGraph {
    PdgBuilder::new(m, pts, cg).build()
}

/// Baseline PDG in which no memory pair is ever disproved.
pub fn build_pdg_baseline(m: &ModuleIR, pts: &PointsToResult, cg: &CallGraph) -> DependenceGraph {
    PdgBuilder::new(m, pts, cg).with_mode(AliasMode::AllPairs).build()
}

// ---------------------------------------------------------------------------
// views
// ---------------------------------------------------------------------------

fn restrict(pdg: &DependenceGraph, inside: &BTreeSet<InstrId>) -> DependenceGraph {
    let mut external = BTreeSet::new();
    let mut dg = DependenceGraph::new(inside.clone(), BTreeSet::new());
    for e in &pdg.edges {
        let si = inside.contains(&e.src);
        let di = inside.contains(&e.dst);
        if si && di {
            dg.push_edge(e.clone());
        } else if si || di {
            external.insert(if si { e.dst } else { e.src });
            dg.push_edge(e.clone());
        }
    }
    dg.external = external;
    dg
}

/// Function dependence graph: internal = the function's instructions,
/// external = outside instructions with crossing edges (its live-ins and
/// live-outs).
pub fn function_dg(pdg: &DependenceGraph, f: &FunctionIR) -> DependenceGraph {
    let inside: BTreeSet<InstrId> = f.instrs().map(|i| i.id).collect();
    restrict(pdg, &inside)
}

/// Loop dependence graph before refinement: restriction to the loop's
/// instructions plus the register-edge carried rule (a register edge is
/// carried exactly when it feeds a header phi through a latch arm).
pub fn loop_dg_raw(pdg: &DependenceGraph, m: &ModuleIR, l: &LoopStructure) -> DependenceGraph {
    let f = &m.functions[l.func.0 as usize];
    let mut inside = BTreeSet::new();
    let mut header_phis: Vec<&Instruction> = Vec::new();
    let mut def_of: HashMap<&str, InstrId> = HashMap::new();
    for ins in f.instrs() {
        if let Some(r) = &ins.result {
            def_of.insert(r.as_str(), ins.id);
        }
    }
    for b in &f.blocks {
        if l.blocks.contains(&b.id) {
            for ins in &b.instrs {
                inside.insert(ins.id);
                if b.id == l.header && ins.op == Opcode::Phi {
                    header_phis.push(ins);
                }
            }
        }
    }
    let mut dg = restrict(pdg, &inside);
    // carried register values: header phi arms arriving via a latch
    let mut carried_pairs: HashSet<(InstrId, InstrId)> = HashSet::new();
    let latch_labels: BTreeSet<&str> = l
        .latches
        .iter()
        .map(|b| {
            let bi = f.blocks.iter().position(|x| x.id == *b).unwrap();
            f.blocks[bi].label.as_str()
        })
        .collect();
    for phi in &header_phis {
        for (lbl, v) in phi.phi_arms() {
            if latch_labels.contains(lbl) {
                if let Some(n) = v.as_ssa() {
                    if let Some(&d) = def_of.get(n) {
                        carried_pairs.insert((d, phi.id));
                    }
                }
            }
        }
    }
    for e in dg.edges.iter_mut() {
        if e.medium == Some(Medium::Register)
            && dg.internal.contains(&e.src)
            && dg.internal.contains(&e.dst)
        {
            let c = if carried_pairs.contains(&(e.src, e.dst)) {
                Carried::True
            } else {
                Carried::False
            };
            e.carried.insert(l.id, c);
        }
    }
    dg
}

/// Literal summary of a governing induction variable, as needed by the
/// memory refinement rules.
#[derive(Debug, Clone, Copy)]
pub struct GoverningIvBrief {
    pub phi: InstrId,
    pub step: i64,
}

/// A cell address split into base object chain, IV coefficient, and offset.
#[derive(Debug, Clone, PartialEq, Eq)]
struct AffineAddr {
    base: String, // SSA name or "@global"
    coeff: i64,
    sym: Option<String>,
    lit: i64,
}

fn int_affine(
    f: &FunctionIR,
    l: &LoopStructure,
    idx: &ModuleIndex,
    iv_phi_name: &str,
    v: &ValueRef,
) -> Option<(i64, Option<String>, i64)> {
    match v {
        ValueRef::Lit(k) => Some((0, None, *k)),
        ValueRef::Ssa(n) => {
            if n == iv_phi_name {
                return Some((1, None, 0));
            }
            match f.def_site(n)? {
                DefSite::Param(_) => Some((0, Some(n.clone()), 0)),
                DefSite::Instr { id, .. } => {
                    let b = idx.block_of_instr(id);
                    if !l.blocks.contains(&b) {
                        return Some((0, Some(n.clone()), 0));
                    }
                    let ins = idx.instr(id);
                    match ins.op {
                        Opcode::Add | Opcode::Sub => {
                            let (c1, s1, k1) =
                                int_affine(f, l, idx, iv_phi_name, &ins.operands[0])?;
                            let (c2, s2, k2) =
                                int_affine(f, l, idx, iv_phi_name, &ins.operands[1])?;
                            if ins.op == Opcode::Add {
                                let sym = match (s1, s2) {
                                    (None, s) | (s, None) => s,
                                    _ => return None,
                                };
                                Some((c1 + c2, sym, k1 + k2))
                            } else {
                                if s2.is_some() {
                                    return None;
                                }
                                Some((c1 - c2, s1, k1 - k2))
                            }
                        }
                        Opcode::Mul => {
                            let (c1, s1, k1) =
                                int_affine(f, l, idx, iv_phi_name, &ins.operands[0])?;
                            let (c2, s2, k2) =
                                int_affine(f, l, idx, iv_phi_name, &ins.operands[1])?;
                            // one side must be a pure literal constant
                            if c1 == 0 && s1.is_none() {
                                if s2.is_some() && k1 != 1 {
                                    return None;
                                }
                                Some((k1.wrapping_mul(c2), s2, k1.wrapping_mul(k2)))
                            } else if c2 == 0 && s2.is_none() {
                                if s1.is_some() && k2 != 1 {
                                    return None;
                                }
                                Some((c1.wrapping_mul(k2), s1, k1.wrapping_mul(k2)))
                            } else {
                                None
                            }
                        }
                        _ => None,
                    }
                }
            }
        }
        _ => None,
    }
}

fn affine_addr(
    m: &ModuleIR,
    l: &LoopStructure,
    idx: &ModuleIndex,
    iv_phi_name: &str,
    addr: &ValueRef,
) -> Option<AffineAddr> {
    let f = &m.functions[l.func.0 as usize];
    match addr {
        ValueRef::Global(g) => {
            Some(AffineAddr { base: format!("@{}", g), coeff: 0, sym: None, lit: 0 })
        }
        ValueRef::Ssa(n) => match f.def_site(n)? {
            DefSite::Param(_) => {
                Some(AffineAddr { base: n.clone(), coeff: 0, sym: None, lit: 0 })
            }
            DefSite::Instr { id, .. } => {
                let b = idx.block_of_instr(id);
                if !l.blocks.contains(&b) {
                    return Some(AffineAddr { base: n.clone(), coeff: 0, sym: None, lit: 0 });
                }
                let ins = idx.instr(id);
                if ins.op != Opcode::Gep {
                    return None;
                }
                let base = affine_addr(m, l, idx, iv_phi_name, &ins.operands[0])?;
                let (c, s, k) = int_affine(f, l, idx, iv_phi_name, &ins.operands[1])?;
                let sym = match (base.sym, s) {
                    (None, s) | (s, None) => s,
                    _ => return None,
                };
                Some(AffineAddr {
                    base: base.base,
                    coeff: base.coeff + c,
                    sym,
                    lit: base.lit + k,
                })
            }
        },
        _ => None,
    }
}

/// Memory refinement rules for loop-carried flags. With a governing IV of
/// nonzero literal step, two accesses whose addresses are affine in that IV
/// with equal nonzero coefficient and equal offset touch the same cell only
/// within one iteration, so the edge is not carried. Covers the WAW self-edge
/// of a single strided store as the degenerate case. Everything else stays
/// unknown (clients treat unknown as carried).
pub fn refine_loop_carried(
    dg: &mut DependenceGraph,
    m: &ModuleIR,
    l: &LoopStructure,
    gov: Option<GoverningIvBrief>,
) {
    let Some(gov) = gov else { return };
    if gov.step == 0 {
        return;
    }
    let idx = ModuleIndex::new(m);
    let iv_phi_name = match &idx.instr(gov.phi).result {
        Some(r) => r.clone(),
        None => return,
    };
    // precompute affine forms for internal load/store addresses
    let mut forms: HashMap<InstrId, Option<AffineAddr>> = HashMap::new();
    let form_of = |id: InstrId, forms: &mut HashMap<InstrId, Option<AffineAddr>>| {
        forms
            .entry(id)
            .or_insert_with(|| {
                let ins = idx.instr(id);
                access_address(ins).and_then(|a| affine_addr(m, l, &idx, &iv_phi_name, a))
            })
            .clone()
    };
    let internal = dg.internal.clone();
    for e in dg.edges.iter_mut() {
        if e.medium != Some(Medium::Memory) {
            continue;
        }
        if !internal.contains(&e.src) || !internal.contains(&e.dst) {
            continue;
        }
        let sa = form_of(e.src, &mut forms);
        let sb = form_of(e.dst, &mut forms);
        if let (Some(a), Some(b)) = (sa, sb) {
            if a == b && a.coeff != 0 {
                e.carried.insert(l.id, Carried::False);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

pub fn to_dot(dg: &DependenceGraph, m: &ModuleIR) -> String {
    let idx = ModuleIndex::new(m);
    let mut out = String::from("digraph pdg {\n");
    let mut nodes: Vec<InstrId> = dg.internal.iter().copied().collect();
    nodes.extend(dg.external.iter().copied());
    for n in &nodes {
        let ins = idx.instr(*n);
        let shape = if dg.external.contains(n) { ", style=dotted" } else { "" };
        let _ = writeln!(
            out,
            "  n{} [label=\"I{}: {}\"{}];",
            n.0,
            n.0,
            instr_to_string(ins).replace('"', "'"),
            shape
        );
    }
    for e in &dg.edges {
        let (style, color) = match (e.class, e.data_kind) {
            (DepClass::Control, _) => ("dotted", "black"),
            (DepClass::Data, Some(DataKind::Raw)) => ("solid", "red"),
            (DepClass::Data, Some(DataKind::Waw)) => ("solid", "orange"),
            (DepClass::Data, Some(DataKind::War)) => ("solid", "blue"),
            _ => ("solid", "black"),
        };
        let style = if e.certainty == Certainty::May && e.class == DepClass::Data {
            "dashed"
        } else {
            style
        };
        let _ = writeln!(out, "  n{} -> n{} [style={}, color={}];", e.src.0, e.dst.0, style, color);
    }
    out.push_str("}\n");
    out
}

fn carried_bits(e: &DependenceEdge) -> String {
    if e.carried.is_empty() {
        return "-".to_string();
    }
    e.carried
        .iter()
        .map(|(l, c)| {
            format!(
                "l{}:{}",
                l.0,
                match c {
                    Carried::True => "t",
                    Carried::False => "f",
                    Carried::Unknown => "u",
                }
            )
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Embed the PDG as `!pdg` metadata lines (src dst class kind medium
/// certainty carried-bits). Replaces any previous embedding.
pub fn embed_pdg(m: &mut ModuleIR, dg: &DependenceGraph) {
    let mut lines = Vec::new();
    for e in &dg.edges {
        lines.push(format!(
            "{} {} {} {} {} {} {}",
            e.src.0,
            e.dst.0,
            match e.class {
                DepClass::Control => "control",
                DepClass::Data => "data",
            },
            e.data_kind.map(|k| k.name()).unwrap_or("-"),
            match e.medium {
                Some(Medium::Register) => "register",
                Some(Medium::Memory) => "memory",
                None => "-",
            },
            match e.certainty {
                Certainty::May => "may",
                Certainty::Must => "must",
            },
            carried_bits(e),
        ));
    }
    lines.sort();
    m.set_metadata("pdg", lines, true);
}

/// Rebuild a dependence graph from embedded `!pdg` metadata.
pub fn read_pdg(m: &ModuleIR) -> Option<DependenceGraph> {
    let mut any = false;
    let mut internal = BTreeSet::new();
    for f in &m.functions {
        for ins in f.instrs() {
            internal.insert(ins.id);
        }
    }
    let mut dg = DependenceGraph::new(internal, BTreeSet::new());
    for line in m.metadata_values("pdg") {
        any = true;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 7 {
            return None;
        }
        let src = InstrId(parts[0].parse().ok()?);
        let dst = InstrId(parts[1].parse().ok()?);
        let class = match parts[2] {
            "control" => DepClass::Control,
            "data" => DepClass::Data,
            _ => return None,
        };
        let data_kind = match parts[3] {
            "raw" => Some(DataKind::Raw),
            "waw" => Some(DataKind::Waw),
            "war" => Some(DataKind::War),
            "-" => None,
            _ => return None,
        };
        let medium = match parts[4] {
            "register" => Some(Medium::Register),
            "memory" => Some(Medium::Memory),
            "-" => None,
            _ => return None,
        };
        let certainty = match parts[5] {
            "may" => Certainty::May,
            "must" => Certainty::Must,
            _ => return None,
        };
        let mut carried = BTreeMap::new();
        if parts[6] != "-" {
            for item in parts[6].split(',') {
                let (l, c) = item.split_once(':')?;
                let l = LoopId(l.strip_prefix('l')?.parse().ok()?);
                let c = match c {
                    "t" => Carried::True,
                    "f" => Carried::False,
                    "u" => Carried::Unknown,
                    _ => return None,
                };
                carried.insert(l, c);
            }
        }
        dg.push_edge(DependenceEdge { src, dst, class, data_kind, medium, certainty, carried });
    }
    any.then_some(dg)
}
