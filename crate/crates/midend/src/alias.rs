//! Flow-insensitive inclusion-based points-to analysis over allocation sites,
//! plus the alias and mod/ref query layer behind the PDG's memory edges and
//! the call graph's indirect-call resolution.
//!
//! Precision model: one abstract object per static site (alloca, global,
//! function), with constant cell offsets tracked per (value, object) and a ⊤
//! fallback. Context- and flow-insensitive by design; the point of comparison
//! is the alias-free all-pairs baseline, not a production alias stack.

use crate::ir::*;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectKind {
    /// A static alloca site.
    AllocaSite(InstrId),
    Global(String),
    Function(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractObject {
    pub id: ObjId,
    pub kind: ObjectKind,
    /// Cells; functions have size 0.
    pub size: u64,
}

impl fmt::Display for AbstractObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ObjectKind::AllocaSite(i) => write!(f, "alloca:{}", i.0),
            ObjectKind::Global(n) => write!(f, "@{}", n),
            ObjectKind::Function(n) => write!(f, "fn:{}", n),
        }
    }
}

/// Enumeration of every abstract object of a module: globals in declaration
/// order, then functions, then alloca sites in textual order. Shared by the
/// analyses and the interpreter's trace reporting (it is a syntactic walk,
/// not an analysis result).
#[derive(Debug, Clone, Default)]
pub struct ObjectTable {
    pub objects: Vec<AbstractObject>,
    by_global: HashMap<String, ObjId>,
    by_func: HashMap<String, ObjId>,
    by_alloca: HashMap<InstrId, ObjId>,
}

impl ObjectTable {
    pub fn build(m: &ModuleIR) -> ObjectTable {
        let mut t = ObjectTable::default();
        for g in &m.globals {
            let id = ObjId(t.objects.len() as u32);
            t.by_global.insert(g.name.clone(), id);
            t.objects.push(AbstractObject { id, kind: ObjectKind::Global(g.name.clone()), size: g.size });
        }
        for f in &m.functions {
            let id = ObjId(t.objects.len() as u32);
            t.by_func.insert(f.name.clone(), id);
            t.objects.push(AbstractObject { id, kind: ObjectKind::Function(f.name.clone()), size: 0 });
        }
        for f in &m.functions {
            for ins in f.instrs() {
                if ins.op == Opcode::Alloca {
                    let id = ObjId(t.objects.len() as u32);
                    let size = match ins.operands[0] {
                        ValueRef::Lit(n) if n > 0 => n as u64,
                        _ => 0,
                    };
                    t.by_alloca.insert(ins.id, id);
                    t.objects.push(AbstractObject { id, kind: ObjectKind::AllocaSite(ins.id), size });
                }
            }
        }
        t
    }

    pub fn global(&self, name: &str) -> Option<ObjId> {
        self.by_global.get(name).copied()
    }

    pub fn func(&self, name: &str) -> Option<ObjId> {
        self.by_func.get(name).copied()
    }

    pub fn alloca(&self, site: InstrId) -> Option<ObjId> {
        self.by_alloca.get(&site).copied()
    }

    pub fn get(&self, id: ObjId) -> &AbstractObject {
        &self.objects[id.0 as usize]
    }

    pub fn is_function(&self, id: ObjId) -> bool {
        matches!(self.get(id).kind, ObjectKind::Function(_))
    }

    pub fn function_name(&self, id: ObjId) -> Option<&str> {
        match &self.get(id).kind {
            ObjectKind::Function(n) => Some(n),
            _ => None,
        }
    }
}

/// Known constant cell offset, or ⊤.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OffsetInfo {
    Const(i64),
    Top,
}

impl OffsetInfo {
    fn join(self, other: OffsetInfo) -> OffsetInfo {
        match (self, other) {
            (OffsetInfo::Const(a), OffsetInfo::Const(b)) if a == b => self,
            _ => OffsetInfo::Top,
        }
    }

    fn add(self, k: OffsetInfo) -> OffsetInfo {
        match (self, k) {
            (OffsetInfo::Const(a), OffsetInfo::Const(b)) => OffsetInfo::Const(a.wrapping_add(b)),
            _ => OffsetInfo::Top,
        }
    }
}

impl fmt::Display for OffsetInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffsetInfo::Const(k) => write!(f, "{}", k),
            OffsetInfo::Top => write!(f, "*"),
        }
    }
}

pub type PtsSet = BTreeMap<ObjId, OffsetInfo>;

/// A pointer-valued thing we track: an SSA value of a function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueKey {
    pub func: FuncId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AliasAnswer {
    NoAlias,
    MayAlias,
    MustAlias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModRef {
    NoModRef,
    Ref,
    Mod,
    ModRef,
}

impl ModRef {
    pub fn may_mod(self) -> bool {
        matches!(self, ModRef::Mod | ModRef::ModRef)
    }

    pub fn may_ref(self) -> bool {
        matches!(self, ModRef::Ref | ModRef::ModRef)
    }

    fn join(self, other: ModRef) -> ModRef {
        match (self.may_mod() || other.may_mod(), self.may_ref() || other.may_ref()) {
            (true, true) => ModRef::ModRef,
            (true, false) => ModRef::Mod,
            (false, true) => ModRef::Ref,
            (false, false) => ModRef::NoModRef,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PointsToResult {
    pub table: ObjectTable,
    pts: BTreeMap<ValueKey, PtsSet>,
    /// Function objects that may be stored inside each object.
    fn_contents: BTreeMap<ObjId, BTreeSet<ObjId>>,
}

impl PointsToResult {
    pub fn of_value(&self, func: FuncId, name: &str) -> Option<&PtsSet> {
        self.pts.get(&ValueKey { func, name: name.to_string() })
    }

    /// Points-to set of an operand in a function context.
    pub fn of_operand(&self, func: FuncId, v: &ValueRef) -> PtsSet {
        match v {
            ValueRef::Ssa(n) => self
                .of_value(func, n)
                .cloned()
                .unwrap_or_default(),
            ValueRef::Global(g) => {
                let mut s = PtsSet::new();
                if let Some(o) = self.table.global(g) {
                    s.insert(o, OffsetInfo::Const(0));
                }
                s
            }
            ValueRef::Func(f) => {
                let mut s = PtsSet::new();
                if let Some(o) = self.table.func(f) {
                    s.insert(o, OffsetInfo::Const(0));
                }
                s
            }
            _ => PtsSet::new(),
        }
    }

    /// Possible callees of an icall target operand, arity-filtered.
    pub fn icall_candidates(&self, m: &ModuleIR, func: FuncId, target: &ValueRef, arity: usize) -> Vec<FuncId> {
        let mut out = Vec::new();
        for (obj, _) in self.of_operand(func, target) {
            if let Some(name) = self.table.function_name(obj) {
                if let Some(f) = m.function(name) {
                    if f.params.len() == arity {
                        out.push(f.id);
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// One line per tracked pointer value, for the CLI dump.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, set) in &self.pts {
            if set.is_empty() {
                continue;
            }
            let items: Vec<String> =
                set.iter().map(|(o, off)| format!("{}@{}", self.table.get(*o), off)).collect();
            out.push_str(&format!("pts %{} -> {{{}}}\n", k.name, items.join(", ")));
        }
        out
    }
}

fn singleton(o: ObjId) -> PtsSet {
    let mut s = PtsSet::new();
    s.insert(o, OffsetInfo::Const(0));
    s
}

fn join_into(dst: &mut PtsSet, src: &PtsSet) -> bool {
    let mut changed = false;
    for (o, off) in src {
        match dst.get(o) {
            None => {
                dst.insert(*o, *off);
                changed = true;
            }
            Some(cur) => {
                let j = cur.join(*off);
                if j != *cur {
                    dst.insert(*o, j);
                    changed = true;
                }
            }
        }
    }
    changed
}

/// Least fixpoint of the inclusion constraints. Indirect calls are resolved
/// against the current points-to sets and re-processed until the joint
/// fixpoint with callee argument/return flows is reached.
pub fn compute_points_to(m: &ModuleIR) -> PointsToResult {
    let table = ObjectTable::build(m);
    let mut r = PointsToResult { table, pts: BTreeMap::new(), fn_contents: BTreeMap::new() };

    // return-value operands per function, for call result flows
    let mut rets: HashMap<FuncId, Vec<ValueRef>> = HashMap::new();
    for f in &m.functions {
        let mut v = Vec::new();
        for b in &f.blocks {
            let t = b.terminator();
            if t.op == Opcode::Ret {
                if let Some(x) = t.operands.first() {
                    v.push(x.clone());
                }
            }
        }
        rets.insert(f.id, v);
    }

    let key = |f: FuncId, n: &str| ValueKey { func: f, name: n.to_string() };
    let mut changed = true;
    while changed {
        changed = false;
        for f in &m.functions {
            for ins in f.instrs() {
                match ins.op {
                    Opcode::Alloca => {
                        let o = r.table.alloca(ins.id).unwrap();
                        let dst = r.pts.entry(key(f.id, ins.result.as_ref().unwrap())).or_default();
                        changed |= join_into(dst, &singleton(o));
                    }
                    Opcode::Funcptr => {
                        if let ValueRef::Func(name) = &ins.operands[0] {
                            if let Some(o) = r.table.func(name) {
                                let dst =
                                    r.pts.entry(key(f.id, ins.result.as_ref().unwrap())).or_default();
                                changed |= join_into(dst, &singleton(o));
                            }
                        }
                    }
                    Opcode::Gep => {
                        let base = r.of_operand(f.id, &ins.operands[0]);
                        let k = match &ins.operands[1] {
                            ValueRef::Lit(n) => OffsetInfo::Const(*n),
                            _ => OffsetInfo::Top,
                        };
                        let shifted: PtsSet =
                            base.iter().map(|(o, off)| (*o, off.add(k))).collect();
                        let dst = r.pts.entry(key(f.id, ins.result.as_ref().unwrap())).or_default();
                        changed |= join_into(dst, &shifted);
                    }
                    Opcode::Phi | Opcode::Select => {
                        let mut acc = PtsSet::new();
                        for v in ins.value_operands() {
                            let s = r.of_operand(f.id, v);
                            join_into(&mut acc, &s);
                        }
                        if !acc.is_empty() {
                            let dst =
                                r.pts.entry(key(f.id, ins.result.as_ref().unwrap())).or_default();
                            changed |= join_into(dst, &acc);
                        }
                    }
                    Opcode::Store => {
                        // stored function pointers flow into object contents
                        let val = r.of_operand(f.id, &ins.operands[0]);
                        let fns: BTreeSet<ObjId> = val
                            .keys()
                            .copied()
                            .filter(|o| r.table.is_function(*o))
                            .collect();
                        if !fns.is_empty() {
                            let addr = r.of_operand(f.id, &ins.operands[1]);
                            for (o, _) in addr {
                                let c = r.fn_contents.entry(o).or_default();
                                let before = c.len();
                                c.extend(fns.iter().copied());
                                changed |= c.len() != before;
                            }
                        }
                    }
                    Opcode::Load => {
                        let addr = r.of_operand(f.id, &ins.operands[0]);
                        let mut acc = PtsSet::new();
                        for (o, _) in addr {
                            if let Some(fns) = r.fn_contents.get(&o) {
                                for fo in fns {
                                    acc.insert(*fo, OffsetInfo::Const(0));
                                }
                            }
                        }
                        if !acc.is_empty() {
                            let dst =
                                r.pts.entry(key(f.id, ins.result.as_ref().unwrap())).or_default();
                            changed |= join_into(dst, &acc);
                        }
                    }
                    Opcode::Call | Opcode::Icall => {
                        let (callees, args): (Vec<&FunctionIR>, &[ValueRef]) =
                            if ins.op == Opcode::Call {
                                let callee = ins.callee().and_then(|n| m.function(n));
                                (callee.into_iter().collect(), &ins.operands[1..])
                            } else {
                                let cands = r.icall_candidates(
                                    m,
                                    f.id,
                                    &ins.operands[0],
                                    ins.operands.len() - 1,
                                );
                                (
                                    cands
                                        .iter()
                                        .map(|id| &m.functions[id.0 as usize])
                                        .collect(),
                                    &ins.operands[1..],
                                )
                            };
                        for callee in callees {
                            // argument pointer sets flow to params
                            for ((pname, _), a) in callee.params.iter().zip(args) {
                                let s = r.of_operand(f.id, a);
                                if !s.is_empty() {
                                    let dst = r.pts.entry(key(callee.id, pname)).or_default();
                                    changed |= join_into(dst, &s);
                                }
                            }
                            // return pointer sets flow back
                            if let Some(res) = &ins.result {
                                let mut acc = PtsSet::new();
                                for rv in rets.get(&callee.id).into_iter().flatten() {
                                    let s = r.of_operand(callee.id, rv);
                                    join_into(&mut acc, &s);
                                }
                                if !acc.is_empty() {
                                    let dst = r.pts.entry(key(f.id, res)).or_default();
                                    changed |= join_into(dst, &acc);
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    r
}

/// The address operand of a memory access (load or store), if any.
pub fn access_address(ins: &Instruction) -> Option<&ValueRef> {
    match ins.op {
        Opcode::Load => Some(&ins.operands[0]),
        Opcode::Store => Some(&ins.operands[1]),
        _ => None,
    }
}

impl PointsToResult {
    /// Alias query between two load/store address operands.
    ///
    /// NoAlias: the object sets are disjoint, or every common object is
    /// reached at distinct constant offsets (accesses are one cell wide).
    /// MustAlias: the same SSA address value, or equal singleton sets with
    /// equal constant offsets.
    pub fn alias(&self, fa: FuncId, a: &ValueRef, fb: FuncId, b: &ValueRef) -> AliasAnswer {
        if fa == fb && a == b && matches!(a, ValueRef::Ssa(_) | ValueRef::Global(_)) {
            return AliasAnswer::MustAlias;
        }
        let sa = self.of_operand(fa, a);
        let sb = self.of_operand(fb, b);
        if sa.len() == 1 && sb.len() == 1 {
            let (oa, ka) = sa.iter().next().unwrap();
            let (ob, kb) = sb.iter().next().unwrap();
            if oa == ob {
                if let (OffsetInfo::Const(x), OffsetInfo::Const(y)) = (ka, kb) {
                    return if x == y { AliasAnswer::MustAlias } else { AliasAnswer::NoAlias };
                }
                return AliasAnswer::MayAlias;
            }
            return AliasAnswer::NoAlias;
        }
        let mut overlap = false;
        for (o, ka) in &sa {
            if let Some(kb) = sb.get(o) {
                match (ka, kb) {
                    (OffsetInfo::Const(x), OffsetInfo::Const(y)) if x != y => {}
                    _ => {
                        overlap = true;
                        break;
                    }
                }
            }
        }
        if overlap {
            AliasAnswer::MayAlias
        } else {
            AliasAnswer::NoAlias
        }
    }

    /// Objects an address operand may touch.
    pub fn objects_of(&self, f: FuncId, addr: &ValueRef) -> BTreeSet<ObjId> {
        self.of_operand(f, addr).keys().copied().collect()
    }
}

/// Transitive read/write object summaries per function, bottom-up over the
/// call-graph SCCs (recursion: fixpoint from NoModRef).
#[derive(Debug, Clone, Default)]
pub struct ModRefSummaries {
    pub mods: BTreeMap<FuncId, BTreeSet<ObjId>>,
    pub refs: BTreeMap<FuncId, BTreeSet<ObjId>>,
    /// Whether calling the function may execute a print.
    pub may_print: BTreeMap<FuncId, bool>,
}

impl ModRefSummaries {
    pub fn compute(m: &ModuleIR, pts: &PointsToResult) -> ModRefSummaries {
        let mut s = ModRefSummaries::default();
        for f in &m.functions {
            s.mods.insert(f.id, BTreeSet::new());
            s.refs.insert(f.id, BTreeSet::new());
            s.may_print.insert(f.id, false);
        }
        // fixpoint over direct effects + callee effects; recursion converges
        // because the sets only grow
        let mut changed = true;
        while changed {
            changed = false;
            for f in &m.functions {
                let mut mods = s.mods[&f.id].clone();
                let mut refs = s.refs[&f.id].clone();
                let mut prints = s.may_print[&f.id];
                for ins in f.instrs() {
                    match ins.op {
                        Opcode::Load => {
                            refs.extend(pts.objects_of(f.id, &ins.operands[0]));
                        }
                        Opcode::Store => {
                            mods.extend(pts.objects_of(f.id, &ins.operands[1]));
                        }
                        Opcode::Print => prints = true,
                        Opcode::Call | Opcode::Icall => {
                            let callees: Vec<FuncId> = if ins.op == Opcode::Call {
                                ins.callee()
                                    .and_then(|n| m.function(n))
                                    .map(|g| g.id)
                                    .into_iter()
                                    .collect()
                            } else {
                                pts.icall_candidates(
                                    m,
                                    f.id,
                                    &ins.operands[0],
                                    ins.operands.len() - 1,
                                )
                            };
                            for c in callees {
                                mods.extend(s.mods[&c].iter().copied());
                                refs.extend(s.refs[&c].iter().copied());
                                prints |= s.may_print[&c];
                            }
                        }
                        _ => {}
                    }
                }
                if mods.len() != s.mods[&f.id].len()
                    || refs.len() != s.refs[&f.id].len()
                    || prints != s.may_print[&f.id]
                {
                    changed = true;
                    s.mods.insert(f.id, mods);
                    s.refs.insert(f.id, refs);
                    s.may_print.insert(f.id, prints);
                }
            }
        }
        s
    }

    /// Effect of a call site on the given object set.
    pub fn call_effect(
        &self,
        m: &ModuleIR,
        pts: &PointsToResult,
        call: &Instruction,
        caller: FuncId,
        objs: &BTreeSet<ObjId>,
    ) -> ModRef {
        let callees: Vec<FuncId> = match call.op {
            Opcode::Call => call
                .callee()
                .and_then(|n| m.function(n))
                .map(|g| g.id)
                .into_iter()
                .collect(),
            Opcode::Icall => {
                pts.icall_candidates(m, caller, &call.operands[0], call.operands.len() - 1)
            }
            _ => return ModRef::NoModRef,
        };
        let mut acc = ModRef::NoModRef;
        for c in callees {
            let mods = &self.mods[&c];
            let refs = &self.refs[&c];
            if !mods.is_disjoint(objs) {
                acc = acc.join(ModRef::Mod);
            }
            if !refs.is_disjoint(objs) {
                acc = acc.join(ModRef::Ref);
            }
        }
        acc
    }

    /// `mod_ref_of_call`: effect of a call on the location of a load/store.
    pub fn mod_ref_of_call(
        &self,
        m: &ModuleIR,
        pts: &PointsToResult,
        call: &Instruction,
        caller: FuncId,
        access_fn: FuncId,
        access: &Instruction,
    ) -> ModRef {
        let Some(addr) = access_address(access) else { return ModRef::NoModRef };
        let objs = pts.objects_of(access_fn, addr);
        self.call_effect(m, pts, call, caller, &objs)
    }

    /// Objects a call site may touch at all.
    pub fn call_objects(
        &self,
        m: &ModuleIR,
        pts: &PointsToResult,
        call: &Instruction,
        caller: FuncId,
    ) -> (BTreeSet<ObjId>, BTreeSet<ObjId>) {
        let callees: Vec<FuncId> = match call.op {
            Opcode::Call => call
                .callee()
                .and_then(|n| m.function(n))
                .map(|g| g.id)
                .into_iter()
                .collect(),
            Opcode::Icall => {
                pts.icall_candidates(m, caller, &call.operands[0], call.operands.len() - 1)
            }
            _ => return Default::default(),
        };
        let mut mods = BTreeSet::new();
        let mut refs = BTreeSet::new();
        for c in callees {
            mods.extend(self.mods[&c].iter().copied());
            refs.extend(self.refs[&c].iter().copied());
        }
        (mods, refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn alloca_and_gep_offsets() {
        let m = parse_module(
            "func @main() -> i64 {
bb0:
  %p = alloca 4
  %q = gep %p, 2
  %v = load %q
  ret %v
}",
        )
        .unwrap();
        let pts = compute_points_to(&m);
        let f = m.functions[0].id;
        let p = pts.of_value(f, "p").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.values().next(), Some(&OffsetInfo::Const(0)));
        let q = pts.of_value(f, "q").unwrap();
        assert_eq!(q.values().next(), Some(&OffsetInfo::Const(2)));
        // same object, distinct constant offsets -> NoAlias
        let a = pts.alias(f, &ValueRef::Ssa("p".into()), f, &ValueRef::Ssa("q".into()));
        assert_eq!(a, AliasAnswer::NoAlias);
    }

    #[test]
    fn same_value_is_must_alias() {
        let m = parse_module(
            "func @main(%i: i64) -> i64 {
bb0:
  %p = alloca 4
  %q = gep %p, %i
  store 1, %q
  %v = load %q
  ret %v
}",
        )
        .unwrap();
        let pts = compute_points_to(&m);
        let f = m.functions[0].id;
        let q = ValueRef::Ssa("q".into());
        assert_eq!(pts.alias(f, &q, f, &q), AliasAnswer::MustAlias);
        // symbolic offset vs base: both could be cell 0
        let p = ValueRef::Ssa("p".into());
        assert_eq!(pts.alias(f, &p, f, &q), AliasAnswer::MayAlias);
    }

    #[test]
    fn distinct_allocas_no_alias() {
        let m = parse_module(
            "func @main() -> i64 {
bb0:
  %a = alloca 1
  %b = alloca 1
  store 1, %a
  store 2, %b
  ret 0
}",
        )
        .unwrap();
        let pts = compute_points_to(&m);
        let f = m.functions[0].id;
        let a = pts.alias(f, &ValueRef::Ssa("a".into()), f, &ValueRef::Ssa("b".into()));
        assert_eq!(a, AliasAnswer::NoAlias);
    }

    #[test]
    fn stored_funcptr_reaches_loads() {
        let m = parse_module(
            "global @t: i64[1]
func @f() -> i64 { a: ret 1 }
func @main() -> i64 {
bb0:
  %fp = funcptr @f
  store %fp, @t
  %v = load @t
  %r = icall %v()
  ret %r
}",
        )
        .unwrap();
        let pts = compute_points_to(&m);
        let f = m.functions[1].id;
        let v = pts.of_value(f, "v").unwrap();
        let fobj = pts.table.func("f").unwrap();
        assert!(v.contains_key(&fobj));
        let cands = pts.icall_candidates(&m, f, &ValueRef::Ssa("v".into()), 0);
        assert_eq!(cands, vec![m.functions[0].id]);
    }

    #[test]
    fn modref_of_local_writer() {
        let m = parse_module(
            "func @w() -> i64 {
a:
  %p = alloca 1
  store 9, %p
  %v = load %p
  ret %v
}
func @main() -> i64 {
bb0:
  %mine = alloca 1
  store 1, %mine
  %x = call @w()
  %v = load %mine
  %r = add %x, %v
  ret %r
}",
        )
        .unwrap();
        let pts = compute_points_to(&m);
        let s = ModRefSummaries::compute(&m, &pts);
        let main = m.function("main").unwrap();
        let call = main.instrs().find(|i| i.op == Opcode::Call).unwrap();
        let load = main.instrs().find(|i| i.op == Opcode::Load).unwrap();
        let mr = s.mod_ref_of_call(&m, &pts, call, main.id, main.id, load);
        assert_eq!(mr, ModRef::NoModRef);
    }
}
