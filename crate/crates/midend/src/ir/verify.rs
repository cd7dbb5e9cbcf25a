//! Structural and SSA verification. The verifier returns diagnostics rather
//! than failing: an empty list means the module satisfies every invariant the
//! interpreter and the analyses rely on.

use super::*;
use std::collections::{HashMap, HashSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub entity: EntityId,
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {} ({})", self.message, self.entity, self.rule)
    }
}

/// Result types of every value-defining instruction, plus param types.
#[derive(Debug, Clone, Default)]
pub struct TypeInfo {
    instr_ty: HashMap<InstrId, TypeTag>,
}

impl TypeInfo {
    pub fn instr(&self, id: InstrId) -> Option<TypeTag> {
        self.instr_ty.get(&id).copied()
    }

    /// Type of an operand in the context of a function.
    pub fn operand(&self, f: &FunctionIR, v: &ValueRef) -> Option<TypeTag> {
        match v {
            ValueRef::Lit(_) => Some(TypeTag::I64), // literals adapt to i1 slots
            ValueRef::Global(_) => Some(TypeTag::Ptr),
            ValueRef::Func(_) => Some(TypeTag::Ptr),
            ValueRef::Label(_) => None,
            ValueRef::Ssa(n) => match f.def_site(n)? {
                DefSite::Param(p) => Some(f.params[p].1),
                DefSite::Instr { id, .. } => self.instr(id),
            },
        }
    }

    /// Compute result types. Phi/select types are resolved by fixpoint over
    /// their arms; cycles of literals default to i64.
    pub fn compute(m: &ModuleIR) -> TypeInfo {
        let mut ti = TypeInfo::default();
        let ret_of: HashMap<&str, Option<TypeTag>> =
            m.functions.iter().map(|f| (f.name.as_str(), f.ret)).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for f in &m.functions {
                for ins in f.instrs() {
                    if ins.result.is_none() || ti.instr_ty.contains_key(&ins.id) {
                        continue;
                    }
                    use Opcode::*;
                    let t = match ins.op {
                        Add | Sub | Mul | Sdiv | Srem | And | Or | Xor | Shl | Lshr => {
                            Some(TypeTag::I64)
                        }
                        Eq | Ne | Slt | Sle | Sgt | Sge => Some(TypeTag::I1),
                        Alloca | Gep | Funcptr => Some(TypeTag::Ptr),
                        Load => Some(TypeTag::I64),
                        Call => match ins.callee().and_then(|c| ret_of.get(c)) {
                            Some(t) => *t,
                            None => Some(TypeTag::I64),
                        },
                        Icall => Some(TypeTag::I64),
                        Select => ins.operands[1..]
                            .iter()
                            .find_map(|v| ti.operand(f, v)),
                        Phi => ins
                            .phi_arms()
                            .find_map(|(_, v)| ti.operand(f, v)),
                        _ => None,
                    };
                    if let Some(t) = t {
                        ti.instr_ty.insert(ins.id, t);
                        changed = true;
                    }
                }
            }
        }
        // unresolved phi/select cycles of literals: default to i64
        for f in &m.functions {
            for ins in f.instrs() {
                if ins.result.is_some() && !ti.instr_ty.contains_key(&ins.id) {
                    ti.instr_ty.insert(ins.id, TypeTag::I64);
                }
            }
        }
        ti
    }
}

struct Verifier<'m> {
    m: &'m ModuleIR,
    types: TypeInfo,
    diags: Vec<Diagnostic>,
}

impl<'m> Verifier<'m> {
    fn diag(&mut self, entity: EntityId, rule: &'static str, message: String) {
        self.diags.push(Diagnostic { entity, rule, message });
    }

    fn check_module_shape(&mut self) {
        let mut names = HashSet::new();
        for g in &self.m.globals {
            names.insert(g.name.as_str());
            if let Some(init) = &g.init {
                if init.len() as u64 != g.size {
                    self.diag(
                        EntityId::Func(FuncId(0)),
                        "global-init",
                        format!("global '@{}' initializer length mismatch", g.name),
                    );
                }
            }
        }
        for f in &self.m.functions {
            if names.contains(f.name.as_str()) {
                self.diag(
                    EntityId::Func(f.id),
                    "name-clash",
                    format!("'@{}' names both a global and a function", f.name),
                );
            }
        }
    }

    fn check_function(&mut self, f: &FunctionIR) {
        let entry = &f.blocks[0];
        // block shape: exactly one terminator, at the end
        for b in &f.blocks {
            let n = b.instrs.len();
            for (i, ins) in b.instrs.iter().enumerate() {
                let is_last = i + 1 == n;
                if ins.op.is_terminator() != is_last {
                    self.diag(
                        EntityId::Instr(ins.id),
                        "terminator",
                        if is_last {
                            format!("block '{}' does not end in a terminator", b.label)
                        } else {
                            format!("instruction after terminator in block '{}'", b.label)
                        },
                    );
                    return; // CFG is unusable, skip deeper checks
                }
            }
        }

        let cfg = Cfg::of(f);
        // entry: no predecessors, no phis
        if !cfg.preds[0].is_empty() {
            self.diag(
                EntityId::Block(entry.id),
                "entry-preds",
                format!("entry block '{}' has predecessors", entry.label),
            );
        }
        for ins in &entry.instrs {
            if ins.op == Opcode::Phi {
                self.diag(
                    EntityId::Instr(ins.id),
                    "entry-phi",
                    "phi in entry block".to_string(),
                );
            }
        }
        // reachability
        let mut seen = vec![false; cfg.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for &s in &cfg.succs[b] {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        for (bi, b) in f.blocks.iter().enumerate() {
            if !seen[bi] {
                self.diag(
                    EntityId::Block(b.id),
                    "unreachable-block",
                    format!("block '{}' is unreachable", b.label),
                );
                return;
            }
        }

        // phi arms cover predecessors exactly
        for (bi, b) in f.blocks.iter().enumerate() {
            let pred_labels: HashSet<&str> =
                cfg.preds[bi].iter().map(|&p| f.blocks[p].label.as_str()).collect();
            for ins in &b.instrs {
                if ins.op != Opcode::Phi {
                    continue;
                }
                let mut arm_labels = HashSet::new();
                for (l, _) in ins.phi_arms() {
                    if !arm_labels.insert(l) {
                        self.diag(
                            EntityId::Instr(ins.id),
                            "phi-arms",
                            format!("phi repeats arm label '{}'", l),
                        );
                    }
                    if !pred_labels.contains(l) {
                        self.diag(
                            EntityId::Instr(ins.id),
                            "phi-arms",
                            format!("phi arm '{}' is not a predecessor", l),
                        );
                    }
                }
                for p in &pred_labels {
                    if !arm_labels.contains(p) {
                        self.diag(
                            EntityId::Instr(ins.id),
                            "phi-arms",
                            format!("phi incomplete: missing arm for predecessor '{}'", p),
                        );
                    }
                }
            }
        }

        // SSA dominance
        let dom = compute_dominators(f, Direction::Forward);
        let mut def_home: HashMap<&str, (usize, usize)> = HashMap::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            for (ii, ins) in b.instrs.iter().enumerate() {
                if let Some(r) = &ins.result {
                    def_home.insert(r.as_str(), (bi, ii));
                }
            }
        }
        for (bi, b) in f.blocks.iter().enumerate() {
            for (ii, ins) in b.instrs.iter().enumerate() {
                let check_use = |v: &ValueRef, use_block: usize, use_pos: Option<usize>| -> bool {
                    let Some(name) = v.as_ssa() else { return true };
                    let Some(&(dbi, dii)) = def_home.get(name) else {
                        return true; // param
                    };
                    if dbi == use_block {
                        match use_pos {
                            Some(up) => dii < up,
                            None => true, // use at block end
                        }
                    } else {
                        dom.dominates(f.blocks[dbi].id, f.blocks[use_block].id)
                    }
                };
                let ok = if ins.op == Opcode::Phi {
                    ins.phi_arms().all(|(l, v)| {
                        let pb = f.block_index(l).unwrap();
                        check_use(v, pb, None)
                    })
                } else {
                    ins.value_operands().iter().all(|v| check_use(v, bi, Some(ii)))
                };
                if !ok {
                    self.diag(
                        EntityId::Instr(ins.id),
                        "ssa-dominance",
                        format!("SSA dominance violated at instr {}", ins.id),
                    );
                }
            }
        }

        self.check_types(f);
    }

    /// Ptr values that may originate from data memory (alloca/gep/global);
    /// such values must never be stored.
    fn data_ptr_taint(&self, f: &FunctionIR) -> HashSet<String> {
        let mut taint: HashSet<String> = f
            .params
            .iter()
            .filter(|(_, t)| *t == TypeTag::Ptr)
            .map(|(n, _)| n.clone())
            .collect();
        let mut changed = true;
        while changed {
            changed = false;
            for ins in f.instrs() {
                let Some(r) = &ins.result else { continue };
                if taint.contains(r) {
                    continue;
                }
                let tainted = match ins.op {
                    Opcode::Alloca => true,
                    Opcode::Gep => true,
                    Opcode::Phi | Opcode::Select => ins
                        .value_operands()
                        .iter()
                        .any(|v| match v {
                            ValueRef::Ssa(n) => taint.contains(n),
                            ValueRef::Global(_) => true,
                            _ => false,
                        }),
                    _ => false,
                };
                if tainted {
                    taint.insert(r.clone());
                    changed = true;
                }
            }
        }
        taint
    }

    fn check_types(&mut self, f: &FunctionIR) {
        let taint = self.data_ptr_taint(f);
        let want = |v_ty: Option<TypeTag>, expect: TypeTag, lit_ok: bool| -> bool {
            match v_ty {
                Some(t) if t == expect => true,
                // literals are i64-typed but adapt to i1 slots
                Some(TypeTag::I64) if expect == TypeTag::I1 && lit_ok => true,
                _ => false,
            }
        };
        // local helper: type of operand
        let types = self.types.clone();
        let tyof = |v: &ValueRef| types.operand(f, v);
        for b in &f.blocks {
            for ins in &b.instrs {
                use Opcode::*;
                let id = EntityId::Instr(ins.id);
                let bad = |me: &mut Self, msg: String| me.diag(id, "operand-types", msg);
                match ins.op {
                    Add | Sub | Mul | Sdiv | Srem | And | Or | Xor | Shl | Lshr | Eq | Ne
                    | Slt | Sle | Sgt | Sge => {
                        for v in &ins.operands {
                            if tyof(v) != Some(TypeTag::I64) {
                                bad(self, format!("'{}' expects i64 operands", ins.op.name()));
                            }
                        }
                        if matches!(ins.op, Sdiv | Srem) {
                            if ins.operands[1] == ValueRef::Lit(0) {
                                self.diag(
                                    id,
                                    "div-by-literal-zero",
                                    format!("'{}' by literal 0", ins.op.name()),
                                );
                            }
                        }
                    }
                    Select => {
                        let c = tyof(&ins.operands[0]);
                        if !want(c, TypeTag::I1, matches!(ins.operands[0], ValueRef::Lit(0 | 1))) {
                            bad(self, "select condition must be i1".to_string());
                        }
                    }
                    Brcond => {
                        let c = tyof(&ins.operands[0]);
                        if !want(c, TypeTag::I1, matches!(ins.operands[0], ValueRef::Lit(0 | 1))) {
                            bad(self, "brcond condition must be i1".to_string());
                        }
                    }
                    Alloca => match ins.operands[0] {
                        ValueRef::Lit(n) if n > 0 => {}
                        _ => bad(self, "alloca size must be a positive literal".to_string()),
                    },
                    Gep => {
                        if tyof(&ins.operands[0]) != Some(TypeTag::Ptr) {
                            bad(self, "gep base must be ptr".to_string());
                        }
                        if tyof(&ins.operands[1]) != Some(TypeTag::I64) {
                            bad(self, "gep offset must be i64".to_string());
                        }
                    }
                    Load => {
                        if tyof(&ins.operands[0]) != Some(TypeTag::Ptr) {
                            bad(self, "load address must be ptr".to_string());
                        }
                    }
                    Store => {
                        if tyof(&ins.operands[1]) != Some(TypeTag::Ptr) {
                            bad(self, "store address must be ptr".to_string());
                        }
                        match &ins.operands[0] {
                            v @ ValueRef::Ssa(n) => {
                                if tyof(v) == Some(TypeTag::Ptr) && taint.contains(n) {
                                    bad(
                                        self,
                                        "data pointers are register-only and cannot be stored"
                                            .to_string(),
                                    );
                                }
                            }
                            ValueRef::Global(_) => {
                                bad(self, "data pointers cannot be stored".to_string())
                            }
                            _ => {}
                        }
                    }
                    Print => {
                        if tyof(&ins.operands[0]) != Some(TypeTag::I64) {
                            bad(self, "print expects an i64 value".to_string());
                        }
                    }
                    Call => {
                        let Some(callee) = ins.callee() else {
                            bad(self, "call target must be a function name".to_string());
                            continue;
                        };
                        if callee == "main" {
                            self.diag(
                                id,
                                "call-main",
                                "'@main' cannot be a call target".to_string(),
                            );
                            continue;
                        }
                        let Some(g) = self.m.function(callee) else {
                            bad(self, format!("call of unknown function '@{}'", callee));
                            continue;
                        };
                        if g.params.len() != ins.operands.len() - 1 {
                            self.diag(
                                id,
                                "call-arity",
                                format!("call of '@{}' with wrong arity", callee),
                            );
                        } else {
                            for ((_, pt), a) in g.params.iter().zip(&ins.operands[1..]) {
                                let at = tyof(a);
                                if !want(at, *pt, matches!(a, ValueRef::Lit(_))) {
                                    self.diag(
                                        id,
                                        "call-arg-types",
                                        format!("argument type mismatch calling '@{}'", callee),
                                    );
                                }
                            }
                        }
                        if ins.result.is_some() && g.ret.is_none() {
                            self.diag(
                                id,
                                "call-void-result",
                                format!("void call of '@{}' cannot define a value", callee),
                            );
                        }
                    }
                    Icall => {
                        let t = tyof(&ins.operands[0]);
                        // loaded funcptr values are i64-typed; both are accepted
                        if !matches!(t, Some(TypeTag::Ptr) | Some(TypeTag::I64)) {
                            bad(self, "icall target must be ptr or a loaded value".to_string());
                        }
                        if let ValueRef::Ssa(n) = &ins.operands[0] {
                            if taint.contains(n) {
                                bad(self, "icall target must not be a data pointer".to_string());
                            }
                        }
                    }
                    Funcptr => {
                        if !matches!(ins.operands[0], ValueRef::Func(_)) {
                            bad(self, "funcptr expects a function name".to_string());
                        }
                    }
                    Ret => {
                        match (f.ret, ins.operands.first()) {
                            (None, Some(_)) => {
                                bad(self, "void function returns a value".to_string())
                            }
                            (Some(_), None) => bad(self, "missing return value".to_string()),
                            (Some(t), Some(v)) => {
                                if !want(tyof(v), t, matches!(v, ValueRef::Lit(_))) {
                                    bad(self, "return type mismatch".to_string());
                                }
                            }
                            (None, None) => {}
                        }
                    }
                    Br | Phi => {}
                }
                // bare function names are only valid in call/funcptr position
                let fn_ok: &[usize] = match ins.op {
                    Call | Funcptr => &[0],
                    _ => &[],
                };
                for (k, v) in ins.operands.iter().enumerate() {
                    if matches!(v, ValueRef::Func(_)) && !fn_ok.contains(&k) {
                        self.diag(
                            id,
                            "fn-name-as-value",
                            "function names are not first-class values; use funcptr".to_string(),
                        );
                    }
                }
            }
        }
    }
}

/// Check every structural invariant. An empty result licenses every other
/// operation in this crate.
pub fn verify_module(m: &ModuleIR) -> Vec<Diagnostic> {
    let mut v = Verifier { m, types: TypeInfo::compute(m), diags: Vec::new() };
    v.check_module_shape();
    for f in &m.functions {
        if f.blocks.is_empty() {
            v.diag(EntityId::Func(f.id), "empty-function", format!("'@{}' has no blocks", f.name));
            continue;
        }
        v.check_function(f);
    }
    v.diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn diags(src: &str) -> Vec<Diagnostic> {
        verify_module(&parse_module(src).unwrap())
    }

    #[test]
    fn clean_module_verifies() {
        let d = diags(
            "func @main() -> i64 {
bb0:
  %p = alloca 2
  store 5, %p
  %v = load %p
  ret %v
}",
        );
        assert!(d.is_empty(), "{:?}", d);
    }

    #[test]
    fn ssa_dominance_violation_reported() {
        let d = diags(
            "func @main(%c: i1) -> i64 {
bb0:
  brcond %c, bb1, bb2
bb1:
  %x = add 1, 2
  br bb3
bb2:
  br bb3
bb3:
  ret %x
}",
        );
        assert!(d.iter().any(|d| d.rule == "ssa-dominance"), "{:?}", d);
    }

    #[test]
    fn phi_missing_arm_reported() {
        let d = diags(
            "func @main(%c: i1) -> i64 {
bb0:
  brcond %c, bb1, bb2
bb1:
  br bb3
bb2:
  br bb3
bb3:
  %x = phi [bb1: 1]
  ret %x
}",
        );
        assert!(d.iter().any(|d| d.message.contains("phi incomplete")), "{:?}", d);
    }

    #[test]
    fn literal_zero_divisor_rejected() {
        let d = diags("func @main() -> i64 { bb0: %x = sdiv 4, 0\n ret %x }");
        assert!(d.iter().any(|d| d.rule == "div-by-literal-zero"), "{:?}", d);
    }

    #[test]
    fn stored_data_pointer_rejected() {
        let d = diags(
            "func @main() -> i64 {
bb0:
  %p = alloca 1
  %q = alloca 1
  store %p, %q
  ret 0
}",
        );
        assert!(d.iter().any(|d| d.message.contains("register-only")), "{:?}", d);
    }

    #[test]
    fn stored_funcptr_accepted() {
        let d = diags(
            "func @f() -> i64 { a: ret 1 }
func @main() -> i64 {
bb0:
  %g = alloca 1
  %fp = funcptr @f
  store %fp, %g
  %v = load %g
  %r = icall %v()
  ret %r
}",
        );
        assert!(d.is_empty(), "{:?}", d);
    }

    #[test]
    fn call_to_main_rejected() {
        let d = diags(
            "func @main() -> i64 { bb0: %x = call @main()\n ret %x }",
        );
        assert!(d.iter().any(|d| d.rule == "call-main"), "{:?}", d);
    }

    #[test]
    fn unreachable_block_rejected() {
        let d = diags("func @main() -> i64 { bb0: ret 0\nbb1: ret 1 }");
        assert!(d.iter().any(|d| d.rule == "unreachable-block"), "{:?}", d);
    }
}
