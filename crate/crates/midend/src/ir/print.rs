//! Canonical textual form: one instruction per line, blocks in stored order,
//! metadata section last. `parse(print(m))` is structurally identical to `m`
//! and printing is a fixpoint after one round trip.

use super::*;
use std::fmt::Write;

pub fn instr_to_string(ins: &Instruction) -> String {
    let mut s = String::new();
    if let Some(r) = &ins.result {
        let _ = write!(s, "%{} = ", r);
    }
    s.push_str(ins.op.name());
    match ins.op {
        Opcode::Phi => {
            let arms: Vec<String> =
                ins.phi_arms().map(|(l, v)| format!("[{}: {}]", l, v)).collect();
            let _ = write!(s, " {}", arms.join(", "));
        }
        Opcode::Call | Opcode::Icall => {
            let args: Vec<String> = ins.operands[1..].iter().map(|o| o.to_string()).collect();
            let _ = write!(s, " {}({})", ins.operands[0], args.join(", "));
        }
        _ => {
            if !ins.operands.is_empty() {
                let ops: Vec<String> = ins.operands.iter().map(|o| o.to_string()).collect();
                let _ = write!(s, " {}", ops.join(", "));
            }
        }
    }
    s
}

pub fn print_module(m: &ModuleIR) -> String {
    let mut out = String::new();
    for g in &m.globals {
        let _ = write!(out, "global @{}: i64[{}]", g.name, g.size);
        if let Some(init) = &g.init {
            let vals: Vec<String> = init.iter().map(|v| v.to_string()).collect();
            let _ = write!(out, " = [{}]", vals.join(", "));
        }
        out.push('\n');
    }
    if !m.globals.is_empty() && !m.functions.is_empty() {
        out.push('\n');
    }
    for (fi, f) in m.functions.iter().enumerate() {
        if fi > 0 {
            out.push('\n');
        }
        let params: Vec<String> =
            f.params.iter().map(|(n, t)| format!("%{}: {}", n, t)).collect();
        let ret = match f.ret {
            Some(t) => t.to_string(),
            None => "void".to_string(),
        };
        let _ = writeln!(out, "func @{}({}) -> {} {{", f.name, params.join(", "), ret);
        for b in &f.blocks {
            let _ = writeln!(out, "{}:", b.label);
            for ins in &b.instrs {
                let _ = writeln!(out, "  {}", instr_to_string(ins));
            }
        }
        out.push_str("}\n");
    }
    if !m.metadata.is_empty() {
        if !m.functions.is_empty() || !m.globals.is_empty() {
            out.push('\n');
        }
        for e in &m.metadata {
            if e.text.is_empty() {
                let _ = writeln!(out, "!{}", e.key);
            } else {
                let _ = writeln!(out, "!{} {}", e.key, e.text);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn empty_module_prints_empty() {
        assert_eq!(print_module(&ModuleIR::default()), "");
    }

    #[test]
    fn print_is_fixpoint_after_one_round_trip() {
        let src = "global @g: i64[2] = [5, -6]\nfunc @main(%n: i64) -> i64 {\nbb0:\n  %p = gep @g, %n\n  %v = load %p\n  print %v\n  ret %v\n}\n!note keep me\n";
        let m1 = parse_module(src).unwrap();
        let p1 = print_module(&m1);
        let m2 = parse_module(&p1).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(p1, print_module(&m2));
    }
}
