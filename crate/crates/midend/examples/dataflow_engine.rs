//! The generic data-flow engine: a custom problem, plus the built-in
//! liveness and reaching-definitions instances.
//!
//! Run with: cargo run --example dataflow_engine

use midend::dataflow::{
    liveness, reaching_definitions, solve, BitSet, DataFlowProblem, FlowDirection, Meet,
};
use midend::ir::*;

const PROGRAM: &str = r#"
func @main(%n: i64) -> i64 {
entry:
  %a = add %n, 1
  brcond 1, left, right
left:
  %b = mul %a, 2
  br join
right:
  %c = mul %a, 3
  br join
join:
  %d = phi [left: %b], [right: %c]
  print %d
  ret %d
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let f = &module.functions[0];

    // a custom forward/union problem: "blocks tainted by the left arm"
    let universe = 1usize;
    let mut p = DataFlowProblem::new(FlowDirection::Forward, Meet::Union, universe);
    let left_first = f.blocks[f.block_index("left").unwrap()].instrs[0].id;
    let mut g = BitSet::new(universe);
    g.insert(0);
    p.gen.insert(left_first, g);
    let r = solve(&p, &module, f);
    for b in &f.blocks {
        let reaches = r.instr_in[&b.instrs[0].id].contains(0)
            || r.instr_out[&b.terminator().id].contains(0);
        println!("block {:6} tainted-by-left: {}", b.label, reaches);
    }

    let (_, live, uni) = liveness(&module, f);
    let ret = f.blocks.last().unwrap().terminator();
    println!(
        "live before ret: {:?}",
        live.instr_in[&ret.id].iter().map(|k| &uni.names[k]).collect::<Vec<_>>()
    );

    let (_, rd, defs) = reaching_definitions(&module, f);
    let phi = f.instrs().find(|i| i.op == Opcode::Phi).unwrap();
    println!(
        "defs reaching the phi: {:?}",
        rd.instr_in[&phi.id].iter().map(|k| defs.defs[k]).collect::<Vec<_>>()
    );
}
