//! The dependence-checked scheduler: legal moves apply and preserve
//! behavior, illegal ones are refused with the graph as the witness.
//!
//! Run with: cargo run --example schedule_moves

use midend::alias::compute_points_to;
use midend::callgraph::build_call_graph;
use midend::interp::{run_program, DEFAULT_STEP_BUDGET};
use midend::ir::*;
use midend::pdg::build_pdg;
use midend::transforms::{can_move_before, move_before, MovePoint};

const PROGRAM: &str = r#"
func @main(%n: i64) -> i64 {
entry:
  %p = alloca 1
  %indep = mul %n, 3
  store %n, %p
  %v = load %p
  %r = add %v, %indep
  ret %r
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let pts = compute_points_to(&module);
    let cg = build_call_graph(&module, &pts);
    let pdg = build_pdg(&module, &pts, &cg);
    let f = &module.functions[0];
    let by_name = |n: &str| f.instrs().find(|i| i.result.as_deref() == Some(n)).unwrap().id;
    let store = f.instrs().find(|i| i.op == Opcode::Store).unwrap().id;

    // the independent multiply may sink below the store
    let indep = by_name("indep");
    let load = by_name("v");
    println!(
        "move %indep below the store: {}",
        can_move_before(&module, &pdg, indep, MovePoint::Before(load))
    );
    let moved = move_before(&module, &pdg, indep, MovePoint::Before(load)).unwrap();
    let a = run_program(&module, &[9], DEFAULT_STEP_BUDGET).unwrap();
    let b = run_program(&moved, &[9], DEFAULT_STEP_BUDGET).unwrap();
    assert_eq!(a.exit, b.exit);

    // the load may not cross the store it reads from
    println!(
        "move %v above the store: {}",
        can_move_before(&module, &pdg, load, MovePoint::Before(store))
    );
    assert!(!can_move_before(&module, &pdg, load, MovePoint::Before(store)));
    println!("behavior preserved under the legal move");
}
