//! Dead-function elimination over the complete call graph: functions only
//! reachable through function pointers survive, orphan islands disappear.
//!
//! Run with: cargo run --example dead_functions

use midend::interp::{run_program, DEFAULT_STEP_BUDGET};
use midend::ir::parse_module;
use midend::transforms::dead_function_elimination;

const PROGRAM: &str = r#"
func @kept_via_pointer(%x: i64) -> i64 {
a:
  %r = mul %x, 10
  ret %r
}
func @plainly_dead() -> i64 {
a:
  ret 0
}
func @dead_island_1() -> i64 {
a:
  %r = call @dead_island_2()
  ret %r
}
func @dead_island_2() -> i64 {
a:
  %r = call @dead_island_1()
  ret %r
}
func @main() -> i64 {
entry:
  %f = funcptr @kept_via_pointer
  %r = icall %f(4)
  print %r
  ret %r
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let (pruned, report) = dead_function_elimination(&module);
    println!("removed: {:?}", report.removed);
    println!(
        "functions {} -> {}, instructions {} -> {}",
        module.functions.len(),
        pruned.functions.len(),
        module.instr_count(),
        pruned.instr_count()
    );
    let a = run_program(&module, &[], DEFAULT_STEP_BUDGET).unwrap();
    let b = run_program(&pruned, &[], DEFAULT_STEP_BUDGET).unwrap();
    assert_eq!((a.output, a.exit), (b.output, b.exit));
    assert!(pruned.function("kept_via_pointer").is_some());
    println!("behavior preserved");
}
