//! The complete call graph: indirect calls resolved through points-to sets,
//! may/must edges with per-site sub-edges, islands, and reachability.
//!
//! Run with: cargo run --example callgraph_islands

use midend::alias::compute_points_to;
use midend::callgraph::{build_call_graph, islands, reachable_functions};
use midend::ir::parse_module;

const PROGRAM: &str = r#"
global @ops: i64[2]

func @plus(%x: i64) -> i64 {
a:
  %r = add %x, 1
  ret %r
}
func @minus(%x: i64) -> i64 {
a:
  %r = sub %x, 1
  ret %r
}
func @orphan_a() -> i64 {
a:
  %r = call @orphan_b()
  ret %r
}
func @orphan_b() -> i64 {
a:
  %r = call @orphan_a()
  ret %r
}
func @main(%which: i64) -> i64 {
entry:
  %fp0 = funcptr @plus
  %fp1 = funcptr @minus
  %s0 = gep @ops, 0
  %s1 = gep @ops, 1
  store %fp0, %s0
  store %fp1, %s1
  %slot = gep @ops, %which
  %f = load %slot
  %r = icall %f(41)
  print %r
  ret %r
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let pts = compute_points_to(&module);
    let cg = build_call_graph(&module, &pts);
    println!("--- edges (certainty + call sites) ---");
    print!("{}", cg.dump(&module));
    println!("--- islands ---");
    for (k, island) in islands(&cg, &module).iter().enumerate() {
        println!("island {}: {:?}", k, island.members);
    }
    let main = module.function("main").unwrap().id;
    let reach = reachable_functions(&cg, &[main].into_iter().collect());
    println!(
        "reachable from @main: {:?}",
        reach.iter().map(|f| module.functions[f.0 as usize].name.as_str()).collect::<Vec<_>>()
    );
}
