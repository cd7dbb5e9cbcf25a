//! Build the whole-program dependence graph, compare it against the
//! alias-free baseline, and check it covers a dynamic trace.
//!
//! Run with: cargo run --example dependence_graph

use midend::alias::compute_points_to;
use midend::callgraph::build_call_graph;
use midend::interp::{trace_dependences, DEFAULT_STEP_BUDGET};
use midend::ir::parse_module;
use midend::pdg::{build_pdg, build_pdg_baseline, to_dot};

const PROGRAM: &str = r#"
global @a: i64[8]
global @b: i64[8]

func @main(%n: i64) -> i64 {
entry:
  br fill
fill:
  %i = phi [entry: 0], [fb: %i2]
  %c = slt %i, %n
  brcond %c, fb, sum
fb:
  %pa = gep @a, %i
  %pb = gep @b, %i
  store %i, %pa
  %tw = mul %i, 2
  store %tw, %pb
  %i2 = add %i, 1
  br fill
sum:
  br sh
sh:
  %j = phi [sum: 0], [sb: %j2]
  %s = phi [sum: 0], [sb: %s2]
  %cc = slt %j, %n
  brcond %cc, sb, done
sb:
  %qa = gep @a, %j
  %va = load %qa
  %s2 = add %s, %va
  %j2 = add %j, 1
  br sh
done:
  print %s
  ret %s
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let pts = compute_points_to(&module);
    let cg = build_call_graph(&module, &pts);
    let pdg = build_pdg(&module, &pts, &cg);
    let baseline = build_pdg_baseline(&module, &pts, &cg);
    println!(
        "points-to backed PDG: {} edges, {} may-memory",
        pdg.edges.len(),
        pdg.may_memory_edge_count()
    );
    println!(
        "all-pairs baseline:   {} edges, {} may-memory",
        baseline.edges.len(),
        baseline.may_memory_edge_count()
    );
    println!(
        "disproved {} may-memory pairs (the two arrays never alias)",
        baseline.may_memory_edge_count() - pdg.may_memory_edge_count()
    );

    // soundness spot-check: every dynamic dependence has a static edge
    let trace = trace_dependences(&module, &[8], DEFAULT_STEP_BUDGET).unwrap();
    for dep in &trace.deps {
        assert!(pdg.has_data_edge(dep.src, dep.dst, dep.kind));
    }
    println!("dynamic trace: {} dependences, all covered statically", trace.deps.len());

    let dot = to_dot(&pdg, &module);
    println!("DOT export: {} bytes (write it with the pdg subcommand's --dot)", dot.len());
}
