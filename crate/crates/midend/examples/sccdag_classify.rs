//! The condensation of a loop's dependence graph, with each component
//! classified Independent, Sequential, or Reducible.
//!
//! Run with: cargo run --example sccdag_classify

use midend::alias::compute_points_to;
use midend::callgraph::build_call_graph;
use midend::ir::*;
use midend::loops::{LoopAnalysis, LoopContext};
use midend::pdg::build_pdg;
use midend::sccdag::SccKind;

const PROGRAM: &str = r#"
global @data: i64[32]

func @main(%n: i64) -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %s = phi [entry: 0], [body: %s2]
  %c = slt %i, %n
  brcond %c, body, done
body:
  %p = gep @data, %i
  %d = load %p
  %scaled = mul %d, 5
  store %scaled, %p
  %s2 = add %s, %d
  %i2 = add %i, 1
  br header
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
    let la = LoopAnalysis::of_module(&module);
    let ctx = LoopContext::build(&module, &pdg, &la.loops[0]);
    let idx = ModuleIndex::new(&module);

    println!("condensation of the loop dependence graph:");
    for (k, scc) in ctx.sccdag.sccs.iter().enumerate() {
        println!("SCC#{} [{}]", k, ctx.sccdag.kinds[k].name());
        for m in &scc.members {
            println!("    I{}: {}", m.0, instr_to_string(idx.instr(*m)));
        }
        if let SccKind::Reducible(r) = &ctx.sccdag.kinds[k] {
            println!(
                "    reduction: op {} identity {} (privatize per task, fold after)",
                r.op.name(),
                r.identity
            );
        }
    }
    println!("condensation edges: {:?}", ctx.sccdag.edges);
    assert!(ctx.sccdag.is_acyclic());
}
