//! The per-loop bundle: dependence graph, invariants (both detection
//! algorithms side by side), induction variables, and trip counts.
//!
//! Run with: cargo run --example loop_analyses

use midend::alias::{compute_points_to, ModRefSummaries};
use midend::callgraph::build_call_graph;
use midend::ir::*;
use midend::loops::{loop_report_line, naive_is_invariant, LoopAnalysis, LoopContext};
use midend::pdg::build_pdg;

const PROGRAM: &str = r#"
func @main(%base: i64) -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %acc = phi [entry: 0], [body: %acc2]
  %c = slt %i, 12
  brcond %c, body, done
body:
  # a transitive chain of invariants: only %k0 is operand-invariant,
  # the rest are found through the dependence graph
  %k0 = add %base, 100
  %k1 = mul %k0, 3
  %k2 = sub %k1, 7
  %acc2 = add %acc, %k2
  %i2 = add %i, 1
  br header
done:
  print %acc
  ret %acc
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let pts = compute_points_to(&module);
    let cg = build_call_graph(&module, &pts);
    let pdg = build_pdg(&module, &pts, &cg);
    let modref = ModRefSummaries::compute(&module, &pts);
    let la = LoopAnalysis::of_module(&module);
    let idx = ModuleIndex::new(&module);

    for l in &la.loops {
        let ctx = LoopContext::build(&module, &pdg, l);
        let f = &module.functions[l.func.0 as usize];
        let dom = compute_dominators(f, Direction::Forward);
        let naive: Vec<InstrId> = f
            .instrs()
            .filter(|i| l.blocks.contains(&idx.block_of_instr(i.id)))
            .filter(|i| naive_is_invariant(&module, i.id, l, &dom, &pts, &modref))
            .map(|i| i.id)
            .collect();
        println!("{}", loop_report_line(&module, &ctx, naive.len(), None));
        println!("  operand/alias baseline finds: {:?}", naive);
        println!(
            "  dependence-graph recursion finds: {:?}",
            ctx.invariants.members.iter().collect::<Vec<_>>()
        );
        for iv in &ctx.ivs {
            println!(
                "  IV {} start {} step {}{}",
                idx.instr(iv.def).result.as_deref().unwrap_or("?"),
                iv.start,
                iv.step,
                if iv.is_basic() { "" } else { " (derived)" }
            );
        }
        if let Some(iv) = ctx.governing_iv() {
            let g = iv.governing.as_ref().unwrap();
            println!("  governing IV with trip count {:?}", g.trip_count);
        }
    }
}
