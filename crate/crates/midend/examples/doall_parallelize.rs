//! DOALL end to end: applicability over the classified condensation, strided
//! outlining with a privatized reduction, then execution in randomized task
//! orders and with true thread overlap.
//!
//! Run with: cargo run --example doall_parallelize

use midend::alias::{compute_points_to, ModRefSummaries};
use midend::callgraph::build_call_graph;
use midend::interp::{run_program, DEFAULT_STEP_BUDGET};
use midend::ir::{parse_module, print_module};
use midend::loops::{LoopAnalysis, LoopContext};
use midend::parallel::{compute_live_in_out, doall_check, doall_transform, run_parallel, ParallelMode};
use midend::pdg::build_pdg;

const PROGRAM: &str = r#"
global @a: i64[64]

func @main(%n: i64, %seed: i64) -> i64 {
entry:
  br fill
fill:
  %k = phi [entry: 0], [fb: %k2]
  %fc = slt %k, %n
  brcond %fc, fb, spre
fb:
  %v = mul %k, %seed
  %v2 = srem %v, 93
  %p = gep @a, %k
  store %v2, %p
  %k2 = add %k, 1
  br fill
spre:
  br sum
sum:
  %i = phi [spre: 0], [sb: %i2]
  %s = phi [spre: 0], [sb: %s2]
  %c = slt %i, %n
  brcond %c, sb, done
sb:
  %q = gep @a, %i
  %x = load %q
  %s2 = add %s, %x
  %i2 = add %i, 1
  br sum
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
    let modref = ModRefSummaries::compute(&module, &pts);
    let la = LoopAnalysis::of_module(&module);

    // the summation loop is the second one
    let ctx = LoopContext::build(&module, &pdg, &la.loops[1]);
    let env = compute_live_in_out(&module, &ctx);
    println!("environment slots:");
    for s in &env.slots {
        println!("  slot {} {:?} %{}", s.index, s.role, s.name);
    }
    let plan = doall_check(&module, &ctx, &modref);
    println!("applicable: {} (reductions: {})", plan.applicable(), plan.reductions.len());

    let (parallel, task) = doall_transform(&module, &ctx, &plan, 4).unwrap();
    println!("outlined into @{} with 4 strided tasks", task.body);

    let args = [40, 17];
    let sequential = run_program(&module, &args, DEFAULT_STEP_BUDGET).unwrap();
    for seed in 0..3 {
        let shuffled = run_parallel(
            &parallel,
            &args,
            DEFAULT_STEP_BUDGET,
            ParallelMode::SequentialAnyOrder,
            seed,
        )
        .unwrap();
        assert_eq!(sequential.output, shuffled.output);
    }
    let threaded =
        run_parallel(&parallel, &args, DEFAULT_STEP_BUDGET, ParallelMode::Concurrent, 0).unwrap();
    assert_eq!(sequential.output, threaded.output);
    println!(
        "sequential sum {}, randomized orders agree, threads agree",
        sequential.exit
    );
    println!("--- transformed module ---");
    print!("{}", print_module(&parallel));
}
