//! Execute a program on the reference interpreter, profile it over a few
//! inputs, embed the counters as metadata, and query loop hotness back.
//!
//! Run with: cargo run --example run_and_profile

use midend::interp::{
    collect_profile, embed_profile, hotness_of_loop, read_profile, run_program,
    DEFAULT_STEP_BUDGET,
};
use midend::ir::{parse_module, print_module};
use midend::loops::LoopAnalysis;

const PROGRAM: &str = r#"
func @main(%n: i64) -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %s = phi [entry: 0], [body: %s2]
  %c = slt %i, %n
  brcond %c, body, done
body:
  %sq = mul %i, %i
  %s2 = add %s, %sq
  %i2 = add %i, 1
  br header
done:
  print %s
  ret %s
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let result = run_program(&module, &[10], DEFAULT_STEP_BUDGET).unwrap();
    println!("output {:?}, exit {}, steps {}", result.output, result.exit, result.steps);

    let inputs = vec![vec![10], vec![25], vec![3]];
    let profile = collect_profile(&module, &inputs, DEFAULT_STEP_BUDGET).unwrap();
    let annotated = embed_profile(&module, &profile).unwrap();
    println!("--- module with embedded profile (tail) ---");
    let text = print_module(&annotated);
    for line in text.lines().filter(|l| l.starts_with("!prof")).take(5) {
        println!("{}", line);
    }
    println!("...");

    // the metadata survives the textual round trip and answers queries
    let reread = parse_module(&text).unwrap();
    let recovered = read_profile(&reread).unwrap();
    assert_eq!(recovered, profile);
    let la = LoopAnalysis::of_module(&module);
    for l in &la.loops {
        println!(
            "loop {}: {} invocations, {} header executions, hotness {:.3}",
            l.id,
            recovered.loop_invocations.get(&l.id).copied().unwrap_or(0),
            recovered.loop_total_iterations.get(&l.id).copied().unwrap_or(0),
            hotness_of_loop(&module, &recovered, l),
        );
    }
}
