//! The dynamic oracle: trace every memory dependence of a run, with
//! same-iteration flags, observed call pairs, and indirect-call targets.
//!
//! Run with: cargo run --example trace_oracle

use midend::interp::{trace_dependences, DEFAULT_STEP_BUDGET};
use midend::ir::parse_module;

const PROGRAM: &str = r#"
global @hist: i64[4]

func @bump(%slot: i64) -> void {
a:
  %p = gep @hist, %slot
  %v = load %p
  %v2 = add %v, 1
  store %v2, %p
  ret
}
func @main(%n: i64) -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %c = slt %i, %n
  brcond %c, body, done
body:
  %slot = srem %i, 4
  call @bump(%slot)
  %i2 = add %i, 1
  br header
done:
  %p0 = gep @hist, 0
  %h0 = load %p0
  print %h0
  ret %h0
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let trace = trace_dependences(&module, &[9], DEFAULT_STEP_BUDGET).unwrap();
    println!("exit {}, {} dependences", trace.exec.exit, trace.deps.len());
    for d in &trace.deps {
        let flags: Vec<String> = d
            .same_iteration
            .iter()
            .map(|(l, same)| format!("{}:{}", l, if *same { "same-iter" } else { "crosses" }))
            .collect();
        println!(
            "  {:?} {} -> {} on {:?} [{}]",
            d.kind,
            d.src,
            d.dst,
            d.object,
            flags.join(", ")
        );
    }
    println!("observed call pairs:");
    for (a, b) in &trace.call_pairs {
        println!(
            "  @{} -> @{}",
            module.functions[a.0 as usize].name,
            module.functions[b.0 as usize].name
        );
    }
}
