//! Loop-invariant code motion end to end: the whole chain of invariants is
//! hoisted and the dynamic step count drops.
//!
//! Run with: cargo run --example licm_pass

use midend::interp::{run_program, DEFAULT_STEP_BUDGET};
use midend::ir::{parse_module, print_module};
use midend::transforms::licm;

const PROGRAM: &str = r#"
func @main(%a: i64, %n: i64) -> i64 {
entry:
  br header
header:
  %i = phi [entry: 0], [body: %i2]
  %s = phi [entry: 0], [body: %s2]
  %c = slt %i, %n
  brcond %c, body, done
body:
  %x = add %a, 5
  %y = mul %x, %x
  %z = sdiv %y, 3
  %s2 = add %s, %z
  %i2 = add %i, 1
  br header
done:
  print %s
  ret %s
}
"#;

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let before = run_program(&module, &[7, 50], DEFAULT_STEP_BUDGET).unwrap();
    let (hoisted, report) = licm(&module);
    let after = run_program(&hoisted, &[7, 50], DEFAULT_STEP_BUDGET).unwrap();
    for (f, l, n) in &report.hoists {
        println!("hoisted {} instructions from loop L{} of @{}", n, l, f);
    }
    println!("steps before {} -> after {}", before.steps, after.steps);
    assert_eq!(before.output, after.output);
    assert!(after.steps < before.steps);
    println!("--- module after licm ---");
    print!("{}", print_module(&hoisted));
}
