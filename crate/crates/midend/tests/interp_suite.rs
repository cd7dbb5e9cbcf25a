//! Interpreter-level integration: determinism, profile conservation, and
//! hand-traced dependence expectations frozen as literals.

mod common;

use common::*;
use midend::interp::{
    collect_profile, conserves_steps, embed_profile, read_profile, run_program,
    trace_dependences, DEFAULT_STEP_BUDGET,
};
use midend::ir::*;
use midend::pdg::DataKind;

#[test]
fn corpus_runs_are_bit_identical() {
    for prog in load_corpus() {
        for input in &prog.inputs {
            let a = run_program(&prog.module, input, DEFAULT_STEP_BUDGET).unwrap();
            let b = run_program(&prog.module, input, DEFAULT_STEP_BUDGET).unwrap();
            assert_eq!(a, b, "{} {:?}", prog.name, input);
            let ta = trace_dependences(&prog.module, input, DEFAULT_STEP_BUDGET).unwrap();
            let tb = trace_dependences(&prog.module, input, DEFAULT_STEP_BUDGET).unwrap();
            assert_eq!(ta.deps, tb.deps);
            assert_eq!(ta.exec, tb.exec);
        }
    }
}

#[test]
fn profiles_conserve_steps_on_corpus() {
    for prog in load_corpus() {
        for input in &prog.inputs {
            let p = collect_profile(&prog.module, std::slice::from_ref(input), DEFAULT_STEP_BUDGET)
                .unwrap();
            let r = run_program(&prog.module, input, DEFAULT_STEP_BUDGET).unwrap();
            assert!(
                conserves_steps(&prog.module, &p, &r),
                "{} {:?}: block counts x lengths != steps",
                prog.name,
                input
            );
            // iterations never undercut invocations
            for (l, inv) in &p.loop_invocations {
                let iters = p.loop_total_iterations.get(l).copied().unwrap_or(0);
                assert!(iters >= *inv, "{}: loop {} {} < {}", prog.name, l, iters, inv);
            }
        }
    }
}

#[test]
fn profile_embedding_survives_round_trips() {
    for prog in load_corpus() {
        let p = collect_profile(&prog.module, &prog.inputs, DEFAULT_STEP_BUDGET).unwrap();
        let m2 = embed_profile(&prog.module, &p).unwrap();
        let text = print_module(&m2);
        let m3 = parse_module(&text).unwrap();
        assert_eq!(read_profile(&m3).unwrap(), p, "{}", prog.name);
    }
}

#[test]
fn hand_traced_recurrence() {
    // A[i] = A[i-1] * 2 over three iterations, hand-checked:
    //   store#k writes cell k; load#k reads cell k-1; the only RAW pair is
    //   (store, load) across consecutive iterations, never same-iteration,
    //   plus the seeding store of cell 0 feeding the first load.
    let src = "global @a: i64[8]
func @main() -> i64 {
entry:
  %p0 = gep @a, 0
  store 1, %p0
  br header
header:
  %i = phi [entry: 1], [body: %i2]
  %c = slt %i, 4
  brcond %c, body, done
body:
  %im1 = sub %i, 1
  %pp = gep @a, %im1
  %prev = load %pp
  %v = mul %prev, 2
  %p = gep @a, %i
  store %v, %p
  %i2 = add %i, 1
  br header
done:
  %lp = gep @a, 3
  %last = load %lp
  ret %last
}";
    let m = parse_module(src).unwrap();
    let t = trace_dependences(&m, &[], DEFAULT_STEP_BUDGET).unwrap();
    assert_eq!(t.exec.exit, 8); // 1 * 2 * 2 * 2
    let f = &m.functions[0];
    let seed_store = f.blocks[0].instrs[1].id;
    let body_load = f.instrs().find(|i| i.result.as_deref() == Some("prev")).unwrap().id;
    let body_store = f
        .instrs()
        .filter(|i| i.op == Opcode::Store)
        .nth(1)
        .unwrap()
        .id;
    let final_load = f.instrs().find(|i| i.result.as_deref() == Some("last")).unwrap().id;
    let raw: Vec<_> = t.deps.iter().filter(|d| d.kind == DataKind::Raw).collect();
    // exactly three RAW source/dest pairs
    let pairs: std::collections::BTreeSet<(InstrId, InstrId)> =
        raw.iter().map(|d| (d.src, d.dst)).collect();
    let expected: std::collections::BTreeSet<(InstrId, InstrId)> = [
        (seed_store, body_load),
        (body_store, body_load),
        (body_store, final_load),
    ]
    .into_iter()
    .collect();
    assert_eq!(pairs, expected);
    // the loop-carried RAW is never same-iteration
    let carried = raw.iter().find(|d| d.src == body_store && d.dst == body_load).unwrap();
    assert_eq!(carried.same_iteration.get(&LoopId(0)), Some(&false));
}

#[test]
fn budget_exhaustion_is_a_trap_not_an_error() {
    let m = parse_module("func @main() -> i64 { b: br b }").unwrap();
    let r = run_program(&m, &[], 500).unwrap();
    assert_eq!(r.trap, Some(midend::interp::Trap::StepBudgetExceeded));
    assert_eq!(r.steps, 501);
}

#[test]
fn trapping_input_aborts_profiling() {
    let m = parse_module(
        "func @main(%d: i64) -> i64 { b: %x = sdiv 100, %d\n ret %x }",
    )
    .unwrap();
    let err = collect_profile(&m, &[vec![4], vec![0]], DEFAULT_STEP_BUDGET).unwrap_err();
    assert!(matches!(err, midend::interp::ProfileError::Trapped(_)));
}

#[test]
fn interpreter_isolates_activation_memory() {
    // each activation's alloca is a fresh object: recursion writing its own
    // scratch never trips cross-activation dependences
    let src = "func @rec(%n: i64) -> i64 {
a:
  %p = alloca 1
  store %n, %p
  %c = sle %n, 0
  brcond %c, base, go
base:
  %v0 = load %p
  ret %v0
go:
  %n1 = sub %n, 1
  %sub = call @rec(%n1)
  %v = load %p
  %s = add %v, %sub
  ret %s
}
func @main() -> i64 {
e:
  %r = call @rec(4)
  print %r
  ret %r
}";
    let m = parse_module(src).unwrap();
    let t = trace_dependences(&m, &[], DEFAULT_STEP_BUDGET).unwrap();
    assert_eq!(t.exec.exit, 10); // 4+3+2+1+0
    // every dependence stays within one activation: store->load same object,
    // and no WAW between the stores of different activations
    assert!(t.deps.iter().all(|d| d.kind == DataKind::Raw));
}

#[test]
fn nested_loop_profile_matches_manual_counts() {
    // 17_nested3: three levels with literal trips 3 / 2 / 2, invoked once.
    // Manual simulation: outer header runs 4 times (3 bodies + exit test);
    // the middle loop is invoked once per outer body and its header runs
    // 2 bodies + 1 exit test per invocation; the innermost likewise.
    let prog = load_corpus().into_iter().find(|p| p.name == "17_nested3").unwrap();
    let p = collect_profile(&prog.module, &[vec![]], DEFAULT_STEP_BUDGET).unwrap();
    use midend::ir::LoopId;
    // loops are numbered by header ordinal: outer, middle, inner
    assert_eq!(p.loop_invocations[&LoopId(0)], 1);
    assert_eq!(p.loop_total_iterations[&LoopId(0)], 4);
    assert_eq!(p.loop_invocations[&LoopId(1)], 3);
    assert_eq!(p.loop_total_iterations[&LoopId(1)], 9);
    assert_eq!(p.loop_invocations[&LoopId(2)], 6);
    assert_eq!(p.loop_total_iterations[&LoopId(2)], 18);
}

#[test]
fn hotness_is_exactly_point_nine_by_construction() {
    // 100 retired instructions total, 90 inside the loop:
    //   entry: 4 (3 arithmetic + br)
    //   loop block: 9 instructions x 10 iterations = 90
    //   done: 6 (5 straight-line + ret)
    let src = "func @main() -> i64 {
entry:
  %a = add 1, 2
  %b = mul %a, 3
  %c = sub %b, 1
  br loop
loop:
  %i = phi [entry: 0], [loop: %i2]
  %i2 = add %i, 1
  %x1 = add %i2, %a
  %x2 = mul %x1, 2
  %x3 = xor %x2, 5
  %x4 = and %x3, 1023
  %x5 = or %x4, 1
  %cnd = slt %i2, 10
  brcond %cnd, loop, done
done:
  %d = add %x5, %c
  %e = mul %d, 1
  %f = sub %e, 0
  %g = add %f, 0
  print %g
  ret %g
}";
    let m = parse_module(src).unwrap();
    let r = run_program(&m, &[], DEFAULT_STEP_BUDGET).unwrap();
    assert_eq!(r.steps, 100, "designed to retire exactly 100 instructions");
    let p = collect_profile(&m, &[vec![]], DEFAULT_STEP_BUDGET).unwrap();
    let la = midend::loops::LoopAnalysis::of_module(&m);
    let h = midend::interp::hotness_of_loop(&m, &p, &la.loops[0]);
    assert!((h - 0.9).abs() < 1e-12, "hotness {}", h);
}
