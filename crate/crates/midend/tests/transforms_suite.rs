//! Scheduler motion fuzzing with the interpreter as oracle, plus LICM/DFE
//! edge cases not covered by the acceptance gate.

mod common;

use common::*;
use midend::alias::compute_points_to;
use midend::callgraph::build_call_graph;
use midend::interp::{run_program, DEFAULT_STEP_BUDGET};
use midend::ir::*;
use midend::pdg::build_pdg;
use midend::transforms::{
    can_move_before, dead_function_elimination, licm, move_before, MovePoint,
};
use rand::Rng;

#[test]
fn randomized_legal_moves_preserve_results() {
    let mut attempted = 0usize;
    let mut applied = 0usize;
    for prog in load_corpus() {
        let pts = compute_points_to(&prog.module);
        let cg = build_call_graph(&prog.module, &pts);
        let pdg = build_pdg(&prog.module, &pts, &cg);
        let all: Vec<InstrId> = prog
            .module
            .functions
            .iter()
            .flat_map(|f| f.instrs())
            .map(|i| i.id)
            .collect();
        let mut r = rng(0x40CE);
        for _ in 0..60 {
            let i = all[r.gen_range(0..all.len())];
            let p = all[r.gen_range(0..all.len())];
            attempted += 1;
            if !can_move_before(&prog.module, &pdg, i, MovePoint::Before(p)) {
                continue;
            }
            let m2 = move_before(&prog.module, &pdg, i, MovePoint::Before(p)).unwrap();
            assert!(verify_module(&m2).is_empty(), "{}", prog.name);
            applied += 1;
            for input in &prog.inputs {
                let a = run_program(&prog.module, input, DEFAULT_STEP_BUDGET).unwrap();
                let b = run_program(&m2, input, DEFAULT_STEP_BUDGET).unwrap();
                assert_eq!(
                    (a.output, a.exit, a.trap),
                    (b.output, b.exit, b.trap),
                    "{}: move {:?} before {:?} changed behavior",
                    prog.name,
                    i,
                    p
                );
            }
        }
    }
    assert!(applied > 20, "only {} of {} random moves were legal", applied, attempted);
}

#[test]
fn block_end_move_point() {
    let m = parse_module(
        "func @main() -> i64 {
a:
  %x = add 1, 2
  %y = add 3, 4
  %z = add %x, %y
  ret %z
}",
    )
    .unwrap();
    let pts = compute_points_to(&m);
    let cg = build_call_graph(&m, &pts);
    let pdg = build_pdg(&m, &pts, &cg);
    let f = &m.functions[0];
    let x = f.blocks[0].instrs[0].id;
    let b = f.blocks[0].id;
    // moving %x to just before the terminator crosses %z, which uses it
    assert!(!can_move_before(&m, &pdg, x, MovePoint::BlockEndBeforeTerminator(b)));
    let y = f.blocks[0].instrs[1].id;
    let z = f.blocks[0].instrs[2].id;
    // %y may move right before %z (no-op distance)
    assert!(can_move_before(&m, &pdg, y, MovePoint::Before(z)));
}

#[test]
fn licm_fixpoint_is_stable() {
    for prog in load_corpus() {
        let (m1, r1) = licm(&prog.module);
        let (m2, r2) = licm(&m1);
        assert_eq!(r2.total(), 0, "{}: second licm still hoisted {:?}", prog.name, r2);
        assert_eq!(print_module(&m1), print_module(&m2), "{}", prog.name);
        let _ = r1;
    }
}

#[test]
fn licm_beats_operand_only_baseline_on_designed_chains() {
    // end-to-end: the chain programs must hoist more than the single
    // operand-invariant instruction a baseline would move
    for name in ["18_licm_chain1", "19_licm_chain2", "20_licm_chain3"] {
        let prog = load_corpus().into_iter().find(|p| p.name == name).unwrap();
        let (_, report) = licm(&prog.module);
        assert!(
            report.total() >= 2,
            "{}: expected a whole chain hoisted, got {}",
            name,
            report.total()
        );
    }
}

#[test]
fn dfe_drops_whole_islands() {
    let prog = load_corpus().into_iter().find(|p| p.name == "30_dead_island").unwrap();
    let (m2, report) = dead_function_elimination(&prog.module);
    assert!(report.removed.contains(&"ping".to_string()));
    assert!(report.removed.contains(&"pong".to_string()));
    assert!(m2.function("helper").is_some());
    assert!(m2.function("main").is_some());
    for input in &prog.inputs {
        let a = run_program(&prog.module, input, DEFAULT_STEP_BUDGET).unwrap();
        let b = run_program(&m2, input, DEFAULT_STEP_BUDGET).unwrap();
        assert_eq!((a.output, a.exit), (b.output, b.exit));
    }
}

#[test]
fn dfe_keeps_icall_reachable_functions() {
    let prog = load_corpus().into_iter().find(|p| p.name == "28_funcptr_global").unwrap();
    let (m2, report) = dead_function_elimination(&prog.module);
    assert!(report.removed.is_empty(), "{:?}", report.removed);
    assert!(m2.function("triple").is_some());
}

#[test]
fn dfe_without_main_is_identity() {
    let m = parse_module(
        "func @a() -> i64 { x: ret 1 }
func @b() -> i64 { x: %r = call @a()\n ret %r }",
    )
    .unwrap();
    let (m2, report) = dead_function_elimination(&m);
    assert!(report.removed.is_empty());
    assert_eq!(m, m2);
}
