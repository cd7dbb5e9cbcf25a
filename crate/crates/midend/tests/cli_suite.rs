//! End-to-end runs of the binary: pipeline composition, exit codes, and
//! byte-determinism of command output under fixed seeds.

mod common;

use common::corpus_dir;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_midend"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "midend {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn corpus(name: &str) -> String {
    corpus_dir().join(name).to_string_lossy().to_string()
}

#[test]
fn verify_and_run_exit_codes() {
    let ok = run_ok(&["verify", &corpus("01_straight_min.ir")]);
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("ok:"));

    // an SSA violation exits 1 with a diagnostic
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ir");
    std::fs::write(
        &bad,
        "func @main(%c: i1) -> i64 {\ne:\n  brcond %c, a, b\na:\n  %x = add 1, 2\n  br j\nb:\n  br j\nj:\n  ret %x\n}\n",
    )
    .unwrap();
    let out = bin().args(["verify", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("SSA dominance"));

    // usage errors exit 2
    let usage = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));

    let run = run_ok(&["run", &corpus("09_while_sum.ir"), "--args", "10"]);
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.contains("45"));
    assert!(text.trim_end().ends_with("exit 45"));
}

#[test]
fn prof_embed_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let profile: PathBuf = dir.path().join("p.prof");
    let annotated = dir.path().join("p.ir");
    run_ok(&[
        "prof",
        &corpus("18_licm_chain1.ir"),
        "--args",
        "7,10",
        "--out",
        profile.to_str().unwrap(),
    ]);
    run_ok(&[
        "embed-prof",
        &corpus("18_licm_chain1.ir"),
        "--profile",
        profile.to_str().unwrap(),
        "--out",
        annotated.to_str().unwrap(),
    ]);
    let report = run_ok(&["report", annotated.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("loop L0 fn=@main"), "{}", text);
    assert!(text.contains("invariants=3/naive=1"), "{}", text);
    assert!(text.contains("governing=yes"), "{}", text);
    assert!(!text.contains("hot=n/a"), "hotness must come from the profile: {}", text);

    // the annotated module still verifies and hotness gates licm
    run_ok(&["verify", annotated.to_str().unwrap()]);
    let licm_out = dir.path().join("licm.ir");
    let licm = run_ok(&[
        "licm",
        annotated.to_str().unwrap(),
        "--hot-threshold",
        "0.5",
        "--out",
        licm_out.to_str().unwrap(),
    ]);
    let summary = String::from_utf8_lossy(&licm.stderr);
    assert!(summary.contains("hoisted"), "{}", summary);
}

#[test]
fn doall_and_check_equiv() {
    let dir = tempfile::tempdir().unwrap();
    let transformed = dir.path().join("t.ir");
    run_ok(&[
        "doall",
        &corpus("35_doall_fill.ir"),
        "--loop",
        "0",
        "--tasks",
        "4",
        "--out",
        transformed.to_str().unwrap(),
    ]);
    let eq = run_ok(&[
        "check-equiv",
        &corpus("35_doall_fill.ir"),
        transformed.to_str().unwrap(),
        "--args",
        "20",
        "--args",
        "64",
        "--args",
        "1",
    ]);
    assert_eq!(String::from_utf8_lossy(&eq.stdout).trim(), "EQUIVALENT");

    // a rejection prints the reason and fails
    let rej = bin()
        .args(["doall", &corpus("25_pointer_chase.ir"), "--loop", "0", "--tasks", "2"])
        .output()
        .unwrap();
    assert_eq!(rej.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rej.stderr).contains("DOALL rejected"));
}

#[test]
fn inequivalence_detected() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ir");
    let b = dir.path().join("b.ir");
    std::fs::write(&a, "func @main() -> i64 { x: ret 1 }\n").unwrap();
    std::fs::write(&b, "func @main() -> i64 { x: ret 2 }\n").unwrap();
    let out = bin()
        .args(["check-equiv", a.to_str().unwrap(), b.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("DIFFER"));
}

#[test]
fn link_concatenates_and_remaps() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib.ir");
    let app = dir.path().join("app.ir");
    let merged = dir.path().join("m.ir");
    std::fs::write(&lib, "func @meaning() -> i64 { a: ret 42 }\n!note library part\n").unwrap();
    std::fs::write(
        &app,
        "func @main() -> i64 { e: %r = call @meaning()\n print %r\n ret %r }\n",
    )
    .unwrap();
    run_ok(&[
        "link",
        lib.to_str().unwrap(),
        app.to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
    ]);
    let run = run_ok(&["run", merged.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&run.stdout).contains("42"));
    let text = std::fs::read_to_string(&merged).unwrap();
    assert!(text.contains("!note library part"));

    // duplicate symbols are rejected
    let dup = bin()
        .args(["link", lib.to_str().unwrap(), lib.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(dup.status.code(), Some(1));
}

#[test]
fn outputs_byte_deterministic_under_seed() {
    for args in [
        vec!["pdg", &corpus("23_reduction_bits.ir")] as Vec<&str>,
        vec!["pts", &corpus("26_icall_table.ir")],
        vec!["callgraph", &corpus("30_dead_island.ir")],
        vec!["sccdag", &corpus("09_while_sum.ir"), "--loop", "0"],
        vec!["report", &corpus("14_while_zoo.ir")],
        vec![
            "doall",
            &corpus("09_while_sum.ir"),
            "--loop",
            "0",
            "--tasks",
            "3",
            "--seed",
            "11",
            "--run-args",
            "17",
        ],
    ] {
        let a = run_ok(&args);
        let b = run_ok(&args);
        assert_eq!(a.stdout, b.stdout, "nondeterministic output for {:?}", args);
    }
}

#[test]
fn dot_exports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let pdg_dot = dir.path().join("p.dot");
    let scc_dot = dir.path().join("s.dot");
    let cg_dot = dir.path().join("c.dot");
    run_ok(&["pdg", &corpus("09_while_sum.ir"), "--dot", pdg_dot.to_str().unwrap()]);
    run_ok(&[
        "sccdag",
        &corpus("09_while_sum.ir"),
        "--loop",
        "0",
        "--dot",
        scc_dot.to_str().unwrap(),
    ]);
    run_ok(&["callgraph", &corpus("26_icall_table.ir"), "--dot", cg_dot.to_str().unwrap()]);
    let scc = std::fs::read_to_string(&scc_dot).unwrap();
    assert!(scc.contains("digraph sccdag"));
    assert!(scc.contains("color=blue"), "a reducible SCC renders blue: {}", scc);
    let pdg = std::fs::read_to_string(&pdg_dot).unwrap();
    assert!(pdg.contains("digraph pdg"));
    let cg = std::fs::read_to_string(&cg_dot).unwrap();
    assert!(cg.contains("style=dashed"), "may edges render dashed: {}", cg);
}

#[test]
fn move_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("m.ir");
    std::fs::write(
        &src,
        "func @main() -> i64 {\na:\n  %x = add 1, 2\n  %y = add 3, 4\n  %z = add %x, %y\n  ret %z\n}\n",
    )
    .unwrap();
    let moved = dir.path().join("moved.ir");
    run_ok(&[
        "move",
        src.to_str().unwrap(),
        "--instr",
        "1",
        "--before",
        "0",
        "--out",
        moved.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&moved).unwrap();
    let ypos = text.find("%y = add").unwrap();
    let xpos = text.find("%x = add").unwrap();
    assert!(ypos < xpos);
    // illegal move exits 1
    let bad = bin()
        .args(["move", src.to_str().unwrap(), "--instr", "2", "--before", "0"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn pipeline_chains_keep_modules_valid() {
    // any chain of transforms on valid IR yields valid IR
    let dir = tempfile::tempdir().unwrap();
    let s1 = dir.path().join("s1.ir");
    let s2 = dir.path().join("s2.ir");
    let s3 = dir.path().join("s3.ir");
    run_ok(&["licm", &corpus("18_licm_chain1.ir"), "--out", s1.to_str().unwrap()]);
    run_ok(&["verify", s1.to_str().unwrap()]);
    run_ok(&["dfe", s1.to_str().unwrap(), "--out", s2.to_str().unwrap()]);
    run_ok(&["verify", s2.to_str().unwrap()]);
    run_ok(&[
        "doall",
        s2.to_str().unwrap(),
        "--loop",
        "0",
        "--tasks",
        "3",
        "--out",
        s3.to_str().unwrap(),
    ]);
    run_ok(&["verify", s3.to_str().unwrap()]);
    let eq = run_ok(&[
        "check-equiv",
        &corpus("18_licm_chain1.ir"),
        s3.to_str().unwrap(),
        "--args",
        "7,10",
        "--args",
        "-3,6",
    ]);
    assert_eq!(String::from_utf8_lossy(&eq.stdout).trim(), "EQUIVALENT");
}
