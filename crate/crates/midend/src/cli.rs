//! The tool-chain façade: one binary, subcommands mirroring the pipeline
//! stages (verify, run, profile, embed, analyze, transform, link,
//! equivalence-check) over textual IR files.

use crate::alias::{compute_points_to, ModRefSummaries};
use crate::callgraph::{build_call_graph, islands};
use crate::interp::{
    collect_profile, embed_profile, hotness_of_loop, read_profile, run_program, ExecResult,
    DEFAULT_STEP_BUDGET,
};
use crate::ir::*;
use crate::loops::{LoopAnalysis, LoopContext};
use crate::parallel::{doall_check, doall_transform, run_parallel, ParallelMode};
use crate::pdg::{build_pdg, build_pdg_baseline, embed_pdg, DepClass, Medium};
use crate::sccdag::SccKind;
use crate::transforms::{
    can_move_before, dead_function_elimination, licm_gated, move_before, MovePoint,
};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "midend", about = "compiler middle-end over a textual SSA IR", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Input IR file
    input: PathBuf,
    /// Write the produced IR/text here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step budget for any execution involved
    #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
    budget: u64,
    /// Seed for randomized execution orders
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum loop hotness for transform clients (needs an embedded profile)
    #[arg(long, default_value_t = 0.0)]
    hot_threshold: f64,
}

fn parse_args_list(s: &str) -> Result<Vec<i64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.trim().parse::<i64>().map_err(|e| format!("bad argument '{}': {}", x, e)))
        .collect()
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and verify a module
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Execute @main
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated integers passed to @main
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        args: String,
    },
    /// Profile one or more runs; emits !prof lines
    Prof {
        #[command(flatten)]
        common: Common,
        /// Argument vector (repeatable)
        #[arg(long = "args", allow_hyphen_values = true)]
        args: Vec<String>,
    },
    /// Attach a profile (from --profile or stdin) to the module
    EmbedProf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Dump points-to sets
    Pts {
        #[command(flatten)]
        common: Common,
    },
    /// Build and print the program dependence graph
    Pdg {
        #[command(flatten)]
        common: Common,
        /// Write DOT here
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Embed the PDG as metadata and emit the module
        #[arg(long)]
        embed: bool,
        /// Use the alias-free all-pairs baseline
        #[arg(long)]
        baseline: bool,
    },
    /// Condensation of a loop's dependence graph, classified
    Sccdag {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        r#loop: u32,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Complete call graph with islands
    Callgraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Per-loop analysis report
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Loop-invariant code motion
    Licm {
        #[command(flatten)]
        common: Common,
    },
    /// Dead-function elimination
    Dfe {
        #[command(flatten)]
        common: Common,
    },
    /// Move an instruction before another (legality-checked)
    Move {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instr: u32,
        #[arg(long)]
        before: u32,
    },
    /// DOALL-parallelize a loop into strided tasks
    Doall {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        r#loop: u32,
        #[arg(long, default_value_t = 4)]
        tasks: i64,
        /// seq = randomized task order, par = threads
        #[arg(long, default_value = "seq")]
        mode: String,
        /// Also execute the transformed module with these arguments
        #[arg(long, allow_hyphen_values = true)]
        run_args: Option<String>,
    },
    /// Compare two modules on the given inputs
    CheckEquiv {
        a: PathBuf,
        b: PathBuf,
        /// Argument vector (repeatable)
        #[arg(long = "args", allow_hyphen_values = true)]
        args: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
        budget: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Concatenate modules, re-assigning ids and remapping metadata
    Link {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_module(path: &PathBuf) -> Result<ModuleIR, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("error: cannot read {}: {}", path.display(), e))?;
    match parse_module(&text) {
        Ok(m) => Ok(m),
        Err(e) => Err(format!("error: {} at {}:{}", e.message, path.display(), e.line)),
    }
}

fn read_verified(path: &PathBuf) -> Result<ModuleIR, String> {
    let m = read_module(path)?;
    let diags = verify_module(&m);
    if !diags.is_empty() {
        let lines: Vec<String> =
            diags.iter().map(|d| format!("error: {} at {}", d, path.display())).collect();
        return Err(lines.join("\n"));
    }
    Ok(m)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("error: cannot write {}: {}", p.display(), e)),
        None => {
            print!("{}", text);
            Ok(())
        }
    }
}

fn print_exec(r: &ExecResult) -> bool {
    for v in &r.output {
        println!("{}", v);
    }
    match &r.trap {
        Some(t) => {
            println!("trap: {}", t);
            false
        }
        None => {
            println!("exit {}", r.exit);
            true
        }
    }
}

fn loop_ctx(m: &ModuleIR, loop_id: u32) -> Result<(LoopAnalysis, LoopContext), String> {
    let la = LoopAnalysis::of_module(m);
    let l = la
        .by_id(LoopId(loop_id))
        .ok_or_else(|| format!("error: no loop L{}", loop_id))?
        .clone();
    let pts = compute_points_to(m);
    let cg = build_call_graph(m, &pts);
    let pdg = build_pdg(m, &pts, &cg);
    Ok((la, LoopContext::build(m, &pdg, &l)))
}

fn hotness_gate(m: &ModuleIR, threshold: f64) -> impl Fn(&LoopContext) -> bool + '_ {
    let profile = read_profile(m);
    move |ctx: &LoopContext| match (&profile, threshold) {
        (_, t) if t <= 0.0 => true,
        (Some(p), t) => hotness_of_loop(m, p, &ctx.structure) >= t,
        (None, _) => true,
    }
}

pub fn main() -> ExitCode {
    match run() {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(msg) => {
            eprintln!("{}", msg);
            ExitCode::from(1)
        }
    }
}

fn run() -> Result<bool, String> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Verify { common } => {
            let m = read_module(&common.input)?;
            let diags = verify_module(&m);
            if diags.is_empty() {
                println!("ok: {} functions, {} instructions", m.functions.len(), m.instr_count());
                Ok(true)
            } else {
                for d in &diags {
                    println!("error: {} at {}", d, common.input.display());
                }
                Ok(false)
            }
        }
        Cmd::Run { common, args } => {
            let m = read_verified(&common.input)?;
            let argv = parse_args_list(&args).map_err(|e| format!("error: {}", e))?;
            let r = run_program(&m, &argv, common.budget).map_err(|e| format!("error: {}", e))?;
            Ok(print_exec(&r))
        }
        Cmd::Prof { common, args } => {
            let m = read_verified(&common.input)?;
            let inputs: Vec<Vec<i64>> = if args.is_empty() {
                vec![Vec::new()]
            } else {
                args.iter()
                    .map(|a| parse_args_list(a))
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("error: {}", e))?
            };
            let p = collect_profile(&m, &inputs, common.budget)
                .map_err(|e| format!("error: {}", e))?;
            let m2 = embed_profile(&m, &p).map_err(|e| format!("error: {}", e))?;
            let lines: Vec<String> = m2
                .metadata_values("prof")
                .map(|t| format!("!prof {}", t))
                .collect();
            emit(&common.out, &(lines.join("\n") + "\n"))?;
            Ok(true)
        }
        Cmd::EmbedProf { common, profile } => {
            let m = read_verified(&common.input)?;
            let text = match profile {
                Some(p) => fs::read_to_string(&p)
                    .map_err(|e| format!("error: cannot read {}: {}", p.display(), e))?,
                None => {
                    let mut buf = String::new();
                    std::io::stdin()
                        .read_to_string(&mut buf)
                        .map_err(|e| format!("error: cannot read stdin: {}", e))?;
                    buf
                }
            };
            // accept raw "!prof ..." lines
            let mut carrier = m.clone();
            carrier.metadata.retain(|e| e.key != "prof");
            for line in text.lines() {
                let line = line.trim();
                if let Some(rest) = line.strip_prefix("!prof ") {
                    carrier
                        .metadata
                        .push(MetaEntry { key: "prof".to_string(), text: rest.to_string() });
                }
            }
            let p = read_profile(&carrier)
                .ok_or_else(|| "error: no profile lines found".to_string())?;
            let m2 = embed_profile(&m, &p).map_err(|e| format!("error: {}", e))?;
            emit(&common.out, &print_module(&m2))?;
            Ok(true)
        }
        Cmd::Pts { common } => {
            let m = read_verified(&common.input)?;
            let pts = compute_points_to(&m);
            emit(&common.out, &pts.dump())?;
            Ok(true)
        }
        Cmd::Pdg { common, dot, embed, baseline } => {
            let m = read_verified(&common.input)?;
            let pts = compute_points_to(&m);
            let cg = build_call_graph(&m, &pts);
            let dg =
                if baseline { build_pdg_baseline(&m, &pts, &cg) } else { build_pdg(&m, &pts, &cg) };
            if let Some(path) = dot {
                fs::write(&path, crate::pdg::to_dot(&dg, &m))
                    .map_err(|e| format!("error: cannot write {}: {}", path.display(), e))?;
            }
            if embed {
                let mut m2 = m.clone();
                embed_pdg(&mut m2, &dg);
                emit(&common.out, &print_module(&m2))?;
            } else {
                let mut lines = Vec::new();
                for e in &dg.edges {
                    let kind = match (e.class, e.data_kind, e.medium) {
                        (DepClass::Control, _, _) => "control".to_string(),
                        (DepClass::Data, Some(k), Some(med)) => format!(
                            "data {} {}",
                            k.name(),
                            if med == Medium::Memory { "memory" } else { "register" }
                        ),
                        _ => "data".to_string(),
                    };
                    let certainty = match e.certainty {
                        crate::callgraph::Certainty::May => "may",
                        crate::callgraph::Certainty::Must => "must",
                    };
                    lines.push(format!("I{} -> I{} {} {}", e.src.0, e.dst.0, kind, certainty));
                }
                lines.sort();
                let summary = format!(
                    "nodes {} edges {} may-memory {}\n",
                    dg.internal.len(),
                    dg.edges.len(),
                    dg.may_memory_edge_count()
                );
                emit(&common.out, &(summary + &lines.join("\n") + "\n"))?;
            }
            Ok(true)
        }
        Cmd::Sccdag { common, r#loop, dot } => {
            let m = read_verified(&common.input)?;
            let (_, ctx) = loop_ctx(&m, r#loop)?;
            if let Some(path) = dot {
                fs::write(&path, ctx.sccdag.to_dot(&m))
                    .map_err(|e| format!("error: cannot write {}: {}", path.display(), e))?;
            }
            let mut text = String::new();
            for (k, scc) in ctx.sccdag.sccs.iter().enumerate() {
                let members: Vec<String> =
                    scc.members.iter().map(|i| format!("I{}", i.0)).collect();
                text.push_str(&format!(
                    "SCC#{} [{}] {{{}}}\n",
                    k,
                    ctx.sccdag.kinds[k].name(),
                    members.join(", ")
                ));
                if let SccKind::Reducible(r) = &ctx.sccdag.kinds[k] {
                    text.push_str(&format!(
                        "  reduction {} identity {} acc I{}\n",
                        r.op.name(),
                        r.identity,
                        r.accumulator_phi.0
                    ));
                }
            }
            emit(&common.out, &text)?;
            Ok(true)
        }
        Cmd::Callgraph { common, dot } => {
            let m = read_verified(&common.input)?;
            let pts = compute_points_to(&m);
            let cg = build_call_graph(&m, &pts);
            if let Some(path) = dot {
                fs::write(&path, cg.to_dot(&m))
                    .map_err(|e| format!("error: cannot write {}: {}", path.display(), e))?;
            }
            let mut text = cg.dump(&m);
            for (k, isl) in islands(&cg, &m).iter().enumerate() {
                let names: Vec<&str> = isl.members.iter().map(|s| s.as_str()).collect();
                text.push_str(&format!("island {}: {}\n", k, names.join(", ")));
            }
            emit(&common.out, &text)?;
            Ok(true)
        }
        Cmd::Report { common } => {
            let m = read_verified(&common.input)?;
            let la = LoopAnalysis::of_module(&m);
            let pts = compute_points_to(&m);
            let cg = build_call_graph(&m, &pts);
            let pdg = build_pdg(&m, &pts, &cg);
            let modref = ModRefSummaries::compute(&m, &pts);
            let profile = read_profile(&m);
            let mut text = String::new();
            for l in &la.loops {
                let ctx = LoopContext::build(&m, &pdg, l);
                let dom =
                    compute_dominators(&m.functions[l.func.0 as usize], Direction::Forward);
                let naive = m.functions[l.func.0 as usize]
                    .instrs()
                    .filter(|i| {
                        l.blocks.contains(&ModuleIndex::new(&m).block_of_instr(i.id))
                            && crate::loops::naive_is_invariant(&m, i.id, l, &dom, &pts, &modref)
                    })
                    .count();
                let hot = profile.as_ref().map(|p| hotness_of_loop(&m, p, l));
                text.push_str(&crate::loops::loop_report_line(&m, &ctx, naive, hot));
                text.push('\n');
            }
            emit(&common.out, &text)?;
            Ok(true)
        }
        Cmd::Licm { common } => {
            let m = read_verified(&common.input)?;
            let gate = hotness_gate(&m, common.hot_threshold);
            let (m2, report) = licm_gated(&m, &gate);
            for (f, l, n) in &report.hoists {
                eprintln!("hoisted {} instructions from loop L{} (@{})", n, l, f);
            }
            if report.hoists.is_empty() {
                eprintln!("hoisted 0 instructions");
            }
            emit(&common.out, &print_module(&m2))?;
            Ok(true)
        }
        Cmd::Dfe { common } => {
            let m = read_verified(&common.input)?;
            let (m2, report) = dead_function_elimination(&m);
            if report.removed.is_empty() {
                eprintln!("removed 0 functions");
            } else {
                eprintln!("removed {} functions: {}", report.removed.len(), report.removed.join(", "));
            }
            emit(&common.out, &print_module(&m2))?;
            Ok(true)
        }
        Cmd::Move { common, instr, before } => {
            let m = read_verified(&common.input)?;
            let pts = compute_points_to(&m);
            let cg = build_call_graph(&m, &pts);
            let pdg = build_pdg(&m, &pts, &cg);
            let point = MovePoint::Before(InstrId(before));
            if !can_move_before(&m, &pdg, InstrId(instr), point) {
                return Err(format!("error: moving #{} before #{} is illegal", instr, before));
            }
            let m2 = move_before(&m, &pdg, InstrId(instr), point)
                .map_err(|e| format!("error: {}", e))?;
            eprintln!("moved instr #{} before #{}", instr, before);
            emit(&common.out, &print_module(&m2))?;
            Ok(true)
        }
        Cmd::Doall { common, r#loop, tasks, mode, run_args } => {
            let m = read_verified(&common.input)?;
            let (_, ctx) = loop_ctx(&m, r#loop)?;
            let pts = compute_points_to(&m);
            let modref = ModRefSummaries::compute(&m, &pts);
            let gate = hotness_gate(&m, common.hot_threshold);
            if !gate(&ctx) {
                return Err(format!("error: loop L{} is below the hotness threshold", r#loop));
            }
            let plan = doall_check(&m, &ctx, &modref);
            if let Some(why) = &plan.rejected_reason {
                if why.starts_with("DOALL rejected") {
                    return Err(why.clone());
                }
                return Err(format!("DOALL rejected: {}", why));
            }
            let (m2, task) =
                doall_transform(&m, &ctx, &plan, tasks).map_err(|e| format!("error: {}", e))?;
            eprintln!("outlined loop L{} into @{} with {} tasks", r#loop, task.body, tasks);
            if let Some(argtxt) = run_args {
                let argv = parse_args_list(&argtxt).map_err(|e| format!("error: {}", e))?;
                let pmode = match mode.as_str() {
                    "seq" => ParallelMode::SequentialAnyOrder,
                    "par" => ParallelMode::Concurrent,
                    other => return Err(format!("error: unknown mode '{}'", other)),
                };
                let r = run_parallel(&m2, &argv, common.budget, pmode, common.seed)
                    .map_err(|e| format!("error: {}", e))?;
                let ok = print_exec(&r);
                if !ok {
                    return Ok(false);
                }
            }
            emit(&common.out, &print_module(&m2))?;
            Ok(true)
        }
        Cmd::CheckEquiv { a, b, args, budget, seed } => {
            let ma = read_verified(&a)?;
            let mb = read_verified(&b)?;
            let inputs: Vec<Vec<i64>> = if args.is_empty() {
                vec![Vec::new()]
            } else {
                args.iter()
                    .map(|x| parse_args_list(x))
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("error: {}", e))?
            };
            let parallel_b = mb.metadata_values("doall").next().is_some();
            for argv in &inputs {
                let ra = run_program(&ma, argv, budget).map_err(|e| format!("error: {}", e))?;
                let rb = if parallel_b {
                    run_parallel(&mb, argv, budget, ParallelMode::SequentialAnyOrder, seed)
                        .map_err(|e| format!("error: {}", e))?
                } else {
                    run_program(&mb, argv, budget).map_err(|e| format!("error: {}", e))?
                };
                if ra.output != rb.output || ra.exit != rb.exit || ra.trap != rb.trap {
                    println!(
                        "DIFFER on args [{}]: exit {} vs {}, {} vs {} outputs",
                        argv.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                        ra.exit,
                        rb.exit,
                        ra.output.len(),
                        rb.output.len()
                    );
                    return Ok(false);
                }
            }
            println!("EQUIVALENT");
            Ok(true)
        }
        Cmd::Link { inputs, out } => {
            if inputs.is_empty() {
                return Err("error: link needs at least one input".to_string());
            }
            let mut merged = ModuleIR::default();
            let mut offsets = Vec::new();
            for p in &inputs {
                let text = fs::read_to_string(p)
                    .map_err(|e| format!("error: cannot read {}: {}", p.display(), e))?;
                let m = parse_module_lenient(&text)
                    .map_err(|e| format!("error: {} at {}:{}", e.message, p.display(), e.line))?;
                let la_loops = LoopAnalysis::of_module(&m).loops.len() as u32;
                offsets.push((
                    merged.instr_count() as u32,
                    merged.block_count() as u32,
                    merged.functions.len() as u32,
                    LoopAnalysis::of_module(&merged).loops.len() as u32,
                ));
                let _ = la_loops;
                for g in m.globals {
                    if merged.globals.iter().any(|x| x.name == g.name) {
                        return Err(format!("error: duplicate global '@{}' while linking", g.name));
                    }
                    merged.globals.push(g);
                }
                for f in m.functions {
                    if merged.functions.iter().any(|x| x.name == f.name) {
                        return Err(format!(
                            "error: duplicate function '@{}' while linking",
                            f.name
                        ));
                    }
                    merged.functions.push(f);
                }
                let (io, bo, fo, lo) = *offsets.last().unwrap();
                for e in m.metadata {
                    if e.key == "prof" {
                        let remapped = remap_prof_line(&e.text, io, bo, fo, lo)
                            .ok_or_else(|| format!("error: bad !prof line '{}'", e.text))?;
                        merged.metadata.push(MetaEntry { key: e.key, text: remapped });
                    } else if e.key == "pdg" {
                        let remapped = remap_pdg_line(&e.text, io, lo)
                            .ok_or_else(|| format!("error: bad !pdg line '{}'", e.text))?;
                        merged.metadata.push(MetaEntry { key: e.key, text: remapped });
                    } else {
                        merged.metadata.push(e);
                    }
                }
            }
            assign_ids(&mut merged);
            let mains = merged.functions.iter().filter(|f| f.name == "main").count();
            if mains > 1 {
                return Err("error: multiple @main functions while linking".to_string());
            }
            let diags = verify_module(&merged);
            if !diags.is_empty() {
                return Err(format!("error: linked module invalid: {}", diags[0]));
            }
            emit(&out, &print_module(&merged))?;
            Ok(true)
        }
    }
}

fn remap_prof_line(text: &str, io: u32, bo: u32, fo: u32, lo: u32) -> Option<String> {
    let mut it = text.split_whitespace();
    let kind = it.next()?;
    let ord: u32 = it.next()?.parse().ok()?;
    let count: u64 = it.next()?.parse().ok()?;
    let shifted = match kind {
        "instr" => ord + io,
        "block" => ord + bo,
        "func" => ord + fo,
        "loop-inv" | "loop-iter" => ord + lo,
        _ => return None,
    };
    Some(format!("{} {} {}", kind, shifted, count))
}

fn remap_pdg_line(text: &str, io: u32, lo: u32) -> Option<String> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != 7 {
        return None;
    }
    let src: u32 = parts[0].parse().ok()?;
    let dst: u32 = parts[1].parse().ok()?;
    let carried = if parts[6] == "-" {
        "-".to_string()
    } else {
        parts[6]
            .split(',')
            .map(|item| {
                let (l, c) = item.split_once(':')?;
                let ln: u32 = l.strip_prefix('l')?.parse().ok()?;
                Some(format!("l{}:{}", ln + lo, c))
            })
            .collect::<Option<Vec<_>>>()?
            .join(",")
    };
    Some(format!(
        "{} {} {} {} {} {} {}",
        src + io,
        dst + io,
        parts[2],
        parts[3],
        parts[4],
        parts[5],
        carried
    ))
}
