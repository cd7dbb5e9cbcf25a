//! Reference interpreter: small-step execution of verified modules, the
//! dynamic-dependence tracer used as the soundness oracle for the static
//! dependence analyses, and the instruction-level profiler.

mod exec;
mod profile;
mod trace;

pub use exec::{
    run_program, run_with_hooks, ExecResult, GroupExec, Hooks, Machine, MemObject, Memory,
    NoHooks, ObjSite, ParallelGroups, Prog, RunError, TaskRun, Trap, Val, DEFAULT_STEP_BUDGET,
};
pub use profile::{
    collect_profile, conserves_steps, embed_profile, hotness_of_loop, read_profile, ProfileData,
    ProfileError,
};
pub use trace::{trace_dependences, DynamicDependence, Trace};
