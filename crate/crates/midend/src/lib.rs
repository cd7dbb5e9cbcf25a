//! A self-contained compiler middle-end over a small textual SSA IR.
//!
//! The crate reconstructs, at desk scale, the abstraction layer a
//! parallelizing compiler needs: a whole-program dependence graph with
//! internal/external node sets, the augmented SCCDAG of a loop with
//! Independent/Sequential/Reducible tags and reduction descriptors, a complete
//! call graph (indirect calls resolved through points-to sets), a generic
//! bitvector data-flow engine, loop structures with a deletion-tolerant
//! nesting forest, invariant detection, induction variables with governing-IV
//! identification and trip counts, and environments/tasks for outlined loop
//! bodies. On top sit three clients: loop-invariant code motion, dead-function
//! elimination, and DOALL parallelization with reduction privatization.
//!
//! Everything is validated against a reference interpreter that doubles as a
//! dynamic oracle: it traces memory dependences, observes call targets, and
//! profiles execution, so static results can be checked for soundness on real
//! runs.
//!
//! Start with the runnable examples (`cargo run --example <name>`); each one
//! demonstrates a single capability end to end. The `midend` binary exposes
//! the same pipeline as subcommands over `.ir` files.

pub mod alias;
pub mod callgraph;
pub mod cli;
pub mod dataflow;
pub mod interp;
pub mod ir;
pub mod loops;
pub mod parallel;
pub mod pdg;
pub mod sccdag;
pub mod transforms;
