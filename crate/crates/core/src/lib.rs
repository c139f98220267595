//! Simulation and verification of mutex-based desanonymization of anonymous
//! read/write shared memory.
//!
//! `n` asynchronous processes share `m` registers, each process seeing them
//! through its own adversary-chosen permutation. The processes run a
//! symmetric protocol on top of a one-shot mutex and end up agreeing on a
//! common name for every register.

pub mod anonmem;
pub mod config;
pub mod desa;
pub mod explore;
pub mod mutex;
pub mod sched;
pub mod trace;
pub mod verify;

pub use anonmem::{
    control_bits, is_in_m, next_in_m, AnonymousMemory, Permutation, ProcessId, RegisterBody,
    RegisterWord,
};
pub use config::{Config, ContenderPolicy, Mutant, Setup, V2Mode, Variant};
pub use explore::{explore, ExplorationReport, Limits};
pub use sched::{run, Outcome, RunResult, Scheduler, SystemState};
pub use trace::{AccessKind, Trace, TraceEntry};
pub use verify::CheckResult;
