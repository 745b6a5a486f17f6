//! Quantitative information flow for small concurrent programs.
//!
//! A program over one secret `S` and one public variable `O` is turned into
//! a probabilistic Kripke structure under a scheduler; leakage is measured
//! as the expected drop in min-entropy of the attacker's belief about `S`
//! along its traces.

pub mod cli;
pub mod dist;
pub mod error;
pub mod lang;
pub mod leakage;
pub mod measures;
pub mod oracle;
pub mod pks;
pub mod sched;
pub mod semantics;

pub use dist::{Rational, Secret, SecretDist};
pub use error::{Error, EvalError, ParseError};
pub use lang::{parse, pretty_print, ProgramDecl};
pub use leakage::{program_leakage, LeakageReport};
pub use pks::{build_pks, build_pks_with_prior, enumerate_traces, to_dot, Pks, Trace};
pub use sched::{priority_scheduler, table_scheduler, uniform_scheduler, SchedulerPolicy};
