//! Speculative execution of agent/environment loops.
//!
//! An agent step is a call to an authoritative API (the actor) whose response
//! drives the next state. While the actor is in flight, a faster speculator
//! guesses the response, and the calls implied by its guesses are launched
//! ahead of time. A correct guess turns the next step into a cache hit; a
//! wrong one costs only the wasted call. The committed trajectory is always
//! the one the actor produces.

pub mod analytics;
pub mod cache;
pub mod call;
pub mod env;
pub mod envs;
pub mod error;
pub mod executor;
pub mod lossy;
pub mod pending;
mod runtime;
pub mod safety;
pub mod seed;
pub mod strategies;

pub use cache::{Eviction, SpeculationCache};
pub use call::{strict_match, ActionValue, CallSpec};
pub use env::{Environment, Guess, GuessSource, Handler, HandlerEntry, HandlerRegistry};
pub use error::{ExecError, HandlerError, SpeculatorError};
pub use executor::{
    parse_trace_line, parse_traces_jsonl, run, run_sequential, run_speculative, traces_to_jsonl, validate, ClockMode,
    RunResult, StepTrace, TraceParseError, TrajectoryEntry,
};
pub use pending::{PendingAction, PendingStatus};
pub use safety::SafetyClass;
pub use strategies::Strategy;
