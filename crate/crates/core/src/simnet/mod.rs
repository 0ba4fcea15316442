//! Deterministic discrete-event simulator for the whole protocol stack.
//!
//! A run is a pure function of its [`Scenario`]: every random choice comes
//! from a named ChaCha8 stream keyed by the scenario seed, and the event
//! queue breaks time ties by insertion order.

mod check;
mod engine;
pub mod fault;
mod message;
mod net;
mod node;
pub mod output;
mod protocol;
pub mod record;
mod recovery;
pub mod rng;
pub mod scenario;
pub mod trace;
mod upkeep;

use thiserror::Error;

use crate::overlay::OverlayError;

pub use fault::{FaultMode, FaultRecord, FaultSpec, FaultStatus, FaultTarget};
pub use record::*;
pub use scenario::{FieldError, Scenario, ScenarioError};
pub use trace::{Direction, Hop, TraceRecord};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every serialized trace line in the output (needed to write
    /// `trace.jsonl`); the digest is computed either way.
    pub keep_trace_lines: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    InvalidScenario(#[from] ScenarioError),
    #[error("overlay: {0}")]
    Overlay(#[from] OverlayError),
}

/// Runs a scenario, keeping only the trace digest.
pub fn run(sc: &Scenario) -> Result<RunOutput, SimError> {
    run_with(sc, &RunOptions::default())
}

pub fn run_with(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
    let mut sim = engine::Sim::new(sc, opts)?;
    sim.run_loop();
    Ok(sim.finish())
}
