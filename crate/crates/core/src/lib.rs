//! Temporal travel-pattern mining for smart-card fare data.
//!
//! Records are folded into 168-slot weekly profiles, scored for regularity,
//! screened for extreme behaviour, clustered with a smoothed reachability
//! ordering and compared across observation periods.

pub mod analysis;
pub mod classify;
pub mod clustering;
pub mod exec;
pub mod extreme;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use exec::Execution;
