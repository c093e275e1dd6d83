//! Batch stages that read and write the on-disk artifacts.
//!
//! Each stage reads the outputs of earlier stages from the output directory,
//! writes its own CSV files under `<out_dir>/<stage>/` and finishes with a
//! `manifest.json` next to them.

mod config;
mod manifest;
mod stages;

pub use config::{
    ClassifyConfig, ClusteringConfig, DistanceConfig, ExecutionMode, Overrides, PeriodConfig, PipelineConfig,
    PopulationEntry, SynthConfig,
};
pub use manifest::{sha256_file, FileEntry, Manifest};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    /// Invalid configuration or a missing input file.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data that could not be processed.
    #[error("data error: {0}")]
    Data(String),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Regularity,
    Extreme,
    Cluster,
    Classify,
    Transitions,
    Report,
}

impl Stage {
    /// Stages in dependency order.
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Regularity,
        Stage::Extreme,
        Stage::Cluster,
        Stage::Classify,
        Stage::Transitions,
        Stage::Report,
    ];

    /// Stages that compare the two periods.
    pub fn needs_two_periods(self) -> bool {
        matches!(self, Stage::Transitions | Stage::Report)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Regularity => "regularity",
            Stage::Extreme => "extreme",
            Stage::Cluster => "cluster",
            Stage::Classify => "classify",
            Stage::Transitions => "transitions",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Validates the config and runs one stage.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let ctx = stages::Context::new(cfg)?;
    match stage {
        Stage::Synth => ctx.synth(),
        Stage::Ingest => ctx.ingest(),
        Stage::Regularity => ctx.regularity(),
        Stage::Extreme => ctx.extreme(),
        Stage::Cluster => ctx.cluster(),
        Stage::Classify => ctx.classify(),
        Stage::Transitions => ctx.transitions(),
        Stage::Report => ctx.report(),
    }
}

/// Runs the stages from `synth` (or `ingest` when `synthesize` is false)
/// through `report`. With a single period the comparison stages are skipped.
pub fn run_all(cfg: &PipelineConfig, synthesize: bool) -> Result<Vec<Manifest>, PipelineError> {
    let two = cfg.periods.len() == 2;
    Stage::ALL
        .into_iter()
        .filter(|&s| synthesize || s != Stage::Synth)
        .filter(|&s| two || !s.needs_two_periods())
        .map(|s| run_stage(s, cfg))
        .collect()
}
