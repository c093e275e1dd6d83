use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classify::CategoryConfig;
use crate::clustering::{SsOpticsParams, TauRule};
use crate::exec::Execution;
use crate::extreme::ExtremeRuleConfig;
use crate::ingest::ObservationPeriod;
use crate::metrics::TransactionDistanceParams;
use crate::pipeline::PipelineError;
use crate::synth::{Archetype, ArchetypeSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    /// Used in file names and output rows; letters, digits, `-` and `_`.
    pub label: String,
    /// Monday that opens the observation week.
    pub week_start: NaiveDate,
    /// Record file. Defaults to the `synth` output for this period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub k: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self { k: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub epsilon: f64,
    pub window: usize,
    pub tau: TauRule,
    /// Profiles drawn from the first period for clustering.
    pub sample_size: usize,
    /// Leave extreme travellers out of the sample.
    pub non_extreme_only: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let p = SsOpticsParams::default();
        Self {
            epsilon: p.epsilon(),
            window: p.window(),
            tau: p.tau(),
            sample_size: 20_000,
            non_extreme_only: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Fold each assignment into its centroid, in card-id order.
    pub update: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationEntry {
    pub archetype: Archetype,
    pub count: usize,
    /// Overrides `synth.jitter_hours` for this entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_hours: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub jitter_hours: f64,
    /// Probability that a card changes archetype in the second period.
    pub churn: f64,
    pub population: Vec<PopulationEntry>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let population = Archetype::ALL
            .iter()
            .map(|&archetype| PopulationEntry {
                archetype,
                count: match archetype {
                    Archetype::Commuter
                    | Archetype::OneDayRider
                    | Archetype::TwoDayRider
                    | Archetype::MultiDayRider => 500,
                    _ => 50,
                },
                jitter_hours: None,
            })
            .collect();
        Self {
            jitter_hours: 0.5,
            churn: 0.2,
            population,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Parallel,
    Sequential,
}

impl From<ExecutionMode> for Execution {
    fn from(m: ExecutionMode) -> Self {
        match m {
            ExecutionMode::Parallel => Execution::Parallel,
            ExecutionMode::Sequential => Execution::Sequential,
        }
    }
}

/// Everything a pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub execution: ExecutionMode,
    pub periods: Vec<PeriodConfig>,
    pub distance: DistanceConfig,
    pub clustering: ClusteringConfig,
    pub extreme: ExtremeRuleConfig,
    pub categories: CategoryConfig,
    pub classify: ClassifyConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let monday = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        Self {
            out_dir: PathBuf::from("out"),
            seed: 42,
            execution: ExecutionMode::default(),
            periods: vec![
                PeriodConfig {
                    label: "2010".into(),
                    week_start: monday(2010, 3, 1),
                    records: None,
                },
                PeriodConfig {
                    label: "2014".into(),
                    week_start: monday(2014, 3, 3),
                    records: None,
                },
            ],
            distance: DistanceConfig::default(),
            clustering: ClusteringConfig::default(),
            extreme: ExtremeRuleConfig::default(),
            categories: CategoryConfig::default(),
            classify: ClassifyConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub window: Option<usize>,
    pub k: Option<f64>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.epsilon {
            self.clustering.epsilon = v;
        }
        if let Some(v) = o.window {
            self.clustering.window = v;
        }
        if let Some(v) = o.k {
            self.distance.k = v;
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.periods.is_empty() || self.periods.len() > 2 {
            return Err(config_err(format!(
                "expected one or two periods, got {}",
                self.periods.len()
            )));
        }
        let mut labels = BTreeSet::new();
        for p in &self.periods {
            let ok = !p.label.is_empty()
                && p.label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !ok {
                return Err(config_err(format!("bad period label {:?}", p.label)));
            }
            if !labels.insert(&p.label) {
                return Err(config_err(format!("period label {:?} is repeated", p.label)));
            }
            ObservationPeriod::new(&p.label, p.week_start).map_err(|e| config_err(e.to_string()))?;
        }
        self.distance_params()?;
        self.clustering_params()?;
        if self.clustering.sample_size < self.clustering.window {
            return Err(config_err(format!(
                "sample_size {} is smaller than the window {}",
                self.clustering.sample_size, self.clustering.window
            )));
        }
        self.extreme.validate().map_err(|e| config_err(e.to_string()))?;
        let c = &self.categories;
        for (name, v) in [
            ("active_day_share", c.active_day_share),
            ("max_weekend_share", c.max_weekend_share),
            ("peak_min_share", c.peak_min_share),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(config_err(format!("categories.{name} must be in (0, 1], got {v}")));
            }
        }
        let s = &self.synth;
        if !(0.0..=1.0).contains(&s.churn) {
            return Err(config_err(format!("synth.churn must be in [0, 1], got {}", s.churn)));
        }
        let jitters = std::iter::once(s.jitter_hours).chain(s.population.iter().filter_map(|e| e.jitter_hours));
        for j in jitters {
            if !(j.is_finite() && (0.0..=12.0).contains(&j)) {
                return Err(config_err(format!("jitter_hours must be in [0, 12], got {j}")));
            }
        }
        Ok(())
    }

    pub fn distance_params(&self) -> Result<TransactionDistanceParams, PipelineError> {
        TransactionDistanceParams::new(self.distance.k).map_err(|e| config_err(e.to_string()))
    }

    pub fn clustering_params(&self) -> Result<SsOpticsParams, PipelineError> {
        let c = &self.clustering;
        SsOpticsParams::new(c.epsilon, c.window, c.tau).map_err(|e| config_err(e.to_string()))
    }

    pub fn observation_period(&self, i: usize) -> Result<ObservationPeriod, PipelineError> {
        let p = &self.periods[i];
        ObservationPeriod::new(&p.label, p.week_start).map_err(|e| config_err(e.to_string()))
    }

    pub fn execution(&self) -> Execution {
        self.execution.into()
    }

    /// Specs for the first period; entry `i` is seeded with `seed + i`.
    pub fn archetype_specs(&self) -> Vec<ArchetypeSpec> {
        self.synth
            .population
            .iter()
            .enumerate()
            .map(|(i, e)| ArchetypeSpec {
                archetype: e.archetype,
                count: e.count,
                jitter_hours: e.jitter_hours.unwrap_or(self.synth.jitter_hours),
                seed: self.seed.wrapping_add(i as u64),
            })
            .collect()
    }

    /// Seed of the second-period generator.
    pub fn followup_seed(&self) -> u64 {
        self.seed.wrapping_add(self.synth.population.len() as u64)
    }

    pub fn records_path(&self, i: usize) -> PathBuf {
        let p = &self.periods[i];
        p.records
            .clone()
            .unwrap_or_else(|| self.out_dir.join("synth").join(format!("records_{}.csv", p.label)))
    }
}
