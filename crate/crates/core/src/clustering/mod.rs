//! Density-based ordering of weekly profiles and valley extraction.
//!
//! The main path is [`cluster_sample`]: order a sample by simplified
//! reachability, mean-filter the curve, cut valleys below a threshold and
//! turn each valley into a centroid. [`optics_order`] is the classical
//! core-distance ordering, kept as a reference for comparisons.

mod oracle;
mod ordering;
mod valleys;

pub use oracle::{CountingOracle, DistanceMatrix, DistanceOracle, EuclideanPoints, TransactionSpace};
pub use ordering::{
    optics_order, optics_order_with, ss_optics_order, ss_optics_order_with, ReachabilityPlot,
};
pub use valleys::{extract_clusters, extract_with_threshold, smooth_rd, ClusterExtraction};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{ClusterCentroid, MAX_LEARNED_CLUSTERS};
use crate::exec::Execution;
use crate::ingest::WeeklyProfile;
use crate::metrics::TransactionDistanceParams;

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("window must be odd and at least 3, got {0}")]
    BadWindow(usize),
    #[error("min_pts must be at least 2, got {0}")]
    BadMinPts(usize),
    #[error("invalid threshold rule: {0}")]
    BadTau(String),
    #[error("sample of {len} profiles is smaller than the window {window}")]
    SampleTooSmall { len: usize, window: usize },
}

/// How the valley threshold is derived from a smoothed curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    /// `fraction * median(rd_smoothed)`
    MedianFraction(f64),
    /// A fixed value.
    Fixed(f64),
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::MedianFraction(0.75)
    }
}

impl TauRule {
    pub fn resolve(&self, smoothed: &[f64]) -> f64 {
        match *self {
            TauRule::Fixed(v) => v,
            TauRule::MedianFraction(f) => f * median(smoothed),
        }
    }

    fn validate(&self) -> Result<(), ClusteringError> {
        let v = match *self {
            TauRule::Fixed(v) | TauRule::MedianFraction(v) => v,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(ClusteringError::BadTau(self.to_string()))
        }
    }
}

impl fmt::Display for TauRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauRule::MedianFraction(v) => write!(f, "median:{v}"),
            TauRule::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

impl FromStr for TauRule {
    type Err = ClusteringError;

    /// Parses `median:<fraction>` or `fixed:<value>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ClusteringError::BadTau(s.to_string());
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let rule = match kind.trim() {
            "median" => TauRule::MedianFraction(value),
            "fixed" => TauRule::Fixed(value),
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl Serialize for TauRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TauRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Parameters of the simplified-smoothed ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsOpticsParams {
    epsilon: f64,
    window: usize,
    tau: TauRule,
}

impl Default for SsOpticsParams {
    fn default() -> Self {
        Self {
            epsilon: 100.0,
            window: 41,
            tau: TauRule::default(),
        }
    }
}

impl SsOpticsParams {
    pub fn new(epsilon: f64, window: usize, tau: TauRule) -> Result<Self, ClusteringError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(ClusteringError::BadEpsilon(epsilon));
        }
        if window < 3 || window % 2 == 0 {
            return Err(ClusteringError::BadWindow(window));
        }
        tau.validate()?;
        Ok(Self { epsilon, window, tau })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// `(S - 1) / 2`: smoothing offset and cluster-size floor.
    pub fn half_window(&self) -> usize {
        (self.window - 1) / 2
    }

    pub fn tau(&self) -> TauRule {
        self.tau
    }
}

/// Parameters of the classical ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsParams {
    pub epsilon: f64,
    pub min_pts: usize,
}

impl OpticsParams {
    pub fn new(epsilon: f64, min_pts: usize) -> Result<Self, ClusteringError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(ClusteringError::BadEpsilon(epsilon));
        }
        if min_pts < 2 {
            return Err(ClusteringError::BadMinPts(min_pts));
        }
        Ok(Self { epsilon, min_pts })
    }
}

/// Everything produced while clustering one sample.
#[derive(Debug, Clone)]
pub struct SampleClustering {
    pub plot: ReachabilityPlot,
    pub extraction: ClusterExtraction,
    /// Sample indices of each kept cluster, parallel to `centroids`.
    pub members: Vec<Vec<usize>>,
    pub centroids: Vec<ClusterCentroid>,
}

/// Orders, smooths and cuts a sample under Transaction Distance, and turns
/// every valley into a centroid of slot incidence rates.
///
/// At most [`MAX_LEARNED_CLUSTERS`] clusters are kept (the largest ones);
/// they are numbered from 1 in ordering position.
pub fn cluster_sample(
    profiles: &[WeeklyProfile],
    params: &SsOpticsParams,
    distance: TransactionDistanceParams,
    exec: Execution,
) -> Result<SampleClustering, ClusteringError> {
    if profiles.len() < params.window() {
        return Err(ClusteringError::SampleTooSmall {
            len: profiles.len(),
            window: params.window(),
        });
    }
    let space = TransactionSpace::new(profiles, distance);
    let plot = smooth_rd(ss_optics_order_with(&space, params, exec), params);
    let extraction = extract_clusters(&plot, params);

    let mut kept: Vec<usize> = (0..extraction.clusters.len()).collect();
    if kept.len() > MAX_LEARNED_CLUSTERS {
        kept.sort_by_key(|&c| (std::cmp::Reverse(extraction.clusters[c].len()), c));
        kept.truncate(MAX_LEARNED_CLUSTERS);
        kept.sort_unstable();
    }

    let members: Vec<Vec<usize>> = kept.iter().map(|&c| extraction.members(&plot, c)).collect();
    let centroids = members
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let group: Vec<&WeeklyProfile> = idx.iter().map(|&p| &profiles[p]).collect();
            ClusterCentroid::from_members(i as u32 + 1, &group)
        })
        .collect();
    Ok(SampleClustering {
        plot,
        extraction,
        members,
        centroids,
    })
}

/// Writes `position,point_index,rd,rd_smoothed`; UNDEFINED is an empty field.
pub fn write_plot<W: Write>(out: W, plot: &ReachabilityPlot) -> csv::Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["position", "point_index", "rd", "rd_smoothed"])?;
    for (pos, &point) in plot.order.iter().enumerate() {
        let rd = plot.rd[pos].map(|v| v.to_string()).unwrap_or_default();
        let smoothed = plot
            .rd_smoothed
            .get(pos)
            .map(|v| v.to_string())
            .unwrap_or_default();
        w.write_record([pos.to_string(), point.to_string(), rd, smoothed])?;
    }
    w.flush()?;
    Ok(plot.len())
}
