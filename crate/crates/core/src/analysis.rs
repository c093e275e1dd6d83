//! Cross-period comparisons: transition matrices, per-cluster population
//! statistics and the regularity/stability scatter.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::WeeklyProfile;
use crate::metrics::{pearson, stability, MetricsError, RegularityScore};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("card {card} has label {label:?}, which is not in the label set")]
    UnknownLabel { card: String, label: String },
    #[error("row {0:?} is empty, the rate is undefined")]
    EmptyRow(String),
    #[error("label {0:?} is not in the matrix")]
    MissingLabel(String),
    #[error("counts must form a {0}x{0} matrix")]
    NotSquare(usize),
    #[error("need at least 2 paired cards, got {0}")]
    TooFewPairs(usize),
}

/// Counts of cards moving from an early-period label to a late-period label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitionMatrix {
    pub labels: Vec<String>,
    /// `counts[a][b]`: cards labelled `a` early and `b` late.
    pub counts: Vec<Vec<u64>>,
    /// Cards labelled in one period only.
    pub excluded: u64,
}

impl TransitionMatrix {
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, AnalysisError> {
        let n = labels.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(AnalysisError::NotSquare(n));
        }
        Ok(Self {
            labels,
            counts,
            excluded: 0,
        })
    }

    pub fn index(&self, label: &str) -> Result<usize, AnalysisError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| AnalysisError::MissingLabel(label.to_string()))
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.labels.len())
            .map(|b| self.counts.iter().map(|r| r[b]).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(a, r)| r.iter().enumerate().all(|(b, &c)| a == b || c == 0))
    }

    /// Merges labels through `f`, producing a matrix over `target` labels.
    pub fn aggregate<F>(&self, target: &[String], f: F) -> Result<Self, AnalysisError>
    where
        F: Fn(&str) -> String,
    {
        let n = target.len();
        let to: Vec<usize> = self
            .labels
            .iter()
            .map(|l| {
                let t = f(l);
                target
                    .iter()
                    .position(|x| *x == t)
                    .ok_or(AnalysisError::MissingLabel(t))
            })
            .collect::<Result<_, _>>()?;
        let mut counts = vec![vec![0; n]; n];
        for (a, row) in self.counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                counts[to[a]][to[b]] += c;
            }
        }
        Ok(Self {
            labels: target.to_vec(),
            counts,
            excluded: self.excluded,
        })
    }

    /// Writes the matrix with a label header, label column and SUM marginals.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        header.push("SUM".into());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(u64::to_string));
            rec.push(row.iter().sum::<u64>().to_string());
            w.write_record(&rec)?;
        }
        let mut sum = vec!["SUM".to_string()];
        sum.extend(self.col_sums().iter().map(u64::to_string));
        sum.push(self.total().to_string());
        w.write_record(&sum)?;
        w.flush()?;
        Ok(())
    }

    /// Writes `from,to,count` for every cell, zeros included.
    pub fn write_long<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["from", "to", "count"])?;
        for (a, row) in self.counts.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                w.write_record([&self.labels[a], &self.labels[b], &c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Tallies label pairs over cards present in both maps. Cards found in one
/// map only are counted in `excluded`.
pub fn transition_matrix<L>(
    early: &BTreeMap<String, L>,
    late: &BTreeMap<String, L>,
    labels: &[L],
) -> Result<TransitionMatrix, AnalysisError>
where
    L: PartialEq + Display,
{
    let n = labels.len();
    let position = |card: &str, l: &L| {
        labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| AnalysisError::UnknownLabel {
                card: card.to_string(),
                label: l.to_string(),
            })
    };
    let mut counts = vec![vec![0u64; n]; n];
    let mut excluded = 0;
    for (card, a) in early {
        match late.get(card) {
            Some(b) => counts[position(card, a)?][position(card, b)?] += 1,
            None => excluded += 1,
        }
    }
    excluded += late.keys().filter(|c| !early.contains_key(*c)).count() as u64;
    Ok(TransitionMatrix {
        labels: labels.iter().map(ToString::to_string).collect(),
        counts,
        excluded,
    })
}

/// Share of row `from` that moved to `to`.
pub fn conversion_rate(m: &TransitionMatrix, from: &str, to: &str) -> Result<f64, AnalysisError> {
    let a = m.index(from)?;
    let b = m.index(to)?;
    let row: u64 = m.counts[a].iter().sum();
    if row == 0 {
        return Err(AnalysisError::EmptyRow(from.to_string()));
    }
    Ok(m.counts[a][b] as f64 / row as f64)
}

/// Share of row `label` that kept its label.
pub fn retention_rate(m: &TransitionMatrix, label: &str) -> Result<f64, AnalysisError> {
    conversion_rate(m, label, label)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRow {
    pub cluster_id: u32,
    pub cards: u64,
    pub metro_riders: u64,
    /// `metro_riders / cards`; 0 for an empty cluster.
    pub metro_ratio: f64,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodClusterStats {
    pub period: String,
    pub rows: Vec<ClusterRow>,
    pub total: u64,
}

/// Per-cluster card counts and metro-rider shares for one period.
/// Cards without a profile count as non-riders.
pub fn cluster_statistics(
    period: &str,
    cluster_ids: &[u32],
    assignments: &BTreeMap<String, u32>,
    profiles: &BTreeMap<String, WeeklyProfile>,
) -> PeriodClusterStats {
    let mut cards: BTreeMap<u32, (u64, u64)> = cluster_ids.iter().map(|&id| (id, (0, 0))).collect();
    for (card, id) in assignments {
        let e = cards.entry(*id).or_default();
        e.0 += 1;
        if profiles.get(card).is_some_and(|p| p.metro_taps > 0) {
            e.1 += 1;
        }
    }
    let rows = cards
        .into_iter()
        .map(|(cluster_id, (n, metro))| ClusterRow {
            cluster_id,
            cards: n,
            metro_riders: metro,
            metro_ratio: if n == 0 { 0.0 } else { metro as f64 / n as f64 },
            empty: n == 0,
        })
        .collect();
    PeriodClusterStats {
        period: period.to_string(),
        rows,
        total: assignments.len() as u64,
    }
}

/// Writes `period,cluster_id,cards,metro_riders,metro_ratio,empty`.
pub fn write_cluster_stats<W: Write>(out: W, stats: &[PeriodClusterStats]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "cluster_id", "cards", "metro_riders", "metro_ratio", "empty"])?;
    for s in stats {
        for r in &s.rows {
            w.write_record([
                s.period.clone(),
                r.cluster_id.to_string(),
                r.cards.to_string(),
                r.metro_riders.to_string(),
                r.metro_ratio.to_string(),
                r.empty.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub card_id: String,
    pub re_early: f64,
    pub re_late: f64,
    pub sta: f64,
}

/// A Pearson coefficient, or a flag when one series is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Correlation {
    Value(f64),
    ZeroVariance,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(v),
            Correlation::ZeroVariance => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityScatter {
    pub points: Vec<ScatterPoint>,
    /// Early regularity against late regularity.
    pub re_re: Correlation,
    /// Early regularity against stability.
    pub re_sta: Correlation,
}

fn correlate(xs: &[f64], ys: &[f64]) -> Result<Correlation, AnalysisError> {
    match pearson(xs, ys) {
        Ok(r) => Ok(Correlation::Value(r)),
        Err(MetricsError::ZeroVariance) => Ok(Correlation::ZeroVariance),
        Err(_) => Err(AnalysisError::TooFewPairs(xs.len())),
    }
}

/// Pairs the scores of cards scored in both periods.
pub fn regularity_scatter(
    early: &BTreeMap<String, RegularityScore>,
    late: &BTreeMap<String, RegularityScore>,
) -> Result<RegularityScatter, AnalysisError> {
    let points: Vec<ScatterPoint> = early
        .iter()
        .filter_map(|(card, e)| {
            let l = late.get(card)?;
            let s = stability(e, l);
            Some(ScatterPoint {
                card_id: card.clone(),
                re_early: s.re_early,
                re_late: s.re_late,
                sta: s.sta,
            })
        })
        .collect();
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPairs(points.len()));
    }
    let re10: Vec<f64> = points.iter().map(|p| p.re_early).collect();
    let re14: Vec<f64> = points.iter().map(|p| p.re_late).collect();
    let sta: Vec<f64> = points.iter().map(|p| p.sta).collect();
    Ok(RegularityScatter {
        re_re: correlate(&re10, &re14)?,
        re_sta: correlate(&re10, &sta)?,
        points,
    })
}

/// Writes `card_id,re_early,re_late,sta`.
pub fn write_scatter<W: Write>(out: W, scatter: &RegularityScatter) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["card_id", "re_early", "re_late", "sta"])?;
    for p in &scatter.points {
        w.write_record([
            p.card_id.clone(),
            p.re_early.to_string(),
            p.re_late.to_string(),
            p.sta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
