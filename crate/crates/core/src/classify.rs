//! Assignment of weekly profiles to learned centroids.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::extreme::WEEKDAYS;
use crate::ingest::{WeeklyProfile, DAYS, HOURS, SLOTS};

/// Id of the all-zero centroid that absorbs profiles overlapping nothing.
pub const NOISE_CLUSTER_ID: u32 = 34;
/// Learned clusters take ids `1..=MAX_LEARNED_CLUSTERS`.
pub const MAX_LEARNED_CLUSTERS: usize = 33;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("the noise cluster is never updated")]
    NoiseUpdate,
    #[error("unknown cluster id {0}")]
    UnknownCluster(u32),
    #[error("cluster id {0} is outside 1..=33 or repeated")]
    BadClusterId(u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("centroid file line {line}: {reason}")]
    BadCentroidRow { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCentroid {
    pub id: u32,
    /// Incidence rate of taps per weekly slot.
    pub weights: [f64; SLOTS],
    /// Transaction mass behind the weights.
    pub n: f64,
}

impl ClusterCentroid {
    /// Share of all member taps that fall in each slot; `n` is the member tap total.
    pub fn from_members(id: u32, members: &[&WeeklyProfile]) -> Self {
        let mut counts = [0u64; SLOTS];
        for m in members {
            for (c, &v) in counts.iter_mut().zip(&m.slots) {
                *c += v as u64;
            }
        }
        let total: u64 = counts.iter().sum();
        let mut weights = [0.0; SLOTS];
        if total > 0 {
            for (w, &c) in weights.iter_mut().zip(&counts) {
                *w = c as f64 / total as f64;
            }
        }
        Self {
            id,
            weights,
            n: total as f64,
        }
    }

    pub fn noise() -> Self {
        Self {
            id: NOISE_CLUSTER_ID,
            weights: [0.0; SLOTS],
            n: 0.0,
        }
    }

    pub fn is_noise(&self) -> bool {
        self.id == NOISE_CLUSTER_ID
    }

    /// `sum_j v_j * c_j`
    pub fn similarity(&self, profile: &WeeklyProfile) -> f64 {
        profile
            .slots
            .iter()
            .zip(&self.weights)
            .filter(|(&v, _)| v != 0)
            .map(|(&v, &c)| v as f64 * c)
            .sum()
    }
}

/// Learned centroids ordered by id, followed by the noise centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<ClusterCentroid>,
}

impl ClusterModel {
    pub fn new(mut learned: Vec<ClusterCentroid>) -> Result<Self, ClassifyError> {
        learned.sort_by_key(|c| c.id);
        for (i, c) in learned.iter().enumerate() {
            let repeated = i > 0 && learned[i - 1].id == c.id;
            if c.id == 0 || c.id as usize > MAX_LEARNED_CLUSTERS || repeated {
                return Err(ClassifyError::BadClusterId(c.id));
            }
        }
        learned.push(ClusterCentroid::noise());
        Ok(Self { centroids: learned })
    }

    pub fn centroids(&self) -> &[ClusterCentroid] {
        &self.centroids
    }

    pub fn learned(&self) -> &[ClusterCentroid] {
        &self.centroids[..self.centroids.len() - 1]
    }

    pub fn get(&self, id: u32) -> Option<&ClusterCentroid> {
        self.centroids.iter().find(|c| c.id == id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.centroids.iter().map(|c| c.id).collect()
    }

    pub fn categories(&self, cfg: &CategoryConfig) -> BTreeMap<u32, TripCategory> {
        self.centroids
            .iter()
            .map(|c| (c.id, categorize(c, cfg)))
            .collect()
    }
}

/// Cluster with the largest similarity. Profiles with zero similarity to
/// every centroid go to the noise cluster; positive ties go to the lowest id.
pub fn assign(profile: &WeeklyProfile, model: &ClusterModel) -> u32 {
    let mut best = (NOISE_CLUSTER_ID, 0.0);
    for c in model.learned() {
        let s = c.similarity(profile);
        if s > best.1 {
            best = (c.id, s);
        }
    }
    best.0
}

/// Folds one profile into cluster `id`:
/// `c_j <- (n c_j + v_j) / (n + |V|_0)`, then `n <- n + |V|_0`, where
/// `|V|_0` is the number of non-zero slots. An empty profile changes nothing.
pub fn update_centroid(
    model: &mut ClusterModel,
    id: u32,
    profile: &WeeklyProfile,
) -> Result<(), ClassifyError> {
    if id == NOISE_CLUSTER_ID {
        return Err(ClassifyError::NoiseUpdate);
    }
    let c = model
        .centroids
        .iter_mut()
        .find(|c| c.id == id)
        .ok_or(ClassifyError::UnknownCluster(id))?;
    let nnz = profile.support_size() as f64;
    if nnz == 0.0 {
        return Ok(());
    }
    let denom = c.n + nnz;
    for (w, &v) in c.weights.iter_mut().zip(&profile.slots) {
        *w = (c.n * *w + v as f64) / denom;
    }
    c.n = denom;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub assignments: BTreeMap<String, u32>,
    /// The updated model, when online updates were requested.
    pub updated_model: Option<ClusterModel>,
}

/// Assigns every profile. With `update`, each assignment is folded into its
/// centroid before the next card is assigned, in ascending card-id order.
pub fn classify_all(
    profiles: &BTreeMap<String, WeeklyProfile>,
    model: &ClusterModel,
    update: bool,
    exec: Execution,
) -> Classification {
    if !update {
        let cards: Vec<&WeeklyProfile> = profiles.values().collect();
        let ids = exec.map(&cards, |p| assign(p, model));
        return Classification {
            assignments: cards.iter().map(|p| p.card_id.clone()).zip(ids).collect(),
            updated_model: None,
        };
    }
    let mut live = model.clone();
    let mut assignments = BTreeMap::new();
    for (card, p) in profiles {
        let id = assign(p, &live);
        if id != NOISE_CLUSTER_ID {
            update_centroid(&mut live, id, p).expect("assigned id exists");
        }
        assignments.insert(card.clone(), id);
    }
    Classification {
        assignments,
        updated_model: Some(live),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TripCategory {
    OneDay,
    TwoDay,
    MultiDay,
    Commuting,
    Noise,
}

impl TripCategory {
    pub const ALL: [TripCategory; 5] = [
        TripCategory::OneDay,
        TripCategory::TwoDay,
        TripCategory::MultiDay,
        TripCategory::Commuting,
        TripCategory::Noise,
    ];

    /// One-letter code used in transition tables.
    pub fn code(self) -> &'static str {
        match self {
            TripCategory::OneDay => "O",
            TripCategory::TwoDay => "T",
            TripCategory::MultiDay => "M",
            TripCategory::Commuting => "C",
            TripCategory::Noise => "N",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TripCategory::OneDay => "OneDay",
            TripCategory::TwoDay => "TwoDay",
            TripCategory::MultiDay => "MultiDay",
            TripCategory::Commuting => "Commuting",
            TripCategory::Noise => "Noise",
        }
    }
}

impl fmt::Display for TripCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TripCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TripCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s || c.code() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Thresholds that turn a centroid's weekly shape into a category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoryConfig {
    /// A day is active when it holds at least this share of the mass.
    pub active_day_share: f64,
    /// Commuting needs weekend mass strictly below this share.
    pub max_weekend_share: f64,
    pub min_active_weekdays: usize,
    /// Minimum distance in hours between the two daily peaks of a commuter.
    pub peak_separation_hours: usize,
    /// An hour-of-day peak must hold at least this share of the mass.
    pub peak_min_share: f64,
}

impl Default for CategoryConfig {
    fn default() -> Self {
        Self {
            active_day_share: 0.1,
            max_weekend_share: 0.2,
            min_active_weekdays: 4,
            peak_separation_hours: 6,
            peak_min_share: 0.1,
        }
    }
}

// Local maxima of the hour-of-day marginal holding enough mass.
fn hour_peaks(hours: &[f64; HOURS], total: f64, min_share: f64) -> Vec<usize> {
    (0..HOURS)
        .filter(|&h| {
            let v = hours[h];
            v > 0.0
                && v >= min_share * total
                && (h == 0 || v >= hours[h - 1])
                && (h + 1 == HOURS || v >= hours[h + 1])
        })
        .collect()
}

pub fn categorize(centroid: &ClusterCentroid, cfg: &CategoryConfig) -> TripCategory {
    let total: f64 = centroid.weights.iter().sum();
    if centroid.is_noise() || total <= 0.0 {
        return TripCategory::Noise;
    }
    let mut days = [0.0; DAYS];
    let mut hours = [0.0; HOURS];
    for (j, &w) in centroid.weights.iter().enumerate() {
        days[j / HOURS] += w;
        hours[j % HOURS] += w;
    }
    let active: Vec<usize> = (0..DAYS)
        .filter(|&d| days[d] >= cfg.active_day_share * total)
        .collect();
    let active_weekdays = active.iter().filter(|&&d| d < WEEKDAYS).count();
    let weekend_share = days[WEEKDAYS..].iter().sum::<f64>() / total;
    let peaks = hour_peaks(&hours, total, cfg.peak_min_share);
    let two_peaks = peaks
        .iter()
        .any(|&a| peaks.iter().any(|&b| b >= a + cfg.peak_separation_hours));

    if active_weekdays >= cfg.min_active_weekdays && weekend_share < cfg.max_weekend_share && two_peaks {
        return TripCategory::Commuting;
    }
    match active.len() {
        0 | 1 => TripCategory::OneDay,
        2 => TripCategory::TwoDay,
        _ => TripCategory::MultiDay,
    }
}

fn centroid_header() -> Vec<String> {
    let mut h = vec!["cluster_id".to_string()];
    h.extend((0..SLOTS).map(|j| format!("c{j}")));
    h.push("n".to_string());
    h
}

/// Writes `cluster_id,c0,...,c167,n` for every learned centroid.
pub fn write_centroids<W: Write>(out: W, centroids: &[ClusterCentroid]) -> Result<usize, ClassifyError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(centroid_header())?;
    for c in centroids.iter().filter(|c| !c.is_noise()) {
        let mut row = vec![c.id.to_string()];
        row.extend(c.weights.iter().map(|x| x.to_string()));
        row.push(c.n.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(centroids.iter().filter(|c| !c.is_noise()).count())
}

pub fn read_centroids<R: Read>(input: R) -> Result<Vec<ClusterCentroid>, ClassifyError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != centroid_header() {
        return Err(ClassifyError::BadCentroidRow {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64, ClassifyError> {
            row[k].parse().map_err(|e| ClassifyError::BadCentroidRow {
                line,
                reason: format!("column {k}: {e}"),
            })
        };
        let id = row[0].parse().map_err(|e| ClassifyError::BadCentroidRow {
            line,
            reason: format!("cluster_id: {e}"),
        })?;
        let mut weights = [0.0; SLOTS];
        for (j, w) in weights.iter_mut().enumerate() {
            *w = num(j + 1)?;
        }
        out.push(ClusterCentroid {
            id,
            weights,
            n: num(SLOTS + 1)?,
        });
    }
    Ok(out)
}

/// Writes `card_id,period,cluster_id,category`.
pub fn write_assignments<W: Write>(
    out: W,
    period: &str,
    assignments: &BTreeMap<String, u32>,
    categories: &BTreeMap<u32, TripCategory>,
) -> csv::Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["card_id", "period", "cluster_id", "category"])?;
    for (card, id) in assignments {
        let cat = categories.get(id).copied().unwrap_or(TripCategory::Noise);
        w.write_record([card.as_str(), period, &id.to_string(), cat.as_str()])?;
    }
    w.flush()?;
    Ok(assignments.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn centroid(id: u32, mass: &[(usize, f64)]) -> ClusterCentroid {
        let mut weights = [0.0; SLOTS];
        for &(j, w) in mass {
            weights[j] = w;
        }
        ClusterCentroid { id, weights, n: 10.0 }
    }

    fn profile(taps: &[(usize, u32)]) -> WeeklyProfile {
        let mut p = WeeklyProfile::new("p");
        for &(j, v) in taps {
            p.slots[j] = v;
        }
        p
    }

    #[test]
    fn matching_support_wins() {
        let model = ClusterModel::new(vec![
            centroid(1, &[(8, 0.5), (18, 0.5)]),
            centroid(2, &[(50, 1.0)]),
        ])
        .unwrap();
        assert_eq!(assign(&profile(&[(50, 1)]), &model), 2);
        assert_eq!(assign(&profile(&[(8, 1), (18, 1)]), &model), 1);
    }

    #[test]
    fn no_overlap_goes_to_noise() {
        let model = ClusterModel::new(vec![centroid(1, &[(8, 1.0)])]).unwrap();
        assert_eq!(assign(&profile(&[(100, 3)]), &model), NOISE_CLUSTER_ID);
        assert_eq!(assign(&WeeklyProfile::new("e"), &model), NOISE_CLUSTER_ID);
    }

    #[test]
    fn larger_overlap_wins() {
        let model = ClusterModel::new(vec![
            centroid(2, &[(10, 0.6)]),
            centroid(7, &[(11, 0.4)]),
        ])
        .unwrap();
        // similarities 0.6 vs 0.4
        assert_eq!(assign(&profile(&[(10, 1), (11, 1)]), &model), 2);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let model = ClusterModel::new(vec![centroid(5, &[(10, 0.5)]), centroid(3, &[(11, 0.5)])]).unwrap();
        assert_eq!(assign(&profile(&[(10, 1), (11, 1)]), &model), 3);
    }

    #[test]
    fn model_rejects_bad_ids() {
        assert!(ClusterModel::new(vec![centroid(34, &[])]).is_err());
        assert!(ClusterModel::new(vec![centroid(0, &[])]).is_err());
        assert!(ClusterModel::new(vec![centroid(2, &[]), centroid(2, &[])]).is_err());
        let m = ClusterModel::new(vec![centroid(2, &[])]).unwrap();
        assert_eq!(m.ids(), vec![2, 34]);
    }

    #[test]
    fn update_worked_example() {
        let mut c = centroid(1, &[(0, 0.5), (1, 0.5)]);
        c.n = 4.0;
        let mut model = ClusterModel::new(vec![c]).unwrap();
        // |V|_0 = 2: slot 0 gets a tap, slot 1 does not
        update_centroid(&mut model, 1, &profile(&[(0, 1), (2, 1)])).unwrap();
        let c = model.get(1).unwrap();
        assert!((c.weights[0] - (4.0 * 0.5 + 1.0) / 6.0).abs() < 1e-12);
        assert!((c.weights[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((c.weights[2] - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(c.n, 6.0);
    }

    #[test]
    fn empty_update_is_identity() {
        let model = ClusterModel::new(vec![centroid(1, &[(0, 0.5)])]).unwrap();
        let mut updated = model.clone();
        update_centroid(&mut updated, 1, &WeeklyProfile::new("e")).unwrap();
        assert_eq!(updated, model);
    }

    #[test]
    fn noise_and_unknown_updates_fail() {
        let mut model = ClusterModel::new(vec![centroid(1, &[(0, 0.5)])]).unwrap();
        assert!(matches!(
            update_centroid(&mut model, NOISE_CLUSTER_ID, &profile(&[(0, 1)])),
            Err(ClassifyError::NoiseUpdate)
        ));
        assert!(matches!(
            update_centroid(&mut model, 9, &profile(&[(0, 1)])),
            Err(ClassifyError::UnknownCluster(9))
        ));
    }

    #[test]
    fn repeated_updates_approach_pattern() {
        let mut model = ClusterModel::new(vec![centroid(1, &[(8, 0.3), (18, 0.3), (40, 0.4)])]).unwrap();
        let v = profile(&[(8, 1), (18, 1)]);
        let target = |j: usize| if j == 8 || j == 18 { 0.5 } else { 0.0 };
        let gap = |m: &ClusterModel| -> f64 {
            let c = m.get(1).unwrap();
            (0..SLOTS).map(|j| (c.weights[j] - target(j)).abs()).sum()
        };
        let first = gap(&model);
        let mut last = first;
        for t in 1..=100 {
            update_centroid(&mut model, 1, &v).unwrap();
            let g = gap(&model);
            assert!(g < last);
            // the gap shrinks as n0 / (n0 + t |V|_0)
            assert!((g - first * 10.0 / (10.0 + 2.0 * t as f64)).abs() < 1e-9);
            last = g;
        }
    }

    #[test]
    fn categories() {
        let cfg = CategoryConfig::default();
        let wed: Vec<(usize, f64)> = vec![(2 * 24 + 10, 0.5), (2 * 24 + 16, 0.5)];
        assert_eq!(categorize(&centroid(1, &wed), &cfg), TripCategory::OneDay);

        let commute: Vec<(usize, f64)> = (0..5).flat_map(|d| [(d * 24 + 8, 0.1), (d * 24 + 18, 0.1)]).collect();
        assert_eq!(categorize(&centroid(1, &commute), &cfg), TripCategory::Commuting);

        let sat_sun: Vec<(usize, f64)> = vec![(5 * 24 + 10, 0.5), (6 * 24 + 10, 0.5)];
        assert_eq!(categorize(&centroid(1, &sat_sun), &cfg), TripCategory::TwoDay);

        // five weekdays but a single daily peak
        let five_day: Vec<(usize, f64)> = (0..5).map(|d| (d * 24 + 12, 0.2)).collect();
        assert_eq!(categorize(&centroid(1, &five_day), &cfg), TripCategory::MultiDay);

        assert_eq!(categorize(&ClusterCentroid::noise(), &cfg), TripCategory::Noise);
    }

    #[test]
    fn classify_all_modes() {
        let model = ClusterModel::new(vec![centroid(1, &[(8, 1.0)]), centroid(2, &[(9, 1.0)])]).unwrap();
        assert!(classify_all(&BTreeMap::new(), &model, false, Execution::Sequential)
            .assignments
            .is_empty());
        let mut pop = BTreeMap::new();
        for (i, slot) in [8usize, 9, 8, 100].iter().enumerate() {
            let mut p = profile(&[(*slot, 1)]);
            p.card_id = format!("c{i}");
            pop.insert(p.card_id.clone(), p);
        }
        let frozen = classify_all(&pop, &model, false, Execution::Parallel);
        assert_eq!(frozen.assignments["c0"], 1);
        assert_eq!(frozen.assignments["c1"], 2);
        assert_eq!(frozen.assignments["c3"], NOISE_CLUSTER_ID);
        let online = classify_all(&pop, &model, true, Execution::Sequential);
        assert_eq!(online.assignments, frozen.assignments);
        let updated = online.updated_model.unwrap();
        assert_eq!(updated.get(1).unwrap().n, 12.0);
        assert_eq!(updated.get(2).unwrap().n, 11.0);
    }

    #[test]
    fn centroid_csv_roundtrip() {
        let c = centroid(3, &[(0, 0.25), (167, 0.75)]);
        let mut buf = Vec::new();
        write_centroids(&mut buf, &[c.clone(), ClusterCentroid::noise()]).unwrap();
        assert_eq!(read_centroids(buf.as_slice()).unwrap(), vec![c]);
    }

    fn weights() -> impl Strategy<Value = Vec<ClusterCentroid>> {
        prop::collection::vec(prop::collection::vec((0usize..SLOTS, 0.0f64..1.0), 1..8), 1..6).prop_map(|cs| {
            cs.into_iter()
                .enumerate()
                .map(|(i, m)| centroid(i as u32 + 1, &m))
                .collect()
        })
    }

    fn any_profile() -> impl Strategy<Value = WeeklyProfile> {
        prop::collection::vec((0usize..SLOTS, 1u32..4), 0..12).prop_map(|t| profile(&t))
    }

    proptest! {
        #[test]
        fn assignment_is_scale_invariant(cs in weights(), p in any_profile(), e in -3i32..10) {
            let scale = 2f64.powi(e);
            let model = ClusterModel::new(cs.clone()).unwrap();
            let scaled: Vec<ClusterCentroid> = cs.into_iter().map(|mut c| {
                c.weights.iter_mut().for_each(|w| *w *= scale);
                c
            }).collect();
            let scaled = ClusterModel::new(scaled).unwrap();
            prop_assert_eq!(assign(&p, &model), assign(&p, &scaled));
        }

        #[test]
        fn update_keeps_weights_bounded(cs in weights(), p in any_profile()) {
            let mut model = ClusterModel::new(cs).unwrap();
            let before: f64 = model.get(1).unwrap().weights.iter().sum();
            update_centroid(&mut model, 1, &p).unwrap();
            let after = model.get(1).unwrap();
            let max_v = p.slots.iter().copied().max().unwrap_or(0) as f64;
            prop_assert!(after.weights.iter().all(|&w| w >= 0.0));
            let sum: f64 = after.weights.iter().sum();
            prop_assert!(sum <= before.max(max_v) + 1e-9);
        }

        #[test]
        fn frozen_classification_ignores_input_order(cs in weights(), ps in prop::collection::vec(any_profile(), 0..20)) {
            let model = ClusterModel::new(cs).unwrap();
            let mut fwd = BTreeMap::new();
            let mut rev = BTreeMap::new();
            for (i, mut p) in ps.clone().into_iter().enumerate() {
                p.card_id = format!("{i:03}");
                fwd.insert(p.card_id.clone(), p);
            }
            for (i, mut p) in ps.into_iter().enumerate().rev() {
                p.card_id = format!("{i:03}");
                rev.insert(p.card_id.clone(), p);
            }
            let a = classify_all(&fwd, &model, false, Execution::Sequential).assignments;
            let b = classify_all(&rev, &model, false, Execution::Parallel).assignments;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn categorize_is_total(cs in weights()) {
            for c in &cs {
                let a = categorize(c, &CategoryConfig::default());
                prop_assert_eq!(a, categorize(c, &CategoryConfig::default()));
            }
        }
    }
}
