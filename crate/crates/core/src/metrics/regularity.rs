use serde::{Deserialize, Serialize};

use crate::ingest::{WeeklyProfile, DAYS, HOURS};
use crate::metrics::distance::{SparseProfile, TransactionDistanceParams};
use crate::metrics::MetricsError;

/// Weekly regularity of one card.
///
/// `re = w * exp(-d_sd) * exp(-dist_sd)` where `w` is the share of days
/// with travel, `d_sd` the population standard deviation of per-day tap
/// counts and `dist_sd` the population standard deviation of pairwise
/// trip distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityScore {
    pub w: f64,
    pub d_sd: f64,
    pub dist_sd: f64,
    pub re: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityScore {
    pub re_early: f64,
    pub re_late: f64,
    pub sta: f64,
}

/// Population standard deviation; zero for fewer than two values.
pub fn population_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Distance between two single trips taken at hours of day `a` and `b`.
///
/// Each trip is a one-hot weekly vector placed at its hour of day, so trips
/// at the same clock time on different days are at distance zero.
pub fn trip_distance(a: usize, b: usize, params: TransactionDistanceParams) -> f64 {
    SparseProfile::one_hot(a).distance(&SparseProfile::one_hot(b), params)
}

/// Population standard deviation of all pairwise trip distances.
///
/// Trips are grouped by hour of day; a group of `m` trips contributes
/// `m(m-1)/2` zero distances and `m * m'` copies of the cross-hour distance
/// against every other group.
fn trip_distance_sd(hours: &[u64; HOURS], params: TransactionDistanceParams) -> f64 {
    let trips: u64 = hours.iter().sum();
    if trips < 2 {
        return 0.0;
    }
    let mut weighted: Vec<(f64, f64)> = Vec::new();
    for a in 0..HOURS {
        let ca = hours[a] as f64;
        if ca == 0.0 {
            continue;
        }
        if ca > 1.0 {
            weighted.push((ca * (ca - 1.0) / 2.0, 0.0));
        }
        for b in a + 1..HOURS {
            if hours[b] > 0 {
                weighted.push((ca * hours[b] as f64, trip_distance(a, b, params)));
            }
        }
    }
    let pairs = (trips * (trips - 1) / 2) as f64;
    let mean = weighted.iter().map(|(w, d)| w * d).sum::<f64>() / pairs;
    let var = weighted
        .iter()
        .map(|(w, d)| w * (d - mean).powi(2))
        .sum::<f64>()
        / pairs;
    var.max(0.0).sqrt()
}

/// Regularity of a non-empty weekly profile.
pub fn regularity(
    profile: &WeeklyProfile,
    params: TransactionDistanceParams,
) -> Result<RegularityScore, MetricsError> {
    let days = profile.day_counts();
    let active = days.iter().filter(|&&c| c > 0).count();
    if active == 0 {
        return Err(MetricsError::EmptyProfile(profile.card_id.clone()));
    }
    let w = active as f64 / DAYS as f64;
    let d_sd = population_sd(&days.map(|c| c as f64));
    let dist_sd = trip_distance_sd(&profile.hour_counts(), params);
    let re = w * (-d_sd).exp() * (-dist_sd).exp();
    Ok(RegularityScore { w, d_sd, dist_sd, re })
}

/// Ratio of late-period to early-period regularity.
pub fn stability(early: &RegularityScore, late: &RegularityScore) -> StabilityScore {
    debug_assert!(early.re > 0.0);
    StabilityScore {
        re_early: early.re,
        re_late: late.re,
        sta: late.re / early.re,
    }
}
