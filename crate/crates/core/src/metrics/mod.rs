//! Distance, regularity and correlation measures over weekly profiles.

mod distance;
mod regularity;

pub use distance::{transaction_distance, SparseProfile, TransactionDistanceParams};
pub use regularity::{
    population_sd, regularity, stability, trip_distance, RegularityScore, StabilityScore,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("distance weight k={0} outside [0, 3]")]
    WeightOutOfRange(f64),
    #[error("card {0} has no taps; regularity is undefined")]
    EmptyProfile(String),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least two pairs, got {0}")]
    TooFewPairs(usize),
    #[error("correlation undefined: a series has zero variance")]
    ZeroVariance,
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(MetricsError::TooFewPairs(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
