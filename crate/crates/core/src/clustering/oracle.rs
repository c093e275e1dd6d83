use std::sync::atomic::{AtomicU64, Ordering};

use crate::exec::Execution;
use crate::ingest::WeeklyProfile;
use crate::metrics::{SparseProfile, TransactionDistanceParams};

/// A finite indexed point set with a symmetric, non-negative distance.
pub trait DistanceOracle: Sync {
    fn len(&self) -> usize;

    fn distance(&self, a: usize, b: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weekly profiles under Transaction Distance.
#[derive(Debug, Clone)]
pub struct TransactionSpace {
    points: Vec<SparseProfile>,
    params: TransactionDistanceParams,
}

impl TransactionSpace {
    pub fn new<'a, I>(profiles: I, params: TransactionDistanceParams) -> Self
    where
        I: IntoIterator<Item = &'a WeeklyProfile>,
    {
        Self {
            points: profiles
                .into_iter()
                .map(|p| SparseProfile::from_dense(&p.slots))
                .collect(),
            params,
        }
    }
}

impl DistanceOracle for TransactionSpace {
    fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    fn distance(&self, a: usize, b: usize) -> f64 {
        self.points[a].distance(&self.points[b], self.params)
    }
}

/// Points in R^d under Euclidean distance.
#[derive(Debug, Clone)]
pub struct EuclideanPoints {
    points: Vec<Vec<f64>>,
}

impl EuclideanPoints {
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        Self { points }
    }

    pub fn from_scalars(xs: &[f64]) -> Self {
        Self::new(xs.iter().map(|&x| vec![x]).collect())
    }
}

impl DistanceOracle for EuclideanPoints {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        self.points[a]
            .iter()
            .zip(&self.points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Wraps an oracle and counts distance evaluations.
#[derive(Debug)]
pub struct CountingOracle<'a, O> {
    inner: &'a O,
    calls: AtomicU64,
}

impl<'a, O: DistanceOracle> CountingOracle<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<O: DistanceOracle> DistanceOracle for CountingOracle<'_, O> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.distance(a, b)
    }
}

/// Condensed upper-triangle cache of all pairwise distances.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    condensed: Vec<f32>,
}

impl DistanceMatrix {
    /// Evaluates every pair once. Memory is `4 * n(n-1)/2` bytes.
    pub fn build<O: DistanceOracle>(oracle: &O, exec: Execution) -> Self {
        let n = oracle.len();
        let rows = exec.map_range(n, |i| {
            (i + 1..n)
                .map(|j| oracle.distance(i, j) as f32)
                .collect::<Vec<f32>>()
        });
        Self {
            n,
            condensed: rows.concat(),
        }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        // rows 0..i hold (n-1) + (n-2) + ... + (n-i) entries
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }
}

impl DistanceOracle for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        match a.cmp(&b) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.condensed[self.offset(a, b)] as f64,
            std::cmp::Ordering::Greater => self.condensed[self.offset(b, a)] as f64,
        }
    }
}
