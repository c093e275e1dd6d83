//! Transaction Distance between weekly tap vectors.
//!
//! At each position where the vectors differ, the cost is the hour gap
//! from the non-zero side to the nearest non-zero slot of the *other*
//! vector (zero when both sides are non-zero), plus `k` times the absolute
//! count difference. A side with no non-zero slot before (or after) the
//! position falls back to `min(i, 167 - i)`.

use serde::{Deserialize, Serialize};

use crate::ingest::SLOTS;
use crate::metrics::MetricsError;

const LAST: usize = SLOTS - 1;

/// Weight of the count-difference term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransactionDistanceParams {
    k: f64,
}

impl TransactionDistanceParams {
    pub const MAX_K: f64 = 3.0;

    pub fn new(k: f64) -> Result<Self, MetricsError> {
        if !(0.0..=Self::MAX_K).contains(&k) {
            return Err(MetricsError::WeightOutOfRange(k));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

impl Default for TransactionDistanceParams {
    fn default() -> Self {
        Self { k: 1.0 }
    }
}

#[inline]
fn edge_gap(i: usize) -> usize {
    i.min(LAST - i)
}

#[inline]
fn interval(i: usize, prev: Option<usize>, next: Option<usize>) -> usize {
    let before = prev.map_or(edge_gap(i), |p| i - p);
    let after = next.map_or(edge_gap(i), |n| n - i);
    before.min(after)
}

/// Transaction Distance over two dense 168-slot vectors.
pub fn transaction_distance(
    u: &[u32; SLOTS],
    v: &[u32; SLOTS],
    params: TransactionDistanceParams,
) -> f64 {
    let (u_prev, u_next) = neighbours(u);
    let (v_prev, v_next) = neighbours(v);
    let mut gaps = 0usize;
    let mut diff = 0u64;
    for i in 0..SLOTS {
        let (a, b) = (u[i], v[i]);
        if a == b {
            continue;
        }
        diff += a.abs_diff(b) as u64;
        if a == 0 {
            gaps += interval(i, u_prev[i], u_next[i]);
        } else if b == 0 {
            gaps += interval(i, v_prev[i], v_next[i]);
        }
    }
    gaps as f64 + params.k * diff as f64
}

type Links = [Option<usize>; SLOTS];

// For each i: the last non-zero index strictly before i, the first strictly after.
fn neighbours(x: &[u32; SLOTS]) -> (Links, Links) {
    let mut prev = [None; SLOTS];
    let mut next = [None; SLOTS];
    let mut last = None;
    for i in 0..SLOTS {
        prev[i] = last;
        if x[i] != 0 {
            last = Some(i);
        }
    }
    last = None;
    for i in (0..SLOTS).rev() {
        next[i] = last;
        if x[i] != 0 {
            last = Some(i);
        }
    }
    (prev, next)
}

/// Non-zero entries of a weekly vector, in slot order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseProfile {
    slots: Vec<u8>,
    counts: Vec<u32>,
}

impl SparseProfile {
    pub fn from_dense(dense: &[u32; SLOTS]) -> Self {
        let mut out = SparseProfile::default();
        for (j, &v) in dense.iter().enumerate() {
            if v != 0 {
                out.slots.push(j as u8);
                out.counts.push(v);
            }
        }
        out
    }

    /// A single trip at `slot`.
    pub fn one_hot(slot: usize) -> Self {
        assert!(slot < SLOTS, "slot {slot} out of range");
        SparseProfile {
            slots: vec![slot as u8],
            counts: vec![1],
        }
    }

    pub fn nnz(&self) -> usize {
        self.slots.len()
    }

    pub fn to_dense(&self) -> [u32; SLOTS] {
        let mut dense = [0; SLOTS];
        for (&j, &c) in self.slots.iter().zip(&self.counts) {
            dense[j as usize] = c;
        }
        dense
    }

    // Gap from position i (absent in `self`) to self's non-zero neighbours;
    // `cursor` is the index of the first entry of `self` past i.
    #[inline]
    fn gap_at(&self, i: usize, cursor: usize) -> usize {
        let prev = cursor.checked_sub(1).map(|c| self.slots[c] as usize);
        let next = self.slots.get(cursor).map(|&s| s as usize);
        interval(i, prev, next)
    }

    /// Transaction Distance computed by merging the two supports.
    ///
    /// Equal to [`transaction_distance`] on the dense forms, in
    /// `O(nnz(self) + nnz(other))`.
    pub fn distance(&self, other: &SparseProfile, params: TransactionDistanceParams) -> f64 {
        let (mut a, mut b) = (0, 0);
        let (na, nb) = (self.slots.len(), other.slots.len());
        let mut gaps = 0usize;
        let mut diff = 0u64;
        while a < na || b < nb {
            let ia = self.slots.get(a).map_or(usize::MAX, |&s| s as usize);
            let ib = other.slots.get(b).map_or(usize::MAX, |&s| s as usize);
            if ia == ib {
                diff += self.counts[a].abs_diff(other.counts[b]) as u64;
                a += 1;
                b += 1;
            } else if ia < ib {
                gaps += other.gap_at(ia, b);
                diff += self.counts[a] as u64;
                a += 1;
            } else {
                gaps += self.gap_at(ib, a);
                diff += other.counts[b] as u64;
                b += 1;
            }
        }
        gaps as f64 + params.k * diff as f64
    }
}
