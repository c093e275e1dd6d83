use std::ops::Range;

use crate::clustering::{ReachabilityPlot, SsOpticsParams};

/// Mean-filters the reachability curve.
///
/// Each smoothed value is the mean of the raw values in the centred window
/// of `params.window()` positions, truncated at both ends of the curve.
/// UNDEFINED values count as `params.epsilon()`.
pub fn smooth_rd(mut plot: ReachabilityPlot, params: &SsOpticsParams) -> ReachabilityPlot {
    let n = plot.rd.len();
    let half = params.half_window();
    let fill = params.epsilon();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for r in &plot.rd {
        acc += r.unwrap_or(fill);
        prefix.push(acc);
    }
    plot.rd_smoothed = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    plot
}

/// Clusters found in a smoothed plot, as ranges of ordering positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterExtraction {
    pub clusters: Vec<Range<usize>>,
    /// Point indices outside every cluster, ascending.
    pub noise: Vec<usize>,
    pub tau: f64,
}

impl ClusterExtraction {
    /// Point indices of cluster `c`.
    pub fn members(&self, plot: &ReachabilityPlot, c: usize) -> Vec<usize> {
        plot.order[self.clusters[c].clone()].to_vec()
    }
}

/// Cuts the smoothed curve into valleys.
///
/// Maximal runs below the threshold are shifted right by `(S-1)/2`
/// positions (clipped at the end of the ordering) and kept only if they
/// are longer than `(S-1)/2`.
pub fn extract_clusters(plot: &ReachabilityPlot, params: &SsOpticsParams) -> ClusterExtraction {
    assert!(plot.is_smoothed(), "extract_clusters needs a smoothed plot");
    let tau = params.tau().resolve(&plot.rd_smoothed);
    extract_with_threshold(plot, params.half_window(), tau)
}

pub fn extract_with_threshold(plot: &ReachabilityPlot, half: usize, tau: f64) -> ClusterExtraction {
    let n = plot.rd_smoothed.len();
    let mut clusters = Vec::new();
    let mut i = 0;
    while i < n {
        if plot.rd_smoothed[i] < tau {
            let start = i;
            while i < n && plot.rd_smoothed[i] < tau {
                i += 1;
            }
            let shifted = (start + half).min(n)..(i + half).min(n);
            if shifted.len() > half {
                clusters.push(shifted);
            }
        } else {
            i += 1;
        }
    }

    let mut in_cluster = vec![false; n];
    for c in &clusters {
        for pos in c.clone() {
            in_cluster[pos] = true;
        }
    }
    let mut noise: Vec<usize> = (0..n)
        .filter(|&pos| !in_cluster[pos])
        .map(|pos| plot.order[pos])
        .collect();
    noise.sort_unstable();
    ClusterExtraction {
        clusters,
        noise,
        tau,
    }
}
