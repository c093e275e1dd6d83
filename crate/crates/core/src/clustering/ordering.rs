//! Reachability orderings: the simplified variant and the classical
//! core-distance baseline.

use std::collections::BTreeSet;

use ordered_float::OrderedFloat;

use crate::clustering::oracle::DistanceOracle;
use crate::clustering::{OpticsParams, SsOpticsParams};
use crate::exec::Execution;

// Below this many candidates a neighbourhood scan stays on the calling thread.
const PARALLEL_SCAN_MIN: usize = 2048;

/// Output of an ordering run.
///
/// `rd[i]` and `rd_smoothed[i]` belong to the point emitted at position `i`,
/// i.e. to `order[i]`. `None` marks an UNDEFINED reachability: the point
/// opened a new connected region.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityPlot {
    pub order: Vec<usize>,
    pub rd: Vec<Option<f64>>,
    pub rd_smoothed: Vec<f64>,
}

impl ReachabilityPlot {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_smoothed(&self) -> bool {
        self.rd_smoothed.len() == self.rd.len()
    }
}

type Seeds = BTreeSet<(OrderedFloat<f64>, usize)>;

// Lowers `rd[q]` to `candidate` and keeps the seed set in sync. Ties in the
// seed set break on point index.
#[inline]
fn lower_seed(seeds: &mut Seeds, rd: &mut [Option<f64>], q: usize, candidate: f64) {
    match rd[q] {
        Some(old) if old <= candidate => {}
        Some(old) => {
            seeds.remove(&(OrderedFloat(old), q));
            seeds.insert((OrderedFloat(candidate), q));
            rd[q] = Some(candidate);
        }
        None => {
            seeds.insert((OrderedFloat(candidate), q));
            rd[q] = Some(candidate);
        }
    }
}

// Unvisited points in arbitrary order with O(1) removal.
struct Pending {
    items: Vec<usize>,
    slot: Vec<usize>,
}

impl Pending {
    fn new(n: usize) -> Self {
        Self {
            items: (0..n).collect(),
            slot: (0..n).collect(),
        }
    }

    fn remove(&mut self, p: usize) {
        let at = self.slot[p];
        let last = *self.items.last().expect("non-empty");
        self.items.swap_remove(at);
        if last != p {
            self.slot[last] = at;
        }
    }
}

fn scan<O: DistanceOracle>(
    oracle: &O,
    from: usize,
    candidates: &[usize],
    epsilon: f64,
    exec: Execution,
) -> Vec<(usize, f64)> {
    let exec = if candidates.len() < PARALLEL_SCAN_MIN {
        Execution::Sequential
    } else {
        exec
    };
    exec.filter_map(candidates, |&q| {
        let d = oracle.distance(from, q);
        (d <= epsilon).then_some((q, d))
    })
}

/// Simplified reachability ordering.
///
/// When a point is emitted, every unvisited point within `epsilon` has its
/// reachability lowered to its distance from the emitted point. The seed
/// with the smallest reachability (lowest index on ties) is emitted next;
/// when no seed remains, the lowest-index unvisited point starts a new
/// region with UNDEFINED reachability.
///
/// Each emitted point is compared only against still-unvisited points, so
/// the oracle is called exactly `n(n-1)/2` times.
pub fn ss_optics_order<O: DistanceOracle>(oracle: &O, params: &SsOpticsParams) -> ReachabilityPlot {
    ss_optics_order_with(oracle, params, Execution::default())
}

pub fn ss_optics_order_with<O: DistanceOracle>(
    oracle: &O,
    params: &SsOpticsParams,
    exec: Execution,
) -> ReachabilityPlot {
    let n = oracle.len();
    let epsilon = params.epsilon();
    let mut visited = vec![false; n];
    let mut rd: Vec<Option<f64>> = vec![None; n];
    let mut pending = Pending::new(n);
    let mut seeds = Seeds::new();
    let mut order = Vec::with_capacity(n);
    let mut plot_rd = Vec::with_capacity(n);
    let mut next_start = 0;

    loop {
        let point = match seeds.pop_first() {
            Some((_, p)) => p,
            None => {
                while next_start < n && visited[next_start] {
                    next_start += 1;
                }
                if next_start == n {
                    break;
                }
                next_start
            }
        };
        visited[point] = true;
        pending.remove(point);
        order.push(point);
        plot_rd.push(rd[point]);

        for (q, d) in scan(oracle, point, &pending.items, epsilon, exec) {
            lower_seed(&mut seeds, &mut rd, q, d);
        }
    }

    ReachabilityPlot {
        order,
        rd: plot_rd,
        rd_smoothed: Vec::new(),
    }
}

/// Classical OPTICS ordering with core distances.
///
/// The neighbourhood of a point includes the point itself, so the core
/// distance is the distance to the `min_pts`-th closest point counting the
/// point as the first. Only core points update their neighbours, with
/// `max(core_distance, distance)`.
pub fn optics_order<O: DistanceOracle>(oracle: &O, params: &OpticsParams) -> ReachabilityPlot {
    optics_order_with(oracle, params, Execution::default())
}

pub fn optics_order_with<O: DistanceOracle>(
    oracle: &O,
    params: &OpticsParams,
    exec: Execution,
) -> ReachabilityPlot {
    let n = oracle.len();
    let all: Vec<usize> = (0..n).collect();
    let mut visited = vec![false; n];
    let mut rd: Vec<Option<f64>> = vec![None; n];
    let mut seeds = Seeds::new();
    let mut order = Vec::with_capacity(n);
    let mut plot_rd = Vec::with_capacity(n);
    let mut next_start = 0;

    loop {
        let point = match seeds.pop_first() {
            Some((_, p)) => p,
            None => {
                while next_start < n && visited[next_start] {
                    next_start += 1;
                }
                if next_start == n {
                    break;
                }
                next_start
            }
        };
        visited[point] = true;
        order.push(point);
        plot_rd.push(rd[point]);

        let neighbours = scan(oracle, point, &all, params.epsilon, exec);
        let Some(core) = core_distance(&neighbours, params.min_pts) else {
            continue;
        };
        for (q, d) in neighbours {
            if !visited[q] {
                lower_seed(&mut seeds, &mut rd, q, core.max(d));
            }
        }
    }

    ReachabilityPlot {
        order,
        rd: plot_rd,
        rd_smoothed: Vec::new(),
    }
}

fn core_distance(neighbours: &[(usize, f64)], min_pts: usize) -> Option<f64> {
    if neighbours.len() < min_pts {
        return None;
    }
    let mut d: Vec<f64> = neighbours.iter().map(|&(_, d)| d).collect();
    let (_, kth, _) = d.select_nth_unstable_by(min_pts - 1, f64::total_cmp);
    Some(*kth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::oracle::{CountingOracle, EuclideanPoints};
    use crate::clustering::TauRule;

    fn ss(eps: f64) -> SsOpticsParams {
        SsOpticsParams::new(eps, 3, TauRule::default()).unwrap()
    }

    #[test]
    fn six_point_trace() {
        let pts = EuclideanPoints::from_scalars(&[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let plot = ss_optics_order(&pts, &ss(3.0));
        assert_eq!(plot.order, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(plot.rd, vec![None, Some(1.0), Some(1.0), None, Some(1.0), Some(1.0)]);
    }

    #[test]
    fn seed_order_follows_reachability_not_index() {
        // From 0: seeds 2 (d=1) and 1 (d=2.5). 2 pops first.
        let pts = EuclideanPoints::from_scalars(&[0.0, 2.5, 1.0]);
        let plot = ss_optics_order(&pts, &ss(3.0));
        assert_eq!(plot.order, vec![0, 2, 1]);
        assert_eq!(plot.rd, vec![None, Some(1.0), Some(1.5)]);
    }

    #[test]
    fn ties_pop_lowest_index() {
        let pts = EuclideanPoints::from_scalars(&[0.0, 1.0, -1.0]);
        let plot = ss_optics_order(&pts, &ss(3.0));
        assert_eq!(plot.order, vec![0, 1, 2]);
        assert_eq!(plot.rd[2], Some(1.0));
    }

    #[test]
    fn trivial_inputs() {
        let plot = ss_optics_order(&EuclideanPoints::new(vec![]), &ss(1.0));
        assert!(plot.is_empty());
        let plot = ss_optics_order(&EuclideanPoints::from_scalars(&[4.0]), &ss(1.0));
        assert_eq!(plot.order, vec![0]);
        assert_eq!(plot.rd, vec![None]);
        let plot = ss_optics_order(&EuclideanPoints::from_scalars(&[4.0, 4.0]), &ss(1.0));
        assert_eq!(plot.rd, vec![None, Some(0.0)]);
    }

    #[test]
    fn call_count_is_exact_half_square() {
        let xs: Vec<f64> = (0..97).map(|i| (i * 7 % 31) as f64).collect();
        let pts = EuclideanPoints::from_scalars(&xs);
        let counted = CountingOracle::new(&pts);
        ss_optics_order_with(&counted, &ss(2.0), Execution::Sequential);
        assert_eq!(counted.calls(), 97 * 96 / 2);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let xs: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 1009) as f64 / 10.0).collect();
        let pts = EuclideanPoints::from_scalars(&xs);
        let a = ss_optics_order_with(&pts, &ss(0.5), Execution::Sequential);
        let b = ss_optics_order_with(&pts, &ss(0.5), Execution::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn optics_six_points() {
        let pts = EuclideanPoints::from_scalars(&[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let plot = optics_order(&pts, &OpticsParams::new(3.0, 2).unwrap());
        assert_eq!(plot.order, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(plot.rd, vec![None, Some(1.0), Some(1.0), None, Some(1.0), Some(1.0)]);
    }

    #[test]
    fn optics_non_core_points_do_not_expand() {
        // with min_pts=4, no point has four points within 1.5
        let pts = EuclideanPoints::from_scalars(&[0.0, 1.0, 2.0, 3.0]);
        let plot = optics_order(&pts, &OpticsParams::new(1.5, 4).unwrap());
        assert!(plot.rd.iter().all(Option::is_none));
    }
}
