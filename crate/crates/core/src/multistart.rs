//! Grid-initialized multi-start minimization shared by the familial and
//! branch fits.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StartDiagnostic};
use crate::numerics::{minimize, MinimizeResult, OptimizerOptions, TerminationReason};

/// Outcome of a single optimizer start, as recorded in fit reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub final_point: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination_reason: TerminationReason,
}

impl StartRecord {
    fn new(start: Vec<f64>, res: MinimizeResult) -> Self {
        Self {
            start,
            final_point: res.point,
            objective: res.value,
            converged: res.converged,
            iterations: res.iterations,
            termination_reason: res.termination_reason,
        }
    }
}

/// Number of points in the full Cartesian grid, saturating on overflow.
pub fn grid_size(axes: &[Vec<f64>]) -> usize {
    axes.iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .unwrap_or(usize::MAX)
}

fn grid_point(axes: &[Vec<f64>], mut index: usize) -> Vec<f64> {
    let mut point = vec![0.0; axes.len()];
    for (slot, axis) in point.iter_mut().zip(axes).rev() {
        *slot = axis[index % axis.len()];
        index /= axis.len();
    }
    point
}

/// Start points in lexicographic grid order. When `max_starts` is below the
/// grid size, the flattened index range is cut into `max_starts` equal strata
/// and one seeded draw is taken from each.
pub fn grid_starts(axes: &[Vec<f64>], max_starts: Option<usize>, seed: u64) -> Result<Vec<Vec<f64>>> {
    if axes.is_empty() || axes.iter().any(Vec::is_empty) {
        return Err(Error::domain("every initialization grid must be non-empty"));
    }
    if axes.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("initialization grids must contain finite values"));
    }
    let total = grid_size(axes);
    match max_starts {
        Some(0) => Err(Error::domain("max_starts must be at least 1")),
        Some(cap) if cap < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (total, cap) = (total as u128, cap as u128);
            Ok((0..cap)
                .map(|k| {
                    let lo = k * total / cap;
                    let hi = (k + 1) * total / cap;
                    let idx = rng.random_range(lo..hi);
                    grid_point(axes, idx as usize)
                })
                .collect())
        }
        _ => Ok((0..total).map(|i| grid_point(axes, i)).collect()),
    }
}

/// Runs `minimize` from each start; output order matches `starts` regardless
/// of how many worker threads execute it.
pub fn run_starts<F, G>(starts: Vec<Vec<f64>>, objective: F, gradient: G, options: &OptimizerOptions) -> Vec<StartRecord>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    starts
        .into_par_iter()
        .map(|start| {
            let res = minimize(&objective, &gradient, &start, options);
            StartRecord::new(start, res)
        })
        .collect()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Index of the lowest finite final objective; ties go to the
/// lexicographically smallest start point.
pub fn select_best(records: &[StartRecord]) -> Option<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.objective.is_finite() && r.final_point.iter().all(|v| v.is_finite()))
        .min_by(|(_, a), (_, b)| {
            a.objective
                .total_cmp(&b.objective)
                .then_with(|| lexicographic(&a.start, &b.start))
        })
        .map(|(i, _)| i)
}

/// Lowest-objective record, or a fit error listing every failed start.
pub fn best_or_fail(records: &[StartRecord]) -> Result<usize> {
    select_best(records).ok_or_else(|| Error::Fit {
        message: "no optimizer start produced a finite objective".into(),
        diagnostics: records
            .iter()
            .map(|r| StartDiagnostic {
                start: r.start.clone(),
                reason: format!("{:?} (objective {})", r.termination_reason, r.objective),
            })
            .collect(),
    })
}

/// Per-axis boundary flag: the winning start sat at a grid extreme and the
/// fitted value ended up beyond every interior grid value on that side.
/// Axes with fewer than two grid values are never flagged.
pub fn boundary_hits(axes: &[Vec<f64>], start: &[f64], fitted: &[f64]) -> Vec<bool> {
    axes.iter()
        .zip(start.iter().zip(fitted))
        .map(|(axis, (&s, &v))| {
            if axis.len() < 2 {
                return false;
            }
            let mut sorted = axis.clone();
            sorted.sort_by(f64::total_cmp);
            let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
            let interior = &sorted[1..sorted.len() - 1];
            if s == lo {
                interior.iter().all(|&g| v < g)
            } else if s == hi {
                interior.iter().all(|&g| v > g)
            } else {
                false
            }
        })
        .collect()
}

/// Evenly spaced grid `start, start + step, …` up to and including `end`
/// (within half a step of rounding).
pub fn stepped(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 0.5).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_is_lexicographic() {
        let axes = vec![vec![0.0, 1.0], vec![10.0, 20.0, 30.0]];
        let starts = grid_starts(&axes, None, 0).unwrap();
        assert_eq!(starts.len(), 6);
        assert_eq!(starts[0], vec![0.0, 10.0]);
        assert_eq!(starts[1], vec![0.0, 20.0]);
        assert_eq!(starts[5], vec![1.0, 30.0]);
    }

    #[test]
    fn subsample_is_stratified_and_deterministic() {
        let axes = vec![stepped(0.0, 9.0, 1.0), stepped(0.0, 9.0, 1.0)];
        let a = grid_starts(&axes, Some(10), 3).unwrap();
        let b = grid_starts(&axes, Some(10), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        // stratum k covers flattened indices [10k, 10k+10): first coordinate is k.
        for (k, p) in a.iter().enumerate() {
            assert_eq!(p[0], k as f64);
        }
        let c = grid_starts(&axes, Some(10), 4).unwrap();
        assert_ne!(a, c);
        assert_eq!(grid_starts(&axes, Some(1000), 3).unwrap().len(), 100);
        assert!(grid_starts(&axes, Some(0), 3).is_err());
        assert!(grid_starts(&[vec![]], None, 0).is_err());
    }

    #[test]
    fn stepped_grids() {
        assert_eq!(stepped(0.0, 2.0, 0.5), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let ab = stepped(0.5, 25.0, 4.9);
        assert_eq!(ab.len(), 6);
        assert!((ab[5] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn selection_breaks_ties_lexicographically() {
        let mk = |start: Vec<f64>, objective: f64| StartRecord {
            final_point: start.clone(),
            start,
            objective,
            converged: true,
            iterations: 1,
            termination_reason: TerminationReason::GradientTol,
        };
        let recs = vec![mk(vec![1.0, 0.0], 0.5), mk(vec![0.0, 2.0], 0.5), mk(vec![0.0, 1.0], f64::NAN)];
        assert_eq!(select_best(&recs), Some(1));
        assert!(best_or_fail(&[mk(vec![0.0], f64::INFINITY)]).is_err());
    }

    #[test]
    fn boundary_flags() {
        let axes = vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0], vec![5.0]];
        let hits = boundary_hits(&axes, &[0.0, 1.0, 5.0], &[-0.3, 9.0, 7.0]);
        assert_eq!(hits, vec![true, false, false]);
        let hits = boundary_hits(&axes, &[2.0, 2.0, 5.0], &[2.5, 0.5, 5.0]);
        assert_eq!(hits, vec![true, false, false]);
    }
}
