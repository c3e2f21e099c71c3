//! Analyses over a fitted familial law: compute-optimal frontier, isoloss
//! contours, IsoFLOP experiment plans and Efficiency Leverage sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::familial::{invert_for_tokens, predict_loss, FamilialParams, TokenSolution};
use crate::flops::{
    approx_params_with, branch_sizes, tokens_for_budget, ArchConfig, ComputeBudget, CountingMode, SizePolicy,
    FLOPS_PER_PARAM_TOKEN,
};

/// Model sizes searched for the compute-optimal allocation.
pub const FRONTIER_BRACKET: (f64, f64) = (1e6, 1e13);
const FRONTIER_SCAN_POINTS: usize = 64;
/// Golden-section stopping width in `ln N` (relative width in `N`).
const FRONTIER_LN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub flops: f64,
    pub n_opt: f64,
    pub d_opt: f64,
    pub loss_opt: f64,
    pub granularity: u32,
    /// The coarse scan's minimum sat on the edge of [`FRONTIER_BRACKET`].
    pub bracket_edge: bool,
}

/// `n` points spaced evenly in log between `lo` and `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`, stopping when
/// the bracket is narrower than `tol`. Returns `(x, f(x))`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    [(x1, f1), (x2, f2), (x, fx)]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("three candidates")
}

fn budget_of(flops: f64) -> Result<ComputeBudget> {
    ComputeBudget::new(flops, format!("C={flops:e}"))
}

fn check_granularity(g: u32) -> Result<()> {
    if g < 1 {
        return Err(Error::domain("granularity must be at least 1"));
    }
    Ok(())
}

/// Loss at model size `N` when the rest of the budget goes to tokens.
pub fn budget_loss(
    params: &FamilialParams,
    granularity: u32,
    flops: f64,
    n_params: f64,
    exit_overhead_fraction: f64,
) -> Result<f64> {
    let d = tokens_for_budget(&budget_of(flops)?, n_params, granularity, exit_overhead_fraction)?;
    predict_loss(params, n_params, d, granularity)
}

/// Compute-optimal model size for a single budget.
pub fn frontier_point(
    params: &FamilialParams,
    granularity: u32,
    flops: f64,
    exit_overhead_fraction: f64,
) -> Result<FrontierPoint> {
    check_granularity(granularity)?;
    let budget = budget_of(flops)?;
    // Validates κ once; the closure below can then evaluate without errors.
    tokens_for_budget(&budget, 1.0, granularity, exit_overhead_fraction)?;
    let loss_at = |ln_n: f64| {
        let n = ln_n.exp();
        let d = tokens_for_budget(&budget, n, granularity, exit_overhead_fraction).unwrap_or(f64::NAN);
        predict_loss(params, n, d, granularity).unwrap_or(f64::INFINITY)
    };

    let (lo, hi) = (FRONTIER_BRACKET.0.ln(), FRONTIER_BRACKET.1.ln());
    let step = (hi - lo) / (FRONTIER_SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..FRONTIER_SCAN_POINTS).map(|i| lo + step * i as f64).collect();
    let best = grid
        .iter()
        .map(|&x| loss_at(x))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    let bracket_edge = best == 0 || best == FRONTIER_SCAN_POINTS - 1;
    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(FRONTIER_SCAN_POINTS - 1)];

    let (ln_n, loss_opt) = golden_section(loss_at, left, right, FRONTIER_LN_TOL);
    if !loss_opt.is_finite() {
        return Err(Error::domain("frontier loss is not finite over the search bracket"));
    }
    let n_opt = ln_n.exp();
    Ok(FrontierPoint {
        flops,
        n_opt,
        d_opt: tokens_for_budget(&budget, n_opt, granularity, exit_overhead_fraction)?,
        loss_opt,
        granularity,
        bracket_edge,
    })
}

pub fn compute_frontier(
    params: &FamilialParams,
    granularity: u32,
    flops_values: &[f64],
    exit_overhead_fraction: f64,
) -> Result<Vec<FrontierPoint>> {
    if flops_values.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::domain("frontier budgets must be sorted ascending"));
    }
    flops_values
        .par_iter()
        .map(|&c| frontier_point(params, granularity, c, exit_overhead_fraction))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub n_params: f64,
    pub solution: TokenSolution,
}

/// Token counts reaching `target_loss` at each model size; sizes that cannot
/// reach it are marked infeasible.
pub fn isoloss_contour(
    params: &FamilialParams,
    granularity: u32,
    target_loss: f64,
    n_values: &[f64],
) -> Result<Vec<ContourPoint>> {
    n_values
        .iter()
        .map(|&n| {
            Ok(ContourPoint {
                n_params: n,
                solution: invert_for_tokens(params, target_loss, n, granularity)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub arch_name: String,
    pub n_params: u64,
    pub granularity: u32,
    pub tokens: f64,
}

/// Token budget for every configuration of one IsoFLOP group.
pub fn plan_isoflop_group(
    budget: &ComputeBudget,
    archs: &[ArchConfig],
    exit_overhead_fraction: f64,
    mode: CountingMode,
) -> Result<Vec<PlanRow>> {
    if archs.is_empty() {
        return Err(Error::domain("an IsoFLOP group needs at least one architecture"));
    }
    archs
        .iter()
        .map(|arch| {
            arch.validate()?;
            let n_params = approx_params_with(arch, mode);
            let granularity = arch.granularity();
            Ok(PlanRow {
                arch_name: arch.name.clone(),
                n_params,
                granularity,
                tokens: tokens_for_budget(budget, n_params as f64, granularity, exit_overhead_fraction)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ELPoint {
    pub flops: f64,
    pub granularity: u32,
    pub dense_avg_loss: f64,
    pub familial_loss: f64,
    pub el: f64,
    /// Compute-optimal family size at this budget.
    pub n_familial: f64,
    pub d_familial: f64,
    /// Sizes of the dense baselines, shallowest exit first.
    pub dense_sizes: Vec<f64>,
    /// Common token count of every dense baseline.
    pub dense_tokens: f64,
    pub bracket_edge: bool,
}

/// Dense baseline sizes for a family of size `n_family`. An explicit list is
/// read as relative sizes and rescaled so its last entry equals `n_family`.
fn dense_sizes(n_family: f64, granularity: u32, policy: &SizePolicy) -> Result<Vec<f64>> {
    match policy {
        SizePolicy::Proportional => branch_sizes(n_family, granularity, policy),
        SizePolicy::Explicit(list) => {
            let last = *list
                .last()
                .ok_or_else(|| Error::domain("explicit size list is empty"))?;
            if !(last > 0.0) {
                return Err(Error::domain("explicit sizes must be positive"));
            }
            let mut scaled: Vec<f64> = list.iter().map(|s| s / last * n_family).collect();
            *scaled.last_mut().expect("non-empty") = n_family;
            branch_sizes(n_family, granularity, &SizePolicy::Explicit(scaled))
        }
    }
}

/// Efficiency Leverage at one budget: average loss of `G` independently
/// trained dense models over the loss of the compute-optimal family.
///
/// The dense models take the sizes from `size_policy` applied to the family
/// size and share one token count `C / (6·ΣN_g)`, so together they spend
/// exactly the family's budget. Dense losses come from the law at `G = 1`.
pub fn efficiency_leverage(
    fam_params: &FamilialParams,
    granularity: u32,
    flops: f64,
    exit_overhead_fraction: f64,
    size_policy: &SizePolicy,
) -> Result<ELPoint> {
    let fp = frontier_point(fam_params, granularity, flops, exit_overhead_fraction)?;
    let familial_loss = predict_loss(fam_params, fp.n_opt, fp.d_opt, granularity)?;
    let sizes = dense_sizes(fp.n_opt, granularity, size_policy)?;
    let total_params: f64 = sizes.iter().sum();
    let dense_tokens = flops / (FLOPS_PER_PARAM_TOKEN * total_params);
    let dense_sum = sizes
        .iter()
        .map(|&n| predict_loss(fam_params, n, dense_tokens, 1))
        .sum::<Result<f64>>()?;
    let dense_avg_loss = dense_sum / sizes.len() as f64;
    Ok(ELPoint {
        flops,
        granularity,
        dense_avg_loss,
        familial_loss,
        el: dense_avg_loss / familial_loss,
        n_familial: fp.n_opt,
        d_familial: fp.d_opt,
        dense_sizes: sizes,
        dense_tokens,
        bracket_edge: fp.bracket_edge,
    })
}

/// Budgets for a sweep with `points_per_decade` log-spaced points per factor of ten.
pub fn sweep_budgets(lo: f64, hi: f64, points_per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(lo < hi) || !hi.is_finite() {
        return Err(Error::domain(format!("budget range must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
    }
    if points_per_decade == 0 {
        return Err(Error::domain("points_per_decade must be at least 1"));
    }
    let intervals = ((hi / lo).log10() * points_per_decade as f64).round() as usize;
    Ok(log_space(lo, hi, intervals + 1))
}

/// Efficiency Leverage over a log-spaced budget sweep, ordered by
/// `(granularity, flops)`.
pub fn el_curve(
    fam_params: &FamilialParams,
    granularities: &[u32],
    flops_range: (f64, f64),
    points_per_decade: usize,
    exit_overhead_fraction: f64,
    size_policy: &SizePolicy,
) -> Result<Vec<ELPoint>> {
    let budgets = sweep_budgets(flops_range.0, flops_range.1, points_per_decade)?;
    let mut gs = granularities.to_vec();
    gs.sort_unstable();
    let jobs: Vec<(u32, f64)> = gs.iter().flat_map(|&g| budgets.iter().map(move |&c| (g, c))).collect();
    jobs.par_iter()
        .map(|&(g, c)| efficiency_leverage(fam_params, g, c, exit_overhead_fraction, size_policy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_space_endpoints() {
        let v = log_space(1e19, 1e21, 3);
        assert_eq!(v[0], 1e19);
        assert_eq!(v[2], 1e21);
        assert!((v[1] / 1e20 - 1.0).abs() < 1e-12);
        assert_eq!(log_space(5.0, 9.0, 1), vec![5.0]);
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2), -2.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-9);
        assert!(fx < 1e-18);
    }

    #[test]
    fn frontier_local_optimality() {
        let p = FamilialParams::reference();
        for g in [1, 4] {
            for c in [1e19, 1e21] {
                let fp = frontier_point(&p, g, c, 0.05).unwrap();
                assert!(!fp.bracket_edge);
                for f in [0.9, 1.1] {
                    let l = budget_loss(&p, g, c, fp.n_opt * f, 0.05).unwrap();
                    assert!(l >= fp.loss_opt - 1e-9);
                }
                let d = tokens_for_budget(&budget_of(c).unwrap(), fp.n_opt, g, 0.05).unwrap();
                assert!((fp.d_opt / d - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frontier_edge_is_flagged() {
        // Data term negligible: larger models always win, pushing N* to the top edge.
        let p = FamilialParams::from_linear(1.0, 1e3, 1e-30, 0.5, 0.3, 0.0).unwrap();
        assert!(frontier_point(&p, 1, 1e20, 0.0).unwrap().bracket_edge);
    }

    #[test]
    fn frontier_requires_sorted_budgets() {
        let p = FamilialParams::reference();
        assert!(compute_frontier(&p, 1, &[1e20, 1e19], 0.0).is_err());
    }

    #[test]
    fn plan_reference_tables() {
        let budget = ComputeBudget::new(1e19, "g19").unwrap();
        let rows = plan_isoflop_group(
            &budget,
            &crate::flops::reference_architectures(),
            0.05,
            CountingMode::Gated,
        )
        .unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[6].granularity, 4);
        // fam-4B vs dense-4B: same size, three extra exits.
        assert_eq!(rows[3].n_params, rows[6].n_params);
        assert!(rows[6].tokens < rows[3].tokens);
        assert!(plan_isoflop_group(&budget, &[], 0.05, CountingMode::Gated).is_err());
    }

    #[test]
    fn el_degenerate_family_is_one() {
        let p = FamilialParams::reference();
        for c in [1e19, 3.3e20, 1e21] {
            let pt = efficiency_leverage(&p, 1, c, 0.05, &SizePolicy::Proportional).unwrap();
            assert_eq!(pt.el, 1.0);
        }
    }

    #[test]
    fn el_explicit_sizes_are_relative() {
        let p = FamilialParams::reference();
        let pt = efficiency_leverage(&p, 2, 1e20, 0.05, &SizePolicy::Explicit(vec![1.0, 4.0])).unwrap();
        assert!((pt.dense_sizes[0] * 4.0 / pt.n_familial - 1.0).abs() < 1e-12);
        assert_eq!(pt.dense_sizes[1], pt.n_familial);
    }

    #[test]
    fn sweep_cardinality() {
        let p = FamilialParams::reference();
        let pts = el_curve(&p, &[4, 3], (1e19, 1e21), 2, 0.05, &SizePolicy::Proportional).unwrap();
        assert_eq!(pts.len(), 2 * 5);
        assert!(pts[..5].iter().all(|x| x.granularity == 3));
        let single = el_curve(&p, &[3], (1e19, 1.2e19), 1, 0.05, &SizePolicy::Proportional).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(
            single[0],
            efficiency_leverage(&p, 3, 1e19, 0.05, &SizePolicy::Proportional).unwrap()
        );
        assert!(sweep_budgets(1e21, 1e19, 3).is_err());
    }
}
