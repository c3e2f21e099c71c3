//! Branch-level law `L(P, Q, D) = L_dense + (α_b·P + β_b·Q)·(D_d/D)^a`.
//!
//! Fitting uses the vector `(ln α_b, ln β_b, ln D_d, a)`. The scale of
//! `D_d` trades off against the penalty weights, so reports carry the
//! identifiable products `α_b·D_d^a` and `β_b·D_d^a`, plus an equivalent
//! parameter set with `D_d` pinned to a reference token count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::BranchRecord;
use crate::error::{Error, Result};
use crate::familial::{PenaltyKind, Residual};
use crate::multistart::{self, StartRecord};
use crate::numerics::{OptimizerOptions, Penalty};

pub const PARAM_NAMES: [&str; 4] = ["log_alpha_b", "log_beta_b", "log_d_d", "a_exp"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    /// Penalty per upstream branch point.
    pub alpha_b: f64,
    /// Penalty per downstream branch point.
    pub beta_b: f64,
    /// Reference token scale.
    pub d_d: f64,
    pub a_exp: f64,
}

impl BranchParams {
    pub fn new(alpha_b: f64, beta_b: f64, d_d: f64, a_exp: f64) -> Result<Self> {
        if !(alpha_b >= 0.0) || !(beta_b >= 0.0) || !alpha_b.is_finite() || !beta_b.is_finite() {
            return Err(Error::domain("branch penalty weights must be nonnegative and finite"));
        }
        if !(d_d > 0.0) || !d_d.is_finite() || !a_exp.is_finite() {
            return Err(Error::domain("d_d must be positive and a_exp finite"));
        }
        Ok(Self {
            alpha_b,
            beta_b,
            d_d,
            a_exp,
        })
    }

    /// Published fit over the reference families:
    /// α_b = 10⁻³, β_b = 0.0397, D_d = 2.75·10⁶, a = 0.5734.
    pub fn reference() -> Self {
        Self {
            alpha_b: 1e-3,
            beta_b: 0.0397,
            d_d: 2.75e6,
            a_exp: 0.5734,
        }
    }

    /// Parameters equivalent to the fit vector `v` with `D_d` set to
    /// `reference_tokens`, evaluated in log space so a drifting `ln D_d`
    /// cannot overflow.
    fn from_vector_pinned(v: &[f64], reference_tokens: f64) -> Self {
        let shift = v[3] * (v[2] - reference_tokens.ln());
        Self {
            alpha_b: (v[0] + shift).exp(),
            beta_b: (v[1] + shift).exp(),
            d_d: reference_tokens,
            a_exp: v[3],
        }
    }

    /// `α_b·D_d^a` and `β_b·D_d^a`, invariant under rescaling `D_d`.
    pub fn canonical(&self) -> CanonicalProducts {
        let scale = self.d_d.powf(self.a_exp);
        CanonicalProducts {
            alpha_product: self.alpha_b * scale,
            beta_product: self.beta_b * scale,
            a_exp: self.a_exp,
        }
    }

    /// Equivalent parameters with `D_d` moved to `reference_tokens`.
    pub fn pinned_to(&self, reference_tokens: f64) -> Self {
        let factor = (self.d_d / reference_tokens).powf(self.a_exp);
        Self {
            alpha_b: self.alpha_b * factor,
            beta_b: self.beta_b * factor,
            d_d: reference_tokens,
            a_exp: self.a_exp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalProducts {
    pub alpha_product: f64,
    pub beta_product: f64,
    pub a_exp: f64,
}

/// `(α_b·P + β_b·Q)·(D_d/D)^a`.
pub fn branch_penalty(params: &BranchParams, upstream_count: u32, downstream_count: u32, tokens: f64) -> Result<f64> {
    if !(tokens > 0.0) || !tokens.is_finite() {
        return Err(Error::domain(format!("tokens must be positive, got {tokens}")));
    }
    if upstream_count == 0 && downstream_count == 0 {
        return Ok(0.0);
    }
    let weight = params.alpha_b * f64::from(upstream_count) + params.beta_b * f64::from(downstream_count);
    Ok(weight * (params.d_d / tokens).powf(params.a_exp))
}

pub fn predict_branch_loss(
    params: &BranchParams,
    dense_loss: f64,
    upstream_count: u32,
    downstream_count: u32,
    tokens: f64,
) -> Result<f64> {
    if !(dense_loss > 0.0) || !dense_loss.is_finite() {
        return Err(Error::domain(format!("dense loss must be positive, got {dense_loss}")));
    }
    let penalty = branch_penalty(params, upstream_count, downstream_count, tokens)?;
    if penalty == 0.0 {
        return Ok(dense_loss);
    }
    Ok(dense_loss + penalty)
}

/// Upstream-to-downstream penalty ratio `α_b/β_b`. The shared decay factor
/// cancels, so the ratio does not depend on the token count.
pub fn upstream_negligibility(params: &BranchParams) -> Result<f64> {
    if !(params.beta_b > 0.0) {
        return Err(Error::domain("upstream/downstream ratio undefined for beta_b = 0"));
    }
    Ok(params.alpha_b / params.beta_b)
}

#[derive(Debug, Clone, Copy)]
struct BranchObs {
    p: f64,
    q: f64,
    ln_d: f64,
    dense: f64,
    ln_loss: f64,
}

struct Objective {
    obs: Vec<BranchObs>,
    penalty: Penalty,
}

impl Objective {
    /// Log-residual and its partials with respect to the fit vector.
    #[inline]
    fn residual(&self, o: &BranchObs, v: &[f64]) -> (f64, [f64; 4]) {
        let (alpha, beta) = (v[0].exp(), v[1].exp());
        let log_ratio = v[2] - o.ln_d;
        let decay = (v[3] * log_ratio).exp();
        let up = alpha * o.p * decay;
        let down = beta * o.q * decay;
        let pen = up + down;
        let pred = o.dense + pen;
        let r = pred.ln() - o.ln_loss;
        (r, [up / pred, down / pred, pen * v[3] / pred, pen * log_ratio / pred])
    }

    fn value(&self, v: &[f64]) -> f64 {
        self.obs.iter().map(|o| self.penalty.loss(self.residual(o, v).0)).sum()
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; 4];
        for o in &self.obs {
            let (r, d) = self.residual(o, v);
            let psi = self.penalty.derivative(r);
            g.iter_mut().zip(d).for_each(|(gi, di)| *gi += psi * di);
        }
        g
    }
}

fn observations(records: &[BranchRecord]) -> Result<Vec<BranchObs>> {
    if records.is_empty() {
        return Err(Error::domain("branch fit needs at least one record"));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.validate().map_err(|e| Error::domain(format!("record {i}: {e}")))?;
            Ok(BranchObs {
                p: f64::from(r.upstream_count),
                q: f64::from(r.downstream_count),
                ln_d: r.tokens.ln(),
                dense: r.dense_loss,
                ln_loss: r.branch_loss.ln(),
            })
        })
        .collect()
}

/// Huber objective of the branch fit at `params`.
pub fn branch_objective(params: &BranchParams, records: &[BranchRecord], huber_delta: f64) -> Result<f64> {
    let obj = Objective {
        obs: observations(records)?,
        penalty: PenaltyKind::Huber.build(huber_delta)?,
    };
    Ok(obj.value(&fit_vector(params)))
}

/// Analytic gradient with respect to `(ln α_b, ln β_b, ln D_d, a)`.
pub fn branch_objective_gradient(vector: &[f64; 4], records: &[BranchRecord], huber_delta: f64) -> Result<[f64; 4]> {
    let obj = Objective {
        obs: observations(records)?,
        penalty: PenaltyKind::Huber.build(huber_delta)?,
    };
    let g = obj.gradient(vector);
    Ok([g[0], g[1], g[2], g[3]])
}

/// Huber objective as a function of the raw fit vector.
pub fn branch_objective_at(vector: &[f64; 4], records: &[BranchRecord], huber_delta: f64) -> Result<f64> {
    let obj = Objective {
        obs: observations(records)?,
        penalty: PenaltyKind::Huber.build(huber_delta)?,
    };
    Ok(obj.value(vector))
}

pub fn fit_vector(params: &BranchParams) -> [f64; 4] {
    [params.alpha_b.ln(), params.beta_b.ln(), params.d_d.ln(), params.a_exp]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchFitConfig {
    pub huber_delta: f64,
    pub penalty: PenaltyKind,
    pub grid_log_alpha: Vec<f64>,
    pub grid_log_beta: Vec<f64>,
    pub grid_log_dd: Vec<f64>,
    pub grid_a: Vec<f64>,
    pub optimizer: OptimizerOptions,
    pub max_starts: Option<usize>,
    pub seed: u64,
    /// Token count `D_d` is pinned to in the readable output; defaults to the
    /// smallest token count in the data.
    pub reference_tokens: Option<f64>,
}

impl Default for BranchFitConfig {
    fn default() -> Self {
        Self {
            huber_delta: 1e-3,
            penalty: PenaltyKind::Huber,
            grid_log_alpha: vec![-9.0, -6.0, -3.0, 0.0],
            grid_log_beta: vec![-9.0, -6.0, -3.0, 0.0],
            grid_log_dd: vec![10.0, 13.0, 16.0, 19.0, 22.0],
            grid_a: multistart::stepped(0.0, 2.0, 0.5),
            optimizer: OptimizerOptions::default(),
            max_starts: None,
            seed: 0,
            reference_tokens: None,
        }
    }
}

impl BranchFitConfig {
    pub fn axes(&self) -> Vec<Vec<f64>> {
        vec![
            self.grid_log_alpha.clone(),
            self.grid_log_beta.clone(),
            self.grid_log_dd.clone(),
            self.grid_a.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFitReport {
    /// Fitted law with `D_d` pinned to `reference_tokens`.
    pub best: BranchParams,
    pub canonical: CanonicalProducts,
    pub reference_tokens: f64,
    /// Raw optimizer solution `(ln α_b, ln β_b, ln D_d, a)`; only the
    /// products above are identifiable from it.
    pub fit_vector: [f64; 4],
    pub best_objective: f64,
    pub best_start: usize,
    pub per_start: Vec<StartRecord>,
    pub boundary_hit: BTreeMap<String, bool>,
    pub unidentifiable: Vec<String>,
    pub warnings: Vec<String>,
    pub residuals: Vec<Residual>,
    pub reference_params: BranchParams,
    pub config: BranchFitConfig,
}

pub fn fit_branch(records: &[BranchRecord], config: &BranchFitConfig) -> Result<BranchFitReport> {
    config.optimizer.validate()?;
    let obj = Objective {
        obs: observations(records)?,
        penalty: config.penalty.build(config.huber_delta)?,
    };

    let mut warnings = Vec::new();
    let mut unidentifiable = Vec::new();
    if records.len() < 4 {
        warnings.push(format!("only {} records; at least 4 are needed", records.len()));
    }
    if records.iter().all(|r| r.upstream_count == 0) {
        warnings.push("no record has upstream_count > 0".into());
        unidentifiable.push("alpha_b".to_string());
    }
    if records.iter().all(|r| r.downstream_count == 0) {
        warnings.push("no record has downstream_count > 0".into());
        unidentifiable.push("beta_b".to_string());
    }
    let mut tokens: Vec<f64> = records.iter().map(|r| r.tokens).collect();
    tokens.sort_by(f64::total_cmp);
    tokens.dedup();
    if tokens.len() < 2 {
        warnings.push("degenerate design: a single distinct token count".into());
        unidentifiable.extend(["d_d".to_string(), "a_exp".to_string()]);
    }
    let reference_tokens = match config.reference_tokens {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::domain(format!("reference_tokens must be positive, got {t}"))),
        None => tokens[0],
    };

    let axes = config.axes();
    let starts = multistart::grid_starts(&axes, config.max_starts, config.seed)?;
    let per_start = multistart::run_starts(starts, |v| obj.value(v), |v| obj.gradient(v), &config.optimizer);
    let best_start = multistart::best_or_fail(&per_start)?;
    let winner = &per_start[best_start];
    let v = &winner.final_point;
    let best = BranchParams::from_vector_pinned(v, reference_tokens);
    let canonical = CanonicalProducts {
        alpha_product: (v[0] + v[3] * v[2]).exp(),
        beta_product: (v[1] + v[3] * v[2]).exp(),
        a_exp: v[3],
    };

    let boundary_hit = PARAM_NAMES
        .iter()
        .zip(multistart::boundary_hits(&axes, &winner.start, &winner.final_point))
        .map(|(n, hit)| (n.to_string(), hit))
        .collect();
    let residuals = obj
        .obs
        .iter()
        .enumerate()
        .map(|(index, o)| Residual {
            index,
            log_residual: obj.residual(o, &winner.final_point).0,
        })
        .collect();

    Ok(BranchFitReport {
        best,
        canonical,
        reference_tokens,
        fit_vector: [v[0], v[1], v[2], v[3]],
        best_objective: winner.objective,
        best_start,
        per_start,
        boundary_hit,
        unidentifiable,
        warnings,
        residuals,
        reference_params: BranchParams::reference(),
        config: config.clone(),
    })
}
