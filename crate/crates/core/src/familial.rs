//! The granularity-extended law `L(N, D, G) = (E + A·N^−α + B·D^−β)·G^γ`.
//!
//! Fitting works on the log-form parameter vector `(e, a, b, α, β, γ)` with
//! `E = exp(e)`, `A = exp(a)`, `B = exp(b)`, so the log prediction is
//! `LSE(e, a − α·ln N, b − β·ln D) + γ·ln G` and the objective is a sum of
//! Huber penalties on log-residuals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::RunRecord;
use crate::error::{Error, Result};
use crate::multistart::{self, StartRecord};
use crate::numerics::{log_sum_exp, lse3_with_weights, Huber, OptimizerOptions, Penalty};

/// Log-form parameter vector, ordered `(e, a, b, alpha, beta, gamma)`.
pub type LogParams = [f64; 6];

pub const PARAM_NAMES: [&str; 6] = ["e", "a", "b", "alpha", "beta", "gamma"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilialParams {
    pub e: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FamilialParams {
    /// Builds from linear coefficients; `E`, `A`, `B` must be positive.
    pub fn from_linear(e_lin: f64, a_lin: f64, b_lin: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("E", e_lin), ("A", a_lin), ("B", b_lin)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite")));
            }
        }
        Ok(Self {
            e: e_lin.ln(),
            a: a_lin.ln(),
            b: b_lin.ln(),
            alpha,
            beta,
            gamma,
        })
    }

    pub fn from_log(p: LogParams) -> Self {
        Self {
            e: p[0],
            a: p[1],
            b: p[2],
            alpha: p[3],
            beta: p[4],
            gamma: p[5],
        }
    }

    pub fn to_log(&self) -> LogParams {
        [self.e, self.a, self.b, self.alpha, self.beta, self.gamma]
    }

    /// Irreducible loss `E`.
    pub fn floor(&self) -> f64 {
        self.e.exp()
    }

    /// Model-size coefficient `A`.
    pub fn size_coefficient(&self) -> f64 {
        self.a.exp()
    }

    /// Data coefficient `B`.
    pub fn data_coefficient(&self) -> f64 {
        self.b.exp()
    }

    /// The fitted law of the reference experiment group:
    /// E = 1.0059, A = 403.4289, α = 0.2982, B = 2980.058, β = 0.3412, γ = 0.0333.
    pub fn reference() -> Self {
        Self::from_linear(1.0059, 403.4289, 2980.058, 0.2982, 0.3412, 0.0333).expect("valid constants")
    }
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ParamsRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    E: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    A: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    B: Option<f64>,
    alpha: f64,
    beta: f64,
    gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
}

impl Serialize for FamilialParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr {
            E: Some(self.floor()),
            A: Some(self.size_coefficient()),
            B: Some(self.data_coefficient()),
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            e: Some(self.e),
            a: Some(self.a),
            b: Some(self.b),
        }
        .serialize(s)
    }
}

/// Accepts either the log form (`e`, `a`, `b`) or the linear form (`E`, `A`,
/// `B`); the log form wins when both are present.
impl<'de> Deserialize<'de> for FamilialParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ParamsRepr::deserialize(d)?;
        let coef = |log: Option<f64>, lin: Option<f64>, name: &str| match (log, lin) {
            (Some(l), _) if l.is_finite() => Ok(l),
            (None, Some(v)) if v > 0.0 && v.is_finite() => Ok(v.ln()),
            _ => Err(D::Error::custom(format!("{name} must be given as a positive linear or finite log value"))),
        };
        let p = FamilialParams {
            e: coef(r.e, r.E, "E")?,
            a: coef(r.a, r.A, "A")?,
            b: coef(r.b, r.B, "B")?,
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
        };
        if p.to_log().iter().any(|v| !v.is_finite()) {
            return Err(D::Error::custom("parameters must be finite"));
        }
        Ok(p)
    }
}

fn check_inputs(n_params: f64, tokens: f64, granularity: u32) -> Result<()> {
    if !(n_params > 0.0) || !n_params.is_finite() {
        return Err(Error::domain(format!("n_params must be positive, got {n_params}")));
    }
    if !(tokens > 0.0) || !tokens.is_finite() {
        return Err(Error::domain(format!("tokens must be positive, got {tokens}")));
    }
    if granularity < 1 {
        return Err(Error::domain("granularity must be at least 1"));
    }
    Ok(())
}

pub fn predict_loss(params: &FamilialParams, n_params: f64, tokens: f64, granularity: u32) -> Result<f64> {
    check_inputs(n_params, tokens, granularity)?;
    Ok(predict_unchecked(params, n_params, tokens, granularity))
}

#[inline]
fn predict_unchecked(p: &FamilialParams, n: f64, d: f64, g: u32) -> f64 {
    let base = p.floor() + p.size_coefficient() * n.powf(-p.alpha) + p.data_coefficient() * d.powf(-p.beta);
    if g == 1 {
        base
    } else {
        base * f64::from(g).powf(p.gamma)
    }
}

/// `LSE(e, a − α·ln N, b − β·ln D) + γ·ln G`.
pub fn predict_log_loss(log_params: &LogParams, n_params: f64, tokens: f64, granularity: u32) -> Result<f64> {
    check_inputs(n_params, tokens, granularity)?;
    let [e, a, b, alpha, beta, gamma] = *log_params;
    let lse = log_sum_exp(&[e, a - alpha * n_params.ln(), b - beta * tokens.ln()])?;
    let g_term = if granularity == 1 { 0.0 } else { gamma * f64::from(granularity).ln() };
    Ok(lse + g_term)
}

/// Records reduced to the logs the objective needs.
#[derive(Debug, Clone, Copy)]
struct LogObs {
    ln_n: f64,
    ln_d: f64,
    ln_g: f64,
    ln_loss: f64,
}

fn validate_records(records: &[RunRecord]) -> Result<Vec<LogObs>> {
    if records.is_empty() {
        return Err(Error::domain("objective needs at least one record"));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.validate().map_err(|e| Error::domain(format!("record {i}: {e}")))?;
            Ok(LogObs {
                ln_n: r.n_params.ln(),
                ln_d: r.tokens.ln(),
                ln_g: f64::from(r.granularity).ln(),
                ln_loss: r.loss.ln(),
            })
        })
        .collect()
}

struct Objective {
    obs: Vec<LogObs>,
    penalty: Penalty,
}

impl Objective {
    #[inline]
    fn residual(&self, o: &LogObs, p: &[f64]) -> (f64, [f64; 3]) {
        let (lse, w) = lse3_with_weights([p[0], p[1] - p[3] * o.ln_n, p[2] - p[4] * o.ln_d]);
        (lse + p[5] * o.ln_g - o.ln_loss, w)
    }

    fn value(&self, p: &[f64]) -> f64 {
        self.obs.iter().map(|o| self.penalty.loss(self.residual(o, p).0)).sum()
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; 6];
        for o in &self.obs {
            let (r, w) = self.residual(o, p);
            let psi = self.penalty.derivative(r);
            g[0] += psi * w[0];
            g[1] += psi * w[1];
            g[2] += psi * w[2];
            g[3] -= psi * w[1] * o.ln_n;
            g[4] -= psi * w[2] * o.ln_d;
            g[5] += psi * o.ln_g;
        }
        g
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        self.obs.iter().map(|o| self.residual(o, p).0).collect()
    }
}

/// `Σ_i Huber_δ(log L̂_i − log L_i)`.
pub fn objective(log_params: &LogParams, records: &[RunRecord], huber_delta: f64) -> Result<f64> {
    let obj = Objective {
        obs: validate_records(records)?,
        penalty: Penalty::Huber(Huber::new(huber_delta)?),
    };
    Ok(obj.value(log_params))
}

/// Analytic gradient of [`objective`] with respect to `(e, a, b, α, β, γ)`.
pub fn objective_gradient(log_params: &LogParams, records: &[RunRecord], huber_delta: f64) -> Result<LogParams> {
    let obj = Objective {
        obs: validate_records(records)?,
        penalty: Penalty::Huber(Huber::new(huber_delta)?),
    };
    let g = obj.gradient(log_params);
    Ok([g[0], g[1], g[2], g[3], g[4], g[5]])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    Huber,
    /// Plain squared error; a non-robust control.
    Squared,
}

impl PenaltyKind {
    pub(crate) fn build(self, huber_delta: f64) -> Result<Penalty> {
        let huber = Huber::new(huber_delta)?;
        Ok(match self {
            PenaltyKind::Huber => Penalty::Huber(huber),
            PenaltyKind::Squared => Penalty::Squared,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub huber_delta: f64,
    pub penalty: PenaltyKind,
    pub grid_e: Vec<f64>,
    pub grid_a: Vec<f64>,
    pub grid_b: Vec<f64>,
    pub grid_alpha: Vec<f64>,
    pub grid_beta: Vec<f64>,
    pub grid_gamma: Vec<f64>,
    pub optimizer: OptimizerOptions,
    /// Cap on optimizer starts; larger grids are stratified-subsampled.
    pub max_starts: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let half_steps = multistart::stepped(0.0, 2.0, 0.5);
        Self {
            huber_delta: 1e-3,
            penalty: PenaltyKind::Huber,
            grid_e: multistart::stepped(-1.0, 1.0, 0.5),
            grid_a: multistart::stepped(0.5, 25.0, 4.9),
            grid_b: multistart::stepped(0.5, 25.0, 4.9),
            grid_alpha: half_steps.clone(),
            grid_beta: half_steps.clone(),
            grid_gamma: half_steps,
            optimizer: OptimizerOptions::default(),
            max_starts: Some(2000),
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Grids in log-parameter order.
    pub fn axes(&self) -> Vec<Vec<f64>> {
        vec![
            self.grid_e.clone(),
            self.grid_a.clone(),
            self.grid_b.clone(),
            self.grid_alpha.clone(),
            self.grid_beta.clone(),
            self.grid_gamma.clone(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub index: usize,
    pub log_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub best: FamilialParams,
    pub best_objective: f64,
    /// Index into `per_start` of the winning start.
    pub best_start: usize,
    pub per_start: Vec<StartRecord>,
    pub boundary_hit: BTreeMap<String, bool>,
    /// Parameters the record design cannot pin down.
    pub unidentifiable: Vec<String>,
    pub warnings: Vec<String>,
    pub residuals: Vec<Residual>,
    /// The published reference law, echoed so reports state which `B` they compare against.
    pub reference_params: FamilialParams,
    pub config: FitConfig,
}

fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Multi-start fit over the configured grid; the lowest final objective wins.
pub fn fit(records: &[RunRecord], config: &FitConfig) -> Result<FitReport> {
    config.optimizer.validate()?;
    let obj = Objective {
        obs: validate_records(records)?,
        penalty: config.penalty.build(config.huber_delta)?,
    };

    let mut warnings = Vec::new();
    let mut unidentifiable = Vec::new();
    if records.len() < 7 {
        warnings.push(format!(
            "only {} records; at least 7 are needed to identify six parameters",
            records.len()
        ));
    }
    let axes_distinct = [
        ("n_params", distinct_count(records.iter().map(|r| r.n_params)), ["alpha", "a"]),
        ("tokens", distinct_count(records.iter().map(|r| r.tokens)), ["beta", "b"]),
    ];
    for (axis, count, params) in axes_distinct {
        if count < 2 {
            warnings.push(format!("degenerate design: a single distinct {axis} value"));
            unidentifiable.extend(params.iter().map(|p| p.to_string()));
        }
    }
    if distinct_count(records.iter().map(|r| f64::from(r.granularity))) < 2 {
        warnings.push("degenerate design: a single distinct granularity value".into());
        unidentifiable.push("gamma".into());
    }

    let axes = config.axes();
    let starts = multistart::grid_starts(&axes, config.max_starts, config.seed)?;
    let per_start = multistart::run_starts(starts, |p| obj.value(p), |p| obj.gradient(p), &config.optimizer);
    let best_start = multistart::best_or_fail(&per_start)?;
    let winner = &per_start[best_start];
    let point = &winner.final_point;
    let best = FamilialParams::from_log([point[0], point[1], point[2], point[3], point[4], point[5]]);

    let boundary_hit = PARAM_NAMES
        .iter()
        .zip(multistart::boundary_hits(&axes, &winner.start, point))
        .map(|(n, hit)| (n.to_string(), hit))
        .collect();
    let residuals = obj
        .residuals(point)
        .into_iter()
        .enumerate()
        .map(|(index, log_residual)| Residual { index, log_residual })
        .collect();

    Ok(FitReport {
        best,
        best_objective: winner.objective,
        best_start,
        per_start,
        boundary_hit,
        unidentifiable,
        warnings,
        residuals,
        reference_params: FamilialParams::reference(),
        config: config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "tokens", rename_all = "snake_case")]
pub enum TokenSolution {
    Feasible(f64),
    /// The target sits at or below the loss reachable with unlimited data at this size.
    Infeasible,
}

impl TokenSolution {
    pub fn tokens(&self) -> Option<f64> {
        match self {
            TokenSolution::Feasible(d) => Some(*d),
            TokenSolution::Infeasible => None,
        }
    }
}

/// Tokens needed to reach `target_loss` at fixed `N` and `G`:
/// `D = (B / (target·G^−γ − E − A·N^−α))^(1/β)`.
pub fn invert_for_tokens(
    params: &FamilialParams,
    target_loss: f64,
    n_params: f64,
    granularity: u32,
) -> Result<TokenSolution> {
    if !(target_loss > 0.0) || !target_loss.is_finite() {
        return Err(Error::domain(format!("target loss must be positive, got {target_loss}")));
    }
    check_inputs(n_params, 1.0, granularity)?;
    if !(params.beta > 0.0) {
        return Err(Error::domain("inverting for tokens requires beta > 0"));
    }
    let scaled = if granularity == 1 {
        target_loss
    } else {
        target_loss * f64::from(granularity).powf(-params.gamma)
    };
    let floor = params.floor() + params.size_coefficient() * n_params.powf(-params.alpha);
    let remainder = scaled - floor;
    // Within rounding of the floor the required D is unbounded.
    if remainder <= 4.0 * f64::EPSILON * scaled {
        return Ok(TokenSolution::Infeasible);
    }
    let d = (params.data_coefficient() / remainder).powf(1.0 / params.beta);
    Ok(if d.is_finite() {
        TokenSolution::Feasible(d)
    } else {
        TokenSolution::Infeasible
    })
}
