//! Toolkit configuration: one TOML file describing an experiment group.
//!
//! Every section is optional and falls back to the module defaults.
//!
//! ```toml
//! seed = 7
//! kappa = 0.05
//!
//! [params]            # familial law used by eval / frontier / contour / el
//! E = 1.0059
//! A = 403.4289
//! B = 2980.058
//! alpha = 0.2982
//! beta = 0.3412
//! gamma = 0.0333
//!
//! [fit]
//! max_starts = 2000
//!
//! [[plan.archs]]
//! name = "dense-1B"
//! d_model = 1536
//! ffn_size = 4608
//! num_attention_heads = 12
//! n_layers = 19
//! exit_layers = []
//! ```

use serde::{Deserialize, Serialize};

use crate::branch::{BranchFitConfig, BranchParams};
use crate::error::{Error, Result};
use crate::familial::{FamilialParams, FitConfig};
use crate::flops::{reference_architectures, ArchConfig, CountingMode, SizePolicy, DEFAULT_EXIT_OVERHEAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub seed: u64,
    /// Per-exit fractional increase in per-token training FLOPs.
    pub kappa: f64,
    pub counting_mode: CountingMode,
    pub params: Option<FamilialParams>,
    pub branch_params: Option<BranchParams>,
    pub fit: FitConfig,
    pub branch_fit: BranchFitConfig,
    pub frontier: FrontierSection,
    pub contour: ContourSection,
    pub el: ElSection,
    pub plan: PlanSection,
    pub synth: SynthSection,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kappa: DEFAULT_EXIT_OVERHEAD,
            counting_mode: CountingMode::Gated,
            params: None,
            branch_params: None,
            fit: FitConfig::default(),
            branch_fit: BranchFitConfig::default(),
            frontier: FrontierSection::default(),
            contour: ContourSection::default(),
            el: ElSection::default(),
            plan: PlanSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierSection {
    pub granularity: u32,
    pub flops: Vec<f64>,
    /// Axis ranges for the emitted loss surface, `[lo, hi]` each.
    pub surface_n: [f64; 2],
    pub surface_d: [f64; 2],
    pub surface_points: usize,
}

impl Default for FrontierSection {
    fn default() -> Self {
        Self {
            granularity: 1,
            flops: vec![1e19, 3e19, 1e20, 3e20, 1e21],
            surface_n: [1e8, 1e11],
            surface_d: [1e9, 1e13],
            surface_points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourSection {
    pub granularity: u32,
    pub targets: Vec<f64>,
    pub n_values: Vec<f64>,
}

impl Default for ContourSection {
    fn default() -> Self {
        Self {
            granularity: 1,
            targets: vec![2.4, 2.6, 2.8, 3.0],
            n_values: crate::analysis::log_space(1e8, 1e11, 31),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElSection {
    pub granularities: Vec<u32>,
    pub flops_lo: f64,
    pub flops_hi: f64,
    pub points_per_decade: usize,
    pub size_policy: SizePolicy,
}

impl Default for ElSection {
    fn default() -> Self {
        Self {
            granularities: vec![3, 4, 5, 6],
            flops_lo: 1e19,
            flops_hi: 1e21,
            points_per_decade: 20,
            size_policy: SizePolicy::Proportional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub budgets: Vec<f64>,
    pub archs: Vec<ArchConfig>,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            budgets: vec![1e19],
            archs: reference_architectures(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    #[default]
    Runs,
    Branches,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub kind: SynthKind,
    pub noise_sigma: f64,
    pub budgets: Vec<f64>,
    pub n_values: Vec<f64>,
    pub granularities: Vec<u32>,
    /// `(P, Q)` pairs for branch synthesis.
    pub counts: Vec<(u32, u32)>,
    pub branch_sizes: Vec<f64>,
    pub tokens: Vec<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            kind: SynthKind::Runs,
            noise_sigma: 0.0,
            budgets: vec![1e19, 1e20, 1e21],
            n_values: crate::analysis::log_space(1e8, 1e10, 5),
            granularities: vec![1, 2, 3, 4],
            counts: vec![(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2), (1, 3)],
            branch_sizes: vec![5e8, 1e9, 2e9],
            tokens: crate::analysis::log_space(1e7, 1e10, 7),
        }
    }
}

impl ToolkitConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return bad(format!("kappa must be nonnegative, got {}", self.kappa));
        }
        if !(self.fit.huber_delta > 0.0) || !(self.branch_fit.huber_delta > 0.0) {
            return bad("huber_delta must be positive".into());
        }
        self.fit.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.branch_fit.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.fit.axes().iter().chain(self.branch_fit.axes().iter()).any(Vec::is_empty) {
            return bad("initialization grids must be non-empty".into());
        }
        if self.fit.max_starts == Some(0) || self.branch_fit.max_starts == Some(0) {
            return bad("max_starts must be at least 1".into());
        }
        if !(self.synth.noise_sigma >= 0.0) {
            return bad("synth.noise_sigma must be nonnegative".into());
        }
        if self.frontier.granularity == 0
            || self.contour.granularity == 0
            || self.el.granularities.contains(&0)
            || self.synth.granularities.contains(&0)
        {
            return bad("granularities must be at least 1".into());
        }
        if !(self.el.flops_lo > 0.0 && self.el.flops_lo < self.el.flops_hi) {
            return bad("el.flops_lo must be positive and below el.flops_hi".into());
        }
        if self.el.points_per_decade == 0 || self.frontier.surface_points < 2 {
            return bad("sweep point counts are too small".into());
        }
        let positive_lists = [
            ("frontier.flops", &self.frontier.flops),
            ("contour.targets", &self.contour.targets),
            ("contour.n_values", &self.contour.n_values),
            ("plan.budgets", &self.plan.budgets),
            ("synth.budgets", &self.synth.budgets),
            ("synth.n_values", &self.synth.n_values),
            ("synth.branch_sizes", &self.synth.branch_sizes),
            ("synth.tokens", &self.synth.tokens),
        ];
        for (name, list) in positive_lists {
            if list.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return bad(format!("{name} must contain positive finite values"));
            }
        }
        let ranges = [self.frontier.surface_n, self.frontier.surface_d];
        if ranges.iter().any(|[lo, hi]| !(*lo > 0.0 && lo < hi && hi.is_finite())) {
            return bad("surface ranges must satisfy 0 < lo < hi".into());
        }
        for arch in &self.plan.archs {
            arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(ToolkitConfig::from_toml_str("").unwrap(), ToolkitConfig::default());
    }

    #[test]
    fn doc_example_parses() {
        let text = r#"
seed = 7
kappa = 0.05

[params]
E = 1.0059
A = 403.4289
B = 2980.058
alpha = 0.2982
beta = 0.3412
gamma = 0.0333

[fit]
max_starts = 2000

[el]
size_policy = { explicit = [1.0, 2.0, 4.0] }
granularities = [3]

[[plan.archs]]
name = "dense-1B"
d_model = 1536
ffn_size = 4608
num_attention_heads = 12
n_layers = 19
exit_layers = []
"#;
        let cfg = ToolkitConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.plan.archs.len(), 1);
        assert_eq!(cfg.plan.archs[0].vocab_size, 128_000);
        assert_eq!(cfg.el.size_policy, SizePolicy::Explicit(vec![1.0, 2.0, 4.0]));
        let p = cfg.params.unwrap();
        assert!((p.floor() - 1.0059).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ToolkitConfig::from_toml_str("kappa = -1").is_err());
        assert!(ToolkitConfig::from_toml_str("unknown = 1").is_err());
        assert!(ToolkitConfig::from_toml_str("[fit]\nhuber_delta = 0").is_err());
        assert!(ToolkitConfig::from_toml_str("[fit]\ngrid_e = []").is_err());
        assert!(ToolkitConfig::from_toml_str("[el]\nflops_lo = 1e22").is_err());
        assert!(ToolkitConfig::from_toml_str("[[plan.archs]]\nname='x'\nd_model=10\nffn_size=1\nnum_attention_heads=3\nn_layers=2").is_err());
    }
}
