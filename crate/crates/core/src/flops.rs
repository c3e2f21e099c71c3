//! Parameter and FLOPs accounting for dense and multi-exit configurations,
//! and the IsoFLOP token budget that follows from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary size assumed when a configuration does not state one.
pub const DEFAULT_VOCAB_SIZE: u64 = 128_000;

/// Default per-exit fractional increase in per-token training cost.
pub const DEFAULT_EXIT_OVERHEAD: f64 = 0.05;

/// Dense training cost per parameter per token (forward + backward).
pub const FLOPS_PER_PARAM_TOKEN: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub name: String,
    pub d_model: u64,
    pub ffn_size: u64,
    pub num_attention_heads: u64,
    pub n_layers: u64,
    #[serde(default = "default_vocab")]
    pub vocab_size: u64,
    /// Layers carrying an intermediate exit head; the final layer always has one.
    #[serde(default)]
    pub exit_layers: Vec<u64>,
}

fn default_vocab() -> u64 {
    DEFAULT_VOCAB_SIZE
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("ffn_size", self.ffn_size),
            ("num_attention_heads", self.num_attention_heads),
            ("n_layers", self.n_layers),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::domain(format!("{}: {field} must be positive", self.name)));
        }
        if self.d_model % self.num_attention_heads != 0 {
            return Err(Error::domain(format!(
                "{}: d_model {} is not divisible by num_attention_heads {}",
                self.name, self.d_model, self.num_attention_heads
            )));
        }
        if self.exit_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(format!("{}: exit_layers must be strictly increasing", self.name)));
        }
        if let Some(bad) = self.exit_layers.iter().find(|&&l| l == 0 || l >= self.n_layers) {
            return Err(Error::domain(format!(
                "{}: exit layer {bad} outside [1, {}]",
                self.name,
                self.n_layers - 1
            )));
        }
        Ok(())
    }

    /// Number of usable exits including the final layer.
    pub fn granularity(&self) -> u32 {
        self.exit_layers.len() as u32 + 1
    }
}

/// How parameters are counted from an [`ArchConfig`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingMode {
    /// Gated (three-matrix) FFN with untied input/output embeddings.
    #[default]
    Gated,
    /// Two-matrix FFN with untied embeddings.
    Ungated,
    /// Gated FFN with a single shared embedding matrix.
    TiedEmbeddings,
}

/// `n_layers·(4·d² + 3·d·ffn) + 2·vocab·d` (gated FFN, untied embeddings).
pub fn approx_params(arch: &ArchConfig) -> u64 {
    approx_params_with(arch, CountingMode::Gated)
}

pub fn approx_params_with(arch: &ArchConfig, mode: CountingMode) -> u64 {
    let d = arch.d_model;
    let ffn_mats = match mode {
        CountingMode::Ungated => 2,
        CountingMode::Gated | CountingMode::TiedEmbeddings => 3,
    };
    let embed_mats = match mode {
        CountingMode::TiedEmbeddings => 1,
        CountingMode::Gated | CountingMode::Ungated => 2,
    };
    arch.n_layers * (4 * d * d + ffn_mats * d * arch.ffn_size) + embed_mats * arch.vocab_size * d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeBudget {
    pub total_flops: f64,
    pub group_label: String,
}

impl ComputeBudget {
    pub fn new(total_flops: f64, group_label: impl Into<String>) -> Result<Self> {
        if !(total_flops > 0.0) || !total_flops.is_finite() {
            return Err(Error::domain(format!("compute budget must be positive, got {total_flops}")));
        }
        Ok(Self {
            total_flops,
            group_label: group_label.into(),
        })
    }
}

fn check_overhead(kappa: f64) -> Result<()> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::domain(format!("exit overhead fraction must be nonnegative, got {kappa}")));
    }
    Ok(())
}

/// `6·N·(1 + κ·(G − 1))`.
pub fn flops_per_token(n_params: f64, granularity: u32, exit_overhead_fraction: f64) -> Result<f64> {
    if granularity < 1 {
        return Err(Error::domain("granularity must be at least 1"));
    }
    if !(n_params > 0.0) || !n_params.is_finite() {
        return Err(Error::domain(format!("n_params must be positive, got {n_params}")));
    }
    check_overhead(exit_overhead_fraction)?;
    let overhead = 1.0 + exit_overhead_fraction * f64::from(granularity - 1);
    Ok(FLOPS_PER_PARAM_TOKEN * n_params * overhead)
}

/// Training tokens affordable under `budget`.
pub fn tokens_for_budget(
    budget: &ComputeBudget,
    n_params: f64,
    granularity: u32,
    exit_overhead_fraction: f64,
) -> Result<f64> {
    if !(budget.total_flops > 0.0) {
        return Err(Error::domain("compute budget must be positive"));
    }
    Ok(budget.total_flops / flops_per_token(n_params, granularity, exit_overhead_fraction)?)
}

/// Policy mapping a family's total size onto the sizes of its exits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizePolicy {
    /// Exit `g` of `G` has `g·N/G` parameters.
    #[default]
    Proportional,
    /// Sizes listed shallowest first; must end at the full model size.
    Explicit(Vec<f64>),
}

pub fn branch_sizes(n_params: f64, granularity: u32, policy: &SizePolicy) -> Result<Vec<f64>> {
    if granularity < 1 {
        return Err(Error::domain("granularity must be at least 1"));
    }
    if !(n_params > 0.0) || !n_params.is_finite() {
        return Err(Error::domain(format!("n_params must be positive, got {n_params}")));
    }
    match policy {
        SizePolicy::Proportional => {
            let g_total = f64::from(granularity);
            Ok((1..=granularity)
                .map(|g| if g == granularity { n_params } else { f64::from(g) * n_params / g_total })
                .collect())
        }
        SizePolicy::Explicit(sizes) => {
            if sizes.len() != granularity as usize {
                return Err(Error::domain(format!(
                    "explicit size list has {} entries for granularity {granularity}",
                    sizes.len()
                )));
            }
            if sizes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::domain("explicit sizes must be positive and strictly increasing"));
            }
            let last = sizes[sizes.len() - 1];
            if (last - n_params).abs() > 1e-12 * n_params {
                return Err(Error::domain(format!(
                    "explicit size list ends at {last}, expected the model size {n_params}"
                )));
            }
            Ok(sizes.clone())
        }
    }
}

/// Dense baselines from Table 1 and the familial variants from Table 2 of the
/// reference experiment group, with the default vocabulary.
pub fn reference_architectures() -> Vec<ArchConfig> {
    let arch = |name: &str, d, ffn, heads, layers, exits: &[u64]| ArchConfig {
        name: name.to_string(),
        d_model: d,
        ffn_size: ffn,
        num_attention_heads: heads,
        n_layers: layers,
        vocab_size: DEFAULT_VOCAB_SIZE,
        exit_layers: exits.to_vec(),
    };
    vec![
        arch("dense-1B", 1536, 4608, 12, 19, &[]),
        arch("dense-2B", 2048, 6144, 16, 27, &[]),
        arch("dense-3B", 2304, 6912, 18, 36, &[]),
        arch("dense-4B", 2560, 7680, 20, 41, &[]),
        arch("fam-2B", 2048, 6144, 16, 27, &[10]),
        arch("fam-3B", 2304, 6912, 18, 36, &[6, 20]),
        arch("fam-4B", 2560, 7680, 20, 41, &[4, 16, 18]),
    ]
}
