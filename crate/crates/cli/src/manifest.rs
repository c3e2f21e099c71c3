use serde::Serialize;
use sha2::{Digest, Sha256};

use famscale::config::ToolkitConfig;

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub input_paths: Vec<String>,
    pub output_path: String,
    pub seed: u64,
    pub toolkit_version: String,
    /// SHA-256 of the resolved configuration serialized as JSON.
    pub config_digest: String,
}

pub fn config_digest(config: &ToolkitConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

impl RunManifest {
    /// Single-line JSON for CSV comment preambles.
    pub fn preamble(&self) -> String {
        format!("manifest: {}", serde_json::to_string(self).expect("manifest serializes"))
    }
}
