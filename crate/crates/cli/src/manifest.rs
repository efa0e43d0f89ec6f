use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use radarfuse::config::Config;
use radarfuse::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct FrameRecord {
    pub id: String,
    pub points: usize,
    pub stage_voxels: Vec<usize>,
    pub bev_shape: [usize; 3],
    pub head_voxels: Option<usize>,
}

/// Everything needed to verify a rerun: inputs by hash, outputs by hash.
/// Contains no timestamps or host details, so identical runs produce
/// identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub init_seed: u64,
    pub frames: Vec<FrameRecord>,
    /// Output path relative to the output directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &'static str, cfg: &Config) -> Self {
        Self {
            tool: "radarfuse",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: sha256_hex(cfg.to_json().as_bytes()),
            seed: cfg.seed,
            init_seed: cfg.init_seed(),
            frames: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Writes `bytes` to `out_dir/rel` and records its hash.
    pub fn write(&mut self, out_dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = out_dir.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, out_dir: &Path) -> Result<String> {
        let text = serde_json::to_string_pretty(self).expect("manifest is serializable") + "\n";
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        Ok(sha256_hex(text.as_bytes()))
    }
}
