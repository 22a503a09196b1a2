use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Provenance record written as `run.json` into every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub subcommand: String,
    pub config_hash: Option<String>,
    pub dataset_hash: Option<String>,
    pub seed: u64,
    pub versions: Versions,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub mmrec: &'static str,
    pub checkpoint_format: u32,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(subcommand: &str, seed: u64) -> Self {
        RunManifest {
            command: std::env::args().collect(),
            subcommand: subcommand.to_string(),
            config_hash: None,
            dataset_hash: None,
            seed,
            versions: Versions {
                mmrec: env!("CARGO_PKG_VERSION"),
                checkpoint_format: mmrec::models::CHECKPOINT_VERSION,
            },
            threads: rayon::current_num_threads(),
            started_unix: now_unix(),
            finished_unix: 0.0,
        }
    }

    pub fn finish(mut self, out: &Path) -> CliResult<()> {
        self.finished_unix = now_unix();
        crate::report::write_json(&out.join("run.json"), &self)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over the names and contents of the regular files directly inside
/// `dir`, in name order. Earlier run manifests are skipped.
pub fn hash_dir(dir: &Path) -> CliResult<String> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .filter(|n| n != "run.json")
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        let path = dir.join(&n);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        h.update(n.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
