use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::failure::Failure;

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: &'a str,
    threads: usize,
    wall_time_s: f64,
    status: &'a str,
    outputs: Vec<String>,
    details: Value,
    config: &'a RunConfig,
}

/// Per-stage bookkeeping shared by every subcommand.
pub struct Stage<'a> {
    pub command: &'a str,
    pub cfg: &'a RunConfig,
    pub hash: &'a str,
    pub started: Instant,
}

impl Stage<'_> {
    /// Provenance embedded into cube headers.
    pub fn meta(&self, seed: u64) -> Value {
        serde_json::json!({ "seed": seed, "config_hash": self.hash, "command": self.command })
    }

    pub fn write(&self, dir: &Path, seed: u64, status: &str, outputs: &[&str], details: Value) -> Result<(), Failure> {
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_hash: self.hash,
            threads: rayon::current_num_threads(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            status,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            details,
            config: self.cfg,
        };
        let path = dir.join(MANIFEST);
        fs::create_dir_all(dir).map_err(|e| mlmunmix::Error::Io { path: dir.into(), source: e })?;
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| mlmunmix::Error::Io { path, source: e })?;
        Ok(())
    }
}
