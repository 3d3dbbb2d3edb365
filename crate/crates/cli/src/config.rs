use std::fs;
use std::path::{Path, PathBuf};

use mlmunmix::classic::SolverConfig;
use mlmunmix::model::{Mode, TrainConfig};
use mlmunmix::scene::SceneConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

/// Everything a subcommand may need. Component seeds are derived from the
/// global `seed`; per-section `seed` fields are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scene: SceneConfig,
    /// When non-empty, `generate` writes one scene per SNR level.
    pub snr_levels: Vec<f64>,
    pub vca: VcaSection,
    pub solver: SolverConfig,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VcaSection {
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub mode: Mode,
    /// Patch size of the 3-D network.
    pub patch: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            mode: Mode::OneD,
            patch: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    PatchSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Candidates; empty selects the axis default.
    pub values: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::BatchSize,
            values: Vec::new(),
        }
    }
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepAxis::BatchSize => vec![64, 128, 256, 512, 1024, 2048],
            SweepAxis::PatchSize => vec![1, 3, 5, 7, 9],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::PatchSize => "patch_size",
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut scene = SceneConfig::new(64, 64, 4, 224);
        scene.snr_db = Some(30.0);
        scene.length_scale = 5.0;
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            scene,
            snr_levels: Vec::new(),
            vca: VcaSection::default(),
            solver: SolverConfig::default(),
            network: NetworkSection::default(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|_| Failure::missing(path, "config file"))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    /// Copy the global seed into every section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self.solver.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.scene.validate()?;
        self.solver.validate()?;
        self.train.validate()?;
        if self.snr_levels.iter().any(|s| !s.is_finite()) {
            return Err(Failure::Config("snr_levels must be finite".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
