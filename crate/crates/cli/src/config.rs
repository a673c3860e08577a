use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use foldkin::bonsai::BonsaiConfig;
use foldkin::eval::{CartSettings, TimingConfig};
use foldkin::feedback::SweepSpec;
use foldkin::pipeline::PipelineConfig;
use foldkin::preprocess::PreprocessConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Two-state proteins form split A, multi-state proteins split B.
    #[default]
    FoldType,
    /// Seeded random halves.
    Random,
}

/// Everything a run needs. Every key is optional in the file; flags
/// override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    /// Subset sizes for `evaluate`.
    pub subsets: Vec<usize>,
    /// Subset size used by `train`, `sweep` and `benchmark`.
    pub train_subset: usize,
    pub split: SplitRule,
    pub preprocess: PreprocessConfig,
    pub bonsai: BonsaiConfig,
    pub sweep: Option<SweepSpec>,
    pub rounds: usize,
    /// Per-cell latency in `evaluate`; off keeps reports reproducible.
    pub timing: Option<TimingConfig>,
    pub cart: Option<CartSettings>,
    pub benchmark: TimingConfig,
    /// Record count for `synth`.
    pub synth_records: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            out: None,
            seed: None,
            test_fraction: 0.2,
            validation_fraction: 0.2,
            subsets: vec![2, 4, 5, 6, 8, 9],
            train_subset: 6,
            split: SplitRule::default(),
            preprocess: PreprocessConfig::default(),
            bonsai: BonsaiConfig::default(),
            sweep: None,
            rounds: 1,
            timing: None,
            cart: Some(CartSettings::default()),
            benchmark: TimingConfig { warmup: 10, reps: 100 },
            synth_records: 500,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))),
            "json" => serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))),
            _ => Err(CliError::Validation(format!(
                "{}: config must end in .toml or .json",
                path.display()
            ))),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Validation("a seed is required (--seed or `seed` in the config)".into()))
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::Validation("no input file (--input or `input` in the config)".into()))
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Validation("no output location (--out or `out` in the config)".into()))
    }

    /// Pipeline settings with the run seed driving initialization.
    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let mut bonsai = self.bonsai.clone();
        bonsai.seed = self.seed()?;
        Ok(PipelineConfig {
            preprocess: self.preprocess.clone(),
            bonsai,
        })
    }
}
