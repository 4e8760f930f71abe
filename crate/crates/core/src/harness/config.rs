use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{gen_synthetic, load_cifar10, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::imgkernels::MagLevel;
use crate::model::{Arch, Hyperparams};
use crate::policyspace::SPACE_SIZE;
use crate::selector::{ControllerConfig, StrategyKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Cifar10 {
        path: PathBuf,
        #[serde(default)]
        subset: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic(spec) => gen_synthetic(spec),
            DatasetSpec::Cifar10 { path, subset } => load_cifar10(path, *subset),
        }
    }
}

/// How the per-epoch loss table is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LossTableMode {
    /// Every policy on the whole training split.
    Full,
    /// `policies` policies (the whole space when equal to 5625, otherwise a
    /// uniform subset redrawn every epoch) on `batch` training samples drawn
    /// without replacement every epoch.
    Subsampled { batch: usize, policies: usize },
}

impl Default for LossTableMode {
    fn default() -> Self {
        LossTableMode::Subsampled {
            batch: 128,
            policies: 500,
        }
    }
}

impl LossTableMode {
    /// `(policies, samples)` evaluated per table on a training split of
    /// `train_len` images.
    pub fn size(self, train_len: usize) -> (usize, usize) {
        match self {
            LossTableMode::Full => (SPACE_SIZE, train_len),
            LossTableMode::Subsampled { batch, policies } => (policies, batch.min(train_len)),
        }
    }
}

/// Everything that determines an experiment apart from the seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub multiplicity: usize,
    pub hyperparams: Hyperparams,
    pub dataset: DatasetSpec,
    pub seeds: Vec<u64>,
    pub loss_table: LossTableMode,
    /// Upper bound on `policies * samples` per loss table; larger tables are
    /// refused before training starts.
    pub max_table_evals: usize,
    /// Cutout level used by the Baseline strategy.
    pub baseline_level: u8,
    pub controller: ControllerConfig,
    pub conv1: usize,
    pub conv2: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: StrategyKind::Baseline,
            multiplicity: 1,
            hyperparams: Hyperparams::default(),
            dataset: DatasetSpec::default(),
            seeds: vec![0, 1, 2, 3, 4],
            loss_table: LossTableMode::default(),
            max_table_evals: 2_000_000,
            baseline_level: 2,
            controller: ControllerConfig::default(),
            conv1: 16,
            conv2: 32,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if !(1..=2).contains(&self.multiplicity) {
            return Err(Error::Config(format!(
                "multiplicity {} (expected 1 or 2)",
                self.multiplicity
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        MagLevel::new(self.baseline_level)?;
        if self.conv1 == 0 || self.conv2 == 0 {
            return Err(Error::Config("convolution widths must be positive".into()));
        }
        if let LossTableMode::Subsampled { batch, policies } = self.loss_table {
            if batch == 0 || policies == 0 || policies > SPACE_SIZE {
                return Err(Error::Config(format!(
                    "subsampled table needs batch >= 1 and 1..={SPACE_SIZE} policies"
                )));
            }
            if self.strategy.needs_table() && policies < self.multiplicity {
                return Err(Error::Config(format!(
                    "{policies} table policies cannot fill {} hard slots",
                    self.multiplicity
                )));
            }
        }
        Ok(())
    }

    /// Rejects loss tables above `max_table_evals` for strategies that use one.
    pub fn check_table_budget(&self, train_len: usize) -> Result<()> {
        if !self.strategy.needs_table() {
            return Ok(());
        }
        let (policies, samples) = self.loss_table.size(train_len);
        let evals = policies * samples;
        if evals > self.max_table_evals {
            return Err(Error::TableBudget {
                policies,
                samples,
                evals,
                budget: self.max_table_evals,
            });
        }
        Ok(())
    }

    pub fn arch(&self, dataset: &Dataset) -> Arch {
        let (h, w) = dataset.image_shape();
        Arch {
            conv1: self.conv1,
            conv2: self.conv2,
            ..Arch::reference(h, w, dataset.classes)
        }
    }
}
