//! Datasets, the training loop and multi-seed experiments.

mod config;
mod dataset;
mod train;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgkernels::OpKind;
use crate::model::write_checkpoint;
use crate::policyspace::Policy;
use crate::selector::StrategyKind;

pub use config::{DatasetSpec, ExperimentConfig, LossTableMode};
pub use dataset::{
    gen_synthetic, load_cifar10, parse_cifar_records, Dataset, Provenance, SyntheticSpec,
    CIFAR_CLASSES, CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_LEN, CIFAR_SIDE, CIFAR_TEST_FILE,
    CIFAR_TRAIN_FILES,
};
pub use train::{train_run, TrainedRun};

/// Version stamped into every persisted [`RunResult`] and [`RunSet`].
pub const SCHEMA_VERSION: u32 = 1;

/// Most frequently applied policies kept per epoch record.
pub const SELECTED_KEEP: usize = 10;

pub const RUNSET_FILE: &str = "runset.json";
pub const CONFIG_FILE: &str = "config.json";

/// Applications of each (operation, level) pair; a policy contributes one
/// count to each of its two components.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounts(pub [[u64; 5]; OpKind::COUNT]);

impl UsageCounts {
    pub fn record(&mut self, policy: &Policy) {
        for op in [policy.first, policy.second] {
            self.0[op.kind.index()][op.level.index()] += 1;
        }
    }

    pub fn add(&mut self, other: &UsageCounts) {
        for (row, o) in self.0.iter_mut().zip(&other.0) {
            for (c, v) in row.iter_mut().zip(o) {
                *c += v;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn per_op(&self) -> [u64; OpKind::COUNT] {
        std::array::from_fn(|k| self.0[k].iter().sum())
    }

    pub fn per_level(&self) -> [u64; 5] {
        std::array::from_fn(|l| self.0.iter().map(|row| row[l]).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCount {
    pub policy: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over every sample the optimizer consumed this epoch.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub augmented: bool,
    pub samples_consumed: u64,
    /// Number of (batch, policy) applications.
    pub applications: u64,
    /// Table-ranked policies in use for the epoch (TrueAdv and curricula).
    pub hard_policies: Vec<String>,
    /// Most applied policies, by count then id.
    pub selected: Vec<PolicyCount>,
    pub usage: UsageCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub multiplicity: usize,
    pub config_hash: String,
    pub provenance: Provenance,
    pub warmup_epochs: usize,
    pub epochs: Vec<EpochRecord>,
    pub usage: UsageCounts,
    pub augmented_applications: u64,
    pub best_test_accuracy: f64,
    pub best_epoch: usize,
    /// Checkpoint file name relative to the run directory.
    pub checkpoint: Option<String>,
}

impl RunResult {
    pub fn file_stem(seed: u64) -> String {
        format!("run-seed{seed}")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,test_acc,lr")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.test_accuracy, e.lr)?;
        }
        Ok(())
    }

    /// Writes `run-seed{n}.json` and `run-seed{n}.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let stem = Self::file_stem(self.seed);
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(&csv, e))?;
        fs::write(&csv, buf).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    pub mean_best_accuracy: Option<f64>,
    /// Sample standard deviation (n - 1 denominator); 0 for a single run.
    pub std_best_accuracy: Option<f64>,
    pub partial: bool,
}

/// Mean and sample standard deviation, `None` for an empty slice.
pub fn mean_and_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

impl RunSet {
    pub fn from_runs(config: ExperimentConfig, runs: Vec<RunResult>, failures: Vec<RunFailure>) -> Self {
        let best: Vec<f64> = runs.iter().map(|r| r.best_test_accuracy).collect();
        let stats = mean_and_std(&best);
        RunSet {
            schema_version: SCHEMA_VERSION,
            config_hash: config.hash(),
            config,
            partial: !failures.is_empty(),
            runs,
            failures,
            mean_best_accuracy: stats.map(|s| s.0),
            std_best_accuracy: stats.map(|s| s.1),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.config.save(&dir.join(CONFIG_FILE))?;
        for run in &self.runs {
            run.save(dir)?;
        }
        let path = dir.join(RUNSET_FILE);
        let json = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: RunSet =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if set.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!("schema version {} (expected {SCHEMA_VERSION})", set.schema_version),
            ));
        }
        Ok(set)
    }
}

/// Trains one seed and, with `out_dir`, persists its result and checkpoint.
pub fn train_and_save(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    let TrainedRun {
        mut result,
        params,
        norm,
    } = train_run(cfg, data, seed)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let name = format!("{}.ckpt", RunResult::file_stem(seed));
        write_checkpoint(&dir.join(&name), &params, &norm)?;
        result.checkpoint = Some(name);
        result.save(dir)?;
    }
    Ok(result)
}

/// Runs every seed of `cfg` (concurrently on the current rayon pool) and
/// aggregates the best test accuracies. Failed seeds are listed in the set,
/// which is then marked partial. With `out_dir`, the config, each run and
/// the set are written there.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunSet> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    cfg.check_table_budget(data.train_images.len())?;
    let outcomes: Vec<(u64, Result<RunResult>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, train_and_save(cfg, &data, seed, out_dir)))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(RunFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let set = RunSet::from_runs(cfg.clone(), runs, failures);
    if let Some(dir) = out_dir {
        set.save(dir)?;
    }
    Ok(set)
}

/// Worker count from `AUGARENA_THREADS`; unset, unparsable or 0 means
/// one per available core.
pub fn configured_threads() -> usize {
    std::env::var("AUGARENA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a rayon pool sized by [`configured_threads`].
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(configured_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Every `runset.json` directly inside `dir` or one level below, sorted by
/// path.
pub fn find_runsets(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let direct = dir.join(RUNSET_FILE);
    if direct.is_file() {
        found.push(direct);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let candidate = entry.path().join(RUNSET_FILE);
        if candidate.is_file() {
            found.push(candidate);
        }
    }
    found.sort();
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policyspace::decode;

    #[test]
    fn usage_counts_both_components() {
        let mut u = UsageCounts::default();
        u.record(&"Rotate@L4+Invert@L0".parse().unwrap());
        u.record(&decode(0).unwrap());
        assert_eq!(u.total(), 4);
        assert_eq!(u.per_op()[OpKind::Rotate.index()], 1);
        assert_eq!(u.per_level()[4], 1);
    }

    #[test]
    fn sample_std_convention() {
        assert_eq!(mean_and_std(&[]), None);
        assert_eq!(mean_and_std(&[0.7]), Some((0.7, 0.0)));
        assert_eq!(mean_and_std(&[0.5; 5]).unwrap().1, 0.0);
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
