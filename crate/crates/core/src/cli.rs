//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{
    find_runsets, train_and_save, with_thread_pool, DatasetSpec, ExperimentConfig, RunSet,
    CONFIG_FILE,
};
use crate::imgkernels::{apply_policy, read_ppm, write_ppm, StochasticParams};
use crate::model::read_checkpoint;
use crate::policyspace::{enumerate_all, sample_subset, Policy, PolicySet};
use crate::report::{pooled_histogram, results_table};
use crate::rng::{stream_rng, Stream};
use crate::selector::{eval_loss_table, StrategyKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "augarena", version, about = "Augmentation-policy selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a single seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        multiplicity: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep the first n training images per class (CIFAR-10 only).
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Train every seed of a config and aggregate.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep the first n training images per class (CIFAR-10 only).
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Apply a policy to a binary PPM image.
    Augment {
        #[arg(long)]
        policy: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean loss of each policy under a checkpoint, written as CSV.
    Losstable {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `synthetic`, `cifar10:<dir>`, or a JSON file holding a dataset spec.
        #[arg(long)]
        dataset: String,
        /// `all` or `subset:<k>`.
        #[arg(long, default_value = "all")]
        policies: String,
        #[arg(long)]
        out: PathBuf,
        /// Training images evaluated per policy (0 = the whole split).
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep the first n training images per class (CIFAR-10 only).
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Accuracy table and usage histograms from experiment directories.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| Failure::Usage(format!("cannot load config: {e}")))
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code: 0 on success, 1 for usage errors and 2
/// for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match with_thread_pool(|| dispatch(cli.command)) {
        Ok(outcome) => outcome,
        Err(e) => Err(Failure::Runtime(e)),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Train {
            config,
            seed,
            strategy,
            multiplicity,
            epochs,
            out,
            subset,
        } => {
            let mut cfg = load_config(&config)?;
            apply_subset(&mut cfg.dataset, subset)?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            if let Some(m) = multiplicity {
                cfg.multiplicity = m;
            }
            if let Some(e) = epochs {
                cfg.hyperparams.total_epochs = e;
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let seed = cfg.seeds[0];
            let data = cfg.dataset.load()?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let effective = ExperimentConfig {
                    seeds: vec![seed],
                    ..cfg.clone()
                };
                effective.save(&dir.join(CONFIG_FILE))?;
            }
            let run = train_and_save(&cfg, &data, seed, out.as_deref())?;
            println!(
                "{} M={} seed={}: best test accuracy {:.4} at epoch {}",
                run.strategy, run.multiplicity, run.seed, run.best_test_accuracy, run.best_epoch
            );
            Ok(())
        }
        Command::Experiment {
            config,
            out,
            subset,
        } => {
            let mut cfg = load_config(&config)?;
            apply_subset(&mut cfg.dataset, subset)?;
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let set = crate::harness::run_experiment(&cfg, Some(&out))?;
            for f in &set.failures {
                eprintln!("seed {} failed: {}", f.seed, f.error);
            }
            match (set.mean_best_accuracy, set.std_best_accuracy) {
                (Some(m), Some(s)) => println!(
                    "{} M={}: {} runs, mean best accuracy {:.4} (std {:.4})",
                    cfg.strategy,
                    cfg.multiplicity,
                    set.runs.len(),
                    m,
                    s
                ),
                _ => return Err(Failure::Runtime(Error::Empty("successful runs"))),
            }
            if set.partial {
                return Err(Failure::Runtime(Error::Config(format!(
                    "{} of {} seeds failed",
                    set.failures.len(),
                    cfg.seeds.len()
                ))));
            }
            Ok(())
        }
        Command::Augment {
            policy,
            input,
            out,
            seed,
        } => {
            let policy: Policy = policy.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let img = read_ppm(&input)?;
            let result = apply_policy(&img, &policy, StochasticParams::new(seed));
            write_ppm(&out, &result)?;
            Ok(())
        }
        Command::Losstable {
            checkpoint,
            dataset,
            policies,
            out,
            samples,
            seed,
            subset,
        } => {
            let mut spec = parse_dataset_arg(&dataset)?;
            apply_subset(&mut spec, subset)?;
            let set = parse_policies_arg(&policies, seed)?;
            let (params, norm) = read_checkpoint(&checkpoint)?;
            let data = spec.load()?;
            let n = data.train_images.len();
            let take = if samples == 0 { n } else { samples.min(n) };
            let picks = rand::seq::index::sample(
                &mut stream_rng(seed, Stream::TableSample, &[]),
                n,
                take,
            );
            let images: Vec<_> = picks.iter().map(|i| data.train_images[i].clone()).collect();
            let labels: Vec<_> = picks.iter().map(|i| data.train_labels[i]).collect();
            let table = eval_loss_table(&params, &norm, &images, &labels, &set, 0, seed)?;
            table.save_csv(&out)?;
            Ok(())
        }
        Command::Report { runs, out } => {
            let paths = find_runsets(&runs)?;
            if paths.is_empty() {
                return Err(Failure::Usage(format!(
                    "no runset.json under {}",
                    runs.display()
                )));
            }
            let sets = paths
                .iter()
                .map(|p| RunSet::load(p))
                .collect::<Result<Vec<_>>>()?;
            let table = results_table(&sets)?;
            write_file(&out, table.render_text().as_bytes())?;
            let mut csv = Vec::new();
            table
                .write_csv(&mut csv)
                .map_err(|e| Error::io(&out, e))?;
            write_file(&out.with_extension("csv"), &csv)?;
            let dir = out.parent().unwrap_or(Path::new("."));
            let mut keys: Vec<(StrategyKind, usize)> = sets
                .iter()
                .map(|s| (s.config.strategy, s.config.multiplicity))
                .collect();
            keys.sort();
            keys.dedup();
            for (strategy, m) in keys {
                let runs = sets
                    .iter()
                    .filter(|s| (s.config.strategy, s.config.multiplicity) == (strategy, m))
                    .flat_map(|s| &s.runs);
                match pooled_histogram(runs) {
                    Ok(h) => {
                        let mut buf = Vec::new();
                        h.write_csv(&mut buf).map_err(|e| Error::io(dir, e))?;
                        write_file(&dir.join(format!("usage-{strategy}-m{m}.csv")), &buf)?;
                    }
                    Err(e) => eprintln!("skipping usage histogram for {strategy} M={m}: {e}"),
                }
            }
            print!("{}", table.render_text());
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_dataset_arg(arg: &str) -> std::result::Result<DatasetSpec, Failure> {
    if arg.eq_ignore_ascii_case("synthetic") {
        return Ok(DatasetSpec::default());
    }
    if let Some(dir) = arg.strip_prefix("cifar10:") {
        return Ok(DatasetSpec::Cifar10 {
            path: dir.into(),
            subset: None,
        });
    }
    let path = Path::new(arg);
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot load dataset spec: {}", Error::io(path, e))))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn apply_subset(spec: &mut DatasetSpec, n: Option<usize>) -> std::result::Result<(), Failure> {
    match (spec, n) {
        (_, None) => Ok(()),
        (DatasetSpec::Cifar10 { subset, .. }, Some(n)) if n > 0 => {
            *subset = Some(n);
            Ok(())
        }
        (DatasetSpec::Cifar10 { .. }, Some(_)) => Err(Failure::Usage("--subset must be positive".into())),
        (DatasetSpec::Synthetic(_), Some(_)) => Err(Failure::Usage(
            "--subset applies only to cifar10 datasets".into(),
        )),
    }
}

fn parse_policies_arg(arg: &str, seed: u64) -> std::result::Result<PolicySet, Failure> {
    if arg == "all" {
        return Ok(enumerate_all());
    }
    let k = arg
        .strip_prefix("subset:")
        .and_then(|k| k.parse::<usize>().ok())
        .ok_or_else(|| Failure::Usage(format!("--policies {arg:?}: expected all or subset:<k>")))?;
    sample_subset(&mut stream_rng(seed, Stream::Subset, &[]), k)
        .map_err(|e| Failure::Usage(e.to_string()))
}
