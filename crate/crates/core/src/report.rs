//! Usage histograms and accuracy tables built from stored runs.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{mean_and_std, RunResult, RunSet, UsageCounts};
use crate::imgkernels::{MagLevel, OpKind};
use crate::selector::StrategyKind;

/// Share of applications per operation and per magnitude level, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageHistogram {
    pub op_percent: [f64; OpKind::COUNT],
    pub level_percent: [f64; 5],
    /// Natural-log entropy of the operation distribution.
    pub op_entropy: f64,
    pub level_entropy: f64,
}

fn percentages<const N: usize>(counts: [u64; N]) -> [f64; N] {
    let total: u64 = counts.iter().sum();
    counts.map(|c| 100.0 * c as f64 / total as f64)
}

fn entropy(percent: &[f64]) -> f64 {
    percent
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / 100.0;
            -q * q.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

impl UsageHistogram {
    pub fn from_counts(counts: &UsageCounts) -> Result<Self> {
        if counts.total() == 0 {
            return Err(Error::Empty("usage counters (no augmented batches)"));
        }
        let op_percent = percentages(counts.per_op());
        let level_percent = percentages(counts.per_level());
        Ok(UsageHistogram {
            op_entropy: entropy(&op_percent),
            level_entropy: entropy(&level_percent),
            op_percent,
            level_percent,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "kind,name,percent")?;
        for (kind, p) in OpKind::ALL.iter().zip(&self.op_percent) {
            writeln!(out, "op,{kind},{p}")?;
        }
        for (level, p) in MagLevel::all().zip(&self.level_percent) {
            writeln!(out, "level,L{},{p}", level.get())?;
        }
        writeln!(out, "entropy,op,{}", self.op_entropy)?;
        writeln!(out, "entropy,level,{}", self.level_entropy)
    }
}

/// Histogram of every policy component applied during `run`.
pub fn usage_histogram(run: &RunResult) -> Result<UsageHistogram> {
    UsageHistogram::from_counts(&run.usage)
}

/// Histogram over the pooled counters of several runs.
pub fn pooled_histogram<'a>(runs: impl IntoIterator<Item = &'a RunResult>) -> Result<UsageHistogram> {
    let mut total = UsageCounts::default();
    for run in runs {
        total.add(&run.usage);
    }
    UsageHistogram::from_counts(&total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: StrategyKind,
    pub multiplicity: usize,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    /// `mean` minus the Baseline M=1 mean; absent on the Baseline row itself.
    pub delta: Option<f64>,
}

/// Mean best test accuracy per strategy and multiplicity, relative to the
/// Baseline at M=1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub rows: Vec<ResultRow>,
}

/// Groups run sets by (strategy, multiplicity), pooling the best
/// accuracies of sets that share a key. Rows are ordered by strategy, then
/// multiplicity.
pub fn results_table(runsets: &[RunSet]) -> Result<ResultsTable> {
    let mut groups: Vec<((StrategyKind, usize), Vec<f64>)> = Vec::new();
    for set in runsets {
        let key = (set.config.strategy, set.config.multiplicity);
        let best = set.runs.iter().map(|r| r.best_test_accuracy);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.extend(best),
            None => groups.push((key, best.collect())),
        }
    }
    groups.sort_by_key(|(k, _)| *k);
    let baseline = groups
        .iter()
        .find(|(k, _)| *k == (StrategyKind::Baseline, 1))
        .and_then(|(_, v)| mean_and_std(v))
        .ok_or_else(|| Error::Config("results table needs a Baseline M=1 run set".into()))?;
    let rows = groups
        .iter()
        .filter_map(|(key, v)| {
            let (mean, std) = mean_and_std(v)?;
            let is_reference = *key == (StrategyKind::Baseline, 1);
            Some(ResultRow {
                strategy: key.0,
                multiplicity: key.1,
                runs: v.len(),
                mean,
                std,
                delta: (!is_reference).then(|| mean - baseline.0),
            })
        })
        .collect();
    Ok(ResultsTable {
        baseline_mean: baseline.0,
        baseline_std: baseline.1,
        rows,
    })
}

impl ResultsTable {
    /// Aligned text with accuracies in percent, e.g. `+1.25 (0.40)`.
    pub fn render_text(&self) -> String {
        let header = ["Strategy", "M", "Runs", "Accuracy", "Delta"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.strategy.to_string(),
                    r.multiplicity.to_string(),
                    r.runs.to_string(),
                    format!("{:.2} ({:.2})", 100.0 * r.mean, 100.0 * r.std),
                    r.delta
                        .map_or_else(|| "-".to_string(), |d| format!("{:+.2}", 100.0 * d)),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[&str], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header, &mut out);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for row in &body {
            line(&row.each_ref().map(String::as_str), &mut out);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "strategy,multiplicity,runs,mean_accuracy,std_accuracy,delta_vs_baseline")?;
        for r in &self.rows {
            let delta = r.delta.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.strategy, r.multiplicity, r.runs, r.mean, r.std, delta
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentConfig, Provenance, SCHEMA_VERSION};
    use crate::policyspace::Policy;
    use proptest::prelude::*;

    pub(crate) fn fake_run(seed: u64, best: f64, policies: &[(&str, u64)]) -> RunResult {
        let mut usage = UsageCounts::default();
        for (text, times) in policies {
            let p: Policy = text.parse().unwrap();
            for _ in 0..*times {
                usage.record(&p);
            }
        }
        RunResult {
            schema_version: SCHEMA_VERSION,
            seed,
            strategy: StrategyKind::Random,
            multiplicity: 1,
            config_hash: String::new(),
            provenance: Provenance::Synthetic(String::new()),
            warmup_epochs: 1,
            epochs: Vec::new(),
            augmented_applications: policies.iter().map(|p| p.1).sum(),
            usage,
            best_test_accuracy: best,
            best_epoch: 0,
            checkpoint: None,
        }
    }

    pub(crate) fn fake_set(strategy: StrategyKind, m: usize, bests: &[f64]) -> RunSet {
        let cfg = ExperimentConfig {
            strategy,
            multiplicity: m,
            ..ExperimentConfig::default()
        };
        let runs = bests
            .iter()
            .enumerate()
            .map(|(i, &b)| fake_run(i as u64, b, &[("Rotate@L4+Invert@L0", 3)]))
            .collect();
        RunSet::from_runs(cfg, runs, Vec::new())
    }

    #[test]
    fn single_policy_histogram() {
        let h = usage_histogram(&fake_run(0, 0.5, &[("Rotate@L4+Invert@L0", 7)])).unwrap();
        assert_eq!(h.op_percent[OpKind::Rotate.index()], 50.0);
        assert_eq!(h.op_percent[OpKind::Invert.index()], 50.0);
        assert_eq!(h.level_percent, [50.0, 0.0, 0.0, 0.0, 50.0]);
        assert!((h.op_entropy - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_hot_entropy_is_zero() {
        let h = usage_histogram(&fake_run(0, 0.5, &[("Invert@L2+Invert@L2", 3)])).unwrap();
        assert_eq!(h.op_entropy, 0.0);
        assert_eq!(h.level_entropy, 0.0);
    }

    #[test]
    fn warmup_only_run_is_an_error() {
        assert!(usage_histogram(&fake_run(0, 0.5, &[])).is_err());
    }

    proptest! {
        #[test]
        fn percentages_and_entropy_bounds(counts in proptest::collection::vec(0u64..1000, 75)) {
            let mut u = UsageCounts::default();
            for (i, c) in counts.iter().enumerate() {
                u.0[i / 5][i % 5] = *c;
            }
            prop_assume!(u.total() > 0);
            let h = UsageHistogram::from_counts(&u).unwrap();
            prop_assert!((h.op_percent.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            prop_assert!((h.level_percent.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            prop_assert!(h.op_entropy >= 0.0 && h.op_entropy <= 15f64.ln() + 1e-12);
            prop_assert!(h.level_entropy >= 0.0 && h.level_entropy <= 5f64.ln() + 1e-12);
        }
    }

    #[test]
    fn baseline_only_table() {
        let t = results_table(&[fake_set(StrategyKind::Baseline, 1, &[0.8, 0.9])]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].delta, None);
        assert!((t.baseline_mean - 0.85).abs() < 1e-15);
    }

    #[test]
    fn identical_sets_give_zero_delta() {
        let base = fake_set(StrategyKind::Baseline, 1, &[0.8, 0.9, 0.7]);
        let mut same = base.clone();
        same.config.strategy = StrategyKind::Random;
        let t = results_table(&[base, same]).unwrap();
        assert_eq!(t.rows[1].delta, Some(0.0));
    }

    #[test]
    fn missing_baseline_is_an_error() {
        assert!(results_table(&[fake_set(StrategyKind::Random, 1, &[0.8])]).is_err());
    }
}
