use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};

use super::config::{ExperimentConfig, LossTableMode};
use super::dataset::Dataset;
use super::{EpochRecord, PolicyCount, RunResult, UsageCounts, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::imgkernels::{apply_policy, Image, MagLevel, OpKind, StochasticParams};
use crate::model::{backward, count_correct, sgd_step, Batch, ModelParams, Normalization};
use crate::policyspace::{
    enumerate_all, sample_subset, sample_uniform, AugOp, Policy, PolicyId, SPACE_SIZE,
};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::selector::{
    curriculum_policies, eval_loss_table, rank_policies, ControllerState, CurriculumSchedule,
    LossTable, Slot, StrategyKind,
};

const EVAL_CHUNK: usize = 256;

/// A finished run together with its final weights.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub result: RunResult,
    pub params: ModelParams,
    pub norm: Normalization,
}

enum Selector {
    Baseline(PolicyId),
    Random,
    TrueAdv,
    Controller(Box<ControllerState>),
    Curriculum(CurriculumSchedule),
}

impl Selector {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match cfg.strategy {
            StrategyKind::Baseline => {
                let cutout = |l| Ok::<_, Error>(AugOp::new(OpKind::Cutout, MagLevel::new(l)?));
                // Cutout at level 0 has zero side, so the second slot is the identity
                Selector::Baseline(Policy::new(cutout(cfg.baseline_level)?, cutout(0)?).id())
            }
            StrategyKind::Random => Selector::Random,
            StrategyKind::TrueAdv => Selector::TrueAdv,
            StrategyKind::Controller => Selector::Controller(Box::new(ControllerState::new(
                enumerate_all(),
                &cfg.controller,
            )?)),
            StrategyKind::Curriculum(name) => {
                Selector::Curriculum(CurriculumSchedule::new(name, cfg.multiplicity)?)
            }
        })
    }
}

/// Samples and policies that make up one epoch's loss table.
fn build_table(
    cfg: &ExperimentConfig,
    seed: u64,
    epoch: usize,
    params: &ModelParams,
    norm: &Normalization,
    data: &Dataset,
) -> Result<LossTable> {
    let label = epoch.saturating_sub(1);
    let table_seed = derive_seed(seed, Stream::TableAugment, &[epoch as u64]);
    match cfg.loss_table {
        LossTableMode::Full => eval_loss_table(
            params,
            norm,
            &data.train_images,
            &data.train_labels,
            &enumerate_all(),
            label,
            table_seed,
        ),
        LossTableMode::Subsampled { batch, policies } => {
            let n = data.train_images.len();
            let mut rng = stream_rng(seed, Stream::TableSample, &[epoch as u64]);
            let picks = index::sample(&mut rng, n, batch.min(n));
            let images: Vec<Image> = picks.iter().map(|i| data.train_images[i].clone()).collect();
            let labels: Vec<usize> = picks.iter().map(|i| data.train_labels[i]).collect();
            let set = if policies == SPACE_SIZE {
                enumerate_all()
            } else {
                sample_subset(&mut stream_rng(seed, Stream::Subset, &[epoch as u64]), policies)?
            };
            eval_loss_table(params, norm, &images, &labels, &set, label, table_seed)
        }
    }
}

/// Trains one seed of `cfg` on `data`.
///
/// Epochs before the warm-up boundary see plain batches. Afterwards each
/// batch is replaced by the concatenation of `M` augmented copies, one per
/// selected policy, and a single optimizer step is taken on their mean loss.
/// Table-driven strategies rebuild their loss table from the current weights
/// at the start of every augmented epoch. All randomness is drawn from
/// substreams of `seed` indexed by epoch, batch, slot and sample.
pub fn train_run(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<TrainedRun> {
    cfg.validate()?;
    cfg.check_table_budget(data.train_images.len())?;
    let hp = &cfg.hyperparams;
    let m = cfg.multiplicity;
    let arch = cfg.arch(data);
    let norm = Normalization::from_images(&data.train_images)?;
    let mut params = ModelParams::init(arch, &mut stream_rng(seed, Stream::Init, &[]))?;
    let mut selector = Selector::new(cfg)?;
    let warmup = hp.warmup_epochs();
    let n_train = data.train_images.len();

    let mut epochs = Vec::with_capacity(hp.total_epochs);
    let mut total_usage = UsageCounts::default();
    let mut total_applications = 0u64;

    for epoch in 0..hp.total_epochs {
        let lr = hp.lr_at(epoch);
        let augmented = epoch >= warmup;
        let table = if augmented && cfg.strategy.needs_table() {
            Some(build_table(cfg, seed, epoch, &params, &norm, data)?)
        } else {
            None
        };
        let hard: Vec<PolicyId> = match (&selector, &table) {
            (Selector::TrueAdv, Some(t)) => rank_policies(t)?.into_iter().take(m).collect(),
            (Selector::Curriculum(s), Some(t)) => {
                let ranked = rank_policies(t)?;
                let mut hard: Vec<PolicyId> = s
                    .slots_at(epoch, hp.total_epochs)
                    .iter()
                    .filter_map(|slot| match slot {
                        Slot::Hard(r) => ranked.get(*r as usize - 1).copied(),
                        Slot::Easy => None,
                    })
                    .collect();
                hard.dedup();
                hard
            }
            _ => Vec::new(),
        };

        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));

        let mut usage = UsageCounts::default();
        let mut applications = 0u64;
        let mut selected: BTreeMap<PolicyId, u64> = BTreeMap::new();
        let mut loss_sum = 0.0;
        let mut samples_consumed = 0u64;

        for (b, idx) in order.chunks(hp.batch_size).enumerate() {
            let policies: Vec<PolicyId> = if !augmented {
                Vec::new()
            } else {
                let mut rng = stream_rng(seed, Stream::Controller, &[epoch as u64, b as u64]);
                match &selector {
                    Selector::Baseline(id) => vec![*id; m],
                    Selector::Random => (0..m).map(|_| sample_uniform(&mut rng).id()).collect(),
                    Selector::TrueAdv => hard.clone(),
                    Selector::Controller(state) => (0..m).map(|_| state.sample(&mut rng)).collect(),
                    Selector::Curriculum(s) => {
                        curriculum_policies(s, epoch, hp.total_epochs, table.as_ref(), &mut rng)?
                            .into_iter()
                            .map(|(_, id)| id)
                            .collect()
                    }
                }
            };

            let labels: Vec<usize> = idx.iter().map(|&i| data.train_labels[i]).collect();
            let batch = if policies.is_empty() {
                Batch::from_images(idx.iter().map(|&i| &data.train_images[i]), &labels, &norm)?
            } else {
                let aug_seed = derive_seed(seed, Stream::Augment, &[epoch as u64, b as u64]);
                let mut copies = Vec::with_capacity(idx.len() * policies.len());
                for (s, id) in policies.iter().enumerate() {
                    let policy = id.policy();
                    for (j, &i) in idx.iter().enumerate() {
                        let sp = StochasticParams::new(derive_seed(
                            aug_seed,
                            Stream::Augment,
                            &[s as u64, j as u64],
                        ));
                        copies.push(apply_policy(&data.train_images[i], &policy, sp));
                    }
                    usage.record(&policy);
                    *selected.entry(*id).or_default() += 1;
                    applications += 1;
                }
                let all_labels = labels.repeat(policies.len());
                Batch::from_images(&copies, &all_labels, &norm)?
            };

            let (stats, grads) = backward(&params, &batch, hp.weight_decay)?;
            if !stats.mean_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("mean loss {}", stats.mean_loss),
                });
            }
            if let Selector::Controller(state) = &mut selector {
                for (s, id) in policies.iter().enumerate() {
                    state.update(*id, stats.mean_over(s * idx.len()..(s + 1) * idx.len()))?;
                }
            }
            sgd_step(&mut params, &grads, lr, hp.nesterov_momentum)?;
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "non-finite weights after update".into(),
                });
            }
            loss_sum += stats.mean_loss * batch.len() as f64;
            samples_consumed += batch.len() as u64;
        }

        let correct = count_correct(
            &params,
            &data.test_images,
            &data.test_labels,
            &norm,
            EVAL_CHUNK,
        )?;
        let mut selected: Vec<PolicyCount> = selected
            .into_iter()
            .map(|(id, count)| PolicyCount {
                policy: id.policy().to_string(),
                count,
            })
            .collect();
        // stable sort keeps ascending id order among equal counts
        selected.sort_by(|a, b| b.count.cmp(&a.count));
        selected.truncate(super::SELECTED_KEEP);

        total_usage.add(&usage);
        total_applications += applications;
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / samples_consumed as f64,
            test_accuracy: correct as f64 / data.test_images.len() as f64,
            augmented,
            samples_consumed,
            applications,
            hard_policies: hard.iter().map(|id| id.policy().to_string()).collect(),
            selected,
            usage,
        });
    }

    let (best_epoch, best) = epochs
        .iter()
        .map(|e| e.test_accuracy)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, a)| if a > acc.1 { (i, a) } else { acc });

    let result = RunResult {
        schema_version: SCHEMA_VERSION,
        seed,
        strategy: cfg.strategy,
        multiplicity: m,
        config_hash: cfg.hash(),
        provenance: data.provenance.clone(),
        warmup_epochs: warmup,
        epochs,
        usage: total_usage,
        augmented_applications: total_applications,
        best_test_accuracy: best,
        best_epoch,
        checkpoint: None,
    };
    Ok(TrainedRun {
        result,
        params,
        norm,
    })
}
