//! Augmentation selection: loss tables, exact adversarial selection,
//! curricula and the REINFORCE controller.

mod controller;
mod curriculum;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgkernels::{apply_policy, Image, StochasticParams};
use crate::model::{forward_loss, Batch, ModelParams, Normalization};
use crate::policyspace::{PolicyId, PolicySet};
use crate::rng::splitmix64;

pub use controller::{
    controller_sample, ControllerConfig, ControllerState, FIXED_POINT_STEP_BUDGET,
};
pub use curriculum::{curriculum_policies, CurriculumName, CurriculumSchedule, Phase, Slot};

/// Selection strategies compared in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyKind {
    /// Cutout only.
    Baseline,
    Random,
    TrueAdv,
    Controller,
    Curriculum(CurriculumName),
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Baseline,
        StrategyKind::Random,
        StrategyKind::TrueAdv,
        StrategyKind::Controller,
        StrategyKind::Curriculum(CurriculumName::OneAdv0Ep),
        StrategyKind::Curriculum(CurriculumName::OneAdv100Ep),
        StrategyKind::Curriculum(CurriculumName::Smooth),
        StrategyKind::Curriculum(CurriculumName::Cyclic),
    ];

    /// Whether the strategy consumes a per-epoch loss table.
    pub fn needs_table(self) -> bool {
        matches!(self, StrategyKind::TrueAdv | StrategyKind::Curriculum(_))
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Baseline => f.write_str("Baseline"),
            StrategyKind::Random => f.write_str("Random"),
            StrategyKind::TrueAdv => f.write_str("TrueAdv"),
            StrategyKind::Controller => f.write_str("Controller"),
            StrategyKind::Curriculum(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        StrategyKind::ALL
            .iter()
            .copied()
            .find(|k| k.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<String> = StrategyKind::ALL.iter().map(|k| k.to_string()).collect();
                format!("unknown strategy {s:?} (expected one of {})", names.join(", "))
            })
    }
}

impl TryFrom<String> for StrategyKind {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<StrategyKind> for String {
    fn from(k: StrategyKind) -> String {
        k.to_string()
    }
}

/// Mean training loss of each policy under a frozen model snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub epoch: usize,
    pub n_samples: usize,
    pub policy_ids: PolicySet,
    pub mean_losses: Vec<f64>,
}

impl LossTable {
    pub fn new(
        epoch: usize,
        n_samples: usize,
        policy_ids: PolicySet,
        mean_losses: Vec<f64>,
    ) -> Result<Self> {
        if policy_ids.len() != mean_losses.len() {
            return Err(Error::Shape(format!(
                "{} policies but {} losses",
                policy_ids.len(),
                mean_losses.len()
            )));
        }
        if let Some(l) = mean_losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::NonFinite(format!("loss table entry {l}")));
        }
        Ok(LossTable {
            epoch,
            n_samples,
            policy_ids,
            mean_losses,
        })
    }

    pub fn len(&self) -> usize {
        self.mean_losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_losses.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (PolicyId, f64)> + '_ {
        self.policy_ids.iter().zip(self.mean_losses.iter().copied())
    }

    pub fn loss_of(&self, id: PolicyId) -> Option<f64> {
        self.entries().find(|(p, _)| *p == id).map(|(_, l)| l)
    }

    /// CSV with columns `epoch,policy_id,policy_text,mean_loss,n_samples`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,policy_id,policy_text,mean_loss,n_samples")?;
        for (id, loss) in self.entries() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.epoch,
                id,
                id.policy(),
                loss,
                self.n_samples
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Stochastic parameters for sample `j` under `policy` when building a table
/// from `seed`.
pub fn table_sample_params(seed: u64, policy: PolicyId, j: usize) -> StochasticParams {
    StochasticParams::new(splitmix64(splitmix64(seed ^ policy.index() as u64) ^ j as u64))
}

/// Mean loss of every policy on `images`.
///
/// Entry `i` is `(1/N) * sum_j loss(f(policy_i(x_j)), y_j)` with the
/// augmentation draws of `(policy_i, j)` fixed by `seed`. Policies are
/// evaluated in parallel on the current rayon pool and merged in the order
/// of `policies`.
pub fn eval_loss_table(
    params: &ModelParams,
    norm: &Normalization,
    images: &[Image],
    labels: &[usize],
    policies: &PolicySet,
    epoch: usize,
    seed: u64,
) -> Result<LossTable> {
    if images.is_empty() {
        return Err(Error::Empty("loss-table data"));
    }
    if policies.is_empty() {
        return Err(Error::Empty("policy set"));
    }
    if images.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let losses = policies
        .ids()
        .par_iter()
        .map(|&id| {
            let policy = id.policy();
            let augmented: Vec<Image> = images
                .iter()
                .enumerate()
                .map(|(j, img)| apply_policy(img, &policy, table_sample_params(seed, id, j)))
                .collect();
            let batch = Batch::from_images(&augmented, labels, norm)?;
            let mean = forward_loss(params, &batch)?.mean_loss;
            if !mean.is_finite() {
                return Err(Error::NonFinite(format!("mean loss of {policy}")));
            }
            Ok(mean)
        })
        .collect::<Result<Vec<f64>>>()?;
    LossTable::new(epoch, images.len(), policies.clone(), losses)
}

/// Policy with the highest mean loss; ties go to the lowest id.
pub fn trueadv_select(table: &LossTable) -> Result<PolicyId> {
    table
        .entries()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .map(|(id, _)| id)
        .ok_or(Error::Empty("loss table"))
}

/// Ids by descending mean loss, ties by ascending id.
pub fn rank_policies(table: &LossTable) -> Result<Vec<PolicyId>> {
    if table.is_empty() {
        return Err(Error::Empty("loss table"));
    }
    let mut entries: Vec<(PolicyId, f64)> = table.entries().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(entries.into_iter().map(|(id, _)| id).collect())
}

/// The `ceil(n/2)` lowest-loss ids, in rank order.
pub fn easiest_half(table: &LossTable) -> Result<Vec<PolicyId>> {
    let ranked = rank_policies(table)?;
    let keep = ranked.len().div_ceil(2);
    Ok(ranked[ranked.len() - keep..].to_vec())
}
