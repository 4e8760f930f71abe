//! Explicit curricula over hard (adversarial) and easy policy slots.
//!
//! Phase start fractions, with the epoch each maps to at 200 epochs:
//!
//! | curriculum | M | phases |
//! |---|---|---|
//! | 1-Adv-0Ep | 2 | 0: [H1, E] |
//! | 1-Adv-0Ep | 1 | 0: [H1] |
//! | 1-Adv-100Ep | 2 | 0: [E, E]; 0.5 (100): [H1, E] |
//! | 1-Adv-100Ep | 1 | 0: [E]; 0.5 (100): [H1] |
//! | Smooth | 2 | 0: [E, E]; 0.375 (75): [H1, E]; 0.75 (150): [H1, H2] |
//! | Smooth | 1 | 0: [E]; 0.625 (125): [H1] |
//! | Cyclic | 2 | 0: [E, E]; 0.375 (75): [H1, E]; 0.5 (100): [H1, H2]; 0.625 (125): [H1, E]; 0.75 (150): [E, E] |
//! | Cyclic | 1 | 0: [E]; 0.375 (75): [H1]; 0.75 (150): [E] |
//!
//! A phase starting at fraction `f` is active from epoch
//! [`boundary_epoch`]`(f, total)` on, so the switch epoch belongs to the new
//! phase.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{easiest_half, rank_policies, LossTable};
use crate::error::{Error, Result};
use crate::model::boundary_epoch;
use crate::policyspace::{sample_uniform, PolicyId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CurriculumName {
    #[serde(rename = "1-Adv-0Ep")]
    OneAdv0Ep,
    #[serde(rename = "1-Adv-100Ep")]
    OneAdv100Ep,
    Smooth,
    Cyclic,
}

impl CurriculumName {
    pub const ALL: [CurriculumName; 4] = [
        CurriculumName::OneAdv0Ep,
        CurriculumName::OneAdv100Ep,
        CurriculumName::Smooth,
        CurriculumName::Cyclic,
    ];
}

impl fmt::Display for CurriculumName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurriculumName::OneAdv0Ep => "1-Adv-0Ep",
            CurriculumName::OneAdv100Ep => "1-Adv-100Ep",
            CurriculumName::Smooth => "Smooth",
            CurriculumName::Cyclic => "Cyclic",
        })
    }
}

impl FromStr for CurriculumName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CurriculumName::ALL
            .iter()
            .copied()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown curriculum {s:?}"))
    }
}

/// A policy slot: `Hard(r)` is the `r`-th highest-loss policy of the table
/// (1-based); `Easy` is a uniform draw from the easiest half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Easy,
    Hard(u8),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Easy => f.write_str("E"),
            Slot::Hard(r) => write!(f, "H{r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// Start as a fraction of total epochs.
    pub start: f64,
    pub slots: Vec<Slot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub name: CurriculumName,
    pub multiplicity: usize,
    pub phases: Vec<Phase>,
}

impl CurriculumSchedule {
    pub fn new(name: CurriculumName, multiplicity: usize) -> Result<Self> {
        use Slot::{Easy as E, Hard};
        const H1: Slot = Hard(1);
        const H2: Slot = Hard(2);
        let table: Vec<(f64, Vec<Slot>)> = match (name, multiplicity) {
            (CurriculumName::OneAdv0Ep, 2) => vec![(0.0, vec![H1, E])],
            (CurriculumName::OneAdv0Ep, 1) => vec![(0.0, vec![H1])],
            (CurriculumName::OneAdv100Ep, 2) => vec![(0.0, vec![E, E]), (0.5, vec![H1, E])],
            (CurriculumName::OneAdv100Ep, 1) => vec![(0.0, vec![E]), (0.5, vec![H1])],
            (CurriculumName::Smooth, 2) => vec![
                (0.0, vec![E, E]),
                (0.375, vec![H1, E]),
                (0.75, vec![H1, H2]),
            ],
            (CurriculumName::Smooth, 1) => vec![(0.0, vec![E]), (0.625, vec![H1])],
            (CurriculumName::Cyclic, 2) => vec![
                (0.0, vec![E, E]),
                (0.375, vec![H1, E]),
                (0.5, vec![H1, H2]),
                (0.625, vec![H1, E]),
                (0.75, vec![E, E]),
            ],
            (CurriculumName::Cyclic, 1) => {
                vec![(0.0, vec![E]), (0.375, vec![H1]), (0.75, vec![E])]
            }
            (_, m) => {
                return Err(Error::Schedule(format!(
                    "multiplicity {m} not supported (expected 1 or 2)"
                )))
            }
        };
        let schedule = CurriculumSchedule {
            name,
            multiplicity,
            phases: table
                .into_iter()
                .map(|(start, slots)| Phase { start, slots })
                .collect(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schedule(m));
        if self.phases.first().map(|p| p.start) != Some(0.0) {
            return bad("first phase must start at 0".into());
        }
        let mut prev = 0.0;
        for p in &self.phases {
            if !(prev..=1.0).contains(&p.start) {
                return bad(format!("phase boundaries not nondecreasing in [0, 1]: {}", p.start));
            }
            prev = p.start;
            if p.slots.len() != self.multiplicity {
                return bad(format!(
                    "phase at {} has {} slots, multiplicity is {}",
                    p.start,
                    p.slots.len(),
                    self.multiplicity
                ));
            }
            for s in &p.slots {
                if let Slot::Hard(r) = *s {
                    if r == 0 || r as usize > self.multiplicity {
                        return bad(format!("Hard({r}) with multiplicity {}", self.multiplicity));
                    }
                }
            }
        }
        Ok(())
    }

    /// Slot composition active at `epoch`.
    pub fn slots_at(&self, epoch: usize, total_epochs: usize) -> &[Slot] {
        let phase = self
            .phases
            .iter()
            .rev()
            .find(|p| epoch >= boundary_epoch(p.start, total_epochs))
            .unwrap_or(&self.phases[0]);
        &phase.slots
    }

    /// Epochs at which the active phase changes.
    pub fn switch_epochs(&self, total_epochs: usize) -> Vec<usize> {
        self.phases
            .iter()
            .skip(1)
            .map(|p| boundary_epoch(p.start, total_epochs))
            .collect()
    }
}

/// Resolves the slots of the current epoch to policies.
///
/// `Hard(r)` is the `r`-th entry of [`rank_policies`]. `Easy` is a uniform
/// draw from [`easiest_half`], or from the whole space while no table exists
/// yet. Hard slots without a table are an error.
pub fn curriculum_policies<R: Rng + ?Sized>(
    schedule: &CurriculumSchedule,
    epoch: usize,
    total_epochs: usize,
    table: Option<&LossTable>,
    rng: &mut R,
) -> Result<Vec<(Slot, PolicyId)>> {
    let slots = schedule.slots_at(epoch, total_epochs);
    let ranked = table.map(rank_policies).transpose()?;
    let easy = table.map(easiest_half).transpose()?;
    slots
        .iter()
        .map(|&slot| {
            let id = match slot {
                Slot::Hard(r) => {
                    if r as usize > schedule.multiplicity {
                        return Err(Error::Schedule(format!(
                            "Hard({r}) exceeds multiplicity {}",
                            schedule.multiplicity
                        )));
                    }
                    let ranked = ranked.as_ref().ok_or_else(|| {
                        Error::Schedule(format!("epoch {epoch}: hard slot without a loss table"))
                    })?;
                    *ranked.get(r as usize - 1).ok_or_else(|| {
                        Error::Schedule(format!("Hard({r}) but table has {} entries", ranked.len()))
                    })?
                }
                Slot::Easy => match &easy {
                    Some(pool) => *pool.choose(rng).expect("easiest half is nonempty"),
                    None => sample_uniform(rng).id(),
                },
            };
            Ok((slot, id))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests::table_of;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Slot::{Easy as E, Hard};

    #[test]
    fn cyclic_m2_at_200_epochs() {
        let s = CurriculumSchedule::new(CurriculumName::Cyclic, 2).unwrap();
        assert_eq!(s.slots_at(60, 200), [E, E]);
        assert_eq!(s.slots_at(80, 200), [Hard(1), E]);
        assert_eq!(s.slots_at(110, 200), [Hard(1), Hard(2)]);
        assert_eq!(s.slots_at(130, 200), [Hard(1), E]);
        assert_eq!(s.slots_at(160, 200), [E, E]);
        assert_eq!(s.switch_epochs(200), vec![75, 100, 125, 150]);
    }

    #[test]
    fn one_adv_100_switch() {
        let s = CurriculumSchedule::new(CurriculumName::OneAdv100Ep, 2).unwrap();
        assert_eq!(s.slots_at(99, 200), [E, E]);
        assert_eq!(s.slots_at(100, 200), [Hard(1), E]);
    }

    #[test]
    fn smooth_switches() {
        let s2 = CurriculumSchedule::new(CurriculumName::Smooth, 2).unwrap();
        assert_eq!(s2.switch_epochs(200), vec![75, 150]);
        let s1 = CurriculumSchedule::new(CurriculumName::Smooth, 1).unwrap();
        assert_eq!(s1.switch_epochs(200), vec![125]);
        assert_eq!(s1.slots_at(124, 200), [E]);
        assert_eq!(s1.slots_at(125, 200), [Hard(1)]);
    }

    #[test]
    fn invalid_schedules() {
        assert!(CurriculumSchedule::new(CurriculumName::Cyclic, 3).is_err());
        let mut s = CurriculumSchedule::new(CurriculumName::Cyclic, 1).unwrap();
        s.phases[1].slots = vec![Hard(2)];
        assert!(s.validate().is_err());
        let mut s = CurriculumSchedule::new(CurriculumName::Cyclic, 2).unwrap();
        s.phases.swap(1, 2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn resolution_against_tables() {
        let s = CurriculumSchedule::new(CurriculumName::Cyclic, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eq = table_of(&[1.0; 10]);
        let picks = curriculum_policies(&s, 110, 200, Some(&eq), &mut rng).unwrap();
        assert_eq!(picks[0], (Hard(1), PolicyId::new(0).unwrap()));
        assert_eq!(picks[1], (Hard(2), PolicyId::new(1).unwrap()));

        let t = table_of(&[0.1, 0.9, 0.5, 0.2]);
        let half = easiest_half(&t).unwrap();
        for _ in 0..50 {
            let picks = curriculum_policies(&s, 80, 200, Some(&t), &mut rng).unwrap();
            assert_eq!(picks[0].1, PolicyId::new(1).unwrap());
            assert!(half.contains(&picks[1].1));
        }

        // no table: easy slots fall back to the full space, hard slots fail
        let early = curriculum_policies(&s, 10, 200, None, &mut rng).unwrap();
        assert_eq!(early.len(), 2);
        assert!(curriculum_policies(&s, 80, 200, None, &mut rng).is_err());
    }
}
