//! The reduced policy search space: ordered pairs of (operation, level).
//!
//! A single operation has index `kind * 5 + level` in `0..75`; a policy has
//! canonical id `first_index * 75 + second_index` in `0..5625`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgkernels::{MagLevel, OpKind};

pub const OPS_PER_SLOT: usize = OpKind::COUNT * MagLevel::COUNT;
pub const SPACE_SIZE: usize = OPS_PER_SLOT * OPS_PER_SLOT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugOp {
    pub kind: OpKind,
    pub level: MagLevel,
}

impl AugOp {
    pub fn new(kind: OpKind, level: MagLevel) -> Self {
        AugOp { kind, level }
    }

    pub fn index(self) -> usize {
        self.kind.index() * MagLevel::COUNT + self.level.index()
    }

    pub fn from_index(i: usize) -> Result<Self> {
        if i >= OPS_PER_SLOT {
            return Err(Error::InvalidOpIndex(i / MagLevel::COUNT));
        }
        Ok(AugOp {
            kind: OpKind::from_index(i / MagLevel::COUNT)?,
            level: MagLevel::new((i % MagLevel::COUNT) as u8)?,
        })
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@L{}", self.kind, self.level.get())
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::PolicyParse {
            text: s.to_string(),
            reason: reason.to_string(),
        };
        let (kind, level) = s.trim().split_once("@L").ok_or_else(|| err("expected Kind@L<level>"))?;
        let kind = kind.parse::<OpKind>().map_err(|e| err(&e))?;
        let level = level
            .parse::<u8>()
            .ok()
            .and_then(|l| MagLevel::new(l).ok())
            .ok_or_else(|| err("level must be 0..=4"))?;
        Ok(AugOp { kind, level })
    }
}

/// Ordered pair of operations, applied first then second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Policy {
    pub first: AugOp,
    pub second: AugOp,
}

impl Policy {
    pub fn new(first: AugOp, second: AugOp) -> Self {
        Policy { first, second }
    }

    pub fn id(&self) -> PolicyId {
        encode(self)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.first, self.second)
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s.split_once('+').ok_or_else(|| Error::PolicyParse {
            text: s.to_string(),
            reason: "expected Kind1@L<level>+Kind2@L<level>".to_string(),
        })?;
        Ok(Policy::new(a.parse()?, b.parse()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct PolicyId(u16);

impl PolicyId {
    pub fn new(index: usize) -> Result<Self> {
        if index < SPACE_SIZE {
            Ok(PolicyId(index as u16))
        } else {
            Err(Error::PolicyIdOutOfRange(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn policy(self) -> Policy {
        decode(self.index()).expect("PolicyId is always in range")
    }
}

impl TryFrom<usize> for PolicyId {
    type Error = Error;

    fn try_from(i: usize) -> Result<Self> {
        PolicyId::new(i)
    }
}

impl From<PolicyId> for usize {
    fn from(id: PolicyId) -> usize {
        id.index()
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn encode(policy: &Policy) -> PolicyId {
    PolicyId((policy.first.index() * OPS_PER_SLOT + policy.second.index()) as u16)
}

pub fn decode(index: usize) -> Result<Policy> {
    if index >= SPACE_SIZE {
        return Err(Error::PolicyIdOutOfRange(index));
    }
    Ok(Policy::new(
        AugOp::from_index(index / OPS_PER_SLOT)?,
        AugOp::from_index(index % OPS_PER_SLOT)?,
    ))
}

/// Ordered list of distinct policy ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PolicyId>", into = "Vec<PolicyId>")]
pub struct PolicySet(Vec<PolicyId>);

impl PolicySet {
    pub fn new(ids: Vec<PolicyId>) -> Result<Self> {
        let mut seen = vec![false; SPACE_SIZE];
        for id in &ids {
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::DuplicatePolicy(id.index()));
            }
        }
        Ok(PolicySet(ids))
    }

    pub fn ids(&self) -> &[PolicyId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = PolicyId> + '_ {
        self.0.iter().copied()
    }
}

impl TryFrom<Vec<PolicyId>> for PolicySet {
    type Error = Error;

    fn try_from(v: Vec<PolicyId>) -> Result<Self> {
        PolicySet::new(v)
    }
}

impl From<PolicySet> for Vec<PolicyId> {
    fn from(s: PolicySet) -> Self {
        s.0
    }
}

/// All 5625 policies in canonical id order.
pub fn enumerate_all() -> PolicySet {
    PolicySet((0..SPACE_SIZE as u16).map(PolicyId).collect())
}

/// Uniform policy: `first` then `second`, each uniform over the 75 ops.
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Policy {
    let first = rng.gen_range(0..OPS_PER_SLOT);
    let second = rng.gen_range(0..OPS_PER_SLOT);
    Policy::new(
        AugOp::from_index(first).expect("in range"),
        AugOp::from_index(second).expect("in range"),
    )
}

/// `k` distinct policies drawn uniformly without replacement, returned in
/// ascending id order.
///
/// Scheme: a partial Fisher-Yates shuffle of `0..5625`. For `i` in `0..k`
/// draw `j` uniform in `i..5625` and swap positions `i` and `j`; the first
/// `k` positions are the sample. Exactly `k` range draws are consumed.
pub fn sample_subset<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Result<PolicySet> {
    if k == 0 || k > SPACE_SIZE {
        return Err(Error::SubsetSize(k));
    }
    let mut pool: Vec<u16> = (0..SPACE_SIZE as u16).collect();
    for i in 0..k {
        let j = rng.gen_range(i..SPACE_SIZE);
        pool.swap(i, j);
    }
    let mut picked = pool[..k].to_vec();
    picked.sort_unstable();
    Ok(PolicySet(picked.into_iter().map(PolicyId).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enumeration_size_and_endpoints() {
        let all = enumerate_all();
        assert_eq!(all.len(), 5625);
        assert_eq!(
            decode(0).unwrap().to_string(),
            "ShearX@L0+ShearX@L0"
        );
        assert_eq!(
            decode(5624).unwrap().to_string(),
            "Cutout@L4+Cutout@L4"
        );
        assert!(matches!(decode(5625), Err(Error::PolicyIdOutOfRange(5625))));
        assert!(PolicyId::new(5625).is_err());
    }

    #[test]
    fn exhaustive_roundtrip() {
        for id in enumerate_all().iter() {
            let p = id.policy();
            assert_eq!(encode(&p), id);
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
    }

    #[test]
    fn rotate_first_range() {
        // Rotate is kind 4: first-op indices 20..25, ids 1500..1875.
        for id in enumerate_all().iter() {
            let p = id.policy();
            assert_eq!(
                p.first.kind == OpKind::Rotate,
                (1500..1875).contains(&id.index())
            );
        }
    }

    #[test]
    fn policy_text_form() {
        let p: Policy = "Rotate@L3+Invert@L0".parse().unwrap();
        assert_eq!(p.first.kind, OpKind::Rotate);
        assert_eq!(p.first.level.get(), 3);
        assert_eq!(p.second.kind, OpKind::Invert);
        assert_eq!(p.to_string(), "Rotate@L3+Invert@L0");
        assert!("Rotate@L5+Invert@L0".parse::<Policy>().is_err());
        assert!("Rotate@L3".parse::<Policy>().is_err());
        assert!("Spin@L1+Invert@L0".parse::<Policy>().is_err());
    }

    #[test]
    fn policy_set_rejects_duplicates() {
        let a = PolicyId::new(3).unwrap();
        assert!(PolicySet::new(vec![a, a]).is_err());
        let json = serde_json::to_string(&PolicySet::new(vec![a]).unwrap()).unwrap();
        assert_eq!(json, "[3]");
        assert!(serde_json::from_str::<PolicySet>("[3,3]").is_err());
        assert!(serde_json::from_str::<PolicySet>("[5625]").is_err());
    }

    #[test]
    fn uniform_sampling_is_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            assert_eq!(sample_uniform(&mut a), sample_uniform(&mut b));
        }
    }

    #[test]
    fn first_slot_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 150_000;
        let mut counts = [0usize; 15];
        for _ in 0..n {
            counts[sample_uniform(&mut rng).first.kind.index()] += 1;
        }
        let p = 1.0 / 15.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn subset_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_subset(&mut rng, 0).is_err());
        assert!(sample_subset(&mut rng, 5626).is_err());
        let full = sample_subset(&mut rng, 5625).unwrap();
        assert_eq!(full, enumerate_all());
        let one_a = sample_subset(&mut ChaCha8Rng::seed_from_u64(3), 1).unwrap();
        let one_b = sample_subset(&mut ChaCha8Rng::seed_from_u64(3), 1).unwrap();
        assert_eq!(one_a, one_b);
        assert_eq!(one_a.len(), 1);
    }
}
