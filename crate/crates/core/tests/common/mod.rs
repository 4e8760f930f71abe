#![allow(dead_code)]

use std::path::{Path, PathBuf};

use augarena::imgkernels::{decode_ppm, Image};
use serde_json::Value;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn read_fixture_ppm(rel: &str) -> Image {
    let path = fixtures_dir().join(rel);
    let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    decode_ppm(&bytes, &path).unwrap()
}

pub struct GoldenCase {
    pub fixture: String,
    pub op: String,
    pub level: u8,
    pub seed: u64,
    pub file: String,
}

pub struct GoldenPolicyCase {
    pub fixture: String,
    pub policy: String,
    pub seed: u64,
    pub file: String,
}

pub fn golden_manifest() -> (Vec<GoldenCase>, Vec<GoldenPolicyCase>) {
    let path = fixtures_dir().join("golden/manifest.json");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let s = |e: &Value, k: &str| e[k].as_str().unwrap().to_string();
    let ops = v["ops"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| GoldenCase {
            fixture: s(e, "fixture"),
            op: s(e, "op"),
            level: e["level"].as_u64().unwrap() as u8,
            seed: e["seed"].as_u64().unwrap(),
            file: s(e, "file"),
        })
        .collect();
    let policies = v["policies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| GoldenPolicyCase {
            fixture: s(e, "fixture"),
            policy: s(e, "policy"),
            seed: e["seed"].as_u64().unwrap(),
            file: s(e, "file"),
        })
        .collect();
    (ops, policies)
}

/// Mismatching golden entries, described for a failure message.
pub fn golden_mismatches() -> Vec<String> {
    use augarena::imgkernels::{apply_op, apply_policy, MagLevel, OpKind, StochasticParams};
    use augarena::policyspace::Policy;
    let (ops, policies) = golden_manifest();
    let load = |name: &str| read_fixture_ppm(&format!("golden/{name}.ppm"));
    let mut bad = Vec::new();
    for case in &ops {
        let kind: OpKind = case.op.parse().unwrap();
        let out = apply_op(
            &load(&case.fixture),
            kind,
            MagLevel::new(case.level).unwrap(),
            StochasticParams::new(case.seed),
        );
        if out != read_fixture_ppm(&format!("golden/{}", case.file)) {
            bad.push(case.file.clone());
        }
    }
    for case in &policies {
        let policy: Policy = case.policy.parse().unwrap();
        let out = apply_policy(&load(&case.fixture), &policy, StochasticParams::new(case.seed));
        if out != read_fixture_ppm(&format!("golden/{}", case.file)) {
            bad.push(case.file.clone());
        }
    }
    bad
}

/// Label of record `i` in the fixture batches.
pub fn cifar_fixture_label(i: usize) -> u8 {
    ((i * 7 + i / 10) % 10) as u8
}

/// Writes the six CIFAR-10 binary batch files with deterministic content:
/// record `i` of file `f` has label [`cifar_fixture_label`] and plane bytes
/// `(f * 31 + i + plane * 85 + p) mod 256`.
pub fn write_cifar_fixture(dir: &Path) {
    use augarena::harness::{CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_LEN, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES};
    let names = CIFAR_TRAIN_FILES.iter().chain(std::iter::once(&CIFAR_TEST_FILE));
    for (f, name) in names.enumerate() {
        let mut bytes = Vec::with_capacity(CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_LEN);
        for i in 0..CIFAR_RECORDS_PER_FILE {
            bytes.push(cifar_fixture_label(i));
            for plane in 0..3 {
                bytes.extend((0..1024).map(|p| ((f * 31 + i + plane * 85 + p) % 256) as u8));
            }
        }
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}
