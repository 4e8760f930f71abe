//! Training data: the CIFAR-10 binary format and a synthetic stand-in.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgkernels::Image;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec_hash", rename_all = "lowercase")]
pub enum Provenance {
    Cifar10,
    Synthetic(String),
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train_images: Vec<Image>,
    pub train_labels: Vec<usize>,
    pub test_images: Vec<Image>,
    pub test_labels: Vec<usize>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn image_shape(&self) -> (usize, usize) {
        let img = &self.train_images[0];
        (img.height(), img.width())
    }

    fn validate(&self) -> Result<()> {
        if self.train_images.is_empty() || self.test_images.is_empty() {
            return Err(Error::Empty("dataset split"));
        }
        if self.train_images.len() != self.train_labels.len()
            || self.test_images.len() != self.test_labels.len()
        {
            return Err(Error::Shape("image/label count mismatch".into()));
        }
        let shape = self.image_shape();
        let images = self.train_images.iter().chain(&self.test_images);
        if images.into_iter().any(|i| (i.height(), i.width()) != shape) {
            return Err(Error::Shape("images of mixed sizes".into()));
        }
        let labels = self.train_labels.iter().chain(&self.test_labels);
        if labels.into_iter().any(|&y| y >= self.classes) {
            return Err(Error::Shape(format!("label outside 0..{}", self.classes)));
        }
        Ok(())
    }
}

/// Generator for a Bayes-separable synthetic image set.
///
/// Class `k` has a base colour at hue `k / classes` on the colour wheel
/// (saturation `saturation`, value 0.55) overlaid with a sinusoidal stripe
/// pattern of period `stripe_period` pixels at angle `o * pi / orientations`
/// with `o = floor(k * orientations / classes)`. Consecutive classes share
/// an orientation, so with the default two orientations classes of
/// complementary hue have perpendicular stripes.
/// Each image draws a uniform stripe phase, a per-image colour offset and
/// per-pixel noise, both Gaussian with standard deviation `noise` (in units
/// of full intensity). With `noise = 0` two images of one class differ only
/// in stripe phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub side: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub saturation: f64,
    pub stripe_amplitude: f64,
    pub stripe_period: f64,
    pub orientations: usize,
    pub phase_jitter: f64,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            side: 16,
            classes: 4,
            train_per_class: 256,
            test_per_class: 128,
            seed: 0,
            saturation: 0.35,
            stripe_amplitude: 0.05,
            stripe_period: 4.0,
            orientations: 2,
            phase_jitter: 0.25,
            noise: 0.12,
        }
    }
}

impl SyntheticSpec {
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.side < 8 || self.side % 4 != 0 {
            return Err(Error::Config(format!(
                "synthetic side {} must be >= 8 and a multiple of 4",
                self.side
            )));
        }
        if self.classes < 2 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("synthetic spec needs >= 2 classes and samples".into()));
        }
        if self.orientations == 0 || self.orientations > self.classes {
            return Err(Error::Config(format!(
                "{} stripe orientations for {} classes",
                self.orientations, self.classes
            )));
        }
        if !(self.noise >= 0.0 && self.stripe_period > 0.0) {
            return Err(Error::Config("noise must be >= 0 and period > 0".into()));
        }
        if !(self.phase_jitter > 0.0 && self.phase_jitter <= 1.0) {
            return Err(Error::Config("phase jitter must be in (0, 1]".into()));
        }
        Ok(())
    }

    fn base_color(&self, class: usize) -> [f64; 3] {
        hsv_to_rgb(class as f64 / self.classes as f64, self.saturation, 0.55)
    }

    fn render<R: Rng>(&self, class: usize, rng: &mut R) -> Image {
        let base = self.base_color(class);
        let o = class * self.orientations / self.classes;
        let angle = o as f64 * PI / self.orientations as f64;
        let (sin, cos) = angle.sin_cos();
        let phase = rng.gen_range(0.0..2.0 * PI * self.phase_jitter);
        let gauss = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let noise = |rng: &mut R| if self.noise > 0.0 { gauss.sample(rng) } else { 0.0 };
        let offset = [noise(rng), noise(rng), noise(rng)];
        let mut data = Vec::with_capacity(self.side * self.side * 3);
        for y in 0..self.side {
            for x in 0..self.side {
                let t = 2.0 * PI * (x as f64 * cos + y as f64 * sin) / self.stripe_period + phase;
                let stripe = self.stripe_amplitude * t.sin();
                for c in 0..3 {
                    let v = base[c] + offset[c] + stripe + noise(rng);
                    data.push((v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Image::new(self.side, self.side, data).expect("side >= 8")
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Deterministic in `spec`: equal specs give byte-identical datasets. Train
/// and test draw from separate substreams of `spec.seed`; samples are
/// interleaved by class.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let split = |stream_index: u64, per_class: usize| {
        let mut rng = stream_rng(spec.seed, Stream::Dataset, &[stream_index]);
        let mut images = Vec::with_capacity(per_class * spec.classes);
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        for _ in 0..per_class {
            for class in 0..spec.classes {
                images.push(spec.render(class, &mut rng));
                labels.push(class);
            }
        }
        (images, labels)
    };
    let (train_images, train_labels) = split(0, spec.train_per_class);
    let (test_images, test_labels) = split(1, spec.test_per_class);
    let ds = Dataset {
        train_images,
        train_labels,
        test_images,
        test_labels,
        classes: spec.classes,
        provenance: Provenance::Synthetic(spec.spec_hash()),
    };
    ds.validate()?;
    Ok(ds)
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Parses CIFAR-10 binary records: one label byte followed by the 1024 red,
/// 1024 green and 1024 blue bytes of a 32x32 image in row-major order.
pub fn parse_cifar_records(
    bytes: &[u8],
    origin: &Path,
    expected_records: Option<usize>,
) -> Result<(Vec<Image>, Vec<usize>)> {
    if let Some(n) = expected_records {
        if bytes.len() != n * CIFAR_RECORD_LEN {
            return Err(Error::format(
                origin,
                format!(
                    "expected {} bytes ({n} records of {CIFAR_RECORD_LEN}), found {}",
                    n * CIFAR_RECORD_LEN,
                    bytes.len()
                ),
            ));
        }
    } else if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::format(
            origin,
            format!(
                "length {} is not a positive multiple of {CIFAR_RECORD_LEN}",
                bytes.len()
            ),
        ));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::format(
                origin,
                format!("record {i} has label byte {label} (expected < {CIFAR_CLASSES})"),
            ));
        }
        let (r, g, b) = (&rec[1..1 + plane], &rec[1 + plane..1 + 2 * plane], &rec[1 + 2 * plane..]);
        let data = (0..plane).flat_map(|p| [r[p], g[p], b[p]]).collect();
        images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, data)?);
        labels.push(label);
    }
    Ok((images, labels))
}

fn read_cifar_file(path: PathBuf) -> Result<(Vec<Image>, Vec<usize>)> {
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_cifar_records(&bytes, &path, Some(CIFAR_RECORDS_PER_FILE))
}

/// Loads the binary CIFAR-10 distribution (`data_batch_{1..5}.bin` and
/// `test_batch.bin`). With `subset = Some(n)` only the first `n` training
/// images of each class are kept; the test split is untouched.
pub fn load_cifar10(dir: &Path, subset: Option<usize>) -> Result<Dataset> {
    let mut train_images = Vec::with_capacity(50_000);
    let mut train_labels = Vec::with_capacity(50_000);
    for name in CIFAR_TRAIN_FILES {
        let (imgs, labels) = read_cifar_file(dir.join(name))?;
        train_images.extend(imgs);
        train_labels.extend(labels);
    }
    let (test_images, test_labels) = read_cifar_file(dir.join(CIFAR_TEST_FILE))?;
    if let Some(n) = subset {
        let mut taken = [0usize; CIFAR_CLASSES];
        let mut keep = Vec::with_capacity(n * CIFAR_CLASSES);
        for (img, &y) in train_images.into_iter().zip(&train_labels) {
            if taken[y] < n {
                taken[y] += 1;
                keep.push((img, y));
            }
        }
        if let Some(short) = taken.iter().position(|&t| t < n) {
            return Err(Error::Config(format!(
                "subset {n} per class requested but class {short} has only {}",
                taken[short]
            )));
        }
        (train_images, train_labels) = keep.into_iter().unzip();
    }
    let ds = Dataset {
        train_images,
        train_labels,
        test_images,
        test_labels,
        classes: CIFAR_CLASSES,
        provenance: Provenance::Cifar10,
    };
    ds.validate()?;
    Ok(ds)
}
