//! Augmentation kernels.
//!
//! Images are 3-channel 8-bit rasters stored row-major with interleaved
//! channels (`data[(y * width + x) * 3 + c]`). Every operation is a pure
//! function of the image, the operation kind, the magnitude level and a
//! [`StochasticParams`] value that supplies sign and position draws.

mod ppm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policyspace::Policy;
use crate::rng::splitmix64;

pub use ppm::{read_ppm, write_ppm, decode_ppm, encode_ppm};

pub const CHANNELS: usize = 3;
pub const MIN_SIDE: usize = 8;
/// Out-of-frame fill for geometric ops and the Cutout patch value.
pub const FILL: u8 = 128;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidImage(format!(
                "{height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::InvalidImage(format!(
                "expected {} bytes for {height}x{width}x{CHANNELS}, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Image::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    fn blank_like(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: vec![0; self.data.len()],
        }
    }
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{}x{})", self.height, self.width, CHANNELS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    AutoContrast,
    Invert,
    Equalize,
    Solarize,
    Posterize,
    Contrast,
    Color,
    Brightness,
    Sharpness,
    Cutout,
}

impl OpKind {
    pub const COUNT: usize = 15;

    pub const ALL: [OpKind; 15] = [
        OpKind::ShearX,
        OpKind::ShearY,
        OpKind::TranslateX,
        OpKind::TranslateY,
        OpKind::Rotate,
        OpKind::AutoContrast,
        OpKind::Invert,
        OpKind::Equalize,
        OpKind::Solarize,
        OpKind::Posterize,
        OpKind::Contrast,
        OpKind::Color,
        OpKind::Brightness,
        OpKind::Sharpness,
        OpKind::Cutout,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        OpKind::ALL.get(i).copied().ok_or(Error::InvalidOpIndex(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::ShearX => "ShearX",
            OpKind::ShearY => "ShearY",
            OpKind::TranslateX => "TranslateX",
            OpKind::TranslateY => "TranslateY",
            OpKind::Rotate => "Rotate",
            OpKind::AutoContrast => "AutoContrast",
            OpKind::Invert => "Invert",
            OpKind::Equalize => "Equalize",
            OpKind::Solarize => "Solarize",
            OpKind::Posterize => "Posterize",
            OpKind::Contrast => "Contrast",
            OpKind::Color => "Color",
            OpKind::Brightness => "Brightness",
            OpKind::Sharpness => "Sharpness",
            OpKind::Cutout => "Cutout",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown operation {s:?}"))
    }
}

/// Discrete magnitude level, 0 (mildest) to 4 (strongest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct MagLevel(u8);

impl MagLevel {
    pub const COUNT: usize = 5;
    pub const MAX: MagLevel = MagLevel(4);

    pub fn new(level: u8) -> Result<Self> {
        if (level as usize) < Self::COUNT {
            Ok(MagLevel(level))
        } else {
            Err(Error::InvalidLevel(level))
        }
    }

    pub fn all() -> impl Iterator<Item = MagLevel> {
        (0..Self::COUNT as u8).map(MagLevel)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Position of the level in [0, 1].
    fn fraction(self) -> f64 {
        self.0 as f64 / (Self::COUNT - 1) as f64
    }
}

impl TryFrom<u8> for MagLevel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        MagLevel::new(v)
    }
}

impl From<MagLevel> for u8 {
    fn from(l: MagLevel) -> u8 {
        l.0
    }
}

/// Seed-derived draws for operations with internal randomness.
///
/// Signed operations take their sign from bit 0 of `splitmix64(seed)`;
/// Cutout takes its centre from the next two draws as fractions of the
/// image height and width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StochasticParams {
    pub seed: u64,
}

impl StochasticParams {
    pub fn new(seed: u64) -> Self {
        StochasticParams { seed }
    }

    /// Independent parameters for the `i`-th operation of a composition.
    pub fn child(self, i: u64) -> Self {
        StochasticParams {
            seed: splitmix64(self.seed ^ (0xC0FF_EE00 + i)),
        }
    }

    pub fn negative(self) -> bool {
        splitmix64(self.seed) & 1 == 1
    }

    fn sign(self) -> f64 {
        if self.negative() {
            -1.0
        } else {
            1.0
        }
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    fn unit(self, k: u64) -> f64 {
        (splitmix64(self.seed.wrapping_add(k)) >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Physical parameter of an operation at a given level.
///
/// | kind | level 0 | level 4 | unit |
/// |---|---|---|---|
/// | ShearX/Y | 0 | 0.3 | shear factor |
/// | TranslateX/Y | 0 | 0.33 | fraction of axis length |
/// | Rotate | 0 | 30 | degrees |
/// | Solarize | 256 | 0 | threshold |
/// | Posterize | 8 | 4 | bits kept |
/// | Contrast/Color/Brightness/Sharpness | 0 | 0.9 | enhancement deviation |
/// | Cutout | 0 | 0.5 | side as fraction of min(height, width) |
///
/// Values are linear in the level. AutoContrast, Invert and Equalize take no
/// parameter and return `None`.
pub fn magnitude_value(kind: OpKind, level: MagLevel) -> Option<f64> {
    let t = level.fraction();
    let lerp = |lo: f64, hi: f64| lo + (hi - lo) * t;
    match kind {
        OpKind::ShearX | OpKind::ShearY => Some(lerp(0.0, 0.3)),
        OpKind::TranslateX | OpKind::TranslateY => Some(lerp(0.0, 0.33)),
        OpKind::Rotate => Some(lerp(0.0, 30.0)),
        OpKind::Solarize => Some(256.0 - 64.0 * level.get() as f64),
        OpKind::Posterize => Some(8.0 - level.get() as f64),
        OpKind::Contrast | OpKind::Color | OpKind::Brightness | OpKind::Sharpness => {
            Some(lerp(0.0, 0.9))
        }
        OpKind::Cutout => Some(lerp(0.0, 0.5)),
        OpKind::AutoContrast | OpKind::Invert | OpKind::Equalize => None,
    }
}

pub fn apply_op(img: &Image, kind: OpKind, level: MagLevel, sp: StochasticParams) -> Image {
    let mag = magnitude_value(kind, level).unwrap_or(0.0);
    match kind {
        OpKind::ShearX => {
            let s = sp.sign() * mag;
            let cy = (img.height as f64 - 1.0) / 2.0;
            resample(img, |y, x| (y, x + s * (y - cy)))
        }
        OpKind::ShearY => {
            let s = sp.sign() * mag;
            let cx = (img.width as f64 - 1.0) / 2.0;
            resample(img, |y, x| (y + s * (x - cx), x))
        }
        OpKind::TranslateX => {
            let dx = sp.sign() as i64 * round_half_up(mag * img.width as f64) as i64;
            translate(img, 0, dx)
        }
        OpKind::TranslateY => {
            let dy = sp.sign() as i64 * round_half_up(mag * img.height as f64) as i64;
            translate(img, dy, 0)
        }
        OpKind::Rotate => {
            let theta = (sp.sign() * mag).to_radians();
            let (sin, cos) = theta.sin_cos();
            let cy = (img.height as f64 - 1.0) / 2.0;
            let cx = (img.width as f64 - 1.0) / 2.0;
            resample(img, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                (-sin * dx + cos * dy + cy, cos * dx + sin * dy + cx)
            })
        }
        OpKind::AutoContrast => autocontrast(img),
        OpKind::Invert => map_values(img, |v| 255 - v),
        OpKind::Equalize => equalize(img),
        OpKind::Solarize => {
            let threshold = mag as u16;
            map_values(img, |v| if v as u16 >= threshold { 255 - v } else { v })
        }
        OpKind::Posterize => {
            let mask = 0xFFu8 << (8 - mag as u32);
            map_values(img, |v| v & mask)
        }
        OpKind::Contrast => {
            let n = (img.height * img.width) as u64;
            let sum: u64 = img.data.chunks_exact(3).map(|p| luma(p) as u64).sum();
            let mean = round_half_up(sum as f64 / n as f64);
            let degenerate = img.data.iter().map(|_| mean).collect::<Vec<_>>();
            blend(img, &degenerate, 1.0 + sp.sign() * mag)
        }
        OpKind::Color => {
            let degenerate = img
                .data
                .chunks_exact(3)
                .flat_map(|p| [luma(p) as f64; 3])
                .collect::<Vec<_>>();
            blend(img, &degenerate, 1.0 + sp.sign() * mag)
        }
        OpKind::Brightness => {
            let degenerate = vec![0.0; img.data.len()];
            blend(img, &degenerate, 1.0 + sp.sign() * mag)
        }
        OpKind::Sharpness => {
            let degenerate = smooth(img);
            blend(img, &degenerate, 1.0 + sp.sign() * mag)
        }
        OpKind::Cutout => {
            let side = round_half_up(mag * img.height.min(img.width) as f64) as i64;
            let cy = (sp.unit(1) * img.height as f64).floor() as i64;
            let cx = (sp.unit(2) * img.width as f64).floor() as i64;
            cutout(img, cy, cx, side)
        }
    }
}

/// Applies the first operation of the policy, then the second.
pub fn apply_policy(img: &Image, policy: &Policy, sp: StochasticParams) -> Image {
    let a = apply_op(img, policy.first.kind, policy.first.level, sp.child(0));
    apply_op(&a, policy.second.kind, policy.second.level, sp.child(1))
}

#[inline]
fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

#[inline]
fn quantize(v: f64) -> u8 {
    round_half_up(v).clamp(0.0, 255.0) as u8
}

/// ITU-R 601 luma with integer round-half-up.
#[inline]
fn luma(p: &[u8]) -> u32 {
    (299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000
}

fn map_values(img: &Image, f: impl Fn(u8) -> u8) -> Image {
    Image {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| f(v)).collect(),
    }
}

/// Inverse-mapped bilinear resampling. `src(y, x)` gives the source
/// coordinate for output pixel (y, x). Each of the four bilinear taps that
/// falls outside the frame reads [`FILL`].
fn resample(img: &Image, src: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let mut out = img.blank_like();
    let (h, w) = (img.height as i64, img.width as i64);
    let tap = |y: i64, x: i64, c: usize| -> f64 {
        if y >= 0 && y < h && x >= 0 && x < w {
            img.get(y as usize, x as usize, c) as f64
        } else {
            FILL as f64
        }
    };
    for y in 0..img.height {
        for x in 0..img.width {
            let (sy, sx) = src(y as f64, x as f64);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as i64, x0 as i64);
            for c in 0..CHANNELS {
                let top = tap(y0, x0, c) * (1.0 - fx) + tap(y0, x0 + 1, c) * fx;
                let bottom = tap(y0 + 1, x0, c) * (1.0 - fx) + tap(y0 + 1, x0 + 1, c) * fx;
                let i = out.idx(y, x, c);
                out.data[i] = quantize(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

fn translate(img: &Image, dy: i64, dx: i64) -> Image {
    let mut out = img.blank_like();
    let (h, w) = (img.height as i64, img.width as i64);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = (y - dy, x - dx);
            for c in 0..CHANNELS {
                let v = if sy >= 0 && sy < h && sx >= 0 && sx < w {
                    img.get(sy as usize, sx as usize, c)
                } else {
                    FILL
                };
                let i = out.idx(y as usize, x as usize, c);
                out.data[i] = v;
            }
        }
    }
    out
}

fn autocontrast(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..CHANNELS {
        let channel = img.data.iter().skip(c).step_by(CHANNELS);
        let (lo, hi) = channel.fold((255u32, 0u32), |(lo, hi), &v| {
            (lo.min(v as u32), hi.max(v as u32))
        });
        if hi <= lo {
            continue;
        }
        let span = hi - lo;
        for v in out.data.iter_mut().skip(c).step_by(CHANNELS) {
            *v = (((*v as u32 - lo) * 510 + span) / (2 * span)) as u8;
        }
    }
    out
}

/// Per-channel histogram equalization using the cumulative-histogram lookup
/// table of PIL's `ImageOps.equalize`.
fn equalize(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..CHANNELS {
        let mut hist = [0u64; 256];
        for &v in img.data.iter().skip(c).step_by(CHANNELS) {
            hist[v as usize] += 1;
        }
        let total: u64 = hist.iter().sum();
        let last = hist.iter().rev().copied().find(|&h| h > 0).unwrap_or(0);
        let step = (total - last) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut acc = step / 2;
        for (entry, &h) in lut.iter_mut().zip(hist.iter()) {
            *entry = (acc / step).min(255) as u8;
            acc += h;
        }
        for v in out.data.iter_mut().skip(c).step_by(CHANNELS) {
            *v = lut[*v as usize];
        }
    }
    out
}

/// `degenerate + factor * (img - degenerate)`, quantized.
fn blend(img: &Image, degenerate: &[f64], factor: f64) -> Image {
    Image {
        height: img.height,
        width: img.width,
        data: img
            .data
            .iter()
            .zip(degenerate)
            .map(|(&v, &d)| quantize(d + factor * (v as f64 - d)))
            .collect(),
    }
}

/// 3x3 smoothing with kernel [[1,1,1],[1,5,1],[1,1,1]] / 13; border pixels
/// are copied unchanged.
fn smooth(img: &Image) -> Vec<f64> {
    let mut out: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            for c in 0..CHANNELS {
                let mut sum = 4 * img.get(y, x, c) as u32;
                for yy in y - 1..=y + 1 {
                    for xx in x - 1..=x + 1 {
                        sum += img.get(yy, xx, c) as u32;
                    }
                }
                out[img.idx(y, x, c)] = ((sum + 6) / 13) as f64;
            }
        }
    }
    out
}

fn cutout(img: &Image, cy: i64, cx: i64, side: i64) -> Image {
    let mut out = img.clone();
    if side <= 0 {
        return out;
    }
    let y0 = (cy - side / 2).max(0);
    let y1 = (cy - side / 2 + side).min(img.height as i64);
    let x0 = (cx - side / 2).max(0);
    let x1 = (cx - side / 2 + side).min(img.width as i64);
    for y in y0..y1 {
        for x in x0..x1 {
            for c in 0..CHANNELS {
                let i = out.idx(y as usize, x as usize, c);
                out.data[i] = FILL;
            }
        }
    }
    out
}
