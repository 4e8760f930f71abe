//! Reference classifier: conv3x3(c1) + ReLU + maxpool2 + conv3x3(c2) + ReLU +
//! maxpool2 + fully connected, trained with softmax cross-entropy.
//!
//! Activations are NHWC. Convolutions use zero "same" padding and are
//! computed as im2col followed by a GEMM, with kernel rows ordered
//! `(ky, kx, in_channel)`.

mod checkpoint;
mod gradcheck;
mod hyper;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgkernels::{Image, CHANNELS};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use hyper::{boundary_epoch, Hyperparams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub height: usize,
    pub width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl Arch {
    pub fn reference(height: usize, width: usize, classes: usize) -> Self {
        Arch {
            height,
            width,
            conv1: 16,
            conv2: 32,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Shape(format!(
                "input {}x{} must be a positive multiple of 4 on both sides",
                self.height, self.width
            )));
        }
        if self.conv1 == 0 || self.conv2 == 0 || self.classes < 2 {
            return Err(Error::Shape(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub fn features(&self) -> usize {
        (self.height / 4) * (self.width / 4) * self.conv2
    }

    fn layout(&self) -> Layout {
        let w1 = 0;
        let b1 = w1 + 9 * CHANNELS * self.conv1;
        let w2 = b1 + self.conv1;
        let b2 = w2 + 9 * self.conv1 * self.conv2;
        let w3 = b2 + self.conv2;
        let b3 = w3 + self.features() * self.classes;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + self.classes,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().end
    }
}

const INIT_SLOPE_SQ: f64 = 5.0;

/// Flat parameter vector plus Nesterov velocity of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub weights: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(ModelParams {
            arch,
            weights: vec![0.0; n],
            velocity: vec![0.0; n],
        })
    }

    /// He-style uniform init with negative slope `sqrt(5)` (the usual
    /// default for convolution and linear layers): weights in
    /// `±sqrt(6 / ((1 + 5) * fan_in)) = ±1 / sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        let mut p = ModelParams::zeros(arch)?;
        let l = arch.layout();
        let blocks = [
            (l.w1..l.b1, 9 * CHANNELS),
            (l.w2..l.b2, 9 * arch.conv1),
            (l.w3..l.b3, arch.features()),
        ];
        for (range, fan_in) in blocks {
            let bound = (6.0 / ((1.0 + INIT_SLOPE_SQ) * fan_in as f64)).sqrt();
            for w in &mut p.weights[range] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn with_weights(arch: Arch, weights: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                weights.len()
            )));
        }
        let velocity = vec![0.0; weights.len()];
        Ok(ModelParams {
            arch,
            weights,
            velocity,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.velocity).all(|v| v.is_finite())
    }
}

/// Per-channel input normalization applied after scaling pixels to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn from_images(images: &[Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("image set"));
        }
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in images {
            for px in img.data().chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    let v = px[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        let mut norm = Normalization::identity();
        for c in 0..CHANNELS {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            norm.mean[c] = mean;
            norm.std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(norm)
    }
}

/// Normalized float images with labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub height: usize,
    pub width: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_images<'a>(
        images: impl IntoIterator<Item = &'a Image>,
        labels: &[usize],
        norm: &Normalization,
    ) -> Result<Self> {
        let mut batch = Batch {
            height: 0,
            width: 0,
            inputs: Vec::new(),
            labels: labels.to_vec(),
        };
        let mut count = 0;
        for img in images {
            batch.push_image(img, norm)?;
            count += 1;
        }
        if count != labels.len() {
            return Err(Error::Shape(format!(
                "{count} images but {} labels",
                labels.len()
            )));
        }
        if count == 0 {
            return Err(Error::Empty("batch"));
        }
        Ok(batch)
    }

    /// Appends an image without a label; callers keep `labels` in step.
    pub(crate) fn push_image(&mut self, img: &Image, norm: &Normalization) -> Result<()> {
        if self.inputs.is_empty() {
            self.height = img.height();
            self.width = img.width();
        } else if (img.height(), img.width()) != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "image {}x{} in a {}x{} batch",
                img.height(),
                img.width(),
                self.height,
                self.width
            )));
        }
        self.inputs.extend(img.data().chunks_exact(CHANNELS).flat_map(|px| {
            (0..CHANNELS).map(move |c| (px[c] as f64 / 255.0 - norm.mean[c]) / norm.std[c])
        }));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self, arch: &Arch) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if (self.height, self.width) != (arch.height, arch.width) {
            return Err(Error::Shape(format!(
                "batch images are {}x{}, model expects {}x{}",
                self.height, self.width, arch.height, arch.width
            )));
        }
        if self.inputs.len() != self.len() * self.height * self.width * CHANNELS {
            return Err(Error::Shape("input buffer length".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= arch.classes) {
            return Err(Error::Shape(format!(
                "label {bad} outside 0..{}",
                arch.classes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub per_sample_losses: Vec<f64>,
    pub mean_loss: f64,
    pub correct_count: usize,
}

impl LossStats {
    /// Mean loss over the samples in `range`.
    pub fn mean_over(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len();
        self.per_sample_losses[range].iter().sum::<f64>() / n as f64
    }
}

struct Activations {
    col1: Vec<f64>,
    a1: Vec<f64>,
    arg1: Vec<usize>,
    col2: Vec<f64>,
    a2: Vec<f64>,
    arg2: Vec<usize>,
    feat: Vec<f64>,
    logits: Vec<f64>,
    /// `ln(sum(exp(logits)))` per sample.
    log_norm: Vec<f64>,
    probs: Vec<f64>,
}

/// `c = op(a) * op(b) + beta * c` for row-major operands; `op` transposes
/// when the flag is set. `a` is m x k and `b` is k x n after `op`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the checked buffer extents above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rows of 3x3 "same"-padded patches. The input is first copied into a
/// zero-bordered buffer so each patch is three contiguous runs of `3 * c`.
fn im2col(input: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut padded = vec![0.0; n * ph * pw * c];
    for s in 0..n {
        for y in 0..h {
            let src = (s * h + y) * w * c;
            let dst = ((s * ph + y + 1) * pw + 1) * c;
            padded[dst..dst + w * c].copy_from_slice(&input[src..src + w * c]);
        }
    }
    let run = 3 * c;
    let mut col = Vec::with_capacity(n * h * w * 9 * c);
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ky in 0..3 {
                    let start = ((s * ph + y + ky) * pw + x) * c;
                    col.extend_from_slice(&padded[start..start + run]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the image.
fn col2im(col: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let run = 3 * c;
    let mut padded = vec![0.0; n * ph * pw * c];
    let mut rows = col.chunks_exact(run);
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ky in 0..3 {
                    let start = ((s * ph + y + ky) * pw + x) * c;
                    let src = rows.next().expect("column buffer matches shape");
                    for (d, v) in padded[start..start + run].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(n * h * w * c);
    for s in 0..n {
        for y in 0..h {
            let src = ((s * ph + y + 1) * pw + 1) * c;
            out.extend_from_slice(&padded[src..src + w * c]);
        }
    }
    out
}

/// `z = col * w + b`, then ReLU in place.
fn conv_relu(col: &[f64], rows: usize, k: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let cout = b.len();
    let mut z = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        z.extend_from_slice(b);
    }
    gemm(rows, k, cout, col, false, w, false, 1.0, &mut z);
    for v in &mut z {
        *v = v.max(0.0);
    }
    z
}

/// 2x2 stride-2 max pool. Returns pooled values and the flat input index of
/// each maximum (first maximum in scan order on ties).
fn maxpool(input: &[f64], n: usize, h: usize, w: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; n * ho * wo * c];
    let mut arg = vec![0usize; n * ho * wo * c];
    let mut o = 0;
    for s in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                let i00 = ((s * h + 2 * y) * w + 2 * x) * c;
                let taps = [i00, i00 + c, i00 + w * c, i00 + w * c + c];
                let rows = taps.map(|t| &input[t..t + c]);
                let (dst, dst_arg) = (&mut out[o..o + c], &mut arg[o..o + c]);
                for ch in 0..c {
                    // selects rather than branches: pooled inputs are
                    // post-ReLU noise and defeat branch prediction
                    let mut best = rows[0][ch];
                    let mut tap = 0;
                    for (k, row) in rows.iter().enumerate().skip(1) {
                        let better = row[ch] > best;
                        best = if better { row[ch] } else { best };
                        tap = if better { k } else { tap };
                    }
                    dst[ch] = best;
                    dst_arg[ch] = taps[tap] + ch;
                }
                o += c;
            }
        }
    }
    (out, arg)
}

/// Images per internal pass. Larger passes spill the im2col buffers out of
/// L2 and run several times slower per image.
const CHUNK: usize = 8;

fn check_inputs(params: &ModelParams, batch: &Batch) -> Result<()> {
    batch.check(&params.arch)?;
    if params.weights.len() != params.arch.param_count() {
        return Err(Error::Shape("parameter vector length".into()));
    }
    Ok(())
}

/// Forward pass over `n` images of `inputs`, ending in softmax
/// probabilities.
fn forward_chunk(params: &ModelParams, inputs: &[f64], n: usize) -> Activations {
    let arch = &params.arch;
    let l = arch.layout();
    let wts = &params.weights;
    let (h, w) = (arch.height, arch.width);
    let (h2, w2) = (h / 2, w / 2);
    let (c1, c2, classes) = (arch.conv1, arch.conv2, arch.classes);

    let col1 = im2col(inputs, n, h, w, CHANNELS);
    let a1 = conv_relu(&col1, n * h * w, 9 * CHANNELS, &wts[l.w1..l.b1], &wts[l.b1..l.w2]);
    let (p1, arg1) = maxpool(&a1, n, h, w, c1);
    let col2 = im2col(&p1, n, h2, w2, c1);
    let a2 = conv_relu(&col2, n * h2 * w2, 9 * c1, &wts[l.w2..l.b2], &wts[l.b2..l.w3]);
    let (feat, arg2) = maxpool(&a2, n, h2, w2, c2);

    let mut logits = Vec::with_capacity(n * classes);
    for _ in 0..n {
        logits.extend_from_slice(&wts[l.b3..l.end]);
    }
    gemm(n, arch.features(), classes, &feat, false, &wts[l.w3..l.b3], false, 1.0, &mut logits);

    let mut probs = logits.clone();
    let mut log_norm = Vec::with_capacity(n);
    for row in probs.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
        log_norm.push(max + z.ln());
    }
    Activations {
        col1,
        a1,
        arg1,
        col2,
        a2,
        arg2,
        feat,
        logits,
        log_norm,
        probs,
    }
}

/// Appends per-sample losses of one chunk and returns its correct count.
fn chunk_losses(act: &Activations, labels: &[usize], classes: usize, out: &mut Vec<f64>) -> Result<usize> {
    let mut correct = 0;
    let rows = act.logits.chunks_exact(classes).zip(&act.log_norm);
    for ((row, &log_norm), &y) in rows.zip(labels) {
        let loss = log_norm - row[y];
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("sample loss {loss}")));
        }
        out.push(loss);
        // argmax, ties to the lowest class
        let pred = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0;
        correct += usize::from(pred == y);
    }
    Ok(correct)
}

fn finish_stats(per_sample: Vec<f64>, correct: usize) -> LossStats {
    let mean_loss = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    LossStats {
        per_sample_losses: per_sample,
        mean_loss,
        correct_count: correct,
    }
}

/// Softmax cross-entropy (natural log) for each sample. Parameters are not
/// touched.
pub fn forward_loss(params: &ModelParams, batch: &Batch) -> Result<LossStats> {
    check_inputs(params, batch)?;
    let px = batch.height * batch.width * CHANNELS;
    let mut losses = Vec::with_capacity(batch.len());
    let mut correct = 0;
    for (inputs, labels) in batch.inputs.chunks(CHUNK * px).zip(batch.labels.chunks(CHUNK)) {
        let act = forward_chunk(params, inputs, labels.len());
        correct += chunk_losses(&act, labels, params.arch.classes, &mut losses)?;
    }
    Ok(finish_stats(losses, correct))
}

/// Gradient of `mean_loss + weight_decay / 2 * |w|^2` with respect to every
/// parameter (biases included), plus the loss statistics of the forward pass.
pub fn backward(
    params: &ModelParams,
    batch: &Batch,
    weight_decay: f64,
) -> Result<(LossStats, Vec<f64>)> {
    check_inputs(params, batch)?;
    let px = batch.height * batch.width * CHANNELS;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.weights.len()];
    let mut losses = Vec::with_capacity(batch.len());
    let mut correct = 0;
    for (inputs, labels) in batch.inputs.chunks(CHUNK * px).zip(batch.labels.chunks(CHUNK)) {
        let act = forward_chunk(params, inputs, labels.len());
        correct += chunk_losses(&act, labels, params.arch.classes, &mut losses)?;
        backward_chunk(params, act, labels, scale, &mut grad);
    }
    if weight_decay != 0.0 {
        for (g, w) in grad.iter_mut().zip(&params.weights) {
            *g += weight_decay * w;
        }
    }
    Ok((finish_stats(losses, correct), grad))
}

/// Accumulates `scale * d(sum of chunk losses)/dw` into `grad`.
fn backward_chunk(
    params: &ModelParams,
    act: Activations,
    labels: &[usize],
    scale: f64,
    grad: &mut [f64],
) {
    let arch = &params.arch;
    let l = arch.layout();
    let wts = &params.weights;
    let n = labels.len();
    let (h, w) = (arch.height, arch.width);
    let (h2, w2) = (h / 2, w / 2);
    let (c1, c2, classes) = (arch.conv1, arch.conv2, arch.classes);
    let feats = arch.features();

    let mut dlogits = act.probs;
    for (row, &y) in dlogits.chunks_exact_mut(classes).zip(labels) {
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }

    // fully connected
    gemm(feats, n, classes, &act.feat, true, &dlogits, false, 1.0, &mut grad[l.w3..l.b3]);
    for row in dlogits.chunks_exact(classes) {
        for (g, d) in grad[l.b3..l.end].iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut dfeat = vec![0.0; n * feats];
    gemm(n, classes, feats, &dlogits, false, &wts[l.w3..l.b3], true, 0.0, &mut dfeat);

    // pool 2 + relu 2
    let mut dz2 = vec![0.0; act.a2.len()];
    for (d, &i) in dfeat.iter().zip(&act.arg2) {
        dz2[i] += if act.a2[i] > 0.0 { *d } else { 0.0 };
    }
    let rows2 = n * h2 * w2;
    gemm(9 * c1, rows2, c2, &act.col2, true, &dz2, false, 1.0, &mut grad[l.w2..l.b2]);
    for row in dz2.chunks_exact(c2) {
        for (g, d) in grad[l.b2..l.w3].iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut dcol2 = vec![0.0; rows2 * 9 * c1];
    gemm(rows2, c2, 9 * c1, &dz2, false, &wts[l.w2..l.b2], true, 0.0, &mut dcol2);
    let dp1 = col2im(&dcol2, n, h2, w2, c1);

    // pool 1 + relu 1
    let mut dz1 = vec![0.0; act.a1.len()];
    for (d, &i) in dp1.iter().zip(&act.arg1) {
        dz1[i] += if act.a1[i] > 0.0 { *d } else { 0.0 };
    }
    gemm(9 * CHANNELS, n * h * w, c1, &act.col1, true, &dz1, false, 1.0, &mut grad[l.w1..l.b1]);
    for row in dz1.chunks_exact(c1) {
        for (g, d) in grad[l.b1..l.w2].iter_mut().zip(row) {
            *g += d;
        }
    }
}

/// Nesterov momentum step:
///
/// ```text
/// v <- momentum * v - lr * g
/// w <- w + momentum * v - lr * g
/// ```
///
/// where the second line uses the freshly updated `v`. With `momentum = 0`
/// this is plain SGD.
pub fn sgd_step(params: &mut ModelParams, grads: &[f64], lr: f64, momentum: f64) -> Result<()> {
    if grads.len() != params.weights.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.weights.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i}")));
    }
    for ((w, v), &g) in params.weights.iter_mut().zip(&mut params.velocity).zip(grads) {
        *v = momentum * *v - lr * g;
        *w += momentum * *v - lr * g;
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(())
}

/// Number of correct predictions over `images`, evaluated in chunks.
pub fn count_correct(
    params: &ModelParams,
    images: &[Image],
    labels: &[usize],
    norm: &Normalization,
    chunk: usize,
) -> Result<usize> {
    let mut correct = 0;
    for (imgs, ys) in images.chunks(chunk).zip(labels.chunks(chunk)) {
        let batch = Batch::from_images(imgs, ys, norm)?;
        correct += forward_loss(params, &batch)?.correct_count;
    }
    Ok(correct)
}
