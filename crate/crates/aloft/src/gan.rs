//! Conditional image-to-image translation: a U-shaped generator maps
//! pseudo-RGB renders to depth images, and a convolutional discriminator
//! scores (image, depth) pairs. Trained adversarially with an L1 term
//! anchoring the generator to ground truth.
//!
//! Training alternates one discriminator step and one generator step per
//! batch. The discriminator step sees generator outputs as detached
//! constants; the generator step treats the discriminator's parameters as
//! constants. Neither network can perturb the other's weights.

use crate::env::{
    clearance, depth_image, raycast_depth, render_pseudo_rgb, DroneState, MoverState, SimConfig,
    Vec2, WorldMap,
};
use crate::net::xavier;
use crate::optim::{OptimError, Optimizer, OptimizerKind};
use crate::store::{self, StoreError};
use crate::tensor::{Tape, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Probabilities are clamped to this range before taking logs.
const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure at epoch {epoch}, batch {batch}: {msg}")]
    Numeric {
        epoch: usize,
        batch: usize,
        msg: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// One training example: a pseudo-RGB render `x` of shape `[3, H, W]` and
/// its ground-truth depth image `y` of shape `[1, H, W]`, both in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub x: Tensor,
    pub y: Tensor,
}

impl PairSample {
    pub fn new(x: Tensor, y: Tensor) -> Result<PairSample, GanError> {
        let xs = x.shape();
        let ys = y.shape();
        if xs.len() != 3 || xs[0] != 3 {
            return Err(GanError::Config(format!(
                "x must be [3, H, W], got {xs:?}"
            )));
        }
        if ys.len() != 3 || ys[0] != 1 || ys[1..] != xs[1..] {
            return Err(GanError::Config(format!(
                "y must be [1, {}, {}], got {ys:?}",
                xs[1], xs[2]
            )));
        }
        for (name, t) in [("x", &x), ("y", &y)] {
            if !t.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
                return Err(GanError::Config(format!("{name} has values outside [0, 1]")));
            }
        }
        Ok(PairSample { x, y })
    }

    pub fn height(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.x.shape()[2]
    }
}

/// Augmentation switches applied to training pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Mirror x and y together with probability 1/2.
    pub flip: bool,
    /// Half-range of the per-channel additive shift applied to x only.
    pub channel_jitter: f64,
    /// Half-range of the global brightness shift applied to x only.
    pub brightness: f64,
    /// Half-range of the contrast factor deviation applied to x only.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            channel_jitter: 0.05,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    /// Weight of the L1 term in the generator loss.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Decoder dropout rate; the generator's only source of randomness.
    pub dropout: f64,
    /// Pairs generated for the training split by the dataset builder.
    pub n_train: usize,
    /// Pairs generated for the held-out split by the dataset builder.
    pub n_heldout: usize,
    pub augment: AugmentConfig,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda: 100.0,
            epochs: 20,
            batch_size: 4,
            learning_rate: 2e-4,
            optimizer: OptimizerKind::adam(),
            dropout: 0.5,
            n_train: 1000,
            n_heldout: 100,
            augment: AugmentConfig::default(),
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(GanError::Config("lambda must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(GanError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GanError::Config("learning_rate must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GanError::Config("dropout must be in [0, 1)".into()));
        }
        for (name, v) in [
            ("channel_jitter", self.augment.channel_jitter),
            ("brightness", self.augment.brightness),
            ("contrast", self.augment.contrast),
        ] {
            if !(v >= 0.0 && v < 1.0) {
                return Err(GanError::Config(format!("{name} must be in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GanConv {
    pub w: Tensor,
    pub b: Tensor,
}

impl GanConv {
    fn zeros(filters: usize, in_c: usize, k: usize) -> GanConv {
        GanConv {
            w: Tensor::zeros(vec![filters, in_c, k, k]),
            b: Tensor::zeros(vec![filters]),
        }
    }

    fn init(filters: usize, in_c: usize, k: usize, rng: &mut ChaCha8Rng) -> GanConv {
        GanConv {
            w: xavier(rng, in_c * k * k, filters * k * k, vec![filters, in_c, k, k]),
            b: Tensor::zeros(vec![filters]),
        }
    }
}

/// Generator: three stride-2 encoder convolutions (3 -> 8 -> 16 -> 32
/// channels), then a mirrored decoder with nearest-neighbor upsampling and
/// skip connections from the matching encoder stage. Works on any input
/// whose sides are divisible by 8.
#[derive(Debug, Clone)]
pub struct GenParams {
    pub e1: GanConv,
    pub e2: GanConv,
    pub e3: GanConv,
    pub d3: GanConv,
    pub d2: GanConv,
    pub d1: GanConv,
}

impl GenParams {
    pub fn zeros() -> GenParams {
        GenParams {
            e1: GanConv::zeros(8, 3, 4),
            e2: GanConv::zeros(16, 8, 4),
            e3: GanConv::zeros(32, 16, 4),
            d3: GanConv::zeros(16, 48, 3),
            d2: GanConv::zeros(8, 24, 3),
            d1: GanConv::zeros(1, 8, 3),
        }
    }

    pub fn init(rng: &mut ChaCha8Rng) -> GenParams {
        GenParams {
            e1: GanConv::init(8, 3, 4, rng),
            e2: GanConv::init(16, 8, 4, rng),
            e3: GanConv::init(32, 16, 4, rng),
            d3: GanConv::init(16, 48, 3, rng),
            d2: GanConv::init(8, 24, 3, rng),
            d1: GanConv::init(1, 8, 3, rng),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        for (name, conv) in [
            ("e1", &self.e1),
            ("e2", &self.e2),
            ("e3", &self.e3),
            ("d3", &self.d3),
            ("d2", &self.d2),
            ("d1", &self.d1),
        ] {
            f(&format!("{name}.w"), &conv.w);
            f(&format!("{name}.b"), &conv.b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (name, conv) in [
            ("e1", &mut self.e1),
            ("e2", &mut self.e2),
            ("e3", &mut self.e3),
            ("d3", &mut self.d3),
            ("d2", &mut self.d2),
            ("d1", &mut self.d1),
        ] {
            f(&format!("{name}.w"), &mut conv.w);
            f(&format!("{name}.b"), &mut conv.b);
        }
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    pub fn track(&self, tape: &mut Tape) -> GenParams {
        let mut tracked = self.clone();
        tracked.visit_mut(&mut |_, t| *t = tape.var(t));
        tracked
    }
}

/// Discriminator: two stride-2 convolutions over the channel-stacked
/// `(x, y)` pair, then a fully connected layer to one probability.
#[derive(Debug, Clone)]
pub struct DiscParams {
    pub c1: GanConv,
    pub c2: GanConv,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
    pub in_h: usize,
    pub in_w: usize,
}

impl DiscParams {
    fn fc_inputs(h: usize, w: usize) -> usize {
        16 * (h / 4) * (w / 4)
    }

    pub fn zeros(h: usize, w: usize) -> Result<DiscParams, GanError> {
        check_image_side(h, "height")?;
        check_image_side(w, "width")?;
        Ok(DiscParams {
            c1: GanConv::zeros(8, 4, 4),
            c2: GanConv::zeros(16, 8, 4),
            fc_w: Tensor::zeros(vec![1, Self::fc_inputs(h, w)]),
            fc_b: Tensor::zeros(vec![1]),
            in_h: h,
            in_w: w,
        })
    }

    pub fn init(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<DiscParams, GanError> {
        let mut p = DiscParams::zeros(h, w)?;
        p.c1 = GanConv::init(8, 4, 4, rng);
        p.c2 = GanConv::init(16, 8, 4, rng);
        let n = Self::fc_inputs(h, w);
        p.fc_w = xavier(rng, n, 1, vec![1, n]);
        Ok(p)
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f("c1.w", &self.c1.w);
        f("c1.b", &self.c1.b);
        f("c2.w", &self.c2.w);
        f("c2.b", &self.c2.b);
        f("fc.w", &self.fc_w);
        f("fc.b", &self.fc_b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("c1.w", &mut self.c1.w);
        f("c1.b", &mut self.c1.b);
        f("c2.w", &mut self.c2.w);
        f("c2.b", &mut self.c2.b);
        f("fc.w", &mut self.fc_w);
        f("fc.b", &mut self.fc_b);
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    pub fn track(&self, tape: &mut Tape) -> DiscParams {
        let mut tracked = self.clone();
        tracked.visit_mut(&mut |_, t| *t = tape.var(t));
        tracked
    }
}

fn check_image_side(v: usize, name: &str) -> Result<(), GanError> {
    if v < 8 || v % 8 != 0 {
        return Err(GanError::Config(format!(
            "image {name} must be a positive multiple of 8, got {v}"
        )));
    }
    Ok(())
}

fn conv_block(
    tape: &mut Tape,
    x: &Tensor,
    conv: &GanConv,
    pad: usize,
    stride: usize,
) -> Result<Tensor, TensorError> {
    let padded = tape.pad2d(x, pad)?;
    let out = tape.conv2d(&padded, &conv.w, stride)?;
    tape.bias_ch(&out, &conv.b)
}

/// Per-element inverted-dropout mask: zero with probability `rate`,
/// `1 / (1 - rate)` otherwise.
fn dropout_mask(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let data: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask matches shape")
}

/// Maps a render `x` to a depth image in `(0, 1)`. With `dropout` set,
/// decoder activations are randomly masked, making the output stochastic;
/// without it the pass is deterministic.
pub fn generator_forward(
    tape: &mut Tape,
    gen: &GenParams,
    x: &Tensor,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<Tensor, GanError> {
    let shape = x.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(GanError::Config(format!(
            "generator input must be [3, H, W], got {shape:?}"
        )));
    }
    check_image_side(shape[1], "height")?;
    check_image_side(shape[2], "width")?;

    let e1 = conv_block(tape, x, &gen.e1, 1, 2)?;
    let e1 = tape.relu(&e1);
    let e2 = conv_block(tape, &e1, &gen.e2, 1, 2)?;
    let e2 = tape.relu(&e2);
    let e3 = conv_block(tape, &e2, &gen.e3, 1, 2)?;
    let e3 = tape.relu(&e3);

    let mut rng_rate = dropout;
    let mut maybe_drop = |tape: &mut Tape, t: &Tensor| -> Result<Tensor, TensorError> {
        match rng_rate.as_mut() {
            Some((rng, rate)) if *rate > 0.0 => {
                let mask = dropout_mask(t.shape(), *rate, rng);
                tape.mul(t, &mask)
            }
            _ => Ok(t.clone()),
        }
    };

    let u3 = tape.upsample2x(&e3)?;
    let cat3 = tape.concat0(&[&u3, &e2])?;
    let d3 = conv_block(tape, &cat3, &gen.d3, 1, 1)?;
    let d3 = tape.relu(&d3);
    let d3 = maybe_drop(tape, &d3)?;

    let u2 = tape.upsample2x(&d3)?;
    let cat2 = tape.concat0(&[&u2, &e1])?;
    let d2 = conv_block(tape, &cat2, &gen.d2, 1, 1)?;
    let d2 = tape.relu(&d2);
    let d2 = maybe_drop(tape, &d2)?;

    let u1 = tape.upsample2x(&d2)?;
    let d1 = conv_block(tape, &u1, &gen.d1, 1, 1)?;
    Ok(tape.sigmoid(&d1))
}

/// Scores an `(x, y)` pair with the probability that `y` is the true depth
/// for `x`. Shape `[1]`, value in `(0, 1)`.
pub fn discriminator_forward(
    tape: &mut Tape,
    disc: &DiscParams,
    x: &Tensor,
    y: &Tensor,
) -> Result<Tensor, GanError> {
    if x.shape() != [3, disc.in_h, disc.in_w] {
        return Err(GanError::Config(format!(
            "discriminator expects x [3, {}, {}], got {:?}",
            disc.in_h,
            disc.in_w,
            x.shape()
        )));
    }
    if y.shape() != [1, disc.in_h, disc.in_w] {
        return Err(GanError::Config(format!(
            "discriminator expects y [1, {}, {}], got {:?}",
            disc.in_h,
            disc.in_w,
            y.shape()
        )));
    }
    let stacked = tape.concat0(&[x, y])?;
    let c1 = conv_block(tape, &stacked, &disc.c1, 1, 2)?;
    let c1 = tape.relu(&c1);
    let c2 = conv_block(tape, &c1, &disc.c2, 1, 2)?;
    let c2 = tape.relu(&c2);
    let n = c2.numel();
    let flat = tape.reshape(&c2, vec![n])?;
    let logit = tape.matvec(&disc.fc_w, &flat)?;
    let logit = tape.add(&logit, &disc.fc_b)?;
    Ok(tape.sigmoid(&logit))
}

/// Discriminator objective over a batch of `(x, y_real, y_fake)` triples:
/// `-mean[log D(x, y_real) + log(1 - D(x, y_fake))]`. Fakes should be
/// detached so no gradient reaches the generator.
pub fn d_loss(
    tape: &mut Tape,
    disc: &DiscParams,
    batch: &[(&Tensor, &Tensor, &Tensor)],
) -> Result<Tensor, GanError> {
    if batch.is_empty() {
        return Err(GanError::Config("d_loss needs a non-empty batch".into()));
    }
    let one = Tensor::scalar(1.0);
    let mut terms = Vec::with_capacity(batch.len() * 2);
    for (x, y_real, y_fake) in batch {
        let p_real = discriminator_forward(tape, disc, x, y_real)?;
        let p_real = tape.clamp(&p_real, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
        terms.push(tape.log(&p_real)?);

        let p_fake = discriminator_forward(tape, disc, x, y_fake)?;
        let miss = tape.sub(&one, &p_fake)?;
        let miss = tape.clamp(&miss, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
        terms.push(tape.log(&miss)?);
    }
    let refs: Vec<&Tensor> = terms.iter().collect();
    let stacked = tape.concat0(&refs)?;
    let total = tape.sum(&stacked);
    Ok(tape.scale(&total, -1.0 / batch.len() as f64))
}

/// Generator objective components over a batch.
#[derive(Debug)]
pub struct GenLoss {
    pub total: Tensor,
    /// Mean absolute pixel error against ground truth.
    pub l1: f64,
    /// Adversarial term `-mean log D(x, G(x))`.
    pub adversarial: f64,
}

/// Generator objective: `-mean log D(x, y_fake) + lambda * L1(y_fake, y)`.
/// `y_fake` should be built from tracked generator parameters on `tape`;
/// `disc` enters untracked, so its parameters receive no gradient.
pub fn g_loss(
    tape: &mut Tape,
    disc: &DiscParams,
    batch: &[(&Tensor, &Tensor, &Tensor)],
    lambda: f64,
) -> Result<GenLoss, GanError> {
    if batch.is_empty() {
        return Err(GanError::Config("g_loss needs a non-empty batch".into()));
    }
    let mut log_terms = Vec::with_capacity(batch.len());
    let mut l1_terms = Vec::with_capacity(batch.len());
    for (x, y_real, y_fake) in batch {
        let p = discriminator_forward(tape, disc, x, y_fake)?;
        let p = tape.clamp(&p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
        log_terms.push(tape.log(&p)?);

        let diff = tape.sub(y_fake, y_real)?;
        let dist = tape.abs(&diff);
        l1_terms.push(tape.mean(&dist));
    }
    let log_refs: Vec<&Tensor> = log_terms.iter().collect();
    let logs = tape.concat0(&log_refs)?;
    let logs_sum = tape.sum(&logs);
    let adversarial = tape.scale(&logs_sum, -1.0 / batch.len() as f64);

    let l1_refs: Vec<&Tensor> = l1_terms.iter().collect();
    let l1s = tape.concat0(&l1_refs)?;
    let l1_sum = tape.sum(&l1s);
    let l1 = tape.scale(&l1_sum, 1.0 / batch.len() as f64);

    let weighted = tape.scale(&l1, lambda);
    let total = tape.add(&adversarial, &weighted)?;
    Ok(GenLoss {
        total,
        l1: l1.item(),
        adversarial: adversarial.item(),
    })
}

/// Mirrors a `[C, H, W]` tensor along its width axis.
pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let shape = t.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for row in 0..h {
            let base = ch * h * w + row * w;
            for col in 0..w {
                out[base + col] = src[base + (w - 1 - col)];
            }
        }
    }
    Tensor::new(shape, out).expect("same shape")
}

/// Randomly transforms a training pair: a coin-flip horizontal mirror
/// applied to `x` and `y` together, then photometric changes (brightness,
/// contrast, per-channel shift) applied to `x` alone. `y` is never altered
/// beyond the mirror. Draw order is fixed for reproducibility.
pub fn augment(pair: &PairSample, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> PairSample {
    let mut x = pair.x.clone();
    let mut y = pair.y.clone();
    if cfg.flip && rng.gen::<f64>() < 0.5 {
        x = flip_horizontal(&x);
        y = flip_horizontal(&y);
    }
    let brightness = if cfg.brightness > 0.0 {
        rng.gen_range(-cfg.brightness..cfg.brightness)
    } else {
        0.0
    };
    let contrast = if cfg.contrast > 0.0 {
        1.0 + rng.gen_range(-cfg.contrast..cfg.contrast)
    } else {
        1.0
    };
    let jitter: [f64; 3] = if cfg.channel_jitter > 0.0 {
        [
            rng.gen_range(-cfg.channel_jitter..cfg.channel_jitter),
            rng.gen_range(-cfg.channel_jitter..cfg.channel_jitter),
            rng.gen_range(-cfg.channel_jitter..cfg.channel_jitter),
        ]
    } else {
        [0.0; 3]
    };
    if brightness != 0.0 || contrast != 1.0 || jitter != [0.0; 3] {
        let shape = x.shape().to_vec();
        let (h, w) = (shape[1], shape[2]);
        let mut data = x.data().to_vec();
        for ch in 0..3 {
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v = ((*v - 0.5) * contrast + 0.5 + brightness + jitter[ch]).clamp(0.0, 1.0);
            }
        }
        x = Tensor::new(shape, data).expect("same shape");
    }
    PairSample { x, y }
}

/// Loss trace of one training run. Row 0 holds the pre-training held-out
/// metrics; row `e` holds epoch `e`'s averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_l1: f64,
    pub train_adversarial: f64,
    pub heldout_l1: f64,
    pub heldout_adversarial: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub rows: Vec<EpochStats>,
}

impl GanHistory {
    pub fn initial_heldout_l1(&self) -> Option<f64> {
        self.rows.first().map(|r| r.heldout_l1)
    }

    pub fn final_heldout_l1(&self) -> Option<f64> {
        self.rows.last().map(|r| r.heldout_l1)
    }
}

/// Deterministic evaluation: mean L1 and adversarial loss of the generator
/// on `pairs`, dropout off.
pub fn evaluate(
    gen: &GenParams,
    disc: &DiscParams,
    pairs: &[PairSample],
) -> Result<(f64, f64), GanError> {
    if pairs.is_empty() {
        return Err(GanError::Config("evaluate needs at least one pair".into()));
    }
    let mut l1 = 0.0;
    let mut adv = 0.0;
    for p in pairs {
        let mut tape = Tape::new();
        let fake = generator_forward(&mut tape, gen, &p.x, None)?;
        let n = fake.numel() as f64;
        l1 += fake
            .data()
            .iter()
            .zip(p.y.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        let prob = discriminator_forward(&mut tape, disc, &p.x, &fake)?;
        adv += -prob.item().clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln();
    }
    let count = pairs.len() as f64;
    Ok((l1 / count, adv / count))
}

fn optimizer_step<P>(
    opt: &mut Optimizer,
    params: &mut P,
    visit_mut: impl Fn(&mut P, &mut dyn FnMut(&str, &mut Tensor)),
    grads: &[Vec<f64>],
) -> Result<(), GanError> {
    opt.begin_step(grads.len())?;
    let mut slot = 0;
    let mut err = None;
    visit_mut(params, &mut |name, t| {
        if err.is_none() {
            if let Err(e) = opt.apply(slot, name, t, &grads[slot]) {
                err = Some(e);
            }
        }
        slot += 1;
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn collect_grads<'a>(
    tape: &Tape,
    loss: &Tensor,
    named: impl Iterator<Item = &'a Tensor>,
) -> Result<Vec<Vec<f64>>, GanError> {
    let grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for t in named {
        out.push(grads.wrt(t)?.data().to_vec());
    }
    Ok(out)
}

/// Adversarial training: per batch, one discriminator update on real pairs
/// versus detached fakes, then one generator update through the frozen
/// discriminator. Aborts with a numeric error if either loss goes
/// non-finite. Returns the per-epoch loss history, including a pre-training
/// held-out row.
pub fn train_gan(
    gen: &mut GenParams,
    disc: &mut DiscParams,
    train: &[PairSample],
    heldout: &[PairSample],
    cfg: &GanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GanHistory, GanError> {
    cfg.validate()?;
    if train.is_empty() || heldout.is_empty() {
        return Err(GanError::Config(
            "training and held-out splits must be non-empty".into(),
        ));
    }
    let mut history = GanHistory::default();
    let (h_l1, h_adv) = evaluate(gen, disc, heldout)?;
    history.rows.push(EpochStats {
        epoch: 0,
        train_l1: f64::NAN,
        train_adversarial: f64::NAN,
        heldout_l1: h_l1,
        heldout_adversarial: h_adv,
    });

    let mut opt_d = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut opt_g = Optimizer::new(cfg.optimizer, cfg.learning_rate);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut epoch_l1 = 0.0;
        let mut epoch_adv = 0.0;
        let mut batches = 0usize;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<PairSample> = chunk
                .iter()
                .map(|&i| augment(&train[i], &cfg.augment, rng))
                .collect();

            // Discriminator step: fakes are produced with dropout on and
            // then detached, so the generator stays out of this graph.
            let detached_fakes: Vec<Tensor> = {
                let mut tape = Tape::new();
                pairs
                    .iter()
                    .map(|p| {
                        generator_forward(&mut tape, gen, &p.x, Some((rng, cfg.dropout)))
                            .map(|t| t.detach())
                    })
                    .collect::<Result<_, _>>()?
            };
            let mut tape = Tape::new();
            let tracked_d = disc.track(&mut tape);
            let trios: Vec<(&Tensor, &Tensor, &Tensor)> = pairs
                .iter()
                .zip(&detached_fakes)
                .map(|(p, f)| (&p.x, &p.y, f))
                .collect();
            let loss_d = d_loss(&mut tape, &tracked_d, &trios)?;
            if !loss_d.item().is_finite() {
                return Err(GanError::Numeric {
                    epoch,
                    batch: batch_idx,
                    msg: format!("discriminator loss {}", loss_d.item()),
                });
            }
            let named: Vec<&Tensor> = {
                let mut v = Vec::new();
                tracked_d.visit(&mut |_, t| v.push(t));
                v
            };
            let grads = collect_grads(&tape, &loss_d, named.into_iter())?;
            optimizer_step(&mut opt_d, disc, DiscParams::visit_mut, &grads)?;

            // Generator step through the frozen discriminator.
            let mut tape = Tape::new();
            let tracked_g = gen.track(&mut tape);
            let fakes: Vec<Tensor> = pairs
                .iter()
                .map(|p| {
                    generator_forward(&mut tape, &tracked_g, &p.x, Some((rng, cfg.dropout)))
                })
                .collect::<Result<_, _>>()?;
            let trios: Vec<(&Tensor, &Tensor, &Tensor)> = pairs
                .iter()
                .zip(&fakes)
                .map(|(p, f)| (&p.x, &p.y, f))
                .collect();
            let loss_g = g_loss(&mut tape, disc, &trios, cfg.lambda)?;
            if !loss_g.total.item().is_finite() {
                return Err(GanError::Numeric {
                    epoch,
                    batch: batch_idx,
                    msg: format!("generator loss {}", loss_g.total.item()),
                });
            }
            let named: Vec<&Tensor> = {
                let mut v = Vec::new();
                tracked_g.visit(&mut |_, t| v.push(t));
                v
            };
            let grads = collect_grads(&tape, &loss_g.total, named.into_iter())?;
            optimizer_step(&mut opt_g, gen, GenParams::visit_mut, &grads)?;

            epoch_l1 += loss_g.l1;
            epoch_adv += loss_g.adversarial;
            batches += 1;
        }

        let (h_l1, h_adv) = evaluate(gen, disc, heldout)?;
        history.rows.push(EpochStats {
            epoch,
            train_l1: epoch_l1 / batches as f64,
            train_adversarial: epoch_adv / batches as f64,
            heldout_l1: h_l1,
            heldout_adversarial: h_adv,
        });
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Dataset generation and persistence.

/// Renders `count` pairs from uniformly sampled collision-free poses.
/// Movers stand at their map start positions with headings drawn per pose.
pub fn generate_pairs(
    map: &WorldMap,
    config: &SimConfig,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PairSample>, GanError> {
    let bounds = map.bounds;
    let mut pairs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pairs.len() < count {
        attempts += 1;
        if attempts > count.saturating_mul(10_000) {
            return Err(GanError::Config(format!(
                "could not find {count} collision-free camera poses in {:?}",
                map.name
            )));
        }
        let movers: Vec<MoverState> = map
            .movers
            .iter()
            .map(|spec| MoverState {
                pos: spec.start,
                radius: spec.radius,
                speed: spec.speed,
                heading: rng.gen_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let pos = Vec2::new(
            rng.gen_range(bounds.min.x..bounds.max.x),
            rng.gen_range(bounds.min.y..bounds.max.y),
        );
        if clearance(map, &movers, pos) < config.reward.r_drone {
            continue;
        }
        let drone = DroneState {
            pos,
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
        };
        let x = render_pseudo_rgb(map, &movers, &drone, config)
            .map_err(|e| GanError::Config(e.to_string()))?;
        let obs = raycast_depth(map, &movers, &drone, config)
            .map_err(|e| GanError::Config(e.to_string()))?;
        let y = depth_image(&obs.depths, config);
        pairs.push(PairSample::new(x, y)?);
    }
    Ok(pairs)
}

const DATASET_KIND: &str = "pairs";

/// Writes pairs to a single checkpoint-container file.
pub fn save_pairs(path: impl AsRef<Path>, pairs: &[PairSample]) -> Result<(), GanError> {
    if pairs.is_empty() {
        return Err(GanError::Config("refusing to save an empty dataset".into()));
    }
    let (h, w) = (pairs[0].height(), pairs[0].width());
    for (i, p) in pairs.iter().enumerate() {
        if p.height() != h || p.width() != w {
            return Err(GanError::Config(format!(
                "pair {i} is {}x{}, dataset is {h}x{w}",
                p.height(),
                p.width()
            )));
        }
    }
    let meta = serde_json::json!({
        "kind": DATASET_KIND,
        "count": pairs.len(),
        "height": h,
        "width": w,
    });
    let mut records = Vec::with_capacity(pairs.len() * 2);
    for (i, p) in pairs.iter().enumerate() {
        records.push((format!("pair{i:05}.x"), p.x.clone()));
        records.push((format!("pair{i:05}.y"), p.y.clone()));
    }
    store::write(path.as_ref(), &meta, &records)?;
    Ok(())
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairSample>, GanError> {
    let (meta, records) = store::read(path.as_ref())?;
    let kind = meta.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if kind != DATASET_KIND {
        return Err(GanError::Config(format!(
            "expected a {DATASET_KIND:?} dataset file, found kind {kind:?}"
        )));
    }
    let count = meta
        .get("count")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| GanError::Config("dataset meta is missing count".into()))? as usize;
    let mut by_name: BTreeMap<String, Tensor> = records.into_iter().collect();
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let x = by_name
            .remove(&format!("pair{i:05}.x"))
            .ok_or_else(|| GanError::Config(format!("dataset is missing pair{i:05}.x")))?;
        let y = by_name
            .remove(&format!("pair{i:05}.y"))
            .ok_or_else(|| GanError::Config(format!("dataset is missing pair{i:05}.y")))?;
        pairs.push(PairSample::new(x, y)?);
    }
    if !by_name.is_empty() {
        let extra: Vec<&String> = by_name.keys().take(3).collect();
        return Err(GanError::Config(format!(
            "dataset holds unexpected records: {extra:?}"
        )));
    }
    Ok(pairs)
}

const GAN_KIND: &str = "gan";

/// Saves both networks and the training configuration to one file.
pub fn save_gan(
    path: impl AsRef<Path>,
    gen: &GenParams,
    disc: &DiscParams,
    cfg: &GanConfig,
) -> Result<(), GanError> {
    let meta = serde_json::json!({
        "kind": GAN_KIND,
        "config": cfg,
        "height": disc.in_h,
        "width": disc.in_w,
    });
    let mut records = Vec::new();
    gen.visit(&mut |n, t| records.push((format!("g.{n}"), t.clone())));
    disc.visit(&mut |n, t| records.push((format!("d.{n}"), t.clone())));
    store::write(path.as_ref(), &meta, &records)?;
    Ok(())
}

pub fn load_gan(
    path: impl AsRef<Path>,
) -> Result<(GenParams, DiscParams, GanConfig), GanError> {
    let (meta, records) = store::read(path.as_ref())?;
    let kind = meta.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if kind != GAN_KIND {
        return Err(GanError::Config(format!(
            "expected a {GAN_KIND:?} checkpoint, found kind {kind:?}"
        )));
    }
    let cfg: GanConfig = serde_json::from_value(
        meta.get("config")
            .cloned()
            .ok_or_else(|| GanError::Config("gan checkpoint is missing config".into()))?,
    )
    .map_err(|e| GanError::Config(format!("bad gan config in checkpoint: {e}")))?;
    let h = meta.get("height").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let w = meta.get("width").and_then(|v| v.as_u64()).unwrap_or(0) as usize;

    let mut by_name: BTreeMap<String, Tensor> = records.into_iter().collect();
    let mut gen = GenParams::zeros();
    let mut disc = DiscParams::zeros(h, w)?;
    let mut missing = Vec::new();
    let mut fill = |prefix: &str, name: &str, slot: &mut Tensor| {
        let key = format!("{prefix}.{name}");
        match by_name.remove(&key) {
            Some(t) if t.shape() == slot.shape() => *slot = t,
            Some(t) => missing.push(format!(
                "{key} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )),
            None => missing.push(format!("{key} is missing")),
        }
    };
    gen.visit_mut(&mut |n, t| fill("g", n, t));
    disc.visit_mut(&mut |n, t| fill("d", n, t));
    if !missing.is_empty() {
        return Err(GanError::Config(format!(
            "gan checkpoint mismatch: {}",
            missing.join("; ")
        )));
    }
    if !by_name.is_empty() {
        let extra: Vec<&String> = by_name.keys().take(3).collect();
        return Err(GanError::Config(format!(
            "gan checkpoint holds unexpected records: {extra:?}"
        )));
    }
    Ok((gen, disc, cfg))
}
