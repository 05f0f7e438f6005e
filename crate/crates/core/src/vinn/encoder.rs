//! Conv-free patch encoder and its augmentation-consistency training.
//!
//! A raster is area-pooled to 16×16 and cut into sixteen 4×4 patches. One
//! shared two-layer MLP (tanh, then linear) maps each patch to a few
//! features; the per-patch features are concatenated.
//!
//! Training follows the online/target scheme: a linear predictor on top of
//! the online encoder regresses the target encoder's features of a second
//! augmentation under a cosine loss, and the target tracks the online
//! weights by exponential moving average.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{invalid, ConfigError};
use crate::config_keys;
use crate::cotrain::{align_cameras, CotrainError};
use crate::dataset::Episode;
use crate::derive_seed;
use crate::nn::{tanh_backward, tanh_inplace, AdamW, Dense, NnError};
use crate::sim::RasterView;

pub const POOL_SIDE: usize = 16;
pub const PATCH_SIDE: usize = 4;
pub const PATCHES: usize = (POOL_SIDE / PATCH_SIDE) * (POOL_SIDE / PATCH_SIDE);
pub const PATCH_DIM: usize = PATCH_SIDE * PATCH_SIDE;
pub const POOLED_DIM: usize = POOL_SIDE * POOL_SIDE;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub patch_features: usize,
    /// Every `frame_stride`-th step of every episode is a training frame.
    pub frame_stride: usize,
    pub rho_static: f64,
    /// Side of the random crop as a fraction of the raster side.
    pub crop_frac: f64,
    /// Brightness factor drawn uniformly from `1 ± brightness`.
    pub brightness: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 128,
            epochs: 100,
            momentum: 0.9,
            weight_decay: 1.5e-6,
            hidden: 16,
            patch_features: 4,
            frame_stride: 10,
            rho_static: 0.5,
            crop_frac: 0.875,
            brightness: 0.2,
            seed: 0,
        }
    }
}

fn check_encoder(c: &EncoderConfig) -> Result<(), ConfigError> {
    if !(c.lr > 0.0) || !c.lr.is_finite() {
        return Err(invalid("lr", "must be positive"));
    }
    if c.batch_size == 0 {
        return Err(invalid("batch_size", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&c.momentum) {
        return Err(invalid("momentum", "must be in [0, 1]"));
    }
    if !(c.weight_decay >= 0.0) {
        return Err(invalid("weight_decay", "must be >= 0"));
    }
    if c.hidden == 0 || c.patch_features == 0 || c.frame_stride == 0 {
        return Err(invalid("hidden", "sizes and stride must be >= 1"));
    }
    if !(0.0..=1.0).contains(&c.rho_static) {
        return Err(invalid("rho_static", "must be in [0, 1]"));
    }
    if !(c.crop_frac > 0.0 && c.crop_frac <= 1.0) {
        return Err(invalid("crop_frac", "must be in (0, 1]"));
    }
    if !(0.0..1.0).contains(&c.brightness) {
        return Err(invalid("brightness", "must be in [0, 1)"));
    }
    Ok(())
}

config_keys!(
    EncoderConfig,
    [
        lr,
        batch_size,
        epochs,
        momentum,
        weight_decay,
        hidden,
        patch_features,
        frame_stride,
        rho_static,
        crop_frac,
        brightness,
        seed,
    ],
    validate = check_encoder
);

/// Area-pools the `w × h` region at `(x0, y0)` to 16×16 values in `[0, 1]`.
/// Pixel `(y, x)` of the region lands in cell `(y·16/h, x·16/w)`.
pub fn pool_region(view: &RasterView<'_>, x0: usize, y0: usize, w: usize, h: usize, out: &mut [f64]) {
    assert!(w >= POOL_SIDE && h >= POOL_SIDE && x0 + w <= view.width && y0 + h <= view.height);
    let mut sum = [0u32; POOLED_DIM];
    let mut count = [0u32; POOLED_DIM];
    for y in 0..h {
        let r = y * POOL_SIDE / h;
        let line = &view.data[(y0 + y) * view.width + x0..(y0 + y) * view.width + x0 + w];
        for (x, &p) in line.iter().enumerate() {
            let cell = r * POOL_SIDE + x * POOL_SIDE / w;
            sum[cell] += u32::from(p);
            count[cell] += 1;
        }
    }
    for ((o, s), c) in out.iter_mut().zip(sum).zip(count) {
        *o = f64::from(s) / (255.0 * f64::from(c));
    }
}

pub fn pool_view(view: &RasterView<'_>) -> [f64; POOLED_DIM] {
    let mut out = [0.0; POOLED_DIM];
    pool_region(view, 0, 0, view.width, view.height, &mut out);
    out
}

/// One random crop plus brightness jitter, pooled.
pub fn augment(view: &RasterView<'_>, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> [f64; POOLED_DIM] {
    let cw = ((view.width as f64 * cfg.crop_frac).round() as usize).clamp(POOL_SIDE.min(view.width), view.width);
    let ch = ((view.height as f64 * cfg.crop_frac).round() as usize).clamp(POOL_SIDE.min(view.height), view.height);
    let x0 = rng.random_range(0..=view.width - cw);
    let y0 = rng.random_range(0..=view.height - ch);
    let mut out = [0.0; POOLED_DIM];
    pool_region(view, x0, y0, cw, ch, &mut out);
    let gain = if cfg.brightness > 0.0 {
        1.0 + rng.random_range(-cfg.brightness..cfg.brightness)
    } else {
        1.0
    };
    for v in &mut out {
        *v = (*v * gain).min(1.0);
    }
    out
}

/// `(B, 256)` pooled images to `(B · 16, 16)` patch rows.
fn patchify(pooled: &Array2<f64>) -> Array2<f64> {
    let b = pooled.nrows();
    let grid = POOL_SIDE / PATCH_SIDE;
    let mut out = Array2::zeros((b * PATCHES, PATCH_DIM));
    for i in 0..b {
        for p in 0..PATCHES {
            let (pr, pc) = (p / grid, p % grid);
            for y in 0..PATCH_SIDE {
                for x in 0..PATCH_SIDE {
                    out[[i * PATCHES + p, y * PATCH_SIDE + x]] =
                        pooled[[i, (pr * PATCH_SIDE + y) * POOL_SIDE + pc * PATCH_SIDE + x]];
                }
            }
        }
    }
    out
}

struct EncoderCache {
    patches: Array2<f64>,
    h: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub patch: Dense,
    pub proj: Dense,
}

impl Encoder {
    pub fn new(hidden: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            patch: Dense::init(PATCH_DIM, hidden, &mut rng),
            proj: Dense::init(hidden, features, &mut rng),
        }
    }

    pub fn from_config(cfg: &EncoderConfig) -> Self {
        Self::new(cfg.hidden, cfg.patch_features, cfg.seed)
    }

    pub fn zeros(hidden: usize, features: usize) -> Self {
        Self {
            patch: Dense::zeros(PATCH_DIM, hidden),
            proj: Dense::zeros(hidden, features),
        }
    }

    pub fn hidden(&self) -> usize {
        self.patch.w.nrows()
    }

    pub fn patch_features(&self) -> usize {
        self.proj.w.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        PATCHES * self.patch_features()
    }

    pub fn num_params(&self) -> usize {
        self.patch.len() + self.proj.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.patch.values().chain(self.proj.values()).copied().collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.num_params() {
            return Err(NnError::Dimension(format!(
                "{} encoder parameters, expected {}",
                values.len(),
                self.num_params()
            )));
        }
        for (p, v) in self.patch.values_mut().chain(self.proj.values_mut()).zip(values) {
            *p = *v;
        }
        Ok(())
    }

    fn forward_cached(&self, pooled: &Array2<f64>) -> (Array2<f64>, EncoderCache) {
        let patches = patchify(pooled);
        let mut h = self.patch.forward(&patches);
        tanh_inplace(&mut h);
        let out = self.proj.forward(&h);
        let f = self.feature_dim();
        let out = out.into_shape_with_order((pooled.nrows(), f)).expect("row-major patch rows");
        (out, EncoderCache { patches, h })
    }

    /// `(B, 256)` pooled images to `(B, feature_dim)` features.
    pub fn forward(&self, pooled: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(pooled).0
    }

    fn backward(&self, cache: &EncoderCache, gout: &Array2<f64>) -> Encoder {
        let mut g = Encoder::zeros(self.hidden(), self.patch_features());
        let rows = gout.nrows() * PATCHES;
        let gout = gout
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, self.patch_features()))
            .expect("row-major features");
        let gh = self.proj.backward(&cache.h, &gout, &mut g.proj);
        let gz = tanh_backward(&cache.h, &gh);
        self.patch.backward(&cache.patches, &gz, &mut g.patch);
        g
    }

    pub fn encode_view(&self, view: &RasterView<'_>) -> Vec<f64> {
        let pooled = Array2::from_shape_vec((1, POOLED_DIM), pool_view(view).to_vec()).expect("256 values");
        self.forward(&pooled).into_raw_vec_and_offset().0
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![&mut self.patch, &mut self.proj]
    }

    fn layers(&self) -> Vec<&Dense> {
        vec![&self.patch, &self.proj]
    }
}

/// `1 - cos(u, v)` per row and its gradient with respect to `u`, with `v`
/// held fixed. Rows are averaged.
pub fn cosine_loss(u: &Array2<f64>, v: &Array2<f64>) -> (f64, Array2<f64>) {
    let b = u.nrows() as f64;
    let mut g = Array2::zeros(u.raw_dim());
    let mut total = 0.0;
    for i in 0..u.nrows() {
        let (ur, vr) = (u.row(i), v.row(i));
        let nu = ur.dot(&ur).sqrt().max(1e-12);
        let nv = vr.dot(&vr).sqrt().max(1e-12);
        let cos = ur.dot(&vr) / (nu * nv);
        total += 1.0 - cos;
        for j in 0..u.ncols() {
            g[[i, j]] = -(vr[j] / (nu * nv) - cos * ur[j] / (nu * nu)) / b;
        }
    }
    (total / b, g)
}

#[derive(Clone, Debug)]
pub struct EncoderOutcome {
    pub encoder: Encoder,
    pub losses: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("no training frames")]
    NoFrames,
    #[error("encoder training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] CotrainError),
}

/// Training frames: `(episode, step, camera)` triples with the camera
/// already mapped through [`align_cameras`].
fn frames(corpus: &[Episode], stride: usize) -> Result<Vec<(usize, usize, usize)>, CotrainError> {
    let mut out = Vec::new();
    for (e, ep) in corpus.iter().enumerate() {
        let cams = align_cameras(&ep.header)?;
        for t in (0..ep.len()).step_by(stride) {
            for &c in &cams {
                out.push((e, t, c));
            }
        }
    }
    Ok(out)
}

/// Trains an encoder on frames of both corpora. One epoch is
/// `ceil(frames / batch_size)` steps, where `frames` counts every strided
/// frame of every view in both corpora; each batch element comes from the
/// static corpus with probability `rho_static`.
pub fn train_encoder(mobile: &[Episode], static_: &[Episode], cfg: &EncoderConfig) -> Result<EncoderOutcome, EncoderError> {
    crate::config::ConfigKeys::validate(cfg)?;
    let mut online = Encoder::from_config(cfg);
    let mobile_frames = frames(mobile, cfg.frame_stride)?;
    let static_frames = frames(static_, cfg.frame_stride)?;
    let total = mobile_frames.len() + static_frames.len();
    if total == 0 {
        return Err(EncoderError::NoFrames);
    }
    let steps = cfg.epochs * total.div_ceil(cfg.batch_size);
    let mut losses = Vec::with_capacity(steps);
    if steps == 0 {
        return Ok(EncoderOutcome {
            encoder: online,
            losses,
            steps,
        });
    }
    let rho = match (mobile_frames.is_empty(), static_frames.is_empty()) {
        (true, _) => 1.0,
        (_, true) => 0.0,
        _ => cfg.rho_static,
    };
    let f = online.feature_dim();
    let mut pred_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut predictor = Dense::init(f, f, &mut pred_rng);
    let mut target = online.clone();
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay, online.num_params() + predictor.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let b = cfg.batch_size;
    for step in 0..steps {
        let mut a1 = Array2::zeros((b, POOLED_DIM));
        let mut a2 = Array2::zeros((b, POOLED_DIM));
        for i in 0..b {
            let (corpus, list) = if rng.random_bool(rho) {
                (static_, &static_frames)
            } else {
                (mobile, &mobile_frames)
            };
            let (e, t, c) = list[rng.random_range(0..list.len())];
            let view = corpus[e].raster(t, c);
            a1.row_mut(i).assign(&ndarray::ArrayView1::from(&augment(&view, cfg, &mut rng)[..]));
            a2.row_mut(i).assign(&ndarray::ArrayView1::from(&augment(&view, cfg, &mut rng)[..]));
        }
        let mut loss = 0.0;
        let mut g_enc = Encoder::zeros(online.hidden(), online.patch_features());
        let mut g_pred = Dense::zeros(f, f);
        for (x, y) in [(&a1, &a2), (&a2, &a1)] {
            let (z, cache) = online.forward_cached(x);
            let p = predictor.forward(&z);
            let t = target.forward(y);
            let (l, gp) = cosine_loss(&p, &t);
            loss += l;
            let gz = predictor.backward(&z, &gp, &mut g_pred);
            let g = online.backward(&cache, &gz);
            g_enc.patch.w += &g.patch.w;
            g_enc.patch.b += &g.patch.b;
            g_enc.proj.w += &g.proj.w;
            g_enc.proj.b += &g.proj.b;
        }
        if !loss.is_finite() {
            return Err(EncoderError::Diverged { step });
        }
        losses.push(loss);
        let mut layers = online.layers_mut();
        layers.push(&mut predictor);
        let mut grads = g_enc.layers();
        grads.push(&g_pred);
        opt.step_layers(layers, grads);
        for (t, o) in target.layers_mut().into_iter().zip(online.layers()) {
            for (tv, ov) in t.values_mut().zip(o.values()) {
                *tv = cfg.momentum * *tv + (1.0 - cfg.momentum) * ov;
            }
        }
    }
    Ok(EncoderOutcome {
        encoder: online,
        losses,
        steps,
    })
}
