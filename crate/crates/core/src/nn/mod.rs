//! Chunked behaviour-cloning network with hand-written reverse mode.
//!
//! Each of the three views is average-pooled to `pooled_side`² values in
//! `[0, 1]` and passed through two tanh layers. The normalised arm
//! proprioception gets one tanh layer. The concatenation feeds a two layer
//! tanh trunk and a linear head emitting `chunk_len` × 16 values.

pub mod checkpoint;
pub mod optim;
pub mod train;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{invalid, ConfigError};
use crate::cotrain::TrainSample;
use crate::dataset::NormStats;
use crate::sim::render::{TOP_SIZE, WRIST_SIZE};
use crate::sim::{Observation, RasterView, ACTION_DIMS, ARM_DIMS};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use optim::AdamW;
pub use train::{pretrain_then_finetune, train, LossMask, TrainConfig, TrainError, TrainOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite loss for sample {sample}")]
    NonFiniteLoss { sample: usize },
    #[error("training diverged at step {step}: loss {loss} > 1e3 x initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("empty batch")]
    EmptyBatch,
}

/// Architecture descriptor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub chunk_len: usize,
    /// `(width, height)` of top, left wrist and right wrist rasters.
    pub view_sizes: [(usize, usize); 3],
    pub pooled_side: usize,
    pub view_hidden: usize,
    pub proprio_hidden: usize,
    pub trunk_hidden: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            chunk_len: 45,
            view_sizes: [(TOP_SIZE, TOP_SIZE), (WRIST_SIZE, WRIST_SIZE), (WRIST_SIZE, WRIST_SIZE)],
            pooled_side: 16,
            view_hidden: 256,
            proprio_hidden: 64,
            trunk_hidden: 256,
        }
    }
}

impl Arch {
    pub fn pooled_dim(&self) -> usize {
        self.pooled_side * self.pooled_side
    }

    pub fn output_dim(&self) -> usize {
        self.chunk_len * ACTION_DIMS
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chunk_len == 0 {
            return Err(invalid("chunk_len", "must be >= 1"));
        }
        if self.pooled_side == 0 || self.view_hidden == 0 || self.proprio_hidden == 0 || self.trunk_hidden == 0 {
            return Err(invalid("arch", "layer sizes must be >= 1"));
        }
        for (w, h) in self.view_sizes {
            if w % self.pooled_side != 0 || h % self.pooled_side != 0 {
                return Err(invalid("pooled_side", "must divide every raster side"));
            }
        }
        Ok(())
    }

    /// One-line summary, as logged.
    pub fn describe(&self, params: usize) -> String {
        let views: Vec<String> = self.view_sizes.iter().map(|(w, h)| format!("{w}x{h}")).collect();
        format!(
            "bc-mlp chunk={} views={} pool={} view_hidden={} proprio_hidden={} trunk_hidden={} params={}",
            self.chunk_len,
            views.join(","),
            self.pooled_side,
            self.view_hidden,
            self.proprio_hidden,
            self.trunk_hidden,
            params
        )
    }
}

/// `y = x Wᵀ + b` for a batch `x` of shape `(B, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// Shape `(out, in)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    /// Weights uniform in `±1/sqrt(input)`, zero bias, f32-representable.
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = Array2::from_shape_simple_fn((output, input), || {
            f64::from(rng.random_range(-bound..bound) as f32)
        });
        Self {
            w,
            b: Array1::zeros(output),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, gy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &gy.t().dot(x);
        grad.b += &gy.sum_axis(Axis(0));
        gy.dot(&self.w)
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

pub(crate) fn tanh_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(f64::tanh);
}

/// `gz = gy ⊙ (1 - y²)` for `y = tanh(z)`.
pub(crate) fn tanh_backward(y: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut g = gy.clone();
    g.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y);
    g
}

/// Network inputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Inputs {
    pub views: [Array2<f64>; 3],
    pub proprio: Array2<f64>,
}

/// Average-pools a raster to `side × side`, scaled to `[0, 1]`.
pub fn pool_into(view: &RasterView<'_>, side: usize, out: &mut [f64]) {
    let fx = view.width / side;
    let fy = view.height / side;
    let scale = 1.0 / (255.0 * (fx * fy) as f64);
    for (r, row) in out.chunks_exact_mut(side).enumerate() {
        for (c, o) in row.iter_mut().enumerate() {
            let mut acc = 0u32;
            for y in r * fy..(r + 1) * fy {
                let line = &view.data[y * view.width + c * fx..y * view.width + (c + 1) * fx];
                acc += line.iter().map(|&p| u32::from(p)).sum::<u32>();
            }
            *o = f64::from(acc) * scale;
        }
    }
}

impl Inputs {
    /// `proprio` is already normalised.
    pub fn from_views(arch: &Arch, items: &[([RasterView<'_>; 3], [f64; ARM_DIMS])]) -> Result<Self, NnError> {
        let b = items.len();
        let d = arch.pooled_dim();
        let mut views = [Array2::zeros((b, d)), Array2::zeros((b, d)), Array2::zeros((b, d))];
        let mut proprio = Array2::zeros((b, ARM_DIMS));
        for (i, (rasters, p)) in items.iter().enumerate() {
            for (v, raster) in rasters.iter().enumerate() {
                if (raster.width, raster.height) != arch.view_sizes[v] || raster.data.len() != raster.width * raster.height {
                    return Err(NnError::Dimension(format!(
                        "view {v} is {}x{}, architecture expects {:?}",
                        raster.width, raster.height, arch.view_sizes[v]
                    )));
                }
                let mut row = views[v].row_mut(i);
                pool_into(raster, arch.pooled_side, row.as_slice_mut().expect("standard layout"));
            }
            proprio.row_mut(i).assign(&Array1::from(p.to_vec()));
        }
        Ok(Self { views, proprio })
    }

    pub fn from_samples(arch: &Arch, batch: &[TrainSample<'_>]) -> Result<Self, NnError> {
        let items: Vec<_> = batch.iter().map(|s| (s.views, s.proprio)).collect();
        Self::from_views(arch, &items)
    }

    pub fn from_observation(arch: &Arch, obs: &Observation, stats: &NormStats) -> Result<Self, NnError> {
        Self::from_views(arch, &[(obs.views(), stats.normalize_proprio(&obs.proprio))])
    }

    pub fn batch_size(&self) -> usize {
        self.proprio.nrows()
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    h1: [Array2<f64>; 3],
    h2: [Array2<f64>; 3],
    p: Array2<f64>,
    concat: Array2<f64>,
    t1: Array2<f64>,
    t2: Array2<f64>,
    pub out: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub arch: Arch,
    /// Two layers per view.
    pub views: [[Dense; 2]; 3],
    pub proprio: Dense,
    pub trunk: [Dense; 2],
    pub head: Dense,
}

impl PolicyNet {
    pub fn new(arch: &Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = arch.pooled_dim();
        let vh = arch.view_hidden;
        let mut view = || [Dense::init(d, vh, &mut rng), Dense::init(vh, vh, &mut rng)];
        let views = [view(), view(), view()];
        let proprio = Dense::init(ARM_DIMS, arch.proprio_hidden, &mut rng);
        let th = arch.trunk_hidden;
        let trunk = [
            Dense::init(3 * vh + arch.proprio_hidden, th, &mut rng),
            Dense::init(th, th, &mut rng),
        ];
        let head = Dense::init(th, arch.output_dim(), &mut rng);
        Self {
            arch: arch.clone(),
            views,
            proprio,
            trunk,
            head,
        }
    }

    /// Every parameter zero.
    pub fn zeros_for(arch: &Arch) -> Self {
        let d = arch.pooled_dim();
        let vh = arch.view_hidden;
        let view = || [Dense::zeros(d, vh), Dense::zeros(vh, vh)];
        Self {
            arch: arch.clone(),
            views: [view(), view(), view()],
            proprio: Dense::zeros(ARM_DIMS, arch.proprio_hidden),
            trunk: [
                Dense::zeros(3 * vh + arch.proprio_hidden, arch.trunk_hidden),
                Dense::zeros(arch.trunk_hidden, arch.trunk_hidden),
            ],
            head: Dense::zeros(arch.trunk_hidden, arch.output_dim()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros_for(&self.arch)
    }

    /// Layers in parameter order.
    pub fn layers(&self) -> Vec<&Dense> {
        let mut out: Vec<&Dense> = self.views.iter().flatten().collect();
        out.push(&self.proprio);
        out.extend(self.trunk.iter());
        out.push(&self.head);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out: Vec<&mut Dense> = self.views.iter_mut().flatten().collect();
        out.push(&mut self.proprio);
        out.extend(self.trunk.iter_mut());
        out.push(&mut self.head);
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.len()).sum()
    }

    /// All parameters in a fixed order: per layer, `w` row-major then `b`.
    pub fn params(&self) -> Vec<f64> {
        self.layers().into_iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.num_params() {
            return Err(NnError::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for layer in self.layers_mut() {
            for (p, v) in layer.values_mut().zip(&mut it) {
                *p = *v;
            }
        }
        Ok(())
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in self.layers_mut() {
            if index < layer.len() {
                return layer.values_mut().nth(index).expect("index in range");
            }
            index -= layer.len();
        }
        panic!("parameter index out of range");
    }

    pub fn forward_cached(&self, x: &Inputs) -> Result<Cache, NnError> {
        let d = self.arch.pooled_dim();
        for v in &x.views {
            if v.ncols() != d {
                return Err(NnError::Dimension(format!("view features {} != {d}", v.ncols())));
            }
        }
        if x.proprio.ncols() != ARM_DIMS {
            return Err(NnError::Dimension(format!("proprio {} != {ARM_DIMS}", x.proprio.ncols())));
        }
        let mut h1: [Array2<f64>; 3] = Default::default();
        let mut h2: [Array2<f64>; 3] = Default::default();
        for v in 0..3 {
            h1[v] = self.views[v][0].forward(&x.views[v]);
            tanh_inplace(&mut h1[v]);
            h2[v] = self.views[v][1].forward(&h1[v]);
            tanh_inplace(&mut h2[v]);
        }
        let mut p = self.proprio.forward(&x.proprio);
        tanh_inplace(&mut p);
        let concat = ndarray::concatenate(Axis(1), &[h2[0].view(), h2[1].view(), h2[2].view(), p.view()])
            .expect("equal row counts");
        let mut t1 = self.trunk[0].forward(&concat);
        tanh_inplace(&mut t1);
        let mut t2 = self.trunk[1].forward(&t1);
        tanh_inplace(&mut t2);
        let out = self.head.forward(&t2);
        Ok(Cache {
            h1,
            h2,
            p,
            concat,
            t1,
            t2,
            out,
        })
    }

    /// Predicted chunks, shape `(B, chunk_len * 16)`, normalised space.
    pub fn forward(&self, x: &Inputs) -> Result<Array2<f64>, NnError> {
        Ok(self.forward_cached(x)?.out)
    }

    /// Gradients of a loss given `gout = dL/d(out)`.
    pub fn backward(&self, x: &Inputs, cache: &Cache, gout: &Array2<f64>) -> PolicyNet {
        let mut g = self.zeros_like();
        let gt2 = self.head.backward(&cache.t2, gout, &mut g.head);
        let gz2 = tanh_backward(&cache.t2, &gt2);
        let gt1 = self.trunk[1].backward(&cache.t1, &gz2, &mut g.trunk[1]);
        let gz1 = tanh_backward(&cache.t1, &gt1);
        let gcat = self.trunk[0].backward(&cache.concat, &gz1, &mut g.trunk[0]);
        let vh = self.arch.view_hidden;
        for v in 0..3 {
            let gh2 = gcat.slice(ndarray::s![.., v * vh..(v + 1) * vh]).to_owned();
            let gz = tanh_backward(&cache.h2[v], &gh2);
            let gh1 = self.views[v][1].backward(&cache.h1[v], &gz, &mut g.views[v][1]);
            let gz = tanh_backward(&cache.h1[v], &gh1);
            self.views[v][0].backward(&x.views[v], &gz, &mut g.views[v][0]);
        }
        let gp = gcat.slice(ndarray::s![.., 3 * vh..]).to_owned();
        let gz = tanh_backward(&cache.p, &gp);
        self.proprio.backward(&x.proprio, &gz, &mut g.proprio);
        g
    }
}

/// Mean over the batch of each sample's mean absolute error over its
/// included elements. `weights` is 1 for included and 0 for masked entries.
pub fn l1_loss(pred: &Array2<f64>, target: &Array2<f64>, weights: &Array2<f64>) -> f64 {
    per_sample_l1(pred, target, weights).iter().sum::<f64>() / pred.nrows() as f64
}

pub fn per_sample_l1(pred: &Array2<f64>, target: &Array2<f64>, weights: &Array2<f64>) -> Vec<f64> {
    (0..pred.nrows())
        .map(|i| {
            let (mut sum, mut n) = (0.0, 0.0);
            for ((p, t), w) in pred.row(i).iter().zip(target.row(i)).zip(weights.row(i)) {
                sum += w * (p - t).abs();
                n += w;
            }
            if n > 0.0 {
                sum / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Subgradient of [`l1_loss`] with respect to `pred`; zero where equal.
pub fn l1_grad(pred: &Array2<f64>, target: &Array2<f64>, weights: &Array2<f64>) -> Array2<f64> {
    let b = pred.nrows() as f64;
    let mut g = Array2::zeros(pred.raw_dim());
    for i in 0..pred.nrows() {
        let n: f64 = weights.row(i).sum();
        if n == 0.0 {
            continue;
        }
        for j in 0..pred.ncols() {
            let diff = pred[[i, j]] - target[[i, j]];
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            g[[i, j]] = s * weights[[i, j]] / (n * b);
        }
    }
    g
}

/// Flattened targets and weights for a batch.
pub fn batch_targets(batch: &[TrainSample<'_>], mask: LossMask) -> (Array2<f64>, Array2<f64>) {
    let k = batch.first().map_or(0, |s| s.target.len());
    let mut t = Array2::zeros((batch.len(), k * ACTION_DIMS));
    let mut w = Array2::ones((batch.len(), k * ACTION_DIMS));
    for (i, s) in batch.iter().enumerate() {
        for (r, row) in s.target.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                t[[i, r * ACTION_DIMS + c]] = *v;
                if mask == LossMask::Mask && s.pad[r] {
                    w[[i, r * ACTION_DIMS + c]] = 0.0;
                }
            }
        }
    }
    (t, w)
}

/// Loss and parameter gradients of one batch.
pub fn loss_and_grad(
    net: &PolicyNet,
    x: &Inputs,
    target: &Array2<f64>,
    weights: &Array2<f64>,
) -> Result<(f64, PolicyNet), NnError> {
    if x.batch_size() == 0 {
        return Err(NnError::EmptyBatch);
    }
    let cache = net.forward_cached(x)?;
    if cache.out.dim() != target.dim() || target.dim() != weights.dim() {
        return Err(NnError::Dimension(format!(
            "prediction {:?} vs target {:?}",
            cache.out.dim(),
            target.dim()
        )));
    }
    let losses = per_sample_l1(&cache.out, target, weights);
    if let Some(sample) = losses.iter().position(|l| !l.is_finite()) {
        return Err(NnError::NonFiniteLoss { sample });
    }
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let gout = l1_grad(&cache.out, target, weights);
    Ok((loss, net.backward(x, &cache, &gout)))
}

/// Rows of a flat prediction, denormalised to physical units.
pub fn denormalize_chunk(row: ndarray::ArrayView1<'_, f64>, stats: &NormStats) -> Vec<[f64; ACTION_DIMS]> {
    row.as_slice()
        .expect("contiguous")
        .chunks_exact(ACTION_DIMS)
        .map(|c| stats.denormalize_action(&c.try_into().expect("16 values")))
        .collect()
}

/// A trained network with the statistics it was trained under.
#[derive(Clone, Debug)]
pub struct BcPolicy {
    pub net: PolicyNet,
    pub stats: NormStats,
}

impl BcPolicy {
    /// Physical-unit chunk for one observation.
    pub fn predict(&self, obs: &Observation) -> Result<Vec<[f64; ACTION_DIMS]>, NnError> {
        let x = Inputs::from_observation(&self.net.arch, obs, &self.stats)?;
        let out = self.net.forward(&x)?;
        Ok(denormalize_chunk(out.row(0), &self.stats))
    }
}
