//! Channel-flexible CNN classifier, written directly against the tensor ops
//! in [`layers`]. The first convolution takes however many input channels the
//! data has, and global average pooling makes the head independent of window
//! size, so one architecture serves any (c, k) combination.
//!
//! Determinism contract: training is a pure function of (data, config). Per-
//! sample augmentation RNG is keyed by (seed, epoch, dataset index) and
//! per-sample gradients are reduced in dataset order, so thread scheduling
//! never changes the result.

pub mod layers;
pub mod tensor;


use crate::error::{Error, Result};
use crate::models::mix_seed3;
use crate::query::CnnPreset;
use layers::{
    gap, gap_backward, maxpool2, maxpool2_backward, relu, relu_backward, Conv2d, GroupNorm,
    Linear, NormCache, PoolCache,
};
use num_traits::Float;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tensor::{t, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// Per-class weights applied to the loss and its gradient.
    WeightedCrossEntropy { weights: Vec<f64> },
    /// Down-weights easy examples by (1-p)^gamma.
    Focal { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexCnnConfig {
    pub input_channels: usize,
    pub classes: usize,
    pub preset: CnnPreset,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate divides by 10 every this many epochs (0 = never).
    pub lr_step_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Random crop (reflect pad 4) then horizontal flip, training only.
    pub augment: bool,
    pub loss: LossKind,
    pub seed: u64,
}

impl FlexCnnConfig {
    /// Sized for laptop-scale runs and the test suite.
    pub fn desk(input_channels: usize, classes: usize, preset: CnnPreset) -> Self {
        FlexCnnConfig {
            input_channels,
            classes,
            preset,
            epochs: 50,
            batch_size: 64,
            lr: 0.1,
            lr_step_epochs: 20,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: true,
            loss: LossKind::CrossEntropy,
            seed: 0,
        }
    }

    /// The schedule used for full-scale training runs.
    pub fn full_scale(input_channels: usize, classes: usize, preset: CnnPreset) -> Self {
        FlexCnnConfig {
            epochs: 400,
            batch_size: 512,
            lr_step_epochs: 100,
            ..Self::desk(input_channels, classes, preset)
        }
    }
}

/// One stage: `blocks` residual-or-plain blocks at `width` channels, followed
/// by a 2x downsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub width: usize,
    pub blocks: usize,
    pub convs_per_block: usize,
    pub skip: bool,
}

/// Full architecture shape: optional stem width plus the stage list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub stem: Option<usize>,
    pub stages: Vec<StageSpec>,
}

fn stage(width: usize, blocks: usize, convs_per_block: usize, skip: bool) -> StageSpec {
    StageSpec {
        width,
        blocks,
        convs_per_block,
        skip,
    }
}

pub fn arch_for(preset: CnnPreset) -> ArchSpec {
    match preset {
        CnnPreset::FlexCnnSmall => ArchSpec {
            stem: None,
            stages: vec![stage(16, 1, 1, false), stage(32, 1, 1, false), stage(64, 1, 1, false)],
        },
        CnnPreset::ResnetMini => ArchSpec {
            stem: None,
            stages: vec![stage(16, 1, 1, true), stage(32, 1, 1, true), stage(64, 1, 1, true)],
        },
        // Stage layout of the classic 34-layer residual net. Provided for
        // completeness; far too heavy for the test suite, which exercises
        // construction and shapes only.
        CnnPreset::Resnet34 => ArchSpec {
            stem: Some(64),
            stages: vec![
                stage(64, 3, 2, true),
                stage(128, 4, 2, true),
                stage(256, 6, 2, true),
                stage(512, 3, 2, true),
            ],
        },
    }
}

/// Conv+norm pair; relu is applied between pairs and after the block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit<T> {
    pub conv: Conv2d<T>,
    pub norm: GroupNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub units: Vec<ConvUnit<T>>,
    /// None: plain block. Some(None): identity residual. Some(Some(conv)):
    /// 1x1 projection residual (channel count changed).
    pub skip: Option<Option<Conv2d<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexCnn<T> {
    pub config: FlexCnnConfig,
    pub arch: ArchSpec,
    pub stem: Option<ConvUnit<T>>,
    /// stages[s] holds the blocks; a maxpool follows each stage.
    pub stages: Vec<Vec<Block<T>>>,
    pub head: Linear<T>,
}

impl<T: Float> FlexCnn<T> {
    /// Build and initialize. Conv weights are He-style normal draws, the head
    /// is uniform in ±0.01 so untrained logits sit near zero, norms start at
    /// identity. All draws happen in f64 from a single seeded stream, so f32
    /// and f64 instances share parameter values exactly where f32 can
    /// represent them.
    pub fn init(config: &FlexCnnConfig, arch: &ArchSpec) -> Result<Self> {
        if config.input_channels == 0 {
            return Err(Error::DegenerateTraining("zero input channels".into()));
        }
        if config.classes < 2 {
            return Err(Error::DegenerateTraining(
                "need at least two classes".into(),
            ));
        }
        if arch.stages.is_empty() {
            return Err(Error::DegenerateTraining("architecture has no stages".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed3(config.seed, 0x1417, 0));
        let he_conv = |in_c: usize, out_c: usize, k: usize, rng: &mut ChaCha8Rng| {
            let mut conv = Conv2d::zeros(in_c, out_c, k);
            let std = (2.0 / (in_c * k * k) as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            for w in conv.weight.iter_mut() {
                *w = t(dist.sample(rng));
            }
            conv
        };

        let mut in_c = config.input_channels;
        let stem = arch.stem.map(|width| {
            let unit = ConvUnit {
                conv: he_conv(in_c, width, 3, &mut rng),
                norm: GroupNorm::identity(width),
            };
            in_c = width;
            unit
        });

        let mut stages = Vec::with_capacity(arch.stages.len());
        for spec in &arch.stages {
            if spec.width == 0 || spec.blocks == 0 || spec.convs_per_block == 0 {
                return Err(Error::DegenerateTraining("empty stage spec".into()));
            }
            let mut blocks = Vec::with_capacity(spec.blocks);
            for _ in 0..spec.blocks {
                let mut units = Vec::with_capacity(spec.convs_per_block);
                let block_in = in_c;
                for j in 0..spec.convs_per_block {
                    let uin = if j == 0 { block_in } else { spec.width };
                    units.push(ConvUnit {
                        conv: he_conv(uin, spec.width, 3, &mut rng),
                        norm: GroupNorm::identity(spec.width),
                    });
                }
                let skip = if spec.skip {
                    if block_in == spec.width {
                        Some(None)
                    } else {
                        Some(Some(he_conv(block_in, spec.width, 1, &mut rng)))
                    }
                } else {
                    None
                };
                blocks.push(Block { units, skip });
                in_c = spec.width;
            }
            stages.push(blocks);
        }

        let mut head = Linear::zeros(in_c, config.classes);
        for w in head.weight.iter_mut() {
            *w = t(rng.gen_range(-0.01..0.01));
        }
        Ok(FlexCnn {
            config: config.clone(),
            arch: arch.clone(),
            stem,
            stages,
            head,
        })
    }

    /// Parameter tensor names, in the fixed declaration order shared by
    /// `params`, `params_mut`, gradient flattening, and serialization.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.stem.is_some() {
            for part in ["conv.weight", "conv.bias", "norm.gamma", "norm.beta"] {
                names.push(format!("stem.{part}"));
            }
        }
        for (s, blocks) in self.stages.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                for j in 0..block.units.len() {
                    names.push(format!("s{s}.b{b}.conv{j}.weight"));
                    names.push(format!("s{s}.b{b}.conv{j}.bias"));
                    names.push(format!("s{s}.b{b}.norm{j}.gamma"));
                    names.push(format!("s{s}.b{b}.norm{j}.beta"));
                }
                if let Some(Some(_)) = &block.skip {
                    names.push(format!("s{s}.b{b}.proj.weight"));
                    names.push(format!("s{s}.b{b}.proj.bias"));
                }
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        if let Some(u) = &self.stem {
            out.extend([&u.conv.weight, &u.conv.bias, &u.norm.gamma, &u.norm.beta]);
        }
        for blocks in &self.stages {
            for block in blocks {
                for u in &block.units {
                    out.extend([&u.conv.weight, &u.conv.bias, &u.norm.gamma, &u.norm.beta]);
                }
                if let Some(Some(p)) = &block.skip {
                    out.extend([&p.weight, &p.bias]);
                }
            }
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        if let Some(u) = &mut self.stem {
            out.extend([
                &mut u.conv.weight,
                &mut u.conv.bias,
                &mut u.norm.gamma,
                &mut u.norm.beta,
            ]);
        }
        for blocks in &mut self.stages {
            for block in blocks {
                for u in &mut block.units {
                    out.extend([
                        &mut u.conv.weight,
                        &mut u.conv.bias,
                        &mut u.norm.gamma,
                        &mut u.norm.beta,
                    ]);
                }
                if let Some(Some(p)) = &mut block.skip {
                    out.extend([&mut p.weight, &mut p.bias]);
                }
            }
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

struct BlockCache<T> {
    block_in: Tensor<T>,
    norm_caches: Vec<NormCache<T>>,
    /// pre-relu activations between conv units; double as relu masks
    inter_pre: Vec<Tensor<T>>,
    /// pre-relu activation at the block output (after any residual add)
    final_pre: Tensor<T>,
}

pub struct ForwardCache<T> {
    stem: Option<(Tensor<T>, NormCache<T>, Tensor<T>)>,
    stages: Vec<(Vec<BlockCache<T>>, PoolCache)>,
    gap_in_shape: [usize; 4],
    head_in: Tensor<T>,
    pub logits: Tensor<T>,
}

struct BlockGrads<T> {
    /// per unit: conv weight, conv bias, norm gamma, norm beta
    units: Vec<[Vec<T>; 4]>,
    proj: Option<[Vec<T>; 2]>,
}

pub struct Grads<T> {
    stem: Option<[Vec<T>; 4]>,
    blocks: Vec<Vec<BlockGrads<T>>>,
    head: [Vec<T>; 2],
}

impl<T: Float> Grads<T> {
    /// Flatten into declaration order (matching `param_names`).
    pub fn flatten(self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        if let Some(s) = self.stem {
            out.extend(s);
        }
        for blocks in self.blocks {
            for b in blocks {
                for u in b.units {
                    out.extend(u);
                }
                if let Some(p) = b.proj {
                    out.extend(p);
                }
            }
        }
        out.extend(self.head);
        out
    }
}

fn block_forward<T: Float>(block: &Block<T>, x: Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
    let mut norm_caches = Vec::with_capacity(block.units.len());
    let mut inter_pre = Vec::new();
    let mut h = x.clone();
    let last = block.units.len() - 1;
    for (j, u) in block.units.iter().enumerate() {
        let a = u.conv.forward(&h);
        let (b, nc) = u.norm.forward(&a);
        norm_caches.push(nc);
        if j < last {
            h = relu(&b);
            inter_pre.push(b);
        } else {
            h = b;
        }
    }
    let pre = match &block.skip {
        None => h,
        Some(None) => h.add(&x),
        Some(Some(proj)) => h.add(&proj.forward(&x)),
    };
    let out = relu(&pre);
    (
        out,
        BlockCache {
            block_in: x,
            norm_caches,
            inter_pre,
            final_pre: pre,
        },
    )
}

fn block_backward<T: Float>(
    block: &Block<T>,
    cache: &BlockCache<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, BlockGrads<T>) {
    let dpre = relu_backward(dout, &cache.final_pre);
    let last = block.units.len() - 1;
    let (mut dskip_in, proj_grads) = match &block.skip {
        None => (None, None),
        Some(None) => (Some(dpre.clone()), None),
        Some(Some(proj)) => {
            let (dx, dw, db) = proj.backward(&cache.block_in, &dpre);
            (Some(dx), Some([dw, db]))
        }
    };
    let mut unit_grads: Vec<Option<[Vec<T>; 4]>> = (0..block.units.len()).map(|_| None).collect();
    let mut d = dpre;
    for j in (0..=last).rev() {
        let u = &block.units[j];
        let (dnorm_in, dgamma, dbeta) = u.norm.backward(&cache.norm_caches[j], &d);
        // conv j's input: the block input for j == 0, otherwise the relu of
        // the cached pre-activation
        let conv_in = if j == 0 {
            cache.block_in.clone()
        } else {
            relu(&cache.inter_pre[j - 1])
        };
        let (dconv_in, dw, db) = u.conv.backward(&conv_in, &dnorm_in);
        unit_grads[j] = Some([dw, db, dgamma, dbeta]);
        d = if j == 0 {
            dconv_in
        } else {
            relu_backward(&dconv_in, &cache.inter_pre[j - 1])
        };
    }
    if let Some(ds) = dskip_in.take() {
        d = d.add(&ds);
    }
    (
        d,
        BlockGrads {
            units: unit_grads.into_iter().map(|g| g.unwrap()).collect(),
            proj: proj_grads,
        },
    )
}

pub fn forward<T: Float>(model: &FlexCnn<T>, x: Tensor<T>) -> ForwardCache<T> {
    let mut h = x;
    let stem_cache = model.stem.as_ref().map(|u| {
        let input = h.clone();
        let a = u.conv.forward(&h);
        let (pre, nc) = u.norm.forward(&a);
        h = relu(&pre);
        (input, nc, pre)
    });
    let mut stage_caches = Vec::with_capacity(model.stages.len());
    for blocks in &model.stages {
        let mut block_caches = Vec::with_capacity(blocks.len());
        for block in blocks {
            let (out, cache) = block_forward(block, h);
            block_caches.push(cache);
            h = out;
        }
        let (out, pc) = maxpool2(&h);
        stage_caches.push((block_caches, pc));
        h = out;
    }
    let gap_in_shape = h.shape;
    let head_in = gap(&h);
    let logits = model.head.forward(&head_in);
    ForwardCache {
        stem: stem_cache,
        stages: stage_caches,
        gap_in_shape,
        head_in,
        logits,
    }
}

/// Backpropagate from dlogits through the whole network.
pub fn backward<T: Float>(
    model: &FlexCnn<T>,
    cache: &ForwardCache<T>,
    dlogits: &Tensor<T>,
) -> Grads<T> {
    let (dhead_in, dhw, dhb) = model.head.backward(&cache.head_in, dlogits);
    let mut d = gap_backward(cache.gap_in_shape, &dhead_in);
    let mut block_grads: Vec<Vec<BlockGrads<T>>> = Vec::with_capacity(model.stages.len());
    for (blocks, (caches, pool)) in model.stages.iter().zip(&cache.stages).rev() {
        d = maxpool2_backward(pool, &d);
        let mut stage_grads = Vec::with_capacity(blocks.len());
        for (block, bc) in blocks.iter().zip(caches).rev() {
            let (dx, g) = block_backward(block, bc, &d);
            d = dx;
            stage_grads.push(g);
        }
        stage_grads.reverse();
        block_grads.push(stage_grads);
    }
    block_grads.reverse();
    let stem_grads = model.stem.as_ref().map(|u| {
        let (input, nc, pre) = cache.stem.as_ref().unwrap();
        let dpre = relu_backward(&d, pre);
        let (dnorm_in, dgamma, dbeta) = u.norm.backward(nc, &dpre);
        let (_, dw, db) = u.conv.backward(input, &dnorm_in);
        [dw, db, dgamma, dbeta]
    });
    Grads {
        stem: stem_grads,
        blocks: block_grads,
        head: [dhw, dhb],
    }
}

#[inline]
fn onehot(j: usize, y: usize) -> f64 {
    if j == y {
        1.0
    } else {
        0.0
    }
}

/// Numerically stable softmax cross-entropy in f64.
/// Returns (loss, dloss/dlogits).
fn loss_and_dlogits(logits: &[f64], y: usize, loss: &LossKind) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let p = probs[y].max(1e-300);
    match loss {
        LossKind::CrossEntropy => {
            let l = -p.ln();
            let d = probs
                .iter()
                .enumerate()
                .map(|(j, &pj)| pj - onehot(j, y))
                .collect();
            (l, d)
        }
        LossKind::WeightedCrossEntropy { weights } => {
            let w = weights[y];
            let l = -w * p.ln();
            let d = probs
                .iter()
                .enumerate()
                .map(|(j, &pj)| w * (pj - onehot(j, y)))
                .collect();
            (l, d)
        }
        LossKind::Focal { gamma } => {
            let q = 1.0 - p;
            let l = -q.powf(*gamma) * p.ln();
            // dL/dp, then chain through dp/dz_j = p (delta_jy - p_j)
            let dl_dp = gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(*gamma) / p;
            let d = probs
                .iter()
                .enumerate()
                .map(|(j, &pj)| dl_dp * p * (onehot(j, y) - pj))
                .collect();
            (l, d)
        }
    }
}

pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Reflect-pad by 4, crop back to k at a random offset, then flip
/// horizontally with probability 1/2. Needs k >= 5 so reflection never
/// leaves the image.
fn augment_sample<T: Float>(x: &Tensor<T>, rng: &mut ChaCha8Rng) -> Tensor<T> {
    const PAD: usize = 4;
    let [n, c, h, w] = x.shape;
    debug_assert_eq!(n, 1);
    let dy = rng.gen_range(0..=2 * PAD) as isize;
    let dx = rng.gen_range(0..=2 * PAD) as isize;
    let flip = rng.gen_bool(0.5);
    let reflect = |i: isize, dim: usize| -> usize {
        let i = if i < 0 { -i } else { i };
        let i = i as usize;
        if i >= dim {
            2 * dim - 2 - i
        } else {
            i
        }
    };
    let mut out = Tensor::zeros(x.shape);
    for ci in 0..c {
        for hi in 0..h {
            let sh = reflect(hi as isize + dy - PAD as isize, h);
            for wi in 0..w {
                let wsrc = if flip { w - 1 - wi } else { wi };
                let sw = reflect(wsrc as isize + dx - PAD as isize, w);
                *out.at_mut(0, ci, hi, wi) = x.at(0, ci, sh, sw);
            }
        }
    }
    out
}

fn sample_tensor<T: Float>(row: &[f32], c: usize, k: usize) -> Tensor<T> {
    Tensor::from_vec(
        [1, c, k, k],
        row.iter().map(|&v| t::<T>(v as f64)).collect(),
    )
}

/// Infer the square window side from a row length, or explain why not.
fn infer_side(len: usize, c: usize) -> Result<usize> {
    if c == 0 || len % c != 0 {
        return Err(Error::ShapeMismatch(format!(
            "sample of {len} values is not divisible into {c} channels"
        )));
    }
    let per = len / c;
    let k = (per as f64).sqrt().round() as usize;
    if k * k != per || k == 0 {
        return Err(Error::ShapeMismatch(format!(
            "sample of {len} values over {c} channels is not a square window"
        )));
    }
    Ok(k)
}

fn validate_inputs(x: &[Vec<f32>], c: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::DegenerateTraining("no samples".into()));
    }
    let k = infer_side(x[0].len(), c)?;
    for (i, row) in x.iter().enumerate() {
        if row.len() != x[0].len() {
            return Err(Error::ShapeMismatch(format!(
                "sample {i} has {} values, expected {}",
                row.len(),
                x[0].len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "non-finite value in sample {i}"
            )));
        }
    }
    Ok(k)
}

/// Mean loss of the model on (x, y) under its configured loss, without
/// touching parameters. Useful for the "untrained loss is about ln(classes)"
/// check and for tests.
pub fn cnn_mean_loss<T: Float + Send + Sync>(
    model: &FlexCnn<T>,
    x: &[Vec<f32>],
    y: &[usize],
) -> Result<f64> {
    let c = model.config.input_channels;
    let k = validate_inputs(x, c)?;
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples for {} labels",
            x.len(),
            y.len()
        )));
    }
    // collect keeps sample order, so the (sequential) sum is deterministic
    let losses: Vec<f64> = x
        .par_iter()
        .zip(y)
        .map(|(row, &yi)| {
            let cache = forward(model, sample_tensor::<T>(row, c, k));
            let logits: Vec<f64> = cache.logits.data.iter().map(|&v| v.to_f64().unwrap()).collect();
            loss_and_dlogits(&logits, yi, &model.config.loss).0
        })
        .collect();
    Ok(losses.iter().sum::<f64>() / x.len() as f64)
}

/// Mean-loss analytic gradients per parameter tensor, accumulated in f64.
/// Lets callers compare gradient paths across float widths: an f32 and an f64
/// network share initialization (init draws happen in f64), so their analytic
/// gradients must agree to single precision even for tensors whose finite
/// differences f32 arithmetic cannot resolve (normalization makes the loss
/// nearly scale-invariant in the preceding weights).
pub fn analytic_mean_grads<T: Float + Send + Sync>(
    model: &FlexCnn<T>,
    x: &[Vec<f32>],
    y: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let c = model.config.input_channels;
    let k = validate_inputs(x, c)?;
    let b = x.len() as f64;
    let mut acc: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    for (row, &yi) in x.iter().zip(y) {
        let cache = forward(model, sample_tensor::<T>(row, c, k));
        let logits: Vec<f64> = cache
            .logits
            .data
            .iter()
            .map(|&v| v.to_f64().unwrap())
            .collect();
        let (_, dl) = loss_and_dlogits(&logits, yi, &model.config.loss);
        let dlogits = Tensor::from_vec(
            cache.logits.shape,
            dl.into_iter().map(|v| t::<T>(v / b)).collect(),
        );
        for (a, g) in acc.iter_mut().zip(backward(model, &cache, &dlogits).flatten()) {
            for (av, gv) in a.iter_mut().zip(g) {
                *av += gv.to_f64().unwrap();
            }
        }
    }
    Ok(acc)
}

fn sgd_step<T: Float>(
    model: &mut FlexCnn<T>,
    grads: &[Vec<T>],
    velocity: &mut [Vec<T>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = t::<T>(lr);
    let mu = t::<T>(momentum);
    let wd = t::<T>(weight_decay);
    for ((param, grad), vel) in model.params_mut().into_iter().zip(grads).zip(velocity) {
        for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
            let adjusted = g + wd * *p;
            *v = mu * *v + adjusted;
            *p = *p - lr * *v;
        }
    }
}

/// Train from scratch. Returns the model and the per-epoch mean training
/// loss. Samples are rows of c*k*k values, channel-major.
pub fn cnn_train(
    x: &[Vec<f32>],
    y: &[usize],
    config: &FlexCnnConfig,
) -> Result<(FlexCnn<f32>, Vec<f64>)> {
    let arch = arch_for(config.preset);
    cnn_train_with_arch(x, y, config, &arch)
}

/// Same as [`cnn_train`] but with an explicit architecture, for small custom
/// nets in tests and diagnostics.
pub fn cnn_train_with_arch(
    x: &[Vec<f32>],
    y: &[usize],
    config: &FlexCnnConfig,
    arch: &ArchSpec,
) -> Result<(FlexCnn<f32>, Vec<f64>)> {
    let c = config.input_channels;
    let k = validate_inputs(x, c)?;
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples for {} labels",
            x.len(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= config.classes) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} out of range for {} classes",
            config.classes
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::DegenerateTraining("batch_size must be > 0".into()));
    }
    if config.augment && k < 5 {
        return Err(Error::DegenerateTraining(format!(
            "augmentation needs windows of at least 5 pixels, got {k}"
        )));
    }
    match &config.loss {
        LossKind::WeightedCrossEntropy { weights } if weights.len() != config.classes => {
            return Err(Error::ShapeMismatch(format!(
                "{} class weights for {} classes",
                weights.len(),
                config.classes
            )));
        }
        // gamma < 1 makes the gradient blow up as p -> 1
        LossKind::Focal { gamma } if *gamma < 1.0 => {
            return Err(Error::DegenerateTraining(format!(
                "focal gamma must be >= 1, got {gamma}"
            )));
        }
        _ => {}
    }

    let mut model = FlexCnn::<f32>::init(config, arch)?;
    let mut velocity: Vec<Vec<f32>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let n = x.len();

    for epoch in 0..config.epochs {
        let decades = if config.lr_step_epochs == 0 {
            0
        } else {
            epoch / config.lr_step_epochs
        };
        let lr = config.lr / 10f64.powi(decades as i32);
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed3(config.seed, 0xE9, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            // per-sample work is parallel; everything is keyed by the dataset
            // index so scheduling cannot change results
            let results: Vec<(f64, Vec<Vec<f32>>)> = batch
                .par_iter()
                .map(|&gi| {
                    let mut input = sample_tensor::<f32>(&x[gi], c, k);
                    if config.augment {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed3(
                            config.seed ^ 0xA46,
                            epoch as u64,
                            gi as u64,
                        ));
                        input = augment_sample(&input, &mut rng);
                    }
                    let cache = forward(&model, input);
                    let logits: Vec<f64> =
                        cache.logits.data.iter().map(|&v| v as f64).collect();
                    let (loss, dl) = loss_and_dlogits(&logits, y[gi], &config.loss);
                    let dlogits = Tensor::from_vec(
                        cache.logits.shape,
                        dl.into_iter().map(|v| v as f32).collect(),
                    );
                    (loss, backward(&model, &cache, &dlogits).flatten())
                })
                .collect();

            // reduce in batch order, then scale by 1/B
            let scale = 1.0 / batch.len() as f32;
            let mut summed: Vec<Vec<f32>> = results[0].1.clone();
            epoch_loss += results[0].0;
            for (loss, grads) in &results[1..] {
                epoch_loss += *loss;
                for (acc, g) in summed.iter_mut().zip(grads) {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            for g in &mut summed {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            sgd_step(
                &mut model,
                &summed,
                &mut velocity,
                lr,
                config.momentum,
                config.weight_decay,
            );
        }
        loss_curve.push(epoch_loss / n as f64);
    }
    Ok((model, loss_curve))
}

/// Predicted class and softmax probabilities per sample. Argmax ties go to
/// the lowest class index.
pub fn cnn_predict<T: Float + Send + Sync>(
    model: &FlexCnn<T>,
    x: &[Vec<f32>],
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let c = model.config.input_channels;
    let k = validate_inputs(x, c)?;
    let probs: Vec<Vec<f64>> = x
        .par_iter()
        .map(|row| {
            let cache = forward(model, sample_tensor::<T>(row, c, k));
            let logits: Vec<f64> =
                cache.logits.data.iter().map(|&v| v.to_f64().unwrap()).collect();
            softmax_probs(&logits)
        })
        .collect();
    let classes = probs
        .iter()
        .map(|p| {
            let mut best = 0usize;
            for (j, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok((classes, probs))
}

/// Compare analytic gradients with central finite differences of the mean
/// loss, parameter tensor by parameter tensor. Returns (name, relative error)
/// where the error is ||analytic - numeric|| / max(norms).
pub fn gradient_check<T: Float + Send + Sync>(
    model: &mut FlexCnn<T>,
    x: &[Vec<f32>],
    y: &[usize],
    h: f64,
) -> Result<Vec<(String, f64)>> {
    let c = model.config.input_channels;
    let k = validate_inputs(x, c)?;
    let b = x.len() as f64;

    // analytic: mean-loss gradients accumulated in sample order
    let mut analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| vec![0.0; p.len()])
        .collect();
    for (row, &yi) in x.iter().zip(y) {
        let cache = forward(model, sample_tensor::<T>(row, c, k));
        let logits: Vec<f64> = cache.logits.data.iter().map(|&v| v.to_f64().unwrap()).collect();
        let (_, dl) = loss_and_dlogits(&logits, yi, &model.config.loss);
        let dlogits = Tensor::from_vec(
            cache.logits.shape,
            dl.into_iter().map(|v| t::<T>(v / b)).collect(),
        );
        for (acc, g) in analytic
            .iter_mut()
            .zip(backward(model, &cache, &dlogits).flatten())
        {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v.to_f64().unwrap();
            }
        }
    }

    let names = model.param_names();
    let mut report = Vec::with_capacity(names.len());
    let hs = t::<T>(h);
    for (ti, name) in names.into_iter().enumerate() {
        let len = model.params()[ti].len();
        let mut numeric = vec![0.0f64; len];
        for e in 0..len {
            let original = model.params()[ti][e];
            model.params_mut()[ti][e] = original + hs;
            let lp = cnn_mean_loss(model, x, y)?;
            model.params_mut()[ti][e] = original - hs;
            let lm = cnn_mean_loss(model, x, y)?;
            model.params_mut()[ti][e] = original;
            numeric[e] = (lp - lm) / (2.0 * h);
        }
        let na: f64 = analytic[ti].iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = analytic[ti]
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        report.push((name, diff / na.max(nn).max(1e-12)));
    }
    Ok(report)
}
