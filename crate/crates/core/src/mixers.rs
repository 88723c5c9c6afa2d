//! Multi-sample mixing operators and their composition.
//!
//! A [`PipelineSpec`] runs a base transform chain on every raw image and
//! then feeds the results through mixer stages in order. A stage of arity
//! `a` consumes `a` outputs of the previous stage, so the raw image count
//! of a pipeline is the product of its stage arities (`2k` for
//! `cutmix → stackmix(k)`).
//!
//! A trailing `normalize` in the base chain is deferred until just before
//! the stackmix stage (or the end of the pipeline when there is none): the
//! photometric primitives used by AugMix need unit-range inputs, and MixUp
//! and CutMix commute with per-channel affine normalization.

use rand_distr::{Beta, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::{concat_images, Axis, Image, RangeTag};
use crate::label::{mix_labels, LabelVector};
use crate::rng::{derive_stream, slot_stream_id, RngStream};
use crate::sample::{check_homogeneous, Batch, Sample};
use crate::transforms::{apply_chain, apply_transform, AugMixOp, TransformChain};

fn default_alpha() -> f64 {
    1.0
}

fn default_pair() -> usize {
    2
}

fn default_width() -> usize {
    3
}

fn default_depth() -> usize {
    3
}

fn default_level() -> f64 {
    0.3
}

fn default_ops() -> Vec<AugMixOp> {
    AugMixOp::ALL.to_vec()
}

/// AugMix settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugMixParams {
    /// Dirichlet/Beta concentration.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Number of parallel chains.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Each chain applies `1..=max_depth` primitives.
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    /// Severity in `[0, 1]` handed to every primitive.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_ops")]
    pub ops: Vec<AugMixOp>,
}

impl Default for AugMixParams {
    fn default() -> Self {
        AugMixParams {
            alpha: default_alpha(),
            width: default_width(),
            max_depth: default_depth(),
            level: default_level(),
            ops: default_ops(),
        }
    }
}

impl AugMixParams {
    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.width == 0 || self.max_depth == 0 {
            return Err(Error::Config("augmix width and max_depth must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.level) {
            return Err(Error::Config(format!("augmix level {} outside [0, 1]", self.level)));
        }
        if self.ops.is_empty() {
            return Err(Error::Config("augmix needs at least one primitive op".into()));
        }
        Ok(())
    }
}

/// One mixer stage of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    /// With `same`, every stacked copy comes from the same raw images,
    /// each passed through the base chain and earlier stages separately.
    #[serde(rename = "stackmix")]
    StackMix {
        k: usize,
        #[serde(default)]
        axis: Axis,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        same: bool,
    },
    /// `k = 2` is classic MixUp; larger `k` mixes with Dirichlet weights.
    #[serde(rename = "mixup")]
    MixUp {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_pair")]
        k: usize,
    },
    /// `k > 2` pastes `k - 1` boxes in sequence. `box_scale` defaults to
    /// `2 / k` for `k > 2` and 1 otherwise.
    #[serde(rename = "cutmix")]
    CutMix {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_pair")]
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        box_scale: Option<f64>,
    },
    #[serde(rename = "augmix")]
    AugMix(AugMixParams),
    None,
}

impl Stage {
    /// How many outputs of the previous stage one application consumes.
    pub fn arity(&self) -> usize {
        match self {
            Stage::StackMix { k, .. } | Stage::MixUp { k, .. } | Stage::CutMix { k, .. } => *k,
            Stage::AugMix(_) | Stage::None => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Stage::StackMix { k, .. } if *k == 0 => {
                Err(Error::Config("stackmix k must be >= 1".into()))
            }
            Stage::MixUp { alpha, k } => {
                check_alpha(*alpha)?;
                if *k < 2 {
                    return Err(Error::Config("mixup k must be >= 2".into()));
                }
                Ok(())
            }
            Stage::CutMix { alpha, k, box_scale } => {
                check_alpha(*alpha)?;
                if *k < 2 {
                    return Err(Error::Config("cutmix k must be >= 2".into()));
                }
                if let Some(s) = box_scale {
                    check_box_scale(*s)?;
                }
                Ok(())
            }
            Stage::AugMix(p) => p.validate(),
            _ => Ok(()),
        }
    }

    fn apply(&self, group: &[Sample], rng: &mut RngStream) -> Result<Sample> {
        match self {
            Stage::StackMix { axis, .. } => stackmix(group, *axis),
            Stage::MixUp { alpha, k: 2 } => mixup(&group[0], &group[1], *alpha, rng),
            Stage::MixUp { alpha, .. } => mixup_k(group, *alpha, rng),
            Stage::CutMix { alpha, k, box_scale } => {
                let scale = box_scale.unwrap_or_else(|| default_box_scale(*k));
                if *k == 2 {
                    cutmix(&group[0], &group[1], *alpha, scale, rng)
                } else {
                    cutmix_k(group, *alpha, scale, rng)
                }
            }
            Stage::AugMix(params) => augmix(&group[0], params, rng),
            Stage::None => Ok(group[0].clone()),
        }
    }
}

/// Box shrink factor used for CutMix at a given `k`.
pub fn default_box_scale(k: usize) -> f64 {
    if k > 2 {
        2.0 / k as f64
    } else {
        1.0
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("concentration alpha must be > 0, got {alpha}")))
    }
}

fn check_box_scale(s: f64) -> Result<()> {
    if s > 0.0 && s <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("box_scale {s} outside (0, 1]")))
    }
}

/// Base transforms followed by mixer stages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawPipeline", into = "RawPipeline")]
pub struct PipelineSpec {
    base: TransformChain,
    stages: Vec<Stage>,
}

#[derive(Serialize, Deserialize)]
struct RawPipeline {
    #[serde(default)]
    base: TransformChain,
    #[serde(default)]
    stages: Vec<Stage>,
}

impl TryFrom<RawPipeline> for PipelineSpec {
    type Error = Error;

    fn try_from(raw: RawPipeline) -> Result<Self> {
        PipelineSpec::new(raw.base, raw.stages)
    }
}

impl From<PipelineSpec> for RawPipeline {
    fn from(p: PipelineSpec) -> Self {
        RawPipeline {
            base: p.base,
            stages: p.stages,
        }
    }
}

impl PipelineSpec {
    /// At most one stackmix stage, and only as the last stage.
    pub fn new(base: TransformChain, stages: Vec<Stage>) -> Result<Self> {
        for s in &stages {
            s.validate()?;
        }
        let stack_positions: Vec<usize> = stages
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Stage::StackMix { .. }))
            .map(|(i, _)| i)
            .collect();
        match stack_positions.as_slice() {
            [] => {}
            [i] if *i + 1 == stages.len() => {}
            [_] => return Err(Error::Config("stackmix must be the last stage".into())),
            _ => return Err(Error::Config("at most one stackmix stage is allowed".into())),
        }
        Ok(PipelineSpec { base, stages })
    }

    pub fn base_only(base: TransformChain) -> Self {
        PipelineSpec {
            base,
            stages: Vec::new(),
        }
    }

    pub fn base(&self) -> &TransformChain {
        &self.base
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Raw dataset images consumed per output sample.
    pub fn raw_images_per_sample(&self) -> usize {
        self.stages.iter().map(Stage::arity).product()
    }

    /// Independently drawn raw images per output sample: the raw count,
    /// divided by `k` under `stackmix` with `same`.
    pub fn distinct_raw_images(&self) -> usize {
        match self.stages.last() {
            Some(Stage::StackMix { k, same: true, .. }) => self.raw_images_per_sample() / k,
            _ => self.raw_images_per_sample(),
        }
    }

    /// `(k, axis)` of the terminal stackmix, `(1, Height)` without one.
    pub fn stack(&self) -> (usize, Axis) {
        match self.stages.last() {
            Some(Stage::StackMix { k, axis, .. }) => (*k, *axis),
            _ => (1, Axis::Height),
        }
    }

    /// A copy whose terminal stackmix uses `k`, appending one if missing.
    pub fn with_stack_k(&self, k: usize) -> Result<PipelineSpec> {
        let mut stages = self.stages.clone();
        match stages.last_mut() {
            Some(Stage::StackMix { k: old, .. }) => *old = k,
            _ => stages.push(Stage::StackMix {
                k,
                axis: Axis::Height,
                same: false,
            }),
        }
        PipelineSpec::new(self.base.clone(), stages)
    }
}

/// Concatenate `k` samples and average their labels with weight `1/k`.
pub fn stackmix(samples: &[Sample], axis: Axis) -> Result<Sample> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("stackmix needs at least one sample".into()));
    }
    check_homogeneous(samples)?;
    if samples.len() == 1 {
        return Ok(samples[0].clone());
    }
    let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let image = concat_images(&images, axis)?;
    let weights = vec![1.0 / samples.len() as f64; samples.len()];
    let label = mix_samples_labels(samples, &weights)?;
    Sample::new(image, label, union_sources(samples))
}

fn union_sources(samples: &[Sample]) -> Vec<usize> {
    samples
        .iter()
        .flat_map(|s| s.source_indices.iter().copied())
        .collect()
}

fn mix_samples_labels(samples: &[Sample], weights: &[f64]) -> Result<LabelVector> {
    let labels: Vec<LabelVector> = samples.iter().map(|s| s.label.clone()).collect();
    mix_labels(&labels, weights)
}

fn check_mixable(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("nothing to mix".into()));
    }
    check_homogeneous(samples)
}

/// Pixel- and label-wise convex combination with the given weights.
pub fn mix_with_weights(samples: &[Sample], weights: &[f64]) -> Result<Sample> {
    check_mixable(samples)?;
    let label = mix_samples_labels(samples, weights)?;
    let first = &samples[0].image;
    let mut acc = vec![0.0f64; first.len()];
    for (s, &w) in samples.iter().zip(weights) {
        for (a, &v) in acc.iter_mut().zip(s.image.data()) {
            *a += w * f64::from(v);
        }
    }
    let image = first.with_data(acc.into_iter().map(|v| v as f32).collect())?;
    Sample::new(image, label, union_sources(samples))
}

/// MixUp with an explicit `λ`: `λ·a + (1 − λ)·b`.
pub fn mixup_with_lambda(a: &Sample, b: &Sample, lambda: f64) -> Result<Sample> {
    mix_with_weights(&[a.clone(), b.clone()], &[lambda, 1.0 - lambda])
}

pub(crate) fn sample_beta(alpha: f64, rng: &mut RngStream) -> Result<f64> {
    check_alpha(alpha)?;
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Symmetric Dirichlet weights from normalized Gamma draws.
pub(crate) fn sample_dirichlet(alpha: f64, k: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        // every Gamma draw underflowed; fall back to the mean of the distribution
        return Ok(vec![1.0 / k as f64; k]);
    }
    Ok(draws.into_iter().map(|g| g / total).collect())
}

/// MixUp: `λ ~ Beta(α, α)`.
pub fn mixup(a: &Sample, b: &Sample, alpha: f64, rng: &mut RngStream) -> Result<Sample> {
    check_mixable(&[a.clone(), b.clone()])?;
    let lambda = sample_beta(alpha, rng)?;
    mixup_with_lambda(a, b, lambda)
}

/// `k`-way MixUp with symmetric Dirichlet(α) weights.
pub fn mixup_k(samples: &[Sample], alpha: f64, rng: &mut RngStream) -> Result<Sample> {
    if samples.len() < 2 {
        return Err(Error::Shape("mixup_k needs at least two samples".into()));
    }
    check_mixable(samples)?;
    let weights = sample_dirichlet(alpha, samples.len(), rng)?;
    mix_with_weights(samples, &weights)
}

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

/// Sample a CutMix box for mixing ratio `lambda`: side lengths
/// `H·√((1−λ)·scale)` and `W·√((1−λ)·scale)`, centre uniform over the
/// image, clipped to the borders. Two draws.
pub fn sample_box(height: usize, width: usize, lambda: f64, box_scale: f64, rng: &mut RngStream) -> CutBox {
    let ratio = ((1.0 - lambda) * box_scale).clamp(0.0, 1.0).sqrt();
    let cut_h = (height as f64 * ratio).round() as i64;
    let cut_w = (width as f64 * ratio).round() as i64;
    let cy = rng.below(height as u64) as i64;
    let cx = rng.below(width as u64) as i64;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    CutBox {
        y0: clip(cy - cut_h / 2, height),
        y1: clip(cy + cut_h - cut_h / 2, height),
        x0: clip(cx - cut_w / 2, width),
        x1: clip(cx + cut_w - cut_w / 2, width),
    }
}

/// Paste `b`'s `cut` region onto `a`. Label weights are the exact visible
/// pixel fractions, each computed directly from integer counts.
pub fn cutmix_with_box(a: &Sample, b: &Sample, cut: &CutBox) -> Result<Sample> {
    check_mixable(&[a.clone(), b.clone()])?;
    let (h, w, _) = a.image.shape();
    if cut.y0 > cut.y1 || cut.x0 > cut.x1 || cut.y1 > h || cut.x1 > w {
        return Err(Error::Shape(format!("box {cut:?} outside {h}x{w} image")));
    }
    let mut owner = vec![0usize; h * w];
    for y in cut.y0..cut.y1 {
        for x in cut.x0..cut.x1 {
            owner[y * w + x] = 1;
        }
    }
    paste_by_owner(&[a.clone(), b.clone()], &owner)
}

/// Assemble an image whose pixel `p` comes from `samples[owner[p]]`, with
/// label weights equal to each sample's pixel share.
fn paste_by_owner(samples: &[Sample], owner: &[usize]) -> Result<Sample> {
    let first = &samples[0].image;
    let c = first.channels();
    let total = owner.len();
    let mut data = Vec::with_capacity(first.len());
    let mut counts = vec![0usize; samples.len()];
    for (p, &o) in owner.iter().enumerate() {
        counts[o] += 1;
        data.extend_from_slice(&samples[o].image.data()[p * c..(p + 1) * c]);
    }
    let weights: Vec<f64> = counts
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect();
    let label = mix_samples_labels(samples, &weights)?;
    Sample::new(
        Image::new(first.height(), first.width(), c, data, first.range())?,
        label,
        union_sources(samples),
    )
}

/// CutMix: `λ ~ Beta(α, α)`, box per [`sample_box`], labels from the
/// clipped box. Draws `λ`, then the box centre.
pub fn cutmix(a: &Sample, b: &Sample, alpha: f64, box_scale: f64, rng: &mut RngStream) -> Result<Sample> {
    check_mixable(&[a.clone(), b.clone()])?;
    check_box_scale(box_scale)?;
    let lambda = sample_beta(alpha, rng)?;
    let cut = sample_box(a.image.height(), a.image.width(), lambda, box_scale, rng);
    cutmix_with_box(a, b, &cut)
}

/// `k`-way CutMix: boxes from samples `1..k` are pasted onto sample 0 in
/// order, later boxes overwriting earlier ones. Label weights follow the
/// surviving pixel provenance. With `k = 2` this draws exactly what
/// [`cutmix`] draws.
pub fn cutmix_k(samples: &[Sample], alpha: f64, box_scale: f64, rng: &mut RngStream) -> Result<Sample> {
    if samples.len() < 2 {
        return Err(Error::Shape("cutmix_k needs at least two samples".into()));
    }
    check_mixable(samples)?;
    check_box_scale(box_scale)?;
    let (h, w, _) = samples[0].image.shape();
    let mut owner = vec![0usize; h * w];
    for j in 1..samples.len() {
        let lambda = sample_beta(alpha, rng)?;
        let cut = sample_box(h, w, lambda, box_scale, rng);
        for y in cut.y0..cut.y1 {
            for x in cut.x0..cut.x1 {
                owner[y * w + x] = j;
            }
        }
    }
    paste_by_owner(samples, &owner)
}

/// `m·original + (1 − m)·Σ wᵢ·chainᵢ`, computed in `f64`.
pub fn augmix_combine(original: &Image, chains: &[Image], weights: &[f64], m: f64) -> Result<Image> {
    if chains.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} chains but {} weights",
            chains.len(),
            weights.len()
        )));
    }
    if let Some(bad) = chains.iter().position(|c| c.shape() != original.shape()) {
        return Err(Error::Shape(format!("chain {bad} changed the image shape")));
    }
    let mut mixed = vec![0.0f64; original.len()];
    for (chain, &w) in chains.iter().zip(weights) {
        for (acc, &v) in mixed.iter_mut().zip(chain.data()) {
            *acc += w * f64::from(v);
        }
    }
    let data = original
        .data()
        .iter()
        .zip(&mixed)
        .map(|(&o, &mx)| (m * f64::from(o) + (1.0 - m) * mx) as f32)
        .collect();
    original.with_data(data)
}

/// AugMix image mixing. Draw order: chain weights `w ~ Dir(α)`, skip weight
/// `m ~ Beta(α, α)`, then for each chain a depth in `1..=max_depth`
/// followed by (op index, op draws) per step. The label is untouched.
pub fn augmix(sample: &Sample, params: &AugMixParams, rng: &mut RngStream) -> Result<Sample> {
    params.validate()?;
    if sample.image.range() != RangeTag::Unit {
        return Err(Error::RangeTag("augmix needs a unit-range image".into()));
    }
    let weights = sample_dirichlet(params.alpha, params.width, rng)?;
    let m = sample_beta(params.alpha, rng)?;
    let mut chains = Vec::with_capacity(params.width);
    for _ in 0..params.width {
        let depth = 1 + rng.below(params.max_depth as u64);
        let mut img = sample.image.clone();
        for _ in 0..depth {
            let op = params.ops[rng.below(params.ops.len() as u64) as usize];
            img = apply_transform(&img, &op.to_spec(params.level), rng)?;
        }
        chains.push(img);
    }
    let image = augmix_combine(&sample.image, &chains, &weights, m)?;
    Sample::new(image, sample.label.clone(), sample.source_indices.clone())
}

/// Build one sample from raw dataset `indices` (length must equal
/// [`PipelineSpec::raw_images_per_sample`]).
pub fn compose(spec: &PipelineSpec, dataset: &Dataset, indices: &[usize], rng: &mut RngStream) -> Result<Sample> {
    let need = spec.raw_images_per_sample();
    if indices.len() != need {
        return Err(Error::Shape(format!(
            "pipeline consumes {need} raw images, got {} indices",
            indices.len()
        )));
    }
    let (pre, normalize) = spec.base.split_normalize();
    let normalize = normalize.map(|n| TransformChain::new(vec![n])).transpose()?;
    let mut current = indices
        .iter()
        .map(|&i| {
            let raw = dataset.sample(i)?;
            let image = apply_chain(&raw.image, &pre, rng)?;
            Sample::new(image, raw.label, raw.source_indices)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut normalized = normalize.is_none();
    for stage in &spec.stages {
        if matches!(stage, Stage::StackMix { .. }) && !normalized {
            current = normalize_all(current, normalize.as_ref(), rng)?;
            normalized = true;
        }
        current = current
            .chunks(stage.arity())
            .map(|group| stage.apply(group, rng))
            .collect::<Result<Vec<_>>>()?;
    }
    if !normalized {
        current = normalize_all(current, normalize.as_ref(), rng)?;
    }
    debug_assert_eq!(current.len(), 1);
    Ok(current.pop().expect("pipeline produced one sample"))
}

fn normalize_all(samples: Vec<Sample>, chain: Option<&TransformChain>, rng: &mut RngStream) -> Result<Vec<Sample>> {
    let Some(chain) = chain else {
        return Ok(samples);
    };
    samples
        .into_iter()
        .map(|s| {
            let image = apply_chain(&s.image, chain, rng)?;
            Sample::new(image, s.label, s.source_indices)
        })
        .collect()
}

/// Raw indices for one output sample, uniform with replacement over
/// `0..n`. Under `stackmix` with `same` the drawn block repeats `k` times.
pub fn draw_indices(spec: &PipelineSpec, n: usize, rng: &mut RngStream) -> Vec<usize> {
    let distinct: Vec<usize> = (0..spec.distinct_raw_images())
        .map(|_| rng.below(n as u64) as usize)
        .collect();
    distinct.repeat(spec.raw_images_per_sample() / distinct.len())
}

/// Build the batch at `(epoch, batch_index)`. Slot `s` draws its raw
/// indices uniformly with replacement and then composes, all from stream
/// `derive_stream(seed, slot_stream_id(epoch, batch_index, s))`; slots run
/// in parallel on the current rayon pool without affecting the result.
pub fn build_batch(
    dataset: &Dataset,
    spec: &PipelineSpec,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    batch_index: u64,
) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let samples = (0..batch_size as u64)
        .into_par_iter()
        .map(|slot| {
            let mut rng = derive_stream(seed, slot_stream_id(epoch, batch_index, slot)?);
            let indices = draw_indices(spec, dataset.len(), &mut rng);
            compose(spec, dataset, &indices, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::new(samples)
}
