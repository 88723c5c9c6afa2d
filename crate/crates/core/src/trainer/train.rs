use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{Evaluator, InferenceMode};
use super::loss::{cross_entropy_soft, pi_consistency_loss, softmax, softmax_backward};
use super::model::{Gradients, Model};
use super::optim::{sgd_momentum_step, OptimizerConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mixers::{build_batch, compose, draw_indices, PipelineSpec};
use crate::rng::{derive_stream, domain_seed, slot_stream_id};
use crate::sample::Sample;

const CHUNK: usize = 8;
const UNLABELED_DOMAIN: u64 = 1;

/// Π-model semi-supervised settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub consistency_weight: f64,
    pub labeled_per_batch: usize,
    pub unlabeled_per_batch: usize,
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.consistency_weight.is_finite() && self.consistency_weight >= 0.0) {
            return Err(Error::Config(format!(
                "consistency weight {} must be >= 0",
                self.consistency_weight
            )));
        }
        if self.labeled_per_batch == 0 {
            return Err(Error::Config("labeled_per_batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Datasets for one run. Labels of `unlabeled` are ignored.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub unlabeled: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_error: f64,
    pub mode: InferenceMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: Model,
    pub log: Vec<EpochMetrics>,
}

fn zero_like(model: &Model) -> (f64, Gradients) {
    (0.0, Gradients::zeros_like(model))
}

fn accumulate(mut acc: (f64, Gradients), part: (f64, Gradients)) -> (f64, Gradients) {
    acc.0 += part.0;
    acc.1.add_scaled(&part.1, 1.0);
    acc
}

/// Sum of `f` over `items`, evaluated in parallel chunks and added in
/// order so the result does not depend on the thread count.
fn ordered_sum<T: Sync>(
    model: &Model,
    items: &[T],
    f: impl Fn(&T) -> Result<(f64, Gradients)> + Sync,
) -> Result<(f64, Gradients)> {
    let parts = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .try_fold(zero_like(model), |acc, item| Ok(accumulate(acc, f(item)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(zero_like(model), accumulate))
}

/// Cross-entropy loss and parameter gradient for one sample.
pub fn sample_gradient(model: &Model, sample: &Sample) -> Result<(f64, Gradients)> {
    let cache = model.forward(&sample.image.to_f64())?;
    let (loss, grad) = cross_entropy_soft(cache.logits(), &sample.label)?;
    Ok((loss, model.backward(&cache, &grad)?))
}

/// Mean cross-entropy and mean gradient over `samples`.
pub fn batch_gradient(model: &Model, samples: &[Sample]) -> Result<(f64, Gradients)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("gradient of an empty batch".into()));
    }
    let (loss, mut grads) = ordered_sum(model, samples, |s| sample_gradient(model, s))?;
    let n = samples.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Consistency loss between the softmax outputs of two views and the
/// gradient through both branches.
pub fn consistency_gradient(model: &Model, view1: &Sample, view2: &Sample) -> Result<(f64, Gradients)> {
    let c1 = model.forward(&view1.image.to_f64())?;
    let c2 = model.forward(&view2.image.to_f64())?;
    let p1 = softmax(c1.logits());
    let p2 = softmax(c2.logits());
    let (loss, g1, g2) = pi_consistency_loss(&p1, &p2)?;
    let mut grads = model.backward(&c1, &softmax_backward(&p1, &g1))?;
    grads.add_scaled(&model.backward(&c2, &softmax_backward(&p2, &g2))?, 1.0);
    Ok((loss, grads))
}

fn unlabeled_pairs(
    dataset: &Dataset,
    spec: &PipelineSpec,
    count: usize,
    seed: u64,
    epoch: u64,
    batch: u64,
) -> Result<Vec<(Sample, Sample)>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seed = domain_seed(seed, UNLABELED_DOMAIN);
    (0..count as u64)
        .into_par_iter()
        .map(|slot| {
            let mut rng = derive_stream(seed, slot_stream_id(epoch, batch, slot)?);
            let indices = draw_indices(spec, dataset.len(), &mut rng);
            let a = compose(spec, dataset, &indices, &mut rng)?;
            let b = compose(spec, dataset, &indices, &mut rng)?;
            Ok((a, b))
        })
        .collect()
}

fn check_dims(data: &TrainData, spec: &PipelineSpec, model: &Model, seed: u64, evaluator: &Evaluator) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ds in [Some(data.test), data.unlabeled].into_iter().flatten() {
        if ds.image_shape().is_some() && ds.image_shape() != data.train.image_shape() {
            return Err(Error::Shape(format!(
                "dataset image shape {:?} differs from training shape {:?}",
                ds.image_shape(),
                data.train.image_shape()
            )));
        }
    }
    if model.n_classes() != data.train.n_classes() || model.n_classes() != data.test.n_classes() {
        return Err(Error::Shape(format!(
            "model predicts {} classes, datasets have {} and {}",
            model.n_classes(),
            data.train.n_classes(),
            data.test.n_classes()
        )));
    }
    let probe = vec![0; spec.raw_images_per_sample()];
    let sample = compose(spec, data.train, &probe, &mut derive_stream(seed, u64::MAX))?;
    let train_dim = sample.image.data().len();
    if train_dim != model.input_dim() {
        return Err(Error::Shape(format!(
            "pipeline produces {train_dim} inputs, model expects {}",
            model.input_dim()
        )));
    }
    if let Some(test_dim) = evaluator.input_dim(data.test)? {
        if test_dim != train_dim {
            return Err(Error::Shape(format!(
                "{} inference produces {test_dim} inputs, training produces {train_dim}",
                evaluator.mode.name()
            )));
        }
    }
    Ok(())
}

/// Train `model` with momentum SGD on batches from `spec`, evaluating on
/// `data.test` after every epoch.
pub fn train(
    data: &TrainData,
    spec: &PipelineSpec,
    model: Model,
    opt: &OptimizerConfig,
    ssl: Option<&SslConfig>,
    seed: u64,
    evaluator: &Evaluator,
) -> Result<Trained> {
    opt.validate()?;
    if let Some(ssl) = ssl {
        ssl.validate()?;
    }
    check_dims(data, spec, &model, seed, evaluator)?;
    let batch_size = ssl.map_or(opt.batch_size, |s| s.labeled_per_batch);
    let batches = (data.train.len() / batch_size).max(1);
    let mut model = model;
    let mut velocity = Gradients::zeros_like(&model);
    let mut log = Vec::with_capacity(opt.epochs);

    for epoch in 0..opt.epochs {
        let mut epoch_loss = 0.0;
        for b in 0..batches {
            let batch = build_batch(data.train, spec, batch_size, seed, epoch as u64, b as u64)?;
            let (mut loss, mut grads) = batch_gradient(&model, batch.samples())?;
            if let (Some(ssl), Some(unlabeled)) = (ssl, data.unlabeled) {
                if ssl.unlabeled_per_batch > 0 && ssl.consistency_weight > 0.0 {
                    let pairs =
                        unlabeled_pairs(unlabeled, spec, ssl.unlabeled_per_batch, seed, epoch as u64, b as u64)?;
                    let (c_loss, c_grads) =
                        ordered_sum(&model, &pairs, |(a, b)| consistency_gradient(&model, a, b))?;
                    let scale = ssl.consistency_weight / pairs.len() as f64;
                    loss += c_loss * scale;
                    grads.add_scaled(&c_grads, scale);
                }
            }
            if !loss.is_finite() {
                return Err(Error::Numerics(format!("loss diverged at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss;
            sgd_momentum_step(&mut model, &grads, &mut velocity, opt, epoch)?;
        }
        log.push(EpochMetrics {
            epoch,
            lr: opt.lr_at(epoch),
            train_loss: epoch_loss / batches as f64,
            test_error: evaluator.error(&model, data.test)?,
            mode: evaluator.mode,
        });
    }
    Ok(Trained { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Split, SyntheticSpec};
    use crate::mixers::Stage;
    use crate::transforms::TransformChain;

    fn data() -> (Dataset, Dataset) {
        let spec = SyntheticSpec {
            n_classes: 4,
            samples_per_class: 8,
            image_size: 4,
            channels: 1,
            noise_std: 0.05,
            background: 0.2,
            signal: 0.8,
        };
        let train = generate_synthetic(&spec, 1).unwrap();
        let test = generate_synthetic(&spec, 2).unwrap().with_split(Split::Test);
        (train, test)
    }

    fn opt(epochs: usize) -> OptimizerConfig {
        OptimizerConfig {
            lr: 0.1,
            momentum: 0.9,
            decay_epochs: vec![],
            decay_factor: 0.1,
            epochs,
            batch_size: 8,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (train, test) = data();
        let model = Model::init(16, &[8], 4, 3).unwrap();
        let d = TrainData { train: &train, test: &test, unlabeled: None };
        let out = train_fn(&d, &PipelineSpec::base_only(TransformChain::empty()), model.clone(), &opt(0));
        assert_eq!(out.model, model);
        assert!(out.log.is_empty());
    }

    fn train_fn(d: &TrainData, spec: &PipelineSpec, model: Model, o: &OptimizerConfig) -> Trained {
        train(d, spec, model, o, None, 7, &Evaluator::new(InferenceMode::Single, 1)).unwrap()
    }

    #[test]
    fn dimension_mismatch_fails_before_training() {
        let (train_ds, test) = data();
        let d = TrainData { train: &train_ds, test: &test, unlabeled: None };
        let stacked = PipelineSpec::new(TransformChain::empty(), vec![Stage::StackMix { k: 2, axis: Default::default(), same: false }]).unwrap();
        let model = Model::init(16, &[8], 4, 3).unwrap();
        let err = train(&d, &stacked, model, &opt(1), None, 7, &Evaluator::new(InferenceMode::Single, 1));
        assert!(matches!(err, Err(Error::Shape(_))));
        let model = Model::init(32, &[8], 4, 3).unwrap();
        let err = train(&d, &stacked, model, &opt(1), None, 7, &Evaluator::new(InferenceMode::Single, 1));
        assert!(matches!(err, Err(Error::Shape(_))));
        let model = Model::init(32, &[8], 4, 3).unwrap();
        assert!(train(&d, &stacked, model, &opt(1), None, 7, &Evaluator::new(InferenceMode::SelfConcat, 2)).is_ok());
    }

    #[test]
    fn training_reduces_loss() {
        let (train_ds, test) = data();
        let d = TrainData { train: &train_ds, test: &test, unlabeled: None };
        let out = train_fn(&d, &PipelineSpec::base_only(TransformChain::empty()), Model::init(16, &[8], 4, 3).unwrap(), &opt(20));
        assert_eq!(out.log.len(), 20);
        assert!(out.log[19].train_loss < out.log[0].train_loss);
        assert_eq!(out.log[19].test_error, 0.0);
    }

    #[test]
    fn consistency_of_identical_views_is_zero() {
        let (train_ds, _) = data();
        let model = Model::init(16, &[8], 4, 3).unwrap();
        let s = train_ds.sample(0).unwrap();
        let (loss, grads) = consistency_gradient(&model, &s, &s).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.values().all(|&g| g == 0.0));
    }

    #[test]
    fn ssl_with_zero_weight_matches_supervised() {
        let (train_ds, test) = data();
        let d = TrainData { train: &train_ds, test: &test, unlabeled: Some(&train_ds) };
        let spec = PipelineSpec::base_only(TransformChain::empty());
        let model = Model::init(16, &[8], 4, 3).unwrap();
        let ev = Evaluator::new(InferenceMode::Single, 1);
        let ssl = SslConfig { consistency_weight: 0.0, labeled_per_batch: 8, unlabeled_per_batch: 4 };
        let a = train(&d, &spec, model.clone(), &opt(2), Some(&ssl), 7, &ev).unwrap();
        let b = train(&d, &spec, model, &opt(2), None, 7, &ev).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let (train_ds, _) = data();
        let model = Model::init(16, &[8], 4, 3).unwrap();
        let samples: Vec<Sample> = (0..20).map(|i| train_ds.sample(i).unwrap()).collect();
        let (loss, grads) = batch_gradient(&model, &samples).unwrap();
        let mut expected = Gradients::zeros_like(&model);
        let mut expected_loss = 0.0;
        for s in &samples {
            let (l, g) = sample_gradient(&model, s).unwrap();
            expected_loss += l / 20.0;
            expected.add_scaled(&g, 1.0 / 20.0);
        }
        assert!((loss - expected_loss).abs() < 1e-12);
        for (a, b) in grads.values().zip(expected.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
