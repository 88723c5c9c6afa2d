use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::softmax;
use super::model::Model;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::{concat_images, Axis, Image};
use crate::label::argmax;
use crate::rng::derive_stream;
use crate::transforms::{apply_chain, TransformChain};

/// How a test image is turned into model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// The image concatenated with itself `k` times.
    #[default]
    SelfConcat,
    /// The image concatenated with its horizontal flip (`k = 2`).
    FlipConcat,
    /// The image alone.
    Single,
    /// Mean softmax of the image and its horizontal flip.
    MeanOfFlips,
}

impl InferenceMode {
    pub fn name(self) -> &'static str {
        match self {
            InferenceMode::SelfConcat => "self_concat",
            InferenceMode::FlipConcat => "flip_concat",
            InferenceMode::Single => "single",
            InferenceMode::MeanOfFlips => "mean_of_flips",
        }
    }

    /// Number of image copies one model input holds under this mode.
    pub fn stack_width(self, k: usize) -> usize {
        match self {
            InferenceMode::SelfConcat => k,
            InferenceMode::FlipConcat => 2,
            InferenceMode::Single | InferenceMode::MeanOfFlips => 1,
        }
    }
}

/// Test-time input construction and scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub mode: InferenceMode,
    pub k: usize,
    pub axis: Axis,
    /// Deterministic preprocessing applied to each image before stacking.
    pub preprocess: TransformChain,
}

impl Evaluator {
    pub fn new(mode: InferenceMode, k: usize) -> Self {
        Evaluator {
            mode,
            k,
            axis: Axis::Height,
            preprocess: TransformChain::empty(),
        }
    }

    pub fn with_axis(mut self, axis: Axis) -> Self {
        self.axis = axis;
        self
    }

    pub fn with_preprocess(mut self, chain: TransformChain) -> Self {
        self.preprocess = chain;
        self
    }

    /// Checks that `k` suits the mode.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("inference k must be >= 1".into()));
        }
        match self.mode {
            InferenceMode::FlipConcat if self.k != 2 => Err(Error::Config(format!(
                "flip_concat stacks two images, but k is {}",
                self.k
            ))),
            InferenceMode::Single | InferenceMode::MeanOfFlips if self.k != 1 => Err(Error::Config(format!(
                "{} feeds one image, but k is {}",
                self.mode.name(),
                self.k
            ))),
            _ => Ok(()),
        }
    }

    fn prepare(&self, image: &Image) -> Result<Image> {
        if self.preprocess.draw_count() != 0 {
            return Err(Error::Config("evaluation preprocessing must be deterministic".into()));
        }
        apply_chain(image, &self.preprocess, &mut derive_stream(0, 0))
    }

    /// Model input vectors for one test image (two for `mean_of_flips`).
    pub fn inputs(&self, image: &Image) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let image = self.prepare(image)?;
        Ok(match self.mode {
            InferenceMode::SelfConcat => {
                let copies = vec![image; self.k];
                vec![concat_images(&copies, self.axis)?.to_f64()]
            }
            InferenceMode::FlipConcat => {
                let flipped = image.flipped_horizontally();
                vec![concat_images(&[image, flipped], self.axis)?.to_f64()]
            }
            InferenceMode::Single => vec![image.to_f64()],
            InferenceMode::MeanOfFlips => {
                let flipped = image.flipped_horizontally();
                vec![image.to_f64(), flipped.to_f64()]
            }
        })
    }

    /// Class probabilities for one test image.
    pub fn predict(&self, model: &Model, image: &Image) -> Result<Vec<f64>> {
        let inputs = self.inputs(image)?;
        let mut probs = vec![0.0; model.n_classes()];
        for input in &inputs {
            for (acc, p) in probs.iter_mut().zip(softmax(&model.logits(input)?)) {
                *acc += p;
            }
        }
        let n = inputs.len() as f64;
        Ok(probs.into_iter().map(|p| p / n).collect())
    }

    /// Model input length this evaluator produces for `dataset`.
    pub fn input_dim(&self, dataset: &Dataset) -> Result<Option<usize>> {
        match dataset.images().first() {
            Some(img) => Ok(Some(self.inputs(img)?[0].len())),
            None => Ok(None),
        }
    }

    /// Top-1 error: the fraction of images whose arg-max differs from the
    /// true class.
    pub fn error(&self, model: &Model, dataset: &Dataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if model.n_classes() != dataset.n_classes() {
            return Err(Error::Shape(format!(
                "model predicts {} classes, dataset has {}",
                model.n_classes(),
                dataset.n_classes()
            )));
        }
        let wrong: usize = dataset
            .images()
            .par_iter()
            .zip(dataset.labels())
            .map(|(img, &label)| Ok(usize::from(argmax(&self.predict(model, img)?) != label)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        Ok(wrong as f64 / dataset.len() as f64)
    }
}

/// Top-1 error with default axis and no preprocessing.
pub fn evaluate(model: &Model, dataset: &Dataset, mode: InferenceMode, k: usize) -> Result<f64> {
    Evaluator::new(mode, k).error(model, dataset)
}

/// Mean corruption error: the unweighted mean of per-corruption errors.
pub fn compute_mce(per_corruption_errors: &[f64]) -> Result<f64> {
    if per_corruption_errors.is_empty() {
        return Err(Error::EmptyInput("mCE needs at least one corruption error".into()));
    }
    Ok(per_corruption_errors.iter().sum::<f64>() / per_corruption_errors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::image::RangeTag;
    use crate::trainer::model::Dense;

    const CIFAR10_STANDARD: [f64; 15] = [
        51.1, 39.1, 43.1, 19.1, 50.5, 24.2, 25.2, 19.1, 23.2, 11.9, 7.1, 21.8, 16.7, 30.0, 22.6,
    ];
    const CIFAR100_STANDARD: [f64; 15] = [
        83.1, 75.2, 75.8, 43.2, 78.4, 49.6, 50.4, 48.3, 53.5, 39.6, 30.0, 48.1, 44.1, 54.4, 55.0,
    ];

    #[test]
    fn mce_reported_rows() {
        assert!((compute_mce(&CIFAR10_STANDARD).unwrap() - 26.98).abs() <= 0.005);
        let c100 = compute_mce(&CIFAR100_STANDARD).unwrap();
        assert!((c100 - 55.25).abs() < 0.005);
        assert!((c100 - 55.24).abs() <= 0.01 + 1e-9);
    }

    #[test]
    fn mce_edge_cases() {
        assert!(matches!(compute_mce(&[]), Err(Error::EmptyInput(_))));
        assert_eq!(compute_mce(&[0.3; 7]).unwrap(), 0.3);
    }

    /// Dataset of 1×2 images where class = which pixel is bright.
    fn two_pixel_dataset() -> Dataset {
        let imgs = vec![
            Image::new(1, 2, 1, vec![1.0, 0.0], RangeTag::Unit).unwrap(),
            Image::new(1, 2, 1, vec![0.0, 1.0], RangeTag::Unit).unwrap(),
        ];
        Dataset::new(imgs, vec![0, 1], 2, Split::Test).unwrap()
    }

    fn memorizer() -> Model {
        Model::from_layers(vec![Dense::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn memorizer_has_zero_error() {
        assert_eq!(evaluate(&memorizer(), &two_pixel_dataset(), InferenceMode::Single, 1).unwrap(), 0.0);
    }

    #[test]
    fn flip_invariant_model_mean_of_flips_equals_single() {
        // weights symmetric under column swap -> logits invariant to flip
        let m = Model::from_layers(vec![Dense::new(2, 2, vec![1.0, 1.0, 0.5, 0.5], vec![0.0, 0.3]).unwrap()]).unwrap();
        let single = Evaluator::new(InferenceMode::Single, 1);
        let flips = Evaluator::new(InferenceMode::MeanOfFlips, 1);
        for img in two_pixel_dataset().images() {
            let a = single.predict(&m, img).unwrap();
            let b = flips.predict(&m, img).unwrap();
            assert_eq!(argmax(&a), argmax(&b));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn symmetric_images_self_and_flip_concat_agree() {
        let m = Model::init(8, &[5], 3, 4).unwrap();
        let sym = Image::new(2, 2, 1, vec![0.2, 0.2, 0.9, 0.9], RangeTag::Unit).unwrap();
        let a = Evaluator::new(InferenceMode::SelfConcat, 2).inputs(&sym).unwrap();
        let b = Evaluator::new(InferenceMode::FlipConcat, 2).inputs(&sym).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            Evaluator::new(InferenceMode::SelfConcat, 2).predict(&m, &sym).unwrap(),
            Evaluator::new(InferenceMode::FlipConcat, 2).predict(&m, &sym).unwrap()
        );
    }

    #[test]
    fn mode_and_shape_errors() {
        let ds = two_pixel_dataset();
        assert!(matches!(evaluate(&memorizer(), &ds, InferenceMode::SelfConcat, 2), Err(Error::Shape(_))));
        assert!(matches!(evaluate(&memorizer(), &ds, InferenceMode::FlipConcat, 3), Err(Error::Config(_))));
        assert!(matches!(evaluate(&memorizer(), &ds, InferenceMode::Single, 2), Err(Error::Config(_))));
        assert_eq!(evaluate(&memorizer(), &ds, InferenceMode::SelfConcat, 1).unwrap(), 0.0);
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        let m = Model::init(4, &[6], 5, 9).unwrap();
        let img = Image::new(2, 2, 1, vec![0.1, 0.7, 0.3, 0.9], RangeTag::Unit).unwrap();
        let p = Evaluator::new(InferenceMode::Single, 1).predict(&m, &img).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
