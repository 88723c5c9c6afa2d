use std::fs;
use std::path::{Path, PathBuf};

use mixforge::data::{
    generate_synthetic, load_cifar_binary, CifarVariant, CorruptionSpec, Dataset, Split, SyntheticSpec,
};
use mixforge::trainer::{Evaluator, InferenceMode, OptimizerConfig, SslConfig};
use mixforge::{compose, derive_stream, Error, PipelineSpec, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic {
        spec: SyntheticSpec,
        train_seed: u64,
        test_seed: u64,
        /// Defaults to `spec.samples_per_class`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_samples_per_class: Option<usize>,
    },
    Cifar {
        variant: CifarVariant,
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

/// Π-model settings plus the size of the labeled subset. The first
/// `labeled_count` training samples keep their labels; the rest are
/// treated as unlabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslSection {
    #[serde(flatten)]
    pub config: SslConfig,
    pub labeled_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub dataset: DatasetConfig,
    pub pipeline: PipelineSpec,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssl: Option<SslSection>,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub inference: InferenceMode,
    pub k: usize,
    #[serde(default)]
    pub corruptions: Vec<CorruptionSpec>,
}

/// Loaded training, test and unlabeled splits.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
    pub unlabeled: Option<Dataset>,
}

/// Read and validate a config. Relative dataset paths resolve against the
/// config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let (DatasetConfig::Cifar { train, test, .. }, Some(dir)) = (&mut config.dataset, path.parent()) {
        for p in train.iter_mut().chain(test.iter_mut()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        self.optimizer.validate()?;
        if let Some(ssl) = &self.ssl {
            ssl.config.validate()?;
            if ssl.labeled_count == 0 {
                return Err(Error::Config("ssl.labeled_count must be >= 1".into()));
            }
        }
        self.evaluator().validate()?;
        let (stack_k, _) = self.pipeline.stack();
        let width = self.inference.stack_width(self.k);
        if width != stack_k {
            return Err(Error::Config(format!(
                "{} inference with k = {} stacks {width} images, pipeline stacks {stack_k}",
                self.inference.name(),
                self.k
            )));
        }
        match &self.dataset {
            DatasetConfig::Synthetic { spec, .. } => spec.validate(),
            DatasetConfig::Cifar { train, test, .. } => {
                if train.is_empty() || test.is_empty() {
                    return Err(Error::Config("cifar source needs train and test files".into()));
                }
                match train.iter().chain(test).find(|p| !p.is_file()) {
                    Some(p) => Err(Error::Config(format!("dataset file {} does not exist", p.display()))),
                    None => Ok(()),
                }
            }
        }
    }

    pub fn evaluator(&self) -> Evaluator {
        Evaluator::new(self.inference, self.k)
            .with_axis(self.pipeline.stack().1)
            .with_preprocess(self.pipeline.base().eval_chain())
    }

    fn load_split(&self, split: Split) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                spec,
                train_seed,
                test_seed,
                test_samples_per_class,
            } => match split {
                Split::Train => generate_synthetic(spec, *train_seed),
                Split::Test => {
                    let mut spec = spec.clone();
                    if let Some(n) = test_samples_per_class {
                        spec.samples_per_class = *n;
                    }
                    Ok(generate_synthetic(&spec, *test_seed)?.with_split(Split::Test))
                }
            },
            DatasetConfig::Cifar { variant, train, test } => {
                let paths = if split == Split::Train { train } else { test };
                let mut images = Vec::new();
                let mut labels = Vec::new();
                for p in paths {
                    let part = load_cifar_binary(p, *variant, split)?;
                    images.extend_from_slice(part.images());
                    labels.extend_from_slice(part.labels());
                }
                Dataset::new(images, labels, variant.n_classes(), split)
            }
        }
    }

    pub fn test_set(&self) -> Result<Dataset> {
        self.load_split(Split::Test)
    }

    pub fn datasets(&self) -> Result<Datasets> {
        let train = self.load_split(Split::Train)?;
        let test = self.test_set()?;
        let Some(ssl) = &self.ssl else {
            return Ok(Datasets {
                train,
                test,
                unlabeled: None,
            });
        };
        if ssl.labeled_count > train.len() {
            return Err(Error::Config(format!(
                "ssl.labeled_count {} exceeds {} training samples",
                ssl.labeled_count,
                train.len()
            )));
        }
        let unlabeled = train.slice(ssl.labeled_count..train.len())?;
        Ok(Datasets {
            train: train.slice(0..ssl.labeled_count)?,
            test,
            unlabeled: (!unlabeled.is_empty()).then_some(unlabeled),
        })
    }

    /// Flattened model input length produced by the training pipeline.
    pub fn input_dim(&self, train: &Dataset) -> Result<usize> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let probe = vec![0; self.pipeline.raw_images_per_sample()];
        let sample = compose(&self.pipeline, train, &probe, &mut derive_stream(self.seed, u64::MAX))?;
        Ok(sample.image.len())
    }
}
