//! Datasets, corruptions and batch export.

mod cifar;
mod corrupt;
mod export;
mod synthetic;

pub use cifar::{load_cifar_binary, parse_cifar_bytes, write_cifar_binary, CifarVariant};
pub use corrupt::{contrast_with_scale, corrupt, CorruptionKind, CorruptionSpec};
pub use export::{batch_from_tensors, export_batch, import_batch, pipeline_hash, ExportInfo, Manifest};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};
use crate::label::LabelVector;
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Unit-range images with integer class labels. All images share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    n_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::InvalidValue("dataset needs at least one class".into()));
        }
        if let Some(i) = labels.iter().position(|&l| l >= n_classes) {
            return Err(Error::InvalidValue(format!(
                "label {} at index {i} out of range for {n_classes} classes",
                labels[i]
            )));
        }
        if let Some(first) = images.first() {
            for (i, img) in images.iter().enumerate() {
                if img.shape() != first.shape() {
                    return Err(Error::Shape(format!(
                        "image {i} has shape {:?}, expected {:?}",
                        img.shape(),
                        first.shape()
                    )));
                }
                if img.range() != RangeTag::Unit {
                    return Err(Error::RangeTag(format!("dataset image {i} is not unit-range")));
                }
            }
        }
        Ok(Dataset {
            images,
            labels,
            n_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(Image::shape)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Sample `i` with a one-hot label.
    pub fn sample(&self, i: usize) -> Result<Sample> {
        let image = self.images.get(i).ok_or_else(|| {
            Error::Shape(format!("index {i} out of range for {} samples", self.len()))
        })?;
        Sample::new(
            image.clone(),
            LabelVector::one_hot(self.labels[i], self.n_classes)?,
            vec![i],
        )
    }

    /// The samples at `range`, in order.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::Shape(format!(
                "slice {range:?} out of range for {} samples",
                self.len()
            )));
        }
        Dataset::new(
            self.images[range.clone()].to_vec(),
            self.labels[range].to_vec(),
            self.n_classes,
            self.split,
        )
    }

    /// Apply `f` to every image, keeping labels.
    pub fn map_images(&self, f: impl Fn(usize, &Image) -> Result<Image>) -> Result<Dataset> {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| f(i, img))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(images, self.labels.clone(), self.n_classes, self.split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_invariants() {
        let img = Image::filled(2, 2, 1, 0.5).unwrap();
        assert!(Dataset::new(vec![img.clone()], vec![0, 1], 2, Split::Train).is_err());
        assert!(Dataset::new(vec![img.clone()], vec![2], 2, Split::Train).is_err());
        let other = Image::filled(3, 2, 1, 0.5).unwrap();
        assert!(Dataset::new(vec![img.clone(), other], vec![0, 1], 2, Split::Train).is_err());
        let ds = Dataset::new(vec![img.clone(), img], vec![0, 1], 2, Split::Train).unwrap();
        let s = ds.sample(1).unwrap();
        assert_eq!(s.label.probs(), &[0.0, 1.0]);
        assert_eq!(s.source_indices, vec![1]);
        assert!(ds.sample(2).is_err());
        assert_eq!(ds.slice(1..2).unwrap().labels(), &[1]);
    }
}
