use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};
use crate::label::LabelVector;

/// An image, its label, and the dataset indices that went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: LabelVector,
    pub source_indices: Vec<usize>,
}

impl Sample {
    pub fn new(image: Image, label: LabelVector, source_indices: Vec<usize>) -> Result<Self> {
        if source_indices.is_empty() {
            return Err(Error::EmptyInput("sample has no source indices".into()));
        }
        Ok(Sample {
            image,
            label,
            source_indices,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.label.n_classes()
    }
}

/// Checks that every sample has the same image shape, range tag and label
/// width.
pub(crate) fn check_homogeneous(samples: &[Sample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    for (j, s) in samples.iter().enumerate().skip(1) {
        if s.image.shape() != first.image.shape() {
            return Err(Error::Shape(format!(
                "sample {j} has image shape {:?}, expected {:?}",
                s.image.shape(),
                first.image.shape()
            )));
        }
        if s.n_classes() != first.n_classes() {
            return Err(Error::Shape(format!(
                "sample {j} has {} classes, expected {}",
                s.n_classes(),
                first.n_classes()
            )));
        }
        if s.image.range() != first.image.range() {
            return Err(Error::RangeTag(format!(
                "sample {j} has range tag {:?}, expected {:?}",
                s.image.range(),
                first.image.range()
            )));
        }
    }
    Ok(())
}

/// A shape-homogeneous collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        check_homogeneous(&samples)?;
        Ok(Batch { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(H, W, C)` of every image, if nonempty.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.samples.first().map(Sample::n_classes)
    }

    pub fn range(&self) -> Option<RangeTag> {
        self.samples.first().map(|s| s.image.range())
    }
}
