//! CIFAR binary record format.
//!
//! CIFAR-10 records are 3073 bytes: one label byte then 3072 pixel bytes.
//! CIFAR-100 records are 3074 bytes: coarse label, fine label, pixels. The
//! pixel block is channel-planar (1024 R, 1024 G, 1024 B), each plane
//! row-major 32×32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const PIXEL_BYTES: usize = 3 * PLANE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXEL_BYTES
    }

    pub fn n_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

pub fn load_cifar_binary(path: &Path, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_bytes(&bytes, variant, split)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn parse_cifar_bytes(bytes: &[u8], variant: CifarVariant, split: Split) -> Result<Dataset> {
    let rec = variant.record_len();
    if bytes.is_empty() {
        return Err(Error::Format("empty CIFAR file".into()));
    }
    if bytes.len() % rec != 0 {
        return Err(Error::Format(format!(
            "length {} is not a multiple of the {rec}-byte record",
            bytes.len()
        )));
    }
    let n_classes = variant.n_classes();
    let mut images = Vec::with_capacity(bytes.len() / rec);
    let mut labels = Vec::with_capacity(bytes.len() / rec);
    for (r, record) in bytes.chunks_exact(rec).enumerate() {
        if variant == CifarVariant::Cifar100 && record[0] >= 20 {
            return Err(Error::Format(format!(
                "record {r}: coarse label {} out of range",
                record[0]
            )));
        }
        let label = record[variant.label_bytes() - 1] as usize;
        if label >= n_classes {
            return Err(Error::Format(format!("record {r}: label {label} out of range")));
        }
        let pixels = &record[variant.label_bytes()..];
        let mut data = vec![0.0f32; PIXEL_BYTES];
        for c in 0..3 {
            for p in 0..PLANE {
                data[p * 3 + c] = f32::from(pixels[c * PLANE + p]) / 255.0;
            }
        }
        images.push(Image::new(SIDE, SIDE, 3, data, RangeTag::Unit)?);
        labels.push(label);
    }
    Dataset::new(images, labels, n_classes, split)
}

/// Serialize a 32×32×3 dataset back to CIFAR records. CIFAR-100 coarse
/// labels are not tracked and are written as 0.
pub fn write_cifar_binary(dataset: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if dataset.n_classes() > variant.n_classes() {
        return Err(Error::Shape(format!(
            "{} classes do not fit {variant:?}",
            dataset.n_classes()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * variant.record_len());
    for (img, &label) in dataset.images().iter().zip(dataset.labels()) {
        if img.shape() != (SIDE, SIDE, 3) {
            return Err(Error::Shape(format!(
                "CIFAR records hold 32x32x3 images, got {:?}",
                img.shape()
            )));
        }
        if variant == CifarVariant::Cifar100 {
            out.push(0);
        }
        out.push(label as u8);
        for c in 0..3 {
            for p in 0..PLANE {
                out.push((img.data()[p * 3 + c] * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}
