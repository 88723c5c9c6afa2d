//! Batch export as `.npy` tensors plus a `key: value` manifest.
//!
//! A directory written by [`export_batch`] holds
//!
//! * `images.npy`: `f32`, shape `B × H × W × C`, little-endian
//! * `labels.npy`: `f64`, shape `B × n_classes`, little-endian
//! * `manifest.txt`: UTF-8 `key: value` lines

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};
use ndarray_npy::{read_npy, write_npy};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};
use crate::label::LabelVector;
use crate::mixers::PipelineSpec;
use crate::sample::{Batch, Sample};

pub const IMAGES_FILE: &str = "images.npy";
pub const LABELS_FILE: &str = "labels.npy";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// SHA-256 of the pipeline's canonical JSON form, hex encoded.
pub fn pipeline_hash(spec: &PipelineSpec) -> String {
    let json = serde_json::to_string(spec).expect("pipeline specs always serialize");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Provenance recorded alongside an exported batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportInfo {
    pub seed: u64,
    pub epoch: u64,
    pub batch_index: u64,
    pub pipeline_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub batch_size: usize,
    pub image_shape: (usize, usize, usize),
    pub n_classes: usize,
    pub range: RangeTag,
    pub info: ExportInfo,
}

impl Manifest {
    pub fn path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn to_text(&self) -> String {
        let (h, w, c) = self.image_shape;
        let b = self.batch_size;
        let range = match self.range {
            RangeTag::Unit => "unit",
            RangeTag::Normalized => "normalized",
        };
        format!(
            "images: {IMAGES_FILE}\n\
             images_shape: {b},{h},{w},{c}\n\
             images_dtype: <f4\n\
             labels: {LABELS_FILE}\n\
             labels_shape: {b},{n}\n\
             labels_dtype: <f8\n\
             range: {range}\n\
             seed: {seed}\n\
             epoch: {epoch}\n\
             batch_index: {bi}\n\
             pipeline_hash: {hash}\n",
            n = self.n_classes,
            seed = self.info.seed,
            epoch = self.info.epoch,
            bi = self.info.batch_index,
            hash = self.info.pipeline_hash,
        )
    }
}

/// Write `batch` into `dir` (created if missing).
pub fn export_batch(batch: &Batch, dir: &Path, info: &ExportInfo) -> Result<Manifest> {
    let (Some((h, w, c)), Some(n), Some(range)) = (batch.image_shape(), batch.n_classes(), batch.range())
    else {
        return Err(Error::Format("refusing to export an empty batch".into()));
    };
    let b = batch.len();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let pixels: Vec<f32> = batch
        .samples()
        .iter()
        .flat_map(|s| s.image.data().iter().copied())
        .collect();
    let images = Array4::from_shape_vec((b, h, w, c), pixels).map_err(|e| Error::Shape(e.to_string()))?;
    let probs: Vec<f64> = batch
        .samples()
        .iter()
        .flat_map(|s| s.label.probs().iter().copied())
        .collect();
    let labels = Array2::from_shape_vec((b, n), probs).map_err(|e| Error::Shape(e.to_string()))?;

    let images_path = dir.join(IMAGES_FILE);
    write_npy(&images_path, &images).map_err(|e| npy_io(&images_path, e))?;
    let labels_path = dir.join(LABELS_FILE);
    write_npy(&labels_path, &labels).map_err(|e| npy_io(&labels_path, e))?;

    let manifest = Manifest {
        dir: dir.to_path_buf(),
        batch_size: b,
        image_shape: (h, w, c),
        n_classes: n,
        range,
        info: info.clone(),
    };
    let path = manifest.path();
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn npy_io(path: &Path, e: impl std::error::Error + Send + Sync + 'static) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Read back the image and label tensors written by [`export_batch`].
pub fn import_batch(dir: &Path) -> Result<(Array4<f32>, Array2<f64>)> {
    let images_path = dir.join(IMAGES_FILE);
    let images: Array4<f32> = read_npy(&images_path).map_err(|e| npy_io(&images_path, e))?;
    let labels_path = dir.join(LABELS_FILE);
    let labels: Array2<f64> = read_npy(&labels_path).map_err(|e| npy_io(&labels_path, e))?;
    if images.shape()[0] != labels.shape()[0] {
        return Err(Error::Format(format!(
            "{} images but {} labels in {}",
            images.shape()[0],
            labels.shape()[0],
            dir.display()
        )));
    }
    Ok((images, labels))
}

/// Rebuild samples from imported tensors. Source indices are not exported
/// and come back as each row's position.
pub fn batch_from_tensors(images: &Array4<f32>, labels: &Array2<f64>, range: RangeTag) -> Result<Batch> {
    let &[b, h, w, c] = images.shape() else {
        unreachable!("Array4 has four axes")
    };
    let samples = (0..b)
        .map(|i| {
            let px: Vec<f32> = images.index_axis(ndarray::Axis(0), i).iter().copied().collect();
            let probs: Vec<f64> = labels.row(i).iter().copied().collect();
            Sample::new(Image::new(h, w, c, px, range)?, LabelVector::new(probs)?, vec![i])
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Axis;
    use crate::mixers::Stage;
    use crate::transforms::{TransformChain, TransformSpec};

    fn batch() -> Batch {
        let samples = (0..3)
            .map(|i| {
                let data = (0..2 * 3 * 2).map(|p| ((p + i) % 7) as f32 / 7.0).collect();
                Sample::new(
                    Image::new(2, 3, 2, data, RangeTag::Unit).unwrap(),
                    LabelVector::new(vec![0.25, 0.75 - 0.25 * i as f64, 0.25 * i as f64]).unwrap(),
                    vec![i],
                )
                .unwrap()
            })
            .collect();
        Batch::new(samples).unwrap()
    }

    fn info(spec: &PipelineSpec) -> ExportInfo {
        ExportInfo {
            seed: 7,
            epoch: 0,
            batch_index: 0,
            pipeline_hash: pipeline_hash(spec),
        }
    }

    #[test]
    fn export_import_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let b = batch();
        let m = export_batch(&b, dir.path(), &info(&PipelineSpec::default())).unwrap();
        let (images, labels) = import_batch(dir.path()).unwrap();
        assert_eq!(images.shape(), &[3, 2, 3, 2]);
        assert_eq!(labels.shape(), &[3, 3]);
        let back = batch_from_tensors(&images, &labels, m.range).unwrap();
        for (x, y) in back.samples().iter().zip(b.samples()) {
            let xb: Vec<u32> = x.image.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.image.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
            assert_eq!(x.label, y.label);
        }
        let text = std::fs::read_to_string(m.path()).unwrap();
        assert!(text.contains("images_shape: 3,2,3,2\n"));
        assert!(text.contains("labels_shape: 3,3\n"));
        assert!(text.contains("seed: 7\n"));
    }

    #[test]
    fn npy_header_is_standard() {
        let dir = tempfile::tempdir().unwrap();
        export_batch(&batch(), dir.path(), &info(&PipelineSpec::default())).unwrap();
        let raw = std::fs::read(dir.path().join(IMAGES_FILE)).unwrap();
        assert_eq!(&raw[..6], b"\x93NUMPY");
        let header = String::from_utf8_lossy(&raw[10..80]);
        assert!(header.contains("'descr': '<f4'"), "{header}");
        assert!(header.contains("(3, 2, 3, 2)"), "{header}");
        let raw = std::fs::read(dir.path().join(LABELS_FILE)).unwrap();
        assert!(String::from_utf8_lossy(&raw[10..80]).contains("'<f8'"));
    }

    #[test]
    fn empty_batch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Batch::new(vec![]).unwrap();
        assert!(matches!(
            export_batch(&empty, dir.path(), &info(&PipelineSpec::default())),
            Err(Error::Format(_))
        ));
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn hash_tracks_pipeline_changes() {
        let base = PipelineSpec::new(
            TransformChain::new(vec![TransformSpec::HorizontalFlip { p: 0.5 }]).unwrap(),
            vec![Stage::MixUp { alpha: 1.0, k: 2 }, Stage::StackMix { k: 2, axis: Axis::Height, same: false }],
        )
        .unwrap();
        let perturbed = [
            PipelineSpec::new(TransformChain::empty(), base.stages().to_vec()).unwrap(),
            PipelineSpec::new(
                TransformChain::new(vec![TransformSpec::HorizontalFlip { p: 0.4 }]).unwrap(),
                base.stages().to_vec(),
            )
            .unwrap(),
            PipelineSpec::new(base.base().clone(), vec![Stage::MixUp { alpha: 0.5, k: 2 }, Stage::StackMix { k: 2, axis: Axis::Height, same: false }]).unwrap(),
            PipelineSpec::new(base.base().clone(), vec![Stage::MixUp { alpha: 1.0, k: 3 }, Stage::StackMix { k: 2, axis: Axis::Height, same: false }]).unwrap(),
            base.with_stack_k(3).unwrap(),
            PipelineSpec::new(base.base().clone(), vec![Stage::MixUp { alpha: 1.0, k: 2 }, Stage::StackMix { k: 2, axis: Axis::Width, same: false }]).unwrap(),
            PipelineSpec::new(base.base().clone(), vec![Stage::CutMix { alpha: 1.0, k: 2, box_scale: None }, Stage::StackMix { k: 2, axis: Axis::Height, same: false }]).unwrap(),
            PipelineSpec::new(base.base().clone(), vec![Stage::StackMix { k: 2, axis: Axis::Height, same: false }]).unwrap(),
            PipelineSpec::new(base.base().clone(), vec![Stage::MixUp { alpha: 1.0, k: 2 }]).unwrap(),
            PipelineSpec::new(base.base().clone(), vec![Stage::None, Stage::MixUp { alpha: 1.0, k: 2 }, Stage::StackMix { k: 2, axis: Axis::Height, same: false }]).unwrap(),
        ];
        let h0 = pipeline_hash(&base);
        assert_eq!(h0, pipeline_hash(&base.clone()));
        assert_eq!(h0.len(), 64);
        for p in &perturbed {
            assert_ne!(p, &base);
            assert_ne!(pipeline_hash(p), h0, "{p:?}");
        }
    }
}
