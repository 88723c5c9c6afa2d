//! Model checkpoints: `layer{i}_weight.npy` (`out × in`, f64),
//! `layer{i}_bias.npy` and a `layers: N` manifest.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_npy::{read_npy, write_npy};

use super::model::{Dense, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.txt";

fn npy_io(path: &Path, e: impl std::error::Error + Send + Sync + 'static) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, layer) in model.layers().iter().enumerate() {
        let w = Array2::from_shape_vec((layer.out_dim(), layer.in_dim()), layer.weights().to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let b = Array1::from_vec(layer.bias().to_vec());
        let wp = dir.join(format!("layer{i}_weight.npy"));
        let bp = dir.join(format!("layer{i}_bias.npy"));
        write_npy(&wp, &w).map_err(|e| npy_io(&wp, e))?;
        write_npy(&bp, &b).map_err(|e| npy_io(&bp, e))?;
    }
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = format!(
        "layers: {}\ninput_dim: {}\nn_classes: {}\n",
        model.layers().len(),
        model.input_dim(),
        model.n_classes()
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let layers: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("layers:"))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: missing layer count", path.display())))?;
    let mut dense = Vec::with_capacity(layers);
    for i in 0..layers {
        let wp = dir.join(format!("layer{i}_weight.npy"));
        let bp = dir.join(format!("layer{i}_bias.npy"));
        let w: Array2<f64> = read_npy(&wp).map_err(|e| npy_io(&wp, e))?;
        let b: Array1<f64> = read_npy(&bp).map_err(|e| npy_io(&bp, e))?;
        let (out_dim, in_dim) = w.dim();
        dense.push(Dense::new(in_dim, out_dim, w.iter().copied().collect(), b.to_vec())?);
    }
    Model::from_layers(dense)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::init(12, &[7, 5], 3, 11).unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), model);
    }

    #[test]
    fn missing_checkpoint_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Io { .. })));
    }
}
