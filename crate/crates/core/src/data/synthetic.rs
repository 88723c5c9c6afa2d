//! Band-template synthetic classification data.
//!
//! Class `c` lights the `c`-th horizontal band of rows at `signal` over a
//! `background` level, so the centred templates have disjoint supports and
//! are mutually orthogonal. Templates are invariant under horizontal flips.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::image::{clamp_unit, Image, RangeTag};
use crate::rng::derive_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    /// Square side length.
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub noise_std: f64,
    #[serde(default = "default_background")]
    pub background: f32,
    #[serde(default = "default_signal")]
    pub signal: f32,
}

fn default_channels() -> usize {
    1
}

fn default_background() -> f32 {
    0.2
}

fn default_signal() -> f32 {
    0.8
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.image_size == 0 || self.channels == 0 {
            return Err(Error::Config("synthetic spec needs positive classes, size and channels".into()));
        }
        if self.n_classes > self.image_size {
            return Err(Error::Config(format!(
                "{} classes need at least as many rows, image_size is {}",
                self.n_classes, self.image_size
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        for v in [self.background, self.signal] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("template level {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Noise-free template of class `class`.
    pub fn template(&self, class: usize) -> Image {
        let (s, c) = (self.image_size, self.channels);
        let mut data = vec![self.background; s * s * c];
        for y in 0..s {
            if y * self.n_classes / s == class {
                data[y * s * c..(y + 1) * s * c].fill(self.signal);
            }
        }
        Image::new(s, s, c, data, RangeTag::Unit).expect("template levels validated")
    }
}

/// `n_classes · samples_per_class` images; sample `j` has class
/// `j % n_classes` and draws its noise from stream `j` of `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_classes * spec.samples_per_class;
    let templates: Vec<Image> = (0..spec.n_classes).map(|c| spec.template(c)).collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let class = j % spec.n_classes;
        let template = &templates[class];
        let image = if spec.noise_std == 0.0 {
            template.clone()
        } else {
            let mut rng = derive_stream(seed, j as u64);
            let mut data: Vec<f32> = template
                .data()
                .iter()
                .map(|&v| v + noise.sample(&mut rng) as f32)
                .collect();
            clamp_unit(&mut data);
            template.with_data(data)?
        };
        images.push(image);
        labels.push(class);
    }
    Dataset::new(images, labels, spec.n_classes, Split::Train)
}
