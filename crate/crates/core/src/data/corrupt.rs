//! Common corruptions at five severities.
//!
//! Severity tables follow the CIFAR-C conventions:
//!
//! | kind             | parameter                    | s=1   | s=2   | s=3   | s=4   | s=5   |
//! |------------------|------------------------------|-------|-------|-------|-------|-------|
//! | `gaussian_noise` | noise std                    | 0.04  | 0.06  | 0.08  | 0.09  | 0.10  |
//! | `shot_noise`     | photon count λ (Poisson(xλ)/λ)| 500   | 250   | 100   | 75    | 50    |
//! | `impulse_noise`  | salt-and-pepper fraction     | 0.01  | 0.02  | 0.03  | 0.05  | 0.07  |
//! | `brightness`     | additive shift δ             | 0.05  | 0.10  | 0.15  | 0.20  | 0.30  |
//! | `contrast`       | scale about channel mean     | 0.75  | 0.50  | 0.40  | 0.30  | 0.15  |
//! | `pixelate`       | down-sampling factor         | 0.95  | 0.90  | 0.85  | 0.75  | 0.65  |
//!
//! Outputs are clipped to `[0, 1]`.

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, Image, RangeTag};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    Brightness,
    Contrast,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn table(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussianNoise => [0.04, 0.06, 0.08, 0.09, 0.10],
            CorruptionKind::ShotNoise => [500.0, 250.0, 100.0, 75.0, 50.0],
            CorruptionKind::ImpulseNoise => [0.01, 0.02, 0.03, 0.05, 0.07],
            CorruptionKind::Brightness => [0.05, 0.1, 0.15, 0.2, 0.3],
            CorruptionKind::Contrast => [0.75, 0.5, 0.4, 0.3, 0.15],
            CorruptionKind::Pixelate => [0.95, 0.9, 0.85, 0.75, 0.65],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCorruption")]
pub struct CorruptionSpec {
    kind: CorruptionKind,
    severity: u8,
}

#[derive(Deserialize)]
struct RawCorruption {
    kind: CorruptionKind,
    severity: u8,
}

impl TryFrom<RawCorruption> for CorruptionSpec {
    type Error = Error;

    fn try_from(raw: RawCorruption) -> Result<Self> {
        CorruptionSpec::new(raw.kind, raw.severity)
    }
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Config(format!("severity {severity} outside 1..=5")));
        }
        Ok(CorruptionSpec { kind, severity })
    }

    pub fn kind(&self) -> CorruptionKind {
        self.kind
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    /// The table entry for this severity.
    pub fn parameter(&self) -> f64 {
        self.kind.table()[self.severity as usize - 1]
    }

    /// Column label such as `gaussian_noise_s3`.
    pub fn label(&self) -> String {
        format!("{}_s{}", self.kind.name(), self.severity)
    }
}

/// Corrupt a unit-range image.
pub fn corrupt(image: &Image, spec: &CorruptionSpec, rng: &mut RngStream) -> Result<Image> {
    if image.range() != RangeTag::Unit {
        return Err(Error::RangeTag("corruptions need a unit-range image".into()));
    }
    let p = spec.parameter();
    let mut data = match spec.kind {
        CorruptionKind::GaussianNoise => gaussian_noise(image.data(), p, rng)?,
        CorruptionKind::ShotNoise => {
            let mut out = Vec::with_capacity(image.len());
            for &v in image.data() {
                let rate = f64::from(v) * p;
                let k = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::Numerics(e.to_string()))?
                        .sample(rng)
                } else {
                    0.0
                };
                out.push((k / p) as f32);
            }
            out
        }
        CorruptionKind::ImpulseNoise => image
            .data()
            .iter()
            .map(|&v| {
                if rng.bernoulli(p) {
                    if rng.bernoulli(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
            .collect(),
        CorruptionKind::Brightness => image.data().iter().map(|&v| v + p as f32).collect(),
        CorruptionKind::Contrast => return contrast_with_scale(image, p),
        CorruptionKind::Pixelate => pixelate(image, p),
    };
    clamp_unit(&mut data);
    image.with_data(data)
}

/// Additive Gaussian noise before clipping.
fn gaussian_noise(data: &[f32], std: f64, rng: &mut RngStream) -> Result<Vec<f32>> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::Numerics(e.to_string()))?;
    Ok(data
        .iter()
        .map(|&v| (f64::from(v) + normal.sample(rng)) as f32)
        .collect())
}

/// `(x − μ_c)·scale + μ_c` with `μ_c` the per-channel mean.
pub fn contrast_with_scale(image: &Image, scale: f64) -> Result<Image> {
    let c = image.channels();
    let pixels = (image.len() / c) as f64;
    let mut means = vec![0.0f64; c];
    for (i, &v) in image.data().iter().enumerate() {
        means[i % c] += f64::from(v);
    }
    for m in &mut means {
        *m /= pixels;
    }
    let mut data: Vec<f32> = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = means[i % c];
            ((f64::from(v) - m) * scale + m) as f32
        })
        .collect();
    if scale == 1.0 {
        data.copy_from_slice(image.data());
    }
    clamp_unit(&mut data);
    image.with_data(data)
}

/// Box-average down to `factor` of each side, then nearest-neighbour back up.
fn pixelate(image: &Image, factor: f64) -> Vec<f32> {
    let (h, w, c) = image.shape();
    let sh = ((h as f64 * factor).round() as usize).max(1);
    let sw = ((w as f64 * factor).round() as usize).max(1);
    let mut small = vec![0.0f64; sh * sw * c];
    for i in 0..sh {
        let (y0, y1) = (i * h / sh, ((i + 1) * h).div_ceil(sh));
        for j in 0..sw {
            let (x0, x1) = (j * w / sw, ((j + 1) * w).div_ceil(sw));
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    for ch in 0..c {
                        small[(i * sw + j) * c + ch] += f64::from(image.get(y, x, ch));
                    }
                }
            }
            for ch in 0..c {
                small[(i * sw + j) * c + ch] /= count;
            }
        }
    }
    let mut out = Vec::with_capacity(image.len());
    for y in 0..h {
        let i = y * sh / h;
        for x in 0..w {
            let j = x * sw / w;
            for ch in 0..c {
                out.push(small[(i * sw + j) * c + ch] as f32);
            }
        }
    }
    out
}
