//! Per-image stochastic transforms: the crop/flip/normalize set used for
//! standard training and the primitive operations AugMix chains draw from.
//!
//! Every transform consumes a fixed number of draws from its stream,
//! reported by [`TransformSpec::draw_count`]:
//!
//! | op                | draws | meaning                                  |
//! |-------------------|-------|------------------------------------------|
//! | `pad_random_crop` | 2     | row offset, column offset                |
//! | `horizontal_flip` | 1     | flip decision                            |
//! | `rotate`          | 1     | angle in `[-max, max]` degrees           |
//! | `translate_x/y`   | 1     | shift in `[-max, max]` · side            |
//! | `shear_x/y`       | 1     | factor in `[-max, max]`                  |
//! | `posterize`       | 1     | bit depth in `[min_bits, 8]`             |
//! | others            | 0     |                                          |
//!
//! Geometric warps sample bilinearly with zero fill. Photometric ops need
//! unit-range input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};
use crate::rng::RngStream;

fn default_pad() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TransformSpec {
    /// Zero-pad by `pad` on every side, then take a random `size × size`
    /// window (input size when `size` is absent). `pad` defaults to 4.
    PadRandomCrop {
        #[serde(default = "default_pad")]
        pad: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size: Option<usize>,
    },
    HorizontalFlip {
        p: f64,
    },
    /// `(x - mean) / std` per channel. Length-1 vectors broadcast.
    Normalize {
        mean: Vec<f32>,
        std: Vec<f32>,
    },
    CenterCrop {
        size: usize,
    },
    Rotate {
        max_degrees: f64,
    },
    TranslateX {
        max_fraction: f64,
    },
    TranslateY {
        max_fraction: f64,
    },
    ShearX {
        max_factor: f64,
    },
    ShearY {
        max_factor: f64,
    },
    Posterize {
        min_bits: u8,
    },
    /// Invert values strictly above `threshold`.
    Solarize {
        threshold: f64,
    },
    Autocontrast,
    Equalize,
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            TransformSpec::HorizontalFlip { p } if !(0.0..=1.0).contains(p) => {
                bad(format!("flip probability {p} outside [0, 1]"))
            }
            TransformSpec::Normalize { mean, std } => {
                if mean.is_empty() || mean.len() != std.len() {
                    return bad(format!(
                        "normalize needs equal nonempty mean/std, got {} and {}",
                        mean.len(),
                        std.len()
                    ));
                }
                if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad("normalize std entries must be positive".into());
                }
                if mean.iter().any(|m| !m.is_finite()) {
                    return bad("normalize mean entries must be finite".into());
                }
                Ok(())
            }
            TransformSpec::CenterCrop { size: 0 } | TransformSpec::PadRandomCrop { size: Some(0), .. } => {
                bad("crop size must be positive".into())
            }
            TransformSpec::Rotate { max_degrees } if !(0.0..=180.0).contains(max_degrees) => {
                bad(format!("rotate max_degrees {max_degrees} outside [0, 180]"))
            }
            TransformSpec::TranslateX { max_fraction } | TransformSpec::TranslateY { max_fraction }
                if !(0.0..=1.0).contains(max_fraction) =>
            {
                bad(format!("translate max_fraction {max_fraction} outside [0, 1]"))
            }
            TransformSpec::ShearX { max_factor } | TransformSpec::ShearY { max_factor }
                if !(max_factor.is_finite() && *max_factor >= 0.0) =>
            {
                bad(format!("shear max_factor {max_factor} must be finite and >= 0"))
            }
            TransformSpec::Posterize { min_bits } if !(1..=8).contains(min_bits) => {
                bad(format!("posterize min_bits {min_bits} outside [1, 8]"))
            }
            TransformSpec::Solarize { threshold } if !(0.0..=1.0).contains(threshold) => {
                bad(format!("solarize threshold {threshold} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// Words drawn from the stream per application.
    pub fn draw_count(&self) -> u64 {
        match self {
            TransformSpec::PadRandomCrop { .. } => 2,
            TransformSpec::HorizontalFlip { .. }
            | TransformSpec::Rotate { .. }
            | TransformSpec::TranslateX { .. }
            | TransformSpec::TranslateY { .. }
            | TransformSpec::ShearX { .. }
            | TransformSpec::ShearY { .. }
            | TransformSpec::Posterize { .. } => 1,
            TransformSpec::Normalize { .. }
            | TransformSpec::CenterCrop { .. }
            | TransformSpec::Solarize { .. }
            | TransformSpec::Autocontrast
            | TransformSpec::Equalize => 0,
        }
    }

    fn is_photometric(&self) -> bool {
        matches!(
            self,
            TransformSpec::Posterize { .. }
                | TransformSpec::Solarize { .. }
                | TransformSpec::Autocontrast
                | TransformSpec::Equalize
        )
    }
}

/// Apply one transform, drawing its randomness from `rng`.
pub fn apply_transform(image: &Image, spec: &TransformSpec, rng: &mut RngStream) -> Result<Image> {
    spec.validate()?;
    if spec.is_photometric() && image.range() != RangeTag::Unit {
        return Err(Error::RangeTag(format!(
            "{spec:?} requires a unit-range image"
        )));
    }
    match spec {
        TransformSpec::PadRandomCrop { pad, size } => {
            let (h, w, _) = image.shape();
            let (ch, cw) = size.map_or((h, w), |s| (s, s));
            let (ph, pw) = (h + 2 * pad, w + 2 * pad);
            if ch > ph || cw > pw {
                return Err(Error::Shape(format!(
                    "crop {ch}x{cw} larger than padded image {ph}x{pw}"
                )));
            }
            let oy = rng.below((ph - ch + 1) as u64) as usize;
            let ox = rng.below((pw - cw + 1) as u64) as usize;
            pad_crop_at(image, *pad, ch, cw, oy, ox)
        }
        TransformSpec::HorizontalFlip { p } => {
            if rng.bernoulli(*p) {
                Ok(image.flipped_horizontally())
            } else {
                Ok(image.clone())
            }
        }
        TransformSpec::Normalize { mean, std } => normalize(image, mean, std),
        TransformSpec::CenterCrop { size } => {
            let (h, w, _) = image.shape();
            if *size > h || *size > w {
                return Err(Error::Shape(format!(
                    "center crop {size} larger than image {h}x{w}"
                )));
            }
            pad_crop_at(image, 0, *size, *size, (h - size) / 2, (w - size) / 2)
        }
        TransformSpec::Rotate { max_degrees } => {
            let theta = rng.uniform_range(-max_degrees, *max_degrees).to_radians();
            let (s, c) = theta.sin_cos();
            warp(image, |u, v| (c * u + s * v, -s * u + c * v))
        }
        TransformSpec::TranslateX { max_fraction } => {
            let shift = rng.uniform_range(-max_fraction, *max_fraction) * image.width() as f64;
            warp(image, |u, v| (u - shift, v))
        }
        TransformSpec::TranslateY { max_fraction } => {
            let shift = rng.uniform_range(-max_fraction, *max_fraction) * image.height() as f64;
            warp(image, |u, v| (u, v - shift))
        }
        TransformSpec::ShearX { max_factor } => {
            let f = rng.uniform_range(-max_factor, *max_factor);
            warp(image, |u, v| (u + f * v, v))
        }
        TransformSpec::ShearY { max_factor } => {
            let f = rng.uniform_range(-max_factor, *max_factor);
            warp(image, |u, v| (u, v + f * u))
        }
        TransformSpec::Posterize { min_bits } => {
            let bits = *min_bits as u64 + rng.below(9 - *min_bits as u64);
            posterize(image, bits as u32)
        }
        TransformSpec::Solarize { threshold } => {
            let t = *threshold as f32;
            let data = image
                .data()
                .iter()
                .map(|&v| if v > t { 1.0 - v } else { v })
                .collect();
            image.with_data(data)
        }
        TransformSpec::Autocontrast => autocontrast(image),
        TransformSpec::Equalize => equalize(image),
    }
}

/// Zero-pad by `pad`, then copy the `ch × cw` window whose top-left corner
/// sits at `(oy, ox)` in padded coordinates.
pub fn pad_crop_at(
    image: &Image,
    pad: usize,
    ch: usize,
    cw: usize,
    oy: usize,
    ox: usize,
) -> Result<Image> {
    let (h, w, c) = image.shape();
    if oy + ch > h + 2 * pad || ox + cw > w + 2 * pad {
        return Err(Error::Shape(format!(
            "window {ch}x{cw} at ({oy}, {ox}) exceeds padded image {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    let mut data = vec![0.0f32; ch * cw * c];
    for y in 0..ch {
        let Some(sy) = (oy + y).checked_sub(pad).filter(|&sy| sy < h) else {
            continue;
        };
        for x in 0..cw {
            let Some(sx) = (ox + x).checked_sub(pad).filter(|&sx| sx < w) else {
                continue;
            };
            let src = image.index(sy, sx, 0);
            let dst = (y * cw + x) * c;
            data[dst..dst + c].copy_from_slice(&image.data()[src..src + c]);
        }
    }
    Image::new(ch, cw, c, data, image.range())
}

fn normalize(image: &Image, mean: &[f32], std: &[f32]) -> Result<Image> {
    if image.range() != RangeTag::Unit {
        return Err(Error::RangeTag(
            "normalize expects a unit-range image (already normalized?)".into(),
        ));
    }
    let c = image.channels();
    if mean.len() != 1 && mean.len() != c {
        return Err(Error::Shape(format!(
            "normalize has {} channel stats for a {c}-channel image",
            mean.len()
        )));
    }
    let pick = |v: &[f32], ch: usize| if v.len() == 1 { v[0] } else { v[ch] };
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            (v - pick(mean, ch)) / pick(std, ch)
        })
        .collect();
    Image::new(
        image.height(),
        image.width(),
        c,
        data,
        RangeTag::Normalized,
    )
}

/// Inverse-map warp. `src_of(u, v)` maps output pixel-centre coordinates,
/// measured from the image centre, to source coordinates in the same frame.
fn warp(image: &Image, src_of: impl Fn(f64, f64) -> (f64, f64)) -> Result<Image> {
    let (h, w, c) = image.shape();
    let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut data = vec![0.0f32; image.len()];
    let tap = |y: isize, x: isize, ch: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            f64::from(image.get(y as usize, x as usize, ch))
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (su, sv) = src_of(x as f64 + 0.5 - hw, y as f64 + 0.5 - hh);
            let fx = su + hw - 0.5;
            let fy = sv + hh - 0.5;
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = tap(y0, x0, ch) * (1.0 - ax) + tap(y0, x0 + 1, ch) * ax;
                let bottom = tap(y0 + 1, x0, ch) * (1.0 - ax) + tap(y0 + 1, x0 + 1, ch) * ax;
                data[(y * w + x) * c + ch] = (top * (1.0 - ay) + bottom * ay) as f32;
            }
        }
    }
    image.with_data(data)
}

#[inline]
fn to_level(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn posterize(image: &Image, bits: u32) -> Result<Image> {
    let mask = (0xFFu32 << (8 - bits)) as u8;
    let data = image
        .data()
        .iter()
        .map(|&v| f32::from(to_level(v) & mask) / 255.0)
        .collect();
    image.with_data(data)
}

fn autocontrast(image: &Image) -> Result<Image> {
    let c = image.channels();
    let mut data = image.data().to_vec();
    for ch in 0..c {
        let (lo, hi) = image
            .data()
            .iter()
            .skip(ch)
            .step_by(c)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi > lo {
            for v in data.iter_mut().skip(ch).step_by(c) {
                *v = (*v - lo) / (hi - lo);
            }
        }
    }
    image.with_data(data)
}

/// Histogram equalization per channel on 256 levels.
fn equalize(image: &Image) -> Result<Image> {
    let c = image.channels();
    let mut data = image.data().to_vec();
    for ch in 0..c {
        let mut hist = [0usize; 256];
        for &v in image.data().iter().skip(ch).step_by(c) {
            hist[to_level(v) as usize] += 1;
        }
        let nonzero: Vec<usize> = hist.iter().copied().filter(|&n| n > 0).collect();
        if nonzero.len() <= 1 {
            continue;
        }
        let total: usize = nonzero.iter().sum();
        let step = (total - nonzero[nonzero.len() - 1]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (level, slot) in lut.iter_mut().enumerate() {
            *slot = (n / step).min(255) as u8;
            n += hist[level];
        }
        for v in data.iter_mut().skip(ch).step_by(c) {
            *v = f32::from(lut[to_level(*v) as usize]) / 255.0;
        }
    }
    image.with_data(data)
}

/// An ordered list of transforms. `normalize`, if present, appears once and
/// last.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<TransformSpec>", into = "Vec<TransformSpec>")]
pub struct TransformChain {
    specs: Vec<TransformSpec>,
}

impl TryFrom<Vec<TransformSpec>> for TransformChain {
    type Error = Error;

    fn try_from(specs: Vec<TransformSpec>) -> Result<Self> {
        TransformChain::new(specs)
    }
}

impl From<TransformChain> for Vec<TransformSpec> {
    fn from(chain: TransformChain) -> Self {
        chain.specs
    }
}

impl TransformChain {
    pub fn new(specs: Vec<TransformSpec>) -> Result<Self> {
        for spec in &specs {
            spec.validate()?;
        }
        let normalize_at: Vec<usize> = specs
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, TransformSpec::Normalize { .. }))
            .map(|(i, _)| i)
            .collect();
        match normalize_at.as_slice() {
            [] => {}
            [i] if *i + 1 == specs.len() => {}
            [_] => {
                return Err(Error::Config(
                    "normalize must come after every other transform".into(),
                ))
            }
            _ => return Err(Error::Config("normalize appears more than once".into())),
        }
        Ok(TransformChain { specs })
    }

    pub fn empty() -> Self {
        TransformChain::default()
    }

    pub fn specs(&self) -> &[TransformSpec] {
        &self.specs
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Total draws one application consumes.
    pub fn draw_count(&self) -> u64 {
        self.specs.iter().map(TransformSpec::draw_count).sum()
    }

    /// The chain without its trailing normalize, and that normalize.
    pub fn split_normalize(&self) -> (TransformChain, Option<TransformSpec>) {
        match self.specs.last() {
            Some(last @ TransformSpec::Normalize { .. }) => (
                TransformChain {
                    specs: self.specs[..self.specs.len() - 1].to_vec(),
                },
                Some(last.clone()),
            ),
            _ => (self.clone(), None),
        }
    }

    /// The deterministic test-time counterpart: random crops become center
    /// crops of the same size, normalize is kept, random ops are dropped.
    pub fn eval_chain(&self) -> TransformChain {
        let specs = self
            .specs
            .iter()
            .filter_map(|s| match s {
                TransformSpec::PadRandomCrop { size: Some(size), .. } => {
                    Some(TransformSpec::CenterCrop { size: *size })
                }
                TransformSpec::CenterCrop { .. } | TransformSpec::Normalize { .. } => {
                    Some(s.clone())
                }
                _ => None,
            })
            .collect();
        TransformChain { specs }
    }
}

/// Apply `chain` left to right on one stream.
pub fn apply_chain(image: &Image, chain: &TransformChain, rng: &mut RngStream) -> Result<Image> {
    let mut current = image.clone();
    for spec in &chain.specs {
        current = apply_transform(&current, spec, rng)?;
    }
    Ok(current)
}

/// The AugMix primitive set. Each op scales linearly with a severity level
/// in `[0, 1]` up to its conventional maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugMixOp {
    Autocontrast,
    Equalize,
    Posterize,
    Rotate,
    Solarize,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl AugMixOp {
    pub const ALL: [AugMixOp; 9] = [
        AugMixOp::Autocontrast,
        AugMixOp::Equalize,
        AugMixOp::Posterize,
        AugMixOp::Rotate,
        AugMixOp::Solarize,
        AugMixOp::ShearX,
        AugMixOp::ShearY,
        AugMixOp::TranslateX,
        AugMixOp::TranslateY,
    ];

    /// Concrete transform at `level` ∈ [0, 1]: rotate up to 30°, shear up
    /// to 0.3, translate up to a third of the side, posterize down to 4
    /// bits, solarize threshold down to 0.
    pub fn to_spec(self, level: f64) -> TransformSpec {
        let level = level.clamp(0.0, 1.0);
        match self {
            AugMixOp::Autocontrast => TransformSpec::Autocontrast,
            AugMixOp::Equalize => TransformSpec::Equalize,
            AugMixOp::Posterize => TransformSpec::Posterize {
                min_bits: 8 - (4.0 * level).round() as u8,
            },
            AugMixOp::Rotate => TransformSpec::Rotate {
                max_degrees: 30.0 * level,
            },
            AugMixOp::Solarize => TransformSpec::Solarize {
                threshold: 1.0 - level,
            },
            AugMixOp::ShearX => TransformSpec::ShearX {
                max_factor: 0.3 * level,
            },
            AugMixOp::ShearY => TransformSpec::ShearY {
                max_factor: 0.3 * level,
            },
            AugMixOp::TranslateX => TransformSpec::TranslateX {
                max_fraction: level / 3.0,
            },
            AugMixOp::TranslateY => TransformSpec::TranslateY {
                max_fraction: level / 3.0,
            },
        }
    }
}
