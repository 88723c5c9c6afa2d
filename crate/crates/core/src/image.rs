//! Dense `H × W × C` float images and block concatenation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which value range an image's pixels live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    /// Every value in `[0, 1]`.
    Unit,
    /// Per-channel mean/std normalization has been applied.
    Normalized,
}

/// Axis along which images are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Vertical stacking.
    #[default]
    Height,
    Width,
    Channel,
}

/// Row-major `H × W × C` float image. Pixel `(y, x)` channel `c` lives at
/// `(y * W + x) * C + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    range: RangeTag,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        range: RangeTag,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite pixel value at index {bad}"
            )));
        }
        if range == RangeTag::Unit {
            if let Some(bad) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::RangeTag(format!(
                    "unit-range image has value {} at index {bad}",
                    data[bad]
                )));
            }
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
            range,
        })
    }

    /// A unit-range image filled with `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
            RangeTag::Unit,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    /// Same shape and tag, new pixel buffer. Unit images are clamped back
    /// into `[0, 1]` to absorb rounding from interpolation and mixing.
    pub(crate) fn with_data(&self, mut data: Vec<f32>) -> Result<Image> {
        if self.range == RangeTag::Unit {
            clamp_unit(&mut data);
        }
        Image::new(self.height, self.width, self.channels, data, self.range)
    }

    /// Pixel values widened to `f64`, in storage order.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Mirror the image left to right.
    pub fn flipped_horizontally(&self) -> Image {
        let c = self.channels;
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * c) {
            for px in row.chunks_exact(c).rev() {
                out.extend_from_slice(px);
            }
        }
        Image {
            data: out,
            ..self.clone()
        }
    }
}

pub(crate) fn clamp_unit(data: &mut [f32]) {
    for v in data {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Concatenate images block-wise along `axis`. Input `j` occupies block `j`
/// of the output, in order. Images must agree on every dimension except
/// `axis`.
pub fn concat_images(images: &[Image], axis: Axis) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptyInput("concat_images needs at least one image".into()))?;
    let off_axis = |img: &Image| match axis {
        Axis::Height => (img.width, img.channels),
        Axis::Width => (img.height, img.channels),
        Axis::Channel => (img.height, img.width),
    };
    for (j, img) in images.iter().enumerate().skip(1) {
        if off_axis(img) != off_axis(first) {
            return Err(Error::Shape(format!(
                "image {j} has shape {:?}, incompatible with {:?} along {axis:?}",
                img.shape(),
                first.shape()
            )));
        }
        if img.range != first.range {
            return Err(Error::Shape(format!(
                "image {j} has range tag {:?}, expected {:?}",
                img.range, first.range
            )));
        }
    }
    if images.len() == 1 {
        return Ok(first.clone());
    }

    let (h, w, c) = first.shape();
    let total: usize = images.iter().map(Image::len).sum();
    let mut data = Vec::with_capacity(total);
    let (oh, ow, oc) = match axis {
        Axis::Height => {
            for img in images {
                data.extend_from_slice(&img.data);
            }
            (images.iter().map(|i| i.height).sum(), w, c)
        }
        Axis::Width => {
            for y in 0..h {
                for img in images {
                    let row = img.width * c;
                    data.extend_from_slice(&img.data[y * row..(y + 1) * row]);
                }
            }
            (h, images.iter().map(|i| i.width).sum(), c)
        }
        Axis::Channel => {
            for p in 0..h * w {
                for img in images {
                    data.extend_from_slice(&img.data[p * img.channels..(p + 1) * img.channels]);
                }
            }
            (h, w, images.iter().map(|i| i.channels).sum())
        }
    };
    Ok(Image {
        height: oh,
        width: ow,
        channels: oc,
        data,
        range: first.range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize, offset: f32) -> Image {
        let n = h * w * c;
        let data = (0..n).map(|i| ((i as f32 + offset) % 1000.0) / 1000.0).collect();
        Image::new(h, w, c, data, RangeTag::Unit).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            Image::new(2, 2, 1, vec![0.0; 3], RangeTag::Unit),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Image::new(1, 1, 1, vec![f32::NAN], RangeTag::Normalized),
            Err(Error::InvalidValue(_))
        ));
        assert!(matches!(
            Image::new(1, 1, 1, vec![1.5], RangeTag::Unit),
            Err(Error::RangeTag(_))
        ));
        assert!(Image::new(1, 1, 1, vec![1.5], RangeTag::Normalized).is_ok());
    }

    #[test]
    fn two_cifar_images_stack_vertically() {
        let a = ramp(32, 32, 3, 0.0);
        let b = ramp(32, 32, 3, 1.0);
        let out = concat_images(&[a.clone(), b.clone()], Axis::default()).unwrap();
        assert_eq!(out.shape(), (64, 32, 3));
        assert_eq!(&out.data()[..a.len()], a.data());
        assert_eq!(&out.data()[a.len()..], b.data());
    }

    #[test]
    fn single_image_is_copied_bitwise() {
        let a = ramp(3, 5, 3, 0.5);
        for axis in [Axis::Height, Axis::Width, Axis::Channel] {
            assert_eq!(concat_images(std::slice::from_ref(&a), axis).unwrap(), a);
        }
    }

    #[test]
    fn constant_blocks_land_in_order() {
        let imgs: Vec<Image> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&v| Image::filled(4, 4, 1, v).unwrap())
            .collect();
        let out = concat_images(&imgs, Axis::Height).unwrap();
        assert_eq!(out.shape(), (12, 4, 1));
        for y in 0..12 {
            let expected = [0.0, 0.5, 1.0][y / 4];
            for x in 0..4 {
                assert_eq!(out.get(y, x, 0), expected);
            }
        }
    }

    #[test]
    fn width_and_channel_layouts() {
        let a = ramp(2, 3, 2, 0.0);
        let b = ramp(2, 3, 2, 100.0);
        let wide = concat_images(&[a.clone(), b.clone()], Axis::Width).unwrap();
        assert_eq!(wide.shape(), (2, 6, 2));
        for y in 0..2 {
            for x in 0..3 {
                for c in 0..2 {
                    assert_eq!(wide.get(y, x, c), a.get(y, x, c));
                    assert_eq!(wide.get(y, x + 3, c), b.get(y, x, c));
                }
            }
        }
        let deep = concat_images(&[a.clone(), b.clone()], Axis::Channel).unwrap();
        assert_eq!(deep.shape(), (2, 3, 4));
        for y in 0..2 {
            for x in 0..3 {
                for c in 0..2 {
                    assert_eq!(deep.get(y, x, c), a.get(y, x, c));
                    assert_eq!(deep.get(y, x, c + 2), b.get(y, x, c));
                }
            }
        }
    }

    #[test]
    fn uneven_blocks_along_axis() {
        let a = ramp(2, 2, 1, 0.0);
        let b = ramp(2, 3, 1, 50.0);
        let wide = concat_images(&[a.clone(), b.clone()], Axis::Width).unwrap();
        assert_eq!(wide.shape(), (2, 5, 1));
        for y in 0..2 {
            assert_eq!(wide.get(y, 1, 0), a.get(y, 1, 0));
            assert_eq!(wide.get(y, 4, 0), b.get(y, 2, 0));
        }
        let tall = concat_images(&[ramp(1, 3, 1, 0.0), ramp(2, 3, 1, 9.0)], Axis::Height).unwrap();
        assert_eq!(tall.shape(), (3, 3, 1));
    }

    #[test]
    fn concat_errors() {
        assert!(matches!(
            concat_images(&[], Axis::Height),
            Err(Error::EmptyInput(_))
        ));
        let a = ramp(2, 2, 1, 0.0);
        let b = ramp(2, 3, 1, 0.0);
        assert!(matches!(
            concat_images(&[a.clone(), b], Axis::Height),
            Err(Error::Shape(_))
        ));
        let n = Image::new(2, 2, 1, vec![0.0; 4], RangeTag::Normalized).unwrap();
        assert!(matches!(
            concat_images(&[a, n], Axis::Height),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn flip_reverses_columns() {
        let img = Image::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4], RangeTag::Unit).unwrap();
        assert_eq!(img.flipped_horizontally().data(), &[0.2, 0.1, 0.4, 0.3]);
    }
}
