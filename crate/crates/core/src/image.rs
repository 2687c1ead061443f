//! Dense interleaved images and PNG interchange.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, Error, Result};
use crate::real::Real;

/// Row-major, channel-interleaved image. Pixel `(x, y)` with `(0, 0)` at the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "buffer of {} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Fill a `channels`-channel image with one RGB/gray value repeated per pixel.
    pub fn from_pixel(width: usize, height: usize, pixel: &[T]) -> Self {
        let mut data = Vec::with_capacity(width * height * pixel.len());
        for _ in 0..width * height {
            data.extend_from_slice(pixel);
        }
        Self {
            width,
            height,
            channels: pixel.len(),
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape<U>(&self, other: &Image<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn convert<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Extract one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image<T> {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Bit depth used when writing PNG views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Write an RGB (3-channel) or grayscale (1-channel) image; values are clamped to [0,1].
pub fn save_png<T: Real>(img: &Image<T>, path: &Path, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    match (img.channels, depth) {
        (3, BitDepth::Eight) => {
            let buf: Vec<u8> = img.data.iter().map(|v| quantize(v.f64(), 255.0) as u8).collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, buf)
                .expect("buffer sized by construction")
                .save(path)?;
        }
        (3, BitDepth::Sixteen) => {
            let buf: Vec<u16> = img.data.iter().map(|v| quantize(v.f64(), 65535.0) as u16).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, buf)
                .expect("buffer sized by construction")
                .save(path)?;
        }
        (1, BitDepth::Eight) => {
            let buf: Vec<u8> = img.data.iter().map(|v| quantize(v.f64(), 255.0) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, buf)
                .expect("buffer sized by construction")
                .save(path)?;
        }
        (1, BitDepth::Sixteen) => {
            let buf: Vec<u16> = img.data.iter().map(|v| quantize(v.f64(), 65535.0) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, buf)
                .expect("buffer sized by construction")
                .save(path)?;
        }
        (c, _) => return Err(Error::Shape(format!("cannot write {c}-channel PNG"))),
    }
    Ok(())
}

/// Load a PNG as RGB (`channels == 3`) or grayscale (`channels == 1`) in [0,1].
/// 16-bit files keep their full precision.
pub fn load_png<T: Real>(path: &Path, channels: usize) -> Result<Image<T>> {
    let dynimg = image::open(path)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let sixteen = matches!(
        dynimg.color(),
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
    );
    let data: Vec<T> = match (channels, sixteen) {
        (3, false) => dynimg.to_rgb8().into_raw().into_iter().map(|v| T::of(v as f64 / 255.0)).collect(),
        (3, true) => dynimg.to_rgb16().into_raw().into_iter().map(|v| T::of(v as f64 / 65535.0)).collect(),
        (1, false) => dynimg.to_luma8().into_raw().into_iter().map(|v| T::of(v as f64 / 255.0)).collect(),
        (1, true) => dynimg.to_luma16().into_raw().into_iter().map(|v| T::of(v as f64 / 65535.0)).collect(),
        (c, _) => return Err(format_err(path, format!("unsupported channel count {c}"))),
    };
    Image::from_vec(w, h, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_extraction_and_shape_checks() {
        let img = Image::<f32>::from_vec(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.channel(1).data(), &[0.2, 0.5]);
        assert!(Image::<f32>::from_vec(2, 2, 3, vec![0.0; 5]).is_err());
        let other = Image::<f32>::new(2, 1, 1);
        assert!(img.ensure_same_shape(&other, "test").is_err());
    }

    #[test]
    fn png_sixteen_bit_roundtrip_is_precise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.png");
        let img = Image::<f64>::from_vec(3, 2, 3, (0..18).map(|i| i as f64 / 17.0).collect()).unwrap();
        save_png(&img, &path, BitDepth::Sixteen).unwrap();
        let back: Image<f64> = load_png(&path, 3).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }
}
