//! Multi-level feature extractors for the perceptual term.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, param, Result};
use crate::image::Image;
use crate::real::Real;

/// A differentiable map from an image to a stack of feature maps.
///
/// Feature maps are returned as multi-channel images, one per level. The
/// operator must be linear or at least have a backward consistent with
/// `extract` at the given input.
pub trait FeatureExtractor<T: Real>: Send + Sync {
    fn levels(&self) -> usize;
    /// Per-channel weights for a level; length equals that level's channel count.
    fn weights(&self, level: usize) -> Vec<T>;
    fn extract(&self, img: &Image<T>) -> Result<Vec<Image<T>>>;
    /// Gradient with respect to the input given gradients for each feature map.
    fn backward(&self, img: &Image<T>, grads: &[Image<T>]) -> Result<Image<T>>;
}

/// 2×2 box downsample with ceil output size; partial blocks average what exists.
pub fn downsample2<T: Real>(img: &Image<T>) -> Image<T> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Image::new(ow, oh, c);
    let half = T::of(0.5);
    let quarter = T::of(0.25);
    for y in 0..oh {
        for x in 0..ow {
            let (x0, y0) = (2 * x, 2 * y);
            let has_x = x0 + 1 < w;
            let has_y = y0 + 1 < h;
            for ch in 0..c {
                let a = img.get(x0, y0, ch);
                let v = match (has_x, has_y) {
                    (true, true) => {
                        ((a + img.get(x0 + 1, y0, ch)) + (img.get(x0, y0 + 1, ch) + img.get(x0 + 1, y0 + 1, ch)))
                            * quarter
                    }
                    (true, false) => (a + img.get(x0 + 1, y0, ch)) * half,
                    (false, true) => (a + img.get(x0, y0 + 1, ch)) * half,
                    (false, false) => a,
                };
                out.set(x, y, ch, v);
            }
        }
    }
    out
}

/// Adjoint of [`downsample2`] onto a `w × h` image.
pub fn downsample2_adjoint<T: Real>(g: &Image<T>, w: usize, h: usize) -> Image<T> {
    let c = g.channels();
    let mut out = Image::new(w, h, c);
    for y in 0..g.height() {
        for x in 0..g.width() {
            let (x0, y0) = (2 * x, 2 * y);
            let xs: &[usize] = if x0 + 1 < w { &[0, 1] } else { &[0] };
            let ys: &[usize] = if y0 + 1 < h { &[0, 1] } else { &[0] };
            let s = T::of(1.0 / (xs.len() * ys.len()) as f64);
            for ch in 0..c {
                let v = g.get(x, y, ch) * s;
                for &dy in ys {
                    for &dx in xs {
                        let i = out.index(x0 + dx, y0 + dy, ch);
                        out.data_mut()[i] += v;
                    }
                }
            }
        }
    }
    out
}

/// Fixed image pyramid with local-contrast and gradient features.
///
/// Level 0 is the input resolution and each further level halves it. Per
/// color channel a level carries three maps: the value minus its 3×3
/// neighbourhood mean, and forward differences along x and y. All maps vanish
/// on constant images.
#[derive(Clone, Debug)]
pub struct PyramidExtractor {
    pub levels: usize,
    pub level_weights: Vec<f64>,
}

impl Default for PyramidExtractor {
    fn default() -> Self {
        Self::new(3)
    }
}

impl PyramidExtractor {
    pub fn new(levels: usize) -> Self {
        Self {
            levels: levels.max(1),
            level_weights: vec![1.0; levels.max(1)],
        }
    }

    fn features<T: Real>(img: &Image<T>) -> Image<T> {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut out = Image::new(w, h, 3 * c);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yl, yr) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let n = T::of(1.0 / ((xr - xl + 1) * (yr - yl + 1)) as f64);
                for ch in 0..c {
                    let v = img.get(x, y, ch);
                    let mut acc = T::zero();
                    for yy in yl..=yr {
                        for xx in xl..=xr {
                            acc += v - img.get(xx, yy, ch);
                        }
                    }
                    let dx = if x + 1 < w { img.get(x + 1, y, ch) - v } else { T::zero() };
                    let dy = if y + 1 < h { img.get(x, y + 1, ch) - v } else { T::zero() };
                    out.set(x, y, 3 * ch, acc * n);
                    out.set(x, y, 3 * ch + 1, dx);
                    out.set(x, y, 3 * ch + 2, dy);
                }
            }
        }
        out
    }

    fn features_adjoint<T: Real>(g: &Image<T>, c: usize) -> Image<T> {
        let (w, h) = (g.width(), g.height());
        let mut out = Image::new(w, h, c);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yl, yr) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let cnt = (xr - xl + 1) * (yr - yl + 1);
                let n = T::of(1.0 / cnt as f64);
                for ch in 0..c {
                    let gm = g.get(x, y, 3 * ch) * n;
                    let mut add = |xx: usize, yy: usize, v: T| {
                        let i = out.index(xx, yy, ch);
                        out.data_mut()[i] += v;
                    };
                    add(x, y, gm * T::of(cnt as f64));
                    for yy in yl..=yr {
                        for xx in xl..=xr {
                            add(xx, yy, -gm);
                        }
                    }
                    let gx = g.get(x, y, 3 * ch + 1);
                    if x + 1 < w {
                        add(x + 1, y, gx);
                        add(x, y, -gx);
                    }
                    let gy = g.get(x, y, 3 * ch + 2);
                    if y + 1 < h {
                        add(x, y + 1, gy);
                        add(x, y, -gy);
                    }
                }
            }
        }
        out
    }
}

impl<T: Real> FeatureExtractor<T> for PyramidExtractor {
    fn levels(&self) -> usize {
        self.levels
    }

    fn weights(&self, level: usize) -> Vec<T> {
        let w = T::of(self.level_weights.get(level).copied().unwrap_or(1.0));
        vec![w; 9]
    }

    fn extract(&self, img: &Image<T>) -> Result<Vec<Image<T>>> {
        let mut cur = img.clone();
        let mut out = Vec::with_capacity(self.levels);
        for q in 0..self.levels {
            if q > 0 {
                cur = downsample2(&cur);
            }
            out.push(Self::features(&cur));
        }
        Ok(out)
    }

    fn backward(&self, img: &Image<T>, grads: &[Image<T>]) -> Result<Image<T>> {
        if grads.len() != self.levels {
            return Err(param("feature gradient count does not match levels"));
        }
        let mut sizes = vec![(img.width(), img.height())];
        for _ in 1..self.levels {
            let (w, h) = *sizes.last().unwrap();
            sizes.push((w.div_ceil(2), h.div_ceil(2)));
        }
        let c = img.channels();
        let mut acc: Option<Image<T>> = None;
        for q in (0..self.levels).rev() {
            let mut g = Self::features_adjoint(&grads[q], c);
            if let Some(coarse) = acc.take() {
                let up = downsample2_adjoint(&coarse, sizes[q].0, sizes[q].1);
                for (a, b) in g.data_mut().iter_mut().zip(up.data()) {
                    *a += *b;
                }
            }
            acc = Some(g);
        }
        Ok(acc.unwrap())
    }
}

#[derive(Serialize, Deserialize)]
struct FilterBankMeta {
    /// `[levels, out_channels, in_channels, k, k]`
    shape: [usize; 5],
    level_weights: Vec<Vec<f64>>,
}

/// Linear filter bank loaded from disk: each level convolves the (downsampled)
/// image with `out × in × k × k` kernels, zero padded to keep the size.
///
/// The weights file is a flat little-endian `f32` array; a JSON sidecar with
/// the same stem holds `shape` and per-channel `level_weights`.
#[derive(Clone, Debug)]
pub struct FilterBankExtractor {
    shape: [usize; 5],
    kernels: Vec<f64>,
    level_weights: Vec<Vec<f64>>,
}

impl FilterBankExtractor {
    pub fn new(shape: [usize; 5], kernels: Vec<f64>, level_weights: Vec<Vec<f64>>) -> Result<Self> {
        let [l, o, i, k1, k2] = shape;
        if l == 0 || o == 0 || i == 0 || k1 == 0 || k1 != k2 || k1 % 2 == 0 {
            return Err(param(format!("invalid filter bank shape {shape:?}")));
        }
        if kernels.len() != l * o * i * k1 * k2 {
            return Err(param("filter bank weight count does not match shape"));
        }
        if level_weights.len() != l || level_weights.iter().any(|w| w.len() != o) {
            return Err(param("level_weights must be levels × out_channels"));
        }
        Ok(Self {
            shape,
            kernels,
            level_weights,
        })
    }

    /// Load `path` (raw f32) and `path` with extension `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = path.with_extension("json");
        let meta: FilterBankMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| format_err(&meta_path, e.to_string()))?;
        let bytes = std::fs::read(path)?;
        if bytes.len() % 4 != 0 {
            return Err(format_err(path, "length is not a multiple of 4"));
        }
        let kernels = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Self::new(meta.shape, kernels, meta.level_weights).map_err(|e| format_err(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.kernels.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        let meta = FilterBankMeta {
            shape: self.shape,
            level_weights: self.level_weights.clone(),
        };
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    fn kernel(&self, l: usize, o: usize, i: usize) -> &[f64] {
        let [_, no, ni, k, _] = self.shape;
        let start = ((l * no + o) * ni + i) * k * k;
        &self.kernels[start..start + k * k]
    }

    fn conv<T: Real>(&self, l: usize, img: &Image<T>, adjoint: bool) -> Image<T> {
        let [_, no, ni, k, _] = self.shape;
        let r = (k / 2) as isize;
        let (w, h) = (img.width(), img.height());
        let (src_c, dst_c) = if adjoint { (no, ni) } else { (ni, no) };
        debug_assert_eq!(img.channels(), src_c);
        let mut out = Image::new(w, h, dst_c);
        for o in 0..no {
            for i in 0..ni {
                let ker: Vec<T> = self.kernel(l, o, i).iter().map(|&v| T::of(v)).collect();
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        for ky in 0..k as isize {
                            let yy = y + ky - r;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for kx in 0..k as isize {
                                let xx = x + kx - r;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                let kv = ker[(ky * k as isize + kx) as usize];
                                if adjoint {
                                    let v = img.get(x as usize, y as usize, o) * kv;
                                    let j = out.index(xx as usize, yy as usize, i);
                                    out.data_mut()[j] += v;
                                } else {
                                    let v = img.get(xx as usize, yy as usize, i) * kv;
                                    let j = out.index(x as usize, y as usize, o);
                                    out.data_mut()[j] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl<T: Real> FeatureExtractor<T> for FilterBankExtractor {
    fn levels(&self) -> usize {
        self.shape[0]
    }

    fn weights(&self, level: usize) -> Vec<T> {
        self.level_weights[level].iter().map(|&v| T::of(v)).collect()
    }

    fn extract(&self, img: &Image<T>) -> Result<Vec<Image<T>>> {
        if img.channels() != self.shape[2] {
            return Err(param("image channels do not match filter bank input channels"));
        }
        let mut cur = img.clone();
        let mut out = Vec::new();
        for l in 0..self.shape[0] {
            if l > 0 {
                cur = downsample2(&cur);
            }
            out.push(self.conv(l, &cur, false));
        }
        Ok(out)
    }

    fn backward(&self, img: &Image<T>, grads: &[Image<T>]) -> Result<Image<T>> {
        let levels = self.shape[0];
        if grads.len() != levels {
            return Err(param("feature gradient count does not match levels"));
        }
        let mut sizes = vec![(img.width(), img.height())];
        for _ in 1..levels {
            let (w, h) = *sizes.last().unwrap();
            sizes.push((w.div_ceil(2), h.div_ceil(2)));
        }
        let mut acc: Option<Image<T>> = None;
        for l in (0..levels).rev() {
            let mut g = self.conv(l, &grads[l], true);
            if let Some(coarse) = acc.take() {
                let up = downsample2_adjoint(&coarse, sizes[l].0, sizes[l].1);
                for (a, b) in g.data_mut().iter_mut().zip(up.data()) {
                    *a += *b;
                }
            }
            acc = Some(g);
        }
        Ok(acc.unwrap())
    }
}
