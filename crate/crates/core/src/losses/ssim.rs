//! SSIM and MS-SSIM with exact gradients.
//!
//! Statistics use an 11-tap Gaussian window (σ = 1.5) evaluated at every
//! fully-inside window position ("valid" filtering); scales are produced by
//! 2×2 average pooling that drops an odd trailing row/column. Color images are
//! scored per channel and averaged.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Canonical five-scale exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Normalized 1D Gaussian window.
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Exponents for `levels` scales: the first `levels` canonical weights, renormalized.
pub fn scale_weights(levels: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..levels];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Largest level count (≤ 5) that an image of this size supports.
pub fn max_levels(width: usize, height: usize) -> usize {
    let m = width.min(height);
    (1..=5).rev().find(|&l| m >= WINDOW << (l - 1)).unwrap_or(0)
}

#[derive(Clone)]
struct Plane<T> {
    w: usize,
    h: usize,
    v: Vec<T>,
}

impl<T: Real> Plane<T> {
    fn zeros(w: usize, h: usize) -> Self {
        Self { w, h, v: vec![T::zero(); w * h] }
    }
}

fn filter_valid<T: Real>(p: &Plane<T>, k: &[T; WINDOW]) -> Plane<T> {
    let ow = p.w + 1 - WINDOW;
    let oh = p.h + 1 - WINDOW;
    let mut tmp = vec![T::zero(); ow * p.h];
    for y in 0..p.h {
        let row = &p.v[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            let mut acc = T::zero();
            for (j, &kj) in k.iter().enumerate() {
                acc += kj * row[x + j];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for (j, &kj) in k.iter().enumerate() {
            let src = &tmp[(y + j) * ow..(y + j + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kj * s;
            }
        }
    }
    Plane { w: ow, h: oh, v: out }
}

/// Adjoint of [`filter_valid`] back onto a `w × h` plane.
fn filter_valid_adjoint<T: Real>(g: &Plane<T>, w: usize, h: usize, k: &[T; WINDOW]) -> Plane<T> {
    let ow = g.w;
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..g.h {
        let src = &g.v[y * ow..(y + 1) * ow];
        for (j, &kj) in k.iter().enumerate() {
            let dst = &mut tmp[(y + j) * ow..(y + j + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kj * s;
            }
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        let row = &tmp[y * ow..(y + 1) * ow];
        let dst = &mut out.v[y * w..(y + 1) * w];
        for (x, &s) in row.iter().enumerate() {
            for (j, &kj) in k.iter().enumerate() {
                dst[x + j] += kj * s;
            }
        }
    }
    out
}

fn pool2<T: Real>(p: &Plane<T>) -> Plane<T> {
    let (ow, oh) = (p.w / 2, p.h / 2);
    let q = T::of(0.25);
    let mut out = Plane::zeros(ow, oh);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * p.w + 2 * x;
            out.v[y * ow + x] = ((p.v[i] + p.v[i + 1]) + (p.v[i + p.w] + p.v[i + p.w + 1])) * q;
        }
    }
    out
}

fn pool2_adjoint<T: Real>(g: &Plane<T>, w: usize, h: usize) -> Plane<T> {
    let q = T::of(0.25);
    let mut out = Plane::zeros(w, h);
    for y in 0..g.h {
        for x in 0..g.w {
            let v = g.v[y * g.w + x] * q;
            let i = 2 * y * w + 2 * x;
            out.v[i] = v;
            out.v[i + 1] = v;
            out.v[i + w] = v;
            out.v[i + w + 1] = v;
        }
    }
    out
}

struct ScaleStats<T> {
    mu_x: Plane<T>,
    mu_y: Plane<T>,
    e_xx: Plane<T>,
    e_yy: Plane<T>,
    e_xy: Plane<T>,
}

fn scale_stats<T: Real>(x: &Plane<T>, y: &Plane<T>, k: &[T; WINDOW]) -> ScaleStats<T> {
    let mul = |a: &Plane<T>, b: &Plane<T>| Plane {
        w: a.w,
        h: a.h,
        v: a.v.iter().zip(&b.v).map(|(&p, &q)| p * q).collect(),
    };
    ScaleStats {
        mu_x: filter_valid(x, k),
        mu_y: filter_valid(y, k),
        e_xx: filter_valid(&mul(x, x), k),
        e_yy: filter_valid(&mul(y, y), k),
        e_xy: filter_valid(&mul(x, y), k),
    }
}

/// Mean contrast-structure (`luminance == false`) or full SSIM over one scale,
/// optionally with the gradient of that mean with respect to `x`.
fn scale_term<T: Real>(
    x: &Plane<T>,
    y: &Plane<T>,
    k: &[T; WINDOW],
    luminance: bool,
    want_grad: bool,
) -> (f64, Option<Plane<T>>) {
    let c1 = T::of(K1 * K1);
    let c2 = T::of(K2 * K2);
    let two = T::of(2.0);
    let st = scale_stats(x, y, k);
    let n = st.mu_x.v.len();
    let inv_n = T::of(1.0 / n as f64);
    let mut sum = 0.0f64;
    let (mut g_mu, mut g_xx, mut g_xy) = if want_grad {
        (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (mx, my) = (st.mu_x.v[i], st.mu_y.v[i]);
        let sxx = st.e_xx.v[i] - mx * mx;
        let syy = st.e_yy.v[i] - my * my;
        let sxy = st.e_xy.v[i] - mx * my;
        let num = two * sxy + c2;
        let den = sxx + syy + c2;
        let cs = num / den;
        let (l, dl_dmx) = if luminance {
            let ln = two * mx * my + c1;
            let ld = mx * mx + my * my + c1;
            (ln / ld, (two * my * ld - ln * two * mx) / (ld * ld))
        } else {
            (T::one(), T::zero())
        };
        sum += (l * cs).f64();
        if want_grad {
            let dcs_dmx = (two * mx * num - two * my * den) / (den * den);
            let dcs_dxx = -num / (den * den);
            let dcs_dxy = two / den;
            g_mu[i] = (dl_dmx * cs + l * dcs_dmx) * inv_n;
            g_xx[i] = l * dcs_dxx * inv_n;
            g_xy[i] = l * dcs_dxy * inv_n;
        }
    }
    let value = sum / n as f64;
    if !want_grad {
        return (value, None);
    }
    let (ow, oh) = (st.mu_x.w, st.mu_x.h);
    let back = |g: Vec<T>| filter_valid_adjoint(&Plane { w: ow, h: oh, v: g }, x.w, x.h, k);
    let a_mu = back(g_mu);
    let a_xx = back(g_xx);
    let a_xy = back(g_xy);
    let grad = Plane {
        w: x.w,
        h: x.h,
        v: (0..x.v.len())
            .map(|i| a_mu.v[i] + two * x.v[i] * a_xx.v[i] + y.v[i] * a_xy.v[i])
            .collect(),
    };
    (value, Some(grad))
}

fn check_pair<T: Real>(pred: &Image<T>, target: &Image<T>) -> Result<()> {
    pred.ensure_same_shape(target, "ssim inputs")
}

fn window<T: Real>() -> [T; WINDOW] {
    gaussian_window().map(T::of)
}

fn planes<T: Real>(img: &Image<T>) -> Vec<Plane<T>> {
    (0..img.channels())
        .map(|c| Plane {
            w: img.width(),
            h: img.height(),
            v: img.channel(c).into_vec(),
        })
        .collect()
}

fn interleave<T: Real>(planes: Vec<Plane<T>>, w: usize, h: usize) -> Image<T> {
    let c = planes.len();
    let mut data = vec![T::zero(); w * h * c];
    for (ci, p) in planes.into_iter().enumerate() {
        for (i, v) in p.v.into_iter().enumerate() {
            data[i * c + ci] = v;
        }
    }
    Image::from_vec(w, h, c, data).expect("sized by construction")
}

/// Single-scale SSIM (mean of the SSIM map, averaged over channels).
pub fn ssim<T: Real>(pred: &Image<T>, target: &Image<T>) -> Result<f64> {
    check_pair(pred, target)?;
    if pred.width().min(pred.height()) < WINDOW {
        return Err(Error::ImageTooSmall {
            levels: 1,
            min_dim: pred.width().min(pred.height()),
            required: WINDOW,
        });
    }
    let k = window::<T>();
    let (px, py) = (planes(pred), planes(target));
    let vals: Vec<f64> = px
        .par_iter()
        .zip(py.par_iter())
        .map(|(x, y)| scale_term(x, y, &k, true, false).0)
        .collect();
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

fn ms_ssim_impl<T: Real>(
    pred: &Image<T>,
    target: &Image<T>,
    levels: usize,
    want_grad: bool,
) -> Result<(f64, Option<Image<T>>)> {
    check_pair(pred, target)?;
    if levels == 0 || levels > MS_SSIM_WEIGHTS.len() {
        return Err(crate::error::param(format!("MS-SSIM supports 1..=5 levels, got {levels}")));
    }
    let min_dim = pred.width().min(pred.height());
    let required = WINDOW << (levels - 1);
    if min_dim < required {
        return Err(Error::ImageTooSmall {
            levels,
            min_dim,
            required,
        });
    }
    let k = window::<T>();
    let betas = scale_weights(levels);
    let (w, h) = (pred.width(), pred.height());

    let per_channel: Vec<(f64, Option<Plane<T>>)> = planes(pred)
        .into_par_iter()
        .zip(planes(target).into_par_iter())
        .map(|(x0, y0)| {
            let mut xs = vec![x0];
            let mut ys = vec![y0];
            for _ in 1..levels {
                let nx = pool2(xs.last().unwrap());
                let ny = pool2(ys.last().unwrap());
                xs.push(nx);
                ys.push(ny);
            }
            let terms: Vec<(f64, Option<Plane<T>>)> = (0..levels)
                .map(|j| scale_term(&xs[j], &ys[j], &k, j + 1 == levels, want_grad))
                .collect();
            let vals: Vec<f64> = terms.iter().map(|t| t.0.max(0.0)).collect();
            let ms: f64 = vals.iter().zip(&betas).map(|(v, b)| v.powf(*b)).product();
            if !want_grad {
                return (ms, None);
            }
            // d ms / d v_j with the other factors held fixed.
            let dms: Vec<f64> = (0..levels)
                .map(|j| {
                    if terms[j].0 <= 0.0 {
                        return 0.0;
                    }
                    let others: f64 = (0..levels)
                        .filter(|&i| i != j)
                        .map(|i| vals[i].powf(betas[i]))
                        .product();
                    betas[j] * vals[j].powf(betas[j] - 1.0) * others
                })
                .collect();
            let mut acc: Option<Plane<T>> = None;
            for j in (0..levels).rev() {
                let g = terms[j].1.as_ref().unwrap();
                let s = T::of(dms[j]);
                let mut cur = Plane {
                    w: g.w,
                    h: g.h,
                    v: g.v.iter().map(|&v| v * s).collect(),
                };
                if let Some(coarse) = acc.take() {
                    let up = pool2_adjoint(&coarse, cur.w, cur.h);
                    for (c, u) in cur.v.iter_mut().zip(up.v) {
                        *c += u;
                    }
                }
                acc = Some(cur);
            }
            (ms, acc)
        })
        .collect();

    let nc = per_channel.len() as f64;
    let value = per_channel.iter().map(|p| p.0).sum::<f64>() / nc;
    if !want_grad {
        return Ok((value, None));
    }
    let inv_c = T::of(1.0 / nc);
    let grads: Vec<Plane<T>> = per_channel
        .into_iter()
        .map(|(_, g)| {
            let mut g = g.unwrap();
            g.v.iter_mut().for_each(|v| *v *= inv_c);
            g
        })
        .collect();
    Ok((value, Some(interleave(grads, w, h))))
}

/// Multi-scale SSIM of `pred` against `target` and its gradient with respect to `pred`.
pub fn ms_ssim<T: Real>(pred: &Image<T>, target: &Image<T>, levels: usize) -> Result<(f64, Image<T>)> {
    let (v, g) = ms_ssim_impl(pred, target, levels, true)?;
    Ok((v, g.unwrap()))
}

/// Multi-scale SSIM value only.
pub fn ms_ssim_value<T: Real>(pred: &Image<T>, target: &Image<T>, levels: usize) -> Result<f64> {
    ms_ssim_impl(pred, target, levels, false).map(|(v, _)| v)
}
