//! Image-level objectives and their gradients.
//!
//! Every term returns its value (as `f64`) together with the gradient with
//! respect to the rendered quantity it scores.

pub mod perceptual;
pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::raster::RenderOutput;
use crate::real::Real;

pub use perceptual::{FeatureExtractor, FilterBankExtractor, PyramidExtractor};
pub use ssim::{max_levels, ms_ssim, ms_ssim_value, ssim};

/// Mean squared error and its gradient.
fn mse<T: Real>(pred: &Image<T>, target: &Image<T>, what: &str) -> Result<(f64, Image<T>)> {
    pred.ensure_same_shape(target, what)?;
    let n = pred.len().max(1);
    let s = T::of(2.0 / n as f64);
    let mut sum = 0.0f64;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += (d * d).f64();
            d * s
        })
        .collect();
    let grad = Image::from_vec(pred.width(), pred.height(), pred.channels(), grad)?;
    Ok((sum / n as f64, grad))
}

/// Mean squared color error.
pub fn rgb_l2<T: Real>(pred: &Image<T>, target: &Image<T>) -> Result<(f64, Image<T>)> {
    mse(pred, target, "rgb loss")
}

/// Mean squared error between rendered alpha and a foreground mask.
pub fn mask_loss<T: Real>(alpha: &Image<T>, mask: &Image<T>) -> Result<(f64, Image<T>)> {
    mse(alpha, mask, "mask loss")
}

/// Weighted feature distance `Σ_q ‖w_q ⊙ (Φ_q(pred) − Φ_q(target))‖²`.
pub fn perceptual_loss<T: Real, E: FeatureExtractor<T> + ?Sized>(
    pred: &Image<T>,
    target: &Image<T>,
    extractor: &E,
) -> Result<(f64, Image<T>)> {
    pred.ensure_same_shape(target, "perceptual loss")?;
    let fp = extractor.extract(pred)?;
    let ft = extractor.extract(target)?;
    let two = T::of(2.0);
    let mut sum = 0.0f64;
    let mut grads = Vec::with_capacity(fp.len());
    for (q, (a, b)) in fp.iter().zip(&ft).enumerate() {
        let w = extractor.weights(q);
        let c = a.channels();
        let mut g = Image::new(a.width(), a.height(), c);
        for (i, ((&x, &y), gv)) in a.data().iter().zip(b.data()).zip(g.data_mut()).enumerate() {
            let wc = w[i % c];
            let d = x - y;
            let wd = wc * d;
            sum += (wd * wd).f64();
            *gv = two * wc * wd;
        }
        grads.push(g);
    }
    let grad = extractor.backward(pred, &grads)?;
    Ok((sum, grad))
}

/// Term weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub perceptual: f64,
    pub ssim: f64,
    pub mask: f64,
    pub rgb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            perceptual: 10.0,
            ssim: 0.2,
            mask: 1.0,
            rgb: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("perceptual", self.perceptual),
            ("ssim", self.ssim),
            ("mask", self.mask),
            ("rgb", self.rgb),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(crate::error::param(format!("loss weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            perceptual: self.perceptual * s,
            ssim: self.ssim * s,
            mask: self.mask * s,
            rgb: self.rgb * s,
        }
    }
}

/// Unweighted value of each term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Perceptual distance divided by the number of image elements.
    pub perceptual: f64,
    /// `1 − MS-SSIM`.
    pub ssim: f64,
    pub mask: f64,
    pub rgb: f64,
}

#[derive(Clone, Debug)]
pub struct TotalLoss<T> {
    pub value: f64,
    pub terms: LossTerms,
    pub grad_rgb: Image<T>,
    pub grad_alpha: Image<T>,
    /// Set when the mask term had weight but no mask was supplied.
    pub mask_skipped: bool,
}

/// Perceptual term as used inside [`total_loss`]: normalized by element count.
pub fn perceptual_term<T: Real, E: FeatureExtractor<T> + ?Sized>(
    pred: &Image<T>,
    target: &Image<T>,
    extractor: &E,
) -> Result<(f64, Image<T>)> {
    let (v, g) = perceptual_loss(pred, target, extractor)?;
    let n = pred.len().max(1) as f64;
    Ok((v / n, g.scale(T::of(1.0 / n))))
}

/// `1 − MS-SSIM` and its gradient.
pub fn ssim_term<T: Real>(pred: &Image<T>, target: &Image<T>, levels: usize) -> Result<(f64, Image<T>)> {
    let (v, g) = ms_ssim(pred, target, levels)?;
    Ok((1.0 - v, g.scale(-T::one())))
}

/// Weighted sum of all terms. Zero-weight terms are not evaluated.
///
/// Gradients are accumulated in the fixed order perceptual, ssim, rgb; alpha
/// receives only the mask term.
pub fn total_loss<T: Real, E: FeatureExtractor<T> + ?Sized>(
    render: &RenderOutput<T>,
    target: &Image<T>,
    mask: Option<&Image<T>>,
    weights: &LossWeights,
    extractor: &E,
    ssim_levels: usize,
) -> Result<TotalLoss<T>> {
    weights.validate()?;
    render.rgb.ensure_same_shape(target, "total loss target")?;
    let mut terms = LossTerms::default();
    let mut value = 0.0;
    let mut grad_rgb = Image::new(target.width(), target.height(), target.channels());
    let mut grad_alpha = Image::new(render.alpha.width(), render.alpha.height(), 1);
    let add = |dst: &mut Image<T>, g: &Image<T>, w: f64| {
        let w = T::of(w);
        for (d, &s) in dst.data_mut().iter_mut().zip(g.data()) {
            *d += w * s;
        }
    };
    if weights.perceptual != 0.0 {
        let (v, g) = perceptual_term(&render.rgb, target, extractor)?;
        terms.perceptual = v;
        value += weights.perceptual * v;
        add(&mut grad_rgb, &g, weights.perceptual);
    }
    if weights.ssim != 0.0 {
        let (v, g) = ssim_term(&render.rgb, target, ssim_levels)?;
        terms.ssim = v;
        value += weights.ssim * v;
        add(&mut grad_rgb, &g, weights.ssim);
    }
    let mut mask_skipped = false;
    if weights.mask != 0.0 {
        match mask {
            Some(m) => {
                let (v, g) = mask_loss(&render.alpha, m)?;
                terms.mask = v;
                value += weights.mask * v;
                add(&mut grad_alpha, &g, weights.mask);
            }
            None => mask_skipped = true,
        }
    }
    if weights.rgb != 0.0 {
        let (v, g) = rgb_l2(&render.rgb, target)?;
        terms.rgb = v;
        value += weights.rgb * v;
        add(&mut grad_rgb, &g, weights.rgb);
    }
    Ok(TotalLoss {
        value,
        terms,
        grad_rgb,
        grad_alpha,
        mask_skipped,
    })
}
