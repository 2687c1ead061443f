//! Differentiable tile-based Gaussian splatting.
//!
//! Each visible Gaussian is projected to a 2D splat, all splats of a view are
//! sorted once by depth (ties broken by list index) and binned into square
//! tiles. Every pixel composites its tile's splats front to back:
//!
//! ```text
//! α_i = min(α_max, o_i · exp(−½ dᵀ Σ2D⁻¹ d))
//! C   = Σ_i T_i α_i c_i + T_N · background,   T_{i+1} = T_i (1 − α_i)
//! ```
//!
//! Splats whose Mahalanobis distance at a pixel exceeds the cutoff are skipped
//! and compositing stops once the transmittance has dropped below
//! `min_transmittance`. Pixels are independent, so the result does not depend
//! on tile size or on the number of worker threads.

mod project;

pub use project::{project_gaussian, Splat2D};
pub(crate) use project::{project_backward, project_full, GaussianGrad, Projection, SplatGrad};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::image::Image;
use crate::real::Real;
use crate::scene::{Camera, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterSettings {
    pub tile_size: usize,
    /// Added to both diagonal entries of every screen covariance (px²).
    pub variance_floor: f64,
    /// Splats contribute only within this many standard deviations.
    pub cutoff_sigma: f64,
    pub min_transmittance: f64,
    pub max_alpha: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            variance_floor: 0.3,
            cutoff_sigma: 3.0,
            min_transmittance: 1e-4,
            max_alpha: 0.99,
        }
    }
}

impl RasterSettings {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(param("tile size must be positive"));
        }
        if !(self.variance_floor >= 0.0 && self.cutoff_sigma > 0.0) {
            return Err(param("variance floor must be ≥ 0 and cutoff > 0"));
        }
        if !(self.min_transmittance >= 0.0 && self.min_transmittance < 1.0) {
            return Err(param("min transmittance must lie in [0, 1)"));
        }
        if !(self.max_alpha > 0.0 && self.max_alpha < 1.0) {
            return Err(param("max alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T> {
    pub rgb: Image<T>,
    pub alpha: Image<T>,
    /// Number of splats composited at each pixel.
    pub contrib_count: Vec<u32>,
}

/// Per-Gaussian gradients plus densification statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudGrads {
    pub mean: Vec<[f64; 3]>,
    pub log_scale: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    /// Accumulated norm of the projected-mean gradient, in normalized device units.
    pub screen_grad_norm: Vec<f64>,
    /// Number of views in which the Gaussian was visible.
    pub hit_count: Vec<u32>,
    /// Largest screen radius (px) seen.
    pub max_screen_radius: Vec<f64>,
}

impl CloudGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            mean: vec![[0.0; 3]; n],
            log_scale: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            screen_grad_norm: vec![0.0; n],
            hit_count: vec![0; n],
            max_screen_radius: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Flattened per-field gradients: mean, log_scale, rotation, opacity_logit, color.
    pub fn fields(&self) -> [(&'static str, Vec<f64>); 5] {
        [
            ("mean", self.mean.iter().flatten().copied().collect()),
            ("log_scale", self.log_scale.iter().flatten().copied().collect()),
            ("rotation", self.rotation.iter().flatten().copied().collect()),
            ("opacity_logit", self.opacity_logit.clone()),
            ("color", self.color.iter().flatten().copied().collect()),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Packed<T> {
    mx: T,
    my: T,
    ca: T,
    cb: T,
    cc: T,
    opacity: T,
    color: [T; 3],
}

/// Everything the backward pass needs from a forward render.
pub struct RenderState<T> {
    camera: Camera,
    settings: RasterSettings,
    background: [T; 3],
    projections: Vec<Projection>,
    packed: Vec<Packed<T>>,
    tiles_x: usize,
    lists: Vec<Vec<u32>>,
    final_t: Vec<T>,
    last: Vec<u32>,
    n_gaussians: usize,
}

impl<T> RenderState<T> {
    pub fn visible_count(&self) -> usize {
        self.projections.len()
    }
}

struct TileOut<T> {
    rgb: Vec<T>,
    alpha: Vec<T>,
    final_t: Vec<T>,
    last: Vec<u32>,
    count: Vec<u32>,
}

fn tile_rect(tile: usize, tiles_x: usize, ts: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * ts;
    let y0 = ty * ts;
    (x0, y0, (x0 + ts).min(w), (y0 + ts).min(h))
}

#[inline(always)]
fn splat_power<T: Real>(s: &Packed<T>, px: T, py: T) -> (T, T, T) {
    let dx = px - s.mx;
    let dy = py - s.my;
    let half = T::of(0.5);
    (half * (s.ca * dx * dx + s.cc * dy * dy) + s.cb * dx * dy, dx, dy)
}

/// Render `cloud` from `cam` and keep the state needed by [`backward`].
pub fn render_with_state<T: Real>(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: [f64; 3],
    settings: &RasterSettings,
) -> Result<(RenderOutput<T>, RenderState<T>)> {
    settings.validate()?;
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);

    let mut projections: Vec<Projection> = cloud
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_full(g, i, cam, settings.variance_floor, settings.cutoff_sigma))
        .collect();
    projections.sort_by(|a, b| {
        a.splat
            .depth
            .total_cmp(&b.splat.depth)
            .then(a.splat.source_index.cmp(&b.splat.source_index))
    });

    let packed: Vec<Packed<T>> = projections
        .iter()
        .map(|p| {
            let s = &p.splat;
            Packed {
                mx: T::of(s.mean2d[0]),
                my: T::of(s.mean2d[1]),
                ca: T::of(s.conic[0]),
                cb: T::of(s.conic[1]),
                cc: T::of(s.conic[2]),
                opacity: T::of(s.opacity),
                color: s.color.map(T::of),
            }
        })
        .collect();

    let ts = settings.tile_size;
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, p) in projections.iter().enumerate() {
        let s = &p.splat;
        // One pixel of slack keeps the bounding box conservative under rounding.
        let r = s.radius + 1.0;
        let x0 = ((s.mean2d[0] - r) / ts as f64).floor().max(0.0) as usize;
        let x1 = (((s.mean2d[0] + r) / ts as f64).floor() as isize).min(tiles_x as isize - 1);
        let y0 = ((s.mean2d[1] - r) / ts as f64).floor().max(0.0) as usize;
        let y1 = (((s.mean2d[1] + r) / ts as f64).floor() as isize).min(tiles_y as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for ty in y0..=y1 as usize {
            for tx in x0..=x1 as usize {
                lists[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }

    let bg = background.map(T::of);
    let cut = T::of(0.5 * settings.cutoff_sigma * settings.cutoff_sigma);
    let max_alpha = T::of(settings.max_alpha);
    let min_t = T::of(settings.min_transmittance);

    let tiles: Vec<TileOut<T>> = lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (x0, y0, x1, y1) = tile_rect(tile, tiles_x, ts, w, h);
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileOut {
                rgb: Vec::with_capacity(3 * n),
                alpha: Vec::with_capacity(n),
                final_t: Vec::with_capacity(n),
                last: Vec::with_capacity(n),
                count: Vec::with_capacity(n),
            };
            for y in y0..y1 {
                let py = T::of(y as f64 + 0.5);
                for x in x0..x1 {
                    let px = T::of(x as f64 + 0.5);
                    let mut t = T::one();
                    let mut c = [T::zero(); 3];
                    let mut last = 0u32;
                    let mut count = 0u32;
                    for (i, &slot) in list.iter().enumerate() {
                        let s = &packed[slot as usize];
                        let (power, _, _) = splat_power(s, px, py);
                        if power > cut {
                            continue;
                        }
                        let alpha = (s.opacity * (-power).exp()).min(max_alpha);
                        let wgt = t * alpha;
                        for k in 0..3 {
                            c[k] += wgt * s.color[k];
                        }
                        t = t * (T::one() - alpha);
                        last = i as u32 + 1;
                        count += 1;
                        if t < min_t {
                            break;
                        }
                    }
                    for k in 0..3 {
                        out.rgb.push(c[k] + t * bg[k]);
                    }
                    out.alpha.push(T::one() - t);
                    out.final_t.push(t);
                    out.last.push(last);
                    out.count.push(count);
                }
            }
            out
        })
        .collect();

    let mut rgb = Image::<T>::new(w, h, 3);
    let mut alpha = Image::<T>::new(w, h, 1);
    let mut final_t = vec![T::one(); w * h];
    let mut last = vec![0u32; w * h];
    let mut contrib_count = vec![0u32; w * h];
    for (tile, out) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tile_rect(tile, tiles_x, ts, w, h);
        let mut j = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * w + x;
                rgb.data_mut()[3 * p..3 * p + 3].copy_from_slice(&out.rgb[3 * j..3 * j + 3]);
                alpha.data_mut()[p] = out.alpha[j];
                final_t[p] = out.final_t[j];
                last[p] = out.last[j];
                contrib_count[p] = out.count[j];
                j += 1;
            }
        }
    }

    let state = RenderState {
        camera: cam.clone(),
        settings: *settings,
        background: bg,
        projections,
        packed,
        tiles_x,
        lists,
        final_t,
        last,
        n_gaussians: cloud.len(),
    };
    Ok((
        RenderOutput {
            rgb,
            alpha,
            contrib_count,
        },
        state,
    ))
}

/// Render `cloud` from `cam` over a constant background.
pub fn render<T: Real>(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: [f64; 3],
    settings: &RasterSettings,
) -> Result<RenderOutput<T>> {
    render_with_state(cloud, cam, background, settings).map(|(out, _)| out)
}

/// Analytic gradients of a forward render given upstream image gradients.
pub fn backward<T: Real>(
    state: &RenderState<T>,
    grad_rgb: &Image<T>,
    grad_alpha: &Image<T>,
) -> Result<CloudGrads> {
    let cam = &state.camera;
    let (w, h) = (cam.width, cam.height);
    if grad_rgb.width() != w || grad_rgb.height() != h || grad_rgb.channels() != 3 {
        return Err(param("upstream rgb gradient does not match the camera image size"));
    }
    if grad_alpha.width() != w || grad_alpha.height() != h || grad_alpha.channels() != 1 {
        return Err(param("upstream alpha gradient does not match the camera image size"));
    }
    if !grad_rgb.is_finite() {
        return Err(Error::NonFinite("upstream rgb gradient".into()));
    }
    if !grad_alpha.is_finite() {
        return Err(Error::NonFinite("upstream alpha gradient".into()));
    }

    let settings = &state.settings;
    let ts = settings.tile_size;
    let tiles_x = state.tiles_x;
    let cut = T::of(0.5 * settings.cutoff_sigma * settings.cutoff_sigma);
    let max_alpha = T::of(settings.max_alpha);
    let bg = state.background;
    let packed = &state.packed;
    let half = T::of(0.5);

    // Per-tile private accumulators, merged below in tile order.
    let tile_grads: Vec<Vec<[T; 9]>> = state
        .lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let mut acc = vec![[T::zero(); 9]; list.len()];
            let (x0, y0, x1, y1) = tile_rect(tile, tiles_x, ts, w, h);
            for y in y0..y1 {
                let py = T::of(y as f64 + 0.5);
                for x in x0..x1 {
                    let p = y * w + x;
                    let last = state.last[p] as usize;
                    if last == 0 {
                        continue;
                    }
                    let px = T::of(x as f64 + 0.5);
                    let g = [
                        grad_rgb.data()[3 * p],
                        grad_rgb.data()[3 * p + 1],
                        grad_rgb.data()[3 * p + 2],
                    ];
                    let ga = grad_alpha.data()[p];
                    let t_final = state.final_t[p];
                    let mut t_next = t_final;
                    let mut behind = t_final * (bg[0] * g[0] + bg[1] * g[1] + bg[2] * g[2]);
                    for i in (0..last).rev() {
                        let s = &packed[list[i] as usize];
                        let (power, dx, dy) = splat_power(s, px, py);
                        if power > cut {
                            continue;
                        }
                        let gauss = (-power).exp();
                        let raw = s.opacity * gauss;
                        let clamped = raw > max_alpha;
                        let alpha = raw.min(max_alpha);
                        let one_minus = T::one() - alpha;
                        let t_i = t_next / one_minus;
                        let cg = s.color[0] * g[0] + s.color[1] * g[1] + s.color[2] * g[2];
                        let d_alpha = t_i * cg - (behind - ga * t_final) / one_minus;
                        let wgt = t_i * alpha;
                        let a = &mut acc[i];
                        a[6] += wgt * g[0];
                        a[7] += wgt * g[1];
                        a[8] += wgt * g[2];
                        if !clamped {
                            a[5] += d_alpha * gauss;
                            let d_power = -d_alpha * alpha;
                            a[0] += d_power * -(s.ca * dx + s.cb * dy);
                            a[1] += d_power * -(s.cb * dx + s.cc * dy);
                            a[2] += d_power * half * dx * dx;
                            a[3] += d_power * dx * dy;
                            a[4] += d_power * half * dy * dy;
                        }
                        behind += wgt * cg;
                        t_next = t_i;
                    }
                }
            }
            acc
        })
        .collect();

    let mut splat_grads = vec![SplatGrad::default(); state.projections.len()];
    for (list, acc) in state.lists.iter().zip(&tile_grads) {
        for (&slot, a) in list.iter().zip(acc) {
            let sg = &mut splat_grads[slot as usize];
            sg.mean2d[0] += a[0].f64();
            sg.mean2d[1] += a[1].f64();
            sg.conic[0] += a[2].f64();
            sg.conic[1] += a[3].f64();
            sg.conic[2] += a[4].f64();
            sg.opacity += a[5].f64();
            sg.color[0] += a[6].f64();
            sg.color[1] += a[7].f64();
            sg.color[2] += a[8].f64();
        }
    }

    let per_splat: Vec<GaussianGrad> = state
        .projections
        .par_iter()
        .zip(splat_grads.par_iter())
        .map(|(p, sg)| project_backward(p, cam, sg))
        .collect();

    let mut grads = CloudGrads::zeros(state.n_gaussians);
    let (half_w, half_h) = (0.5 * w as f64, 0.5 * h as f64);
    for ((p, sg), gg) in state.projections.iter().zip(&splat_grads).zip(per_splat) {
        let i = p.splat.source_index;
        grads.mean[i] = gg.mean;
        grads.log_scale[i] = gg.log_scale;
        grads.rotation[i] = gg.rotation;
        grads.opacity_logit[i] = gg.opacity_logit;
        grads.color[i] = gg.color;
        grads.screen_grad_norm[i] = (sg.mean2d[0] * half_w).hypot(sg.mean2d[1] * half_h);
        grads.hit_count[i] = 1;
        grads.max_screen_radius[i] = p.splat.radius / settings.cutoff_sigma * 3.0;
    }
    Ok(grads)
}

/// Gradients of a scalar loss of `render(cloud, cam, background)` given the
/// loss's gradients with respect to the rendered rgb and alpha images.
pub fn render_backward<T: Real>(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: [f64; 3],
    settings: &RasterSettings,
    grad_rgb: &Image<T>,
    grad_alpha: &Image<T>,
) -> Result<CloudGrads> {
    let (_, state) = render_with_state::<T>(cloud, cam, background, settings)?;
    backward(&state, grad_rgb, grad_alpha)
}

#[cfg(test)]
mod tests;
