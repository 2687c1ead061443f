use crate::error::{Error, Result};
use crate::raster::CloudGrads;
use crate::scene::{normalize_quat, GaussianCloud};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

pub const FIELDS: [&str; 5] = ["mean", "log_scale", "rotation", "opacity_logit", "color"];
const WIDTHS: [usize; 5] = [3, 3, 4, 1, 3];

/// One Adam update of `params` in place; `t` is the 1-based step count.
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: u64) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        params[i] -= lr * mh / (vh.sqrt() + EPS);
    }
}

/// Learning rate per field, in [`FIELDS`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrMap(pub [f64; 5]);

/// Adam moments for every Gaussian, stored row-major per field.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    m: [Vec<f64>; 5],
    v: [Vec<f64>; 5],
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        let z = |w: usize| vec![0.0; n * w];
        Self {
            step: 0,
            m: WIDTHS.map(z),
            v: WIDTHS.map(z),
        }
    }

    pub fn len(&self) -> usize {
        self.m[3].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First and second moments of one field.
    pub fn moments(&self, field: usize) -> (&[f64], &[f64]) {
        (&self.m[field], &self.v[field])
    }

    /// Rebuild rows: `Some(i)` copies old row `i`, `None` starts from zero.
    pub fn remap(&mut self, rows: &[Option<usize>]) {
        for f in 0..5 {
            let w = WIDTHS[f];
            for buf in [&mut self.m[f], &mut self.v[f]] {
                let mut out = Vec::with_capacity(rows.len() * w);
                for r in rows {
                    match r {
                        Some(i) => out.extend_from_slice(&buf[i * w..(i + 1) * w]),
                        None => out.extend(std::iter::repeat_n(0.0, w)),
                    }
                }
                *buf = out;
            }
        }
    }
}

fn flatten(cloud: &GaussianCloud, field: usize) -> Vec<f64> {
    let g = cloud.gaussians();
    match field {
        0 => g.iter().flat_map(|g| g.mean).collect(),
        1 => g.iter().flat_map(|g| g.log_scale).collect(),
        2 => g.iter().flat_map(|g| g.rotation).collect(),
        3 => g.iter().map(|g| g.opacity_logit).collect(),
        _ => g.iter().flat_map(|g| g.color).collect(),
    }
}

fn scatter(cloud: &mut GaussianCloud, field: usize, p: &[f64]) {
    for (i, g) in cloud.gaussians_mut().iter_mut().enumerate() {
        match field {
            0 => g.mean.copy_from_slice(&p[3 * i..3 * i + 3]),
            1 => g.log_scale.copy_from_slice(&p[3 * i..3 * i + 3]),
            2 => g.rotation = normalize_quat([p[4 * i], p[4 * i + 1], p[4 * i + 2], p[4 * i + 3]]),
            3 => g.opacity_logit = p[i],
            _ => {
                for c in 0..3 {
                    g.color[c] = p[3 * i + c].clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Adam step over every field of the cloud. Quaternions are renormalized and
/// colors clamped to `[0, 1]` afterwards. Nothing is modified on error.
pub fn adam_step(cloud: &mut GaussianCloud, grads: &CloudGrads, state: &mut OptimizerState, lr: &LrMap) -> Result<()> {
    if grads.len() != cloud.len() || state.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "cloud has {} Gaussians, gradients {}, optimizer state {}",
            cloud.len(),
            grads.len(),
            state.len()
        )));
    }
    let fields = grads.fields();
    for (name, g) in &fields {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name} (element {i})")));
        }
    }
    state.step += 1;
    for (f, (_, g)) in fields.iter().enumerate() {
        let mut p = flatten(cloud, f);
        adam_update(&mut p, g, &mut state.m[f], &mut state.v[f], lr.0[f], state.step);
        scatter(cloud, f, &p);
    }
    Ok(())
}
