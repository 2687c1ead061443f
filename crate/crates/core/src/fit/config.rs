use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, param, Result};
use crate::losses::LossWeights;
use crate::raster::RasterSettings;

/// Per-field learning rates. Mean rates are multiplied by the scene extent.
///
/// The mean rate is high because the cloud starts as a blob at the center and
/// must reach the surface within the fixed iteration budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub mean: f64,
    /// Mean rate reached at the last iteration (log-linear decay).
    pub mean_final: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1e-2,
            mean_final: 1e-4,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity_logit: 5e-2,
            color: 2.5e-3,
        }
    }
}

/// Everything that controls a fit. Serializes to TOML or JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub init_points: usize,
    /// Standard deviation of the initial means, as a fraction of the extent.
    pub init_spread: f64,
    /// Initial isotropic scale, as a fraction of the extent.
    pub init_scale: f64,
    pub init_opacity: f64,
    pub densify_interval: usize,
    /// No densification after this iteration.
    pub densify_until: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// Gaussians whose screen radius exceeded this fraction of the image height are pruned.
    pub prune_screen_fraction: f64,
    pub split_factor: f64,
    /// Clone below, split above this max scale (fraction of extent).
    pub percent_dense: f64,
    pub max_gaussians: usize,
    pub lr: LearningRates,
    pub background: [f64; 3],
    pub loss: LossWeights,
    /// MS-SSIM levels; `None` picks the largest the image size supports.
    pub ssim_levels: Option<usize>,
    pub perceptual_levels: usize,
    /// Scene extent; `None` derives it from the rig.
    pub extent: Option<f64>,
    pub raster: RasterSettings,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 1200,
            init_points: 5000,
            init_spread: 0.05,
            init_scale: 0.1,
            init_opacity: 0.1,
            densify_interval: 50,
            densify_until: 1000,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            prune_screen_fraction: 1.0,
            split_factor: 1.6,
            percent_dense: 0.01,
            max_gaussians: 200_000,
            lr: LearningRates::default(),
            background: [1.0; 3],
            loss: LossWeights::default(),
            ssim_levels: None,
            perceptual_levels: 3,
            extent: None,
            raster: RasterSettings::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densify_interval == 0 {
            return Err(param("densify_interval must be ≥ 1"));
        }
        let nonneg = [
            ("init_spread", self.init_spread),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("prune_opacity_threshold", self.prune_opacity_threshold),
            ("percent_dense", self.percent_dense),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(param(format!("{name} must be finite and ≥ 0")));
            }
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(param("init_scale must be positive"));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(param("init_opacity must lie in (0, 1)"));
        }
        if !(self.split_factor > 1.0) {
            return Err(param("split_factor must exceed 1"));
        }
        if !(self.prune_screen_fraction > 0.0) {
            return Err(param("prune_screen_fraction must be positive"));
        }
        if let Some(e) = self.extent {
            if !(e > 0.0 && e.is_finite()) {
                return Err(param("extent must be positive"));
            }
        }
        let lr = &self.lr;
        for (name, v) in [
            ("mean", lr.mean),
            ("mean_final", lr.mean_final),
            ("log_scale", lr.log_scale),
            ("rotation", lr.rotation),
            ("opacity_logit", lr.opacity_logit),
            ("color", lr.color),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(param(format!("learning rate {name} must be finite and ≥ 0")));
            }
        }
        if self.perceptual_levels == 0 {
            return Err(param("perceptual_levels must be ≥ 1"));
        }
        self.loss.validate()?;
        self.raster.validate()
    }

    /// Mean learning rate (before extent scaling) at `iteration`.
    pub fn mean_lr_at(&self, iteration: usize) -> f64 {
        let (a, b) = (self.lr.mean, self.lr.mean_final);
        if self.iterations <= 1 || a <= 0.0 || b <= 0.0 {
            return a;
        }
        let t = (iteration as f64 / (self.iterations - 1) as f64).clamp(0.0, 1.0);
        (a.ln() * (1.0 - t) + b.ln() * t).exp()
    }

    /// Parse a TOML (`.toml`) or JSON (anything else) config file.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::io::load_document(path)?;
        cfg.validate().map_err(|e| format_err(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }
}
