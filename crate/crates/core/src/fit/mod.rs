//! Direct optimization of a Gaussian cloud against a set of target views.

mod adam;
mod config;
mod densify;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_update, LrMap, OptimizerState, BETA1, BETA2, EPS, FIELDS};
pub use config::{FitConfig, LearningRates};
pub use densify::{densify_and_prune, DensifyReport, DensifyStats};

use crate::error::{param, Error, Result};
use crate::losses::{max_levels, total_loss, FeatureExtractor, LossTerms, PyramidExtractor};
use crate::raster::{backward, render_with_state};
use crate::scene::{logit, normalize_quat, CameraRig, Gaussian, GaussianCloud, ViewSet};

/// Radius of the largest origin-centred ball that fits inside the first view.
pub fn rig_extent(rig: &CameraRig) -> Result<f64> {
    let cam = rig.cameras.first().ok_or_else(|| param("empty rig"))?;
    Ok(cam.center().norm() * (0.5 * cam.fov_y()).sin())
}

/// Initial cloud: a small isotropic blob of random Gaussians at the origin.
pub fn init_cloud(config: &FitConfig) -> GaussianCloud {
    let extent = config.extent.unwrap_or(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sd = config.init_spread * extent;
    let log_s = (config.init_scale * extent).ln();
    let op = logit(config.init_opacity);
    let mut cloud = GaussianCloud::new(extent);
    for _ in 0..config.init_points {
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        let mean = [n() * sd, n() * sd, n() * sd];
        let rotation = normalize_quat([n(), n(), n(), n()]);
        cloud.push(Gaussian {
            mean,
            log_scale: [log_s; 3],
            rotation,
            opacity_logit: op,
            color: [0.5; 3],
        });
    }
    cloud
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub view: usize,
    pub loss: f64,
    pub terms: LossTerms,
    pub gaussians: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub render_seconds: f64,
    pub loss_seconds: f64,
    pub backward_seconds: f64,
    pub optimizer_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Effective configuration, with the extent resolved.
    pub config: FitConfig,
    pub loss_trace: Vec<f64>,
    pub term_trace: Vec<LossTerms>,
    pub cloud_size_trace: Vec<usize>,
    pub densify_events: Vec<DensifyReport>,
    pub final_gaussians: usize,
    pub mask_skipped: bool,
    pub timings: Timings,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Resumable fit state. [`fit`] is `Fitter::new` followed by `iterations` steps.
pub struct Fitter {
    config: FitConfig,
    views: ViewSet,
    extractor: Box<dyn FeatureExtractor<f32>>,
    ssim_levels: usize,
    cloud: GaussianCloud,
    state: OptimizerState,
    stats: DensifyStats,
    rng: ChaCha8Rng,
    iteration: usize,
    report: FitReport,
    timings: Timings,
    started: Instant,
}

impl Fitter {
    pub fn new(views: ViewSet, config: FitConfig) -> Result<Self> {
        let e = PyramidExtractor::new(config.perceptual_levels);
        Self::with_extractor(views, config, Box::new(e))
    }

    pub fn with_extractor(views: ViewSet, mut config: FitConfig, extractor: Box<dyn FeatureExtractor<f32>>) -> Result<Self> {
        config.validate()?;
        views.validate()?;
        views.rig.validate()?;
        if views.is_empty() {
            return Err(param("fit needs at least one view"));
        }
        if config.extent.is_none() {
            config.extent = Some(rig_extent(&views.rig)?);
        }
        let (w, h) = (views.images[0].width(), views.images[0].height());
        let ssim_levels = config.ssim_levels.unwrap_or_else(|| max_levels(w, h));
        if config.loss.ssim > 0.0 && ssim_levels == 0 {
            return Err(Error::ImageTooSmall {
                levels: 1,
                min_dim: w.min(h),
                required: crate::losses::ssim::WINDOW,
            });
        }
        let cloud = init_cloud(&config);
        let n = cloud.len();
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d3a5_1f1e_0001);
        let report = FitReport {
            config: config.clone(),
            loss_trace: Vec::new(),
            term_trace: Vec::new(),
            cloud_size_trace: Vec::new(),
            densify_events: Vec::new(),
            final_gaussians: n,
            mask_skipped: false,
            timings: Timings::default(),
        };
        Ok(Self {
            config,
            views,
            extractor,
            ssim_levels,
            cloud,
            state: OptimizerState::new(n),
            stats: DensifyStats::new(n),
            rng,
            iteration: 0,
            report,
            timings: Timings::default(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }
    pub fn cloud(&self) -> &GaussianCloud {
        &self.cloud
    }
    pub fn views(&self) -> &ViewSet {
        &self.views
    }
    pub fn iteration(&self) -> usize {
        self.iteration
    }
    pub fn optimizer(&self) -> &OptimizerState {
        &self.state
    }
    pub fn ssim_levels(&self) -> usize {
        self.ssim_levels
    }

    fn lr_map(&self) -> LrMap {
        let extent = self.config.extent.unwrap_or(1.0);
        let lr = &self.config.lr;
        LrMap([
            self.config.mean_lr_at(self.iteration) * extent,
            lr.log_scale,
            lr.rotation,
            lr.opacity_logit,
            lr.color,
        ])
    }

    /// Swap in new target images (and masks); rig and shapes must match.
    pub fn replace_targets(&mut self, views: ViewSet) -> Result<()> {
        views.validate()?;
        if views.len() != self.views.len() {
            return Err(Error::Shape("replacement view count differs".into()));
        }
        let (a, b) = (&views.images[0], &self.views.images[0]);
        if !a.same_shape(b) {
            return Err(Error::Shape("replacement view size differs".into()));
        }
        self.views = views;
        Ok(())
    }

    /// One optimization iteration.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let k = self.iteration % self.views.len();
        let cam = &self.views.rig.cameras[k];
        let t0 = Instant::now();
        let (out, rstate) = render_with_state::<f32>(&self.cloud, cam, self.config.background, &self.config.raster)?;
        let t1 = Instant::now();
        let mask = self.views.masks.as_ref().map(|m| &m[k]);
        let loss = total_loss(
            &out,
            &self.views.images[k],
            mask,
            &self.config.loss,
            self.extractor.as_ref(),
            self.ssim_levels,
        )?;
        if loss.mask_skipped && !self.report.mask_skipped {
            log::warn!("mask loss has weight {} but the views carry no masks; term skipped", self.config.loss.mask);
            self.report.mask_skipped = true;
        }
        let t2 = Instant::now();
        let grads = backward(&rstate, &loss.grad_rgb, &loss.grad_alpha)?;
        let t3 = Instant::now();
        self.stats.accumulate(&grads);
        let lr = self.lr_map();
        adam_step(&mut self.cloud, &grads, &mut self.state, &lr)?;
        self.iteration += 1;
        let it = self.iteration;
        if it.is_multiple_of(self.config.densify_interval) && it <= self.config.densify_until {
            let mut rep = densify_and_prune(
                &mut self.cloud,
                &mut self.state,
                &mut self.stats,
                &self.config,
                self.config.extent.unwrap_or(1.0),
                cam.height,
                &mut self.rng,
            );
            rep.iteration = it;
            log::debug!("densify at {it}: {rep:?}");
            self.report.densify_events.push(rep);
        }
        let t4 = Instant::now();
        self.timings.render_seconds += (t1 - t0).as_secs_f64();
        self.timings.loss_seconds += (t2 - t1).as_secs_f64();
        self.timings.backward_seconds += (t3 - t2).as_secs_f64();
        self.timings.optimizer_seconds += (t4 - t3).as_secs_f64();
        self.report.loss_trace.push(loss.value);
        self.report.term_trace.push(loss.terms);
        self.report.cloud_size_trace.push(self.cloud.len());
        Ok(IterationRecord {
            iteration: it - 1,
            view: k,
            loss: loss.value,
            terms: loss.terms,
            gaussians: self.cloud.len(),
        })
    }

    /// Step until `iteration` steps have been taken in total.
    pub fn run_until(&mut self, iteration: usize, on_iter: &mut dyn FnMut(&IterationRecord, &GaussianCloud)) -> Result<()> {
        while self.iteration < iteration {
            let rec = self.step()?;
            on_iter(&rec, &self.cloud);
        }
        Ok(())
    }

    pub fn finish(mut self) -> (GaussianCloud, FitReport) {
        self.timings.total_seconds = self.started.elapsed().as_secs_f64();
        self.report.timings = self.timings;
        self.report.final_gaussians = self.cloud.len();
        (self.cloud, self.report)
    }
}

/// Fit a cloud to `views` for `config.iterations` iterations.
pub fn fit(views: &ViewSet, config: &FitConfig) -> Result<(GaussianCloud, FitReport)> {
    fit_with(views, config, &mut |_, _| {})
}

/// [`fit`] with a per-iteration callback.
pub fn fit_with(
    views: &ViewSet,
    config: &FitConfig,
    on_iter: &mut dyn FnMut(&IterationRecord, &GaussianCloud),
) -> Result<(GaussianCloud, FitReport)> {
    let mut f = Fitter::new(views.clone(), config.clone())?;
    f.run_until(config.iterations, on_iter)?;
    Ok(f.finish())
}
