//! Alternating reconstruction and view refinement.
//!
//! At each trigger the current cloud is rendered at the training rig, the
//! renders are pushed through the forward noising process, a [`ViewRefiner`]
//! turns them back into images, and those images become the new targets.

mod exec;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize};

pub use exec::ExecRefiner;

use crate::error::{param, Error, Result};
use crate::fit::{FitConfig, FitReport, Fitter};
use crate::image::Image;
use crate::raster::{render, RasterSettings};
use crate::scene::{CameraRig, Conditioning, GaussianCloud, ViewSet};
use crate::synth::{psnr, evaluate, MetricsReport};

/// When and how hard to refine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineSchedule {
    pub rounds: usize,
    pub refiner_steps: usize,
    pub trigger_every: usize,
    /// Noise level per round; the last entry repeats. A bare number is accepted.
    #[serde(deserialize_with = "one_or_many")]
    pub sigma_t: Vec<f64>,
    pub seed: u64,
}

impl Default for RefineSchedule {
    fn default() -> Self {
        Self {
            rounds: 2,
            refiner_steps: 10,
            trigger_every: 500,
            sigma_t: vec![0.5],
            seed: 0,
        }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match Repr::deserialize(d)? {
        Repr::One(v) => vec![v],
        Repr::Many(v) => v,
    })
}

impl RefineSchedule {
    pub fn validate(&self, iterations: usize) -> Result<()> {
        if self.rounds == 0 {
            return Ok(());
        }
        if self.trigger_every == 0 {
            return Err(param("trigger_every must be ≥ 1"));
        }
        if self.sigma_t.is_empty() {
            return Err(param("sigma_t needs at least one value"));
        }
        if let Some(s) = self.sigma_t.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(param(format!("sigma_t {s} outside [0, 1]")));
        }
        let last = self.rounds.saturating_mul(self.trigger_every);
        if last > iterations {
            return Err(param(format!(
                "{} rounds every {} iterations exceed the {iterations}-iteration fit",
                self.rounds, self.trigger_every
            )));
        }
        Ok(())
    }

    /// Noise level of `round` (1-based).
    pub fn sigma_for(&self, round: usize) -> f64 {
        let i = round.saturating_sub(1).min(self.sigma_t.len().saturating_sub(1));
        self.sigma_t.get(i).copied().unwrap_or(0.5)
    }

    /// Iteration at which `round` (1-based) fires.
    pub fn trigger(&self, round: usize) -> usize {
        round * self.trigger_every
    }

    /// Seed handed to the noiser and refiner in `round`.
    pub fn round_seed(&self, round: usize) -> u64 {
        self.seed.wrapping_add((round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// Forward noising `√(1−σ²)·J + σ·ε` of every image; masks, rig and
/// conditioning are kept. Values are not clamped.
pub fn noise_views(views: &ViewSet, sigma_t: f64, seed: u64) -> Result<ViewSet> {
    if !(0.0..=1.0).contains(&sigma_t) {
        return Err(param(format!("sigma_t {sigma_t} outside [0, 1]")));
    }
    let mut out = views.clone();
    if sigma_t == 0.0 {
        return Ok(out);
    }
    let a = (1.0 - sigma_t * sigma_t).sqrt();
    for (k, img) in out.images.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for v in img.data_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = (a * *v as f64 + sigma_t * e) as f32;
        }
    }
    Ok(out)
}

/// Undo the signal attenuation of [`noise_views`] and clamp to `[0, 1]`.
pub fn rescale_noised(img: &Image<f32>, sigma_t: f64) -> Image<f32> {
    let a = (1.0 - sigma_t * sigma_t).max(f64::EPSILON).sqrt();
    img.map(|v| ((v as f64 / a).clamp(0.0, 1.0)) as f32)
}

/// What a refiner sees in one round.
pub struct RefineRequest<'a> {
    /// The noised renders, in the noise domain (unclamped).
    pub noised: &'a [Image<f32>],
    pub sigma_t: f64,
    pub steps: usize,
    /// 1-based round index.
    pub round: usize,
    pub seed: u64,
    pub conditioning: &'a Conditioning,
    /// Provided for bookkeeping only; refiners must not depend on it.
    pub rig: &'a CameraRig,
}

/// Maps noised views to refined views of identical shape with values in `[0, 1]`.
pub trait ViewRefiner {
    fn refine(&mut self, request: &RefineRequest<'_>) -> Result<Vec<Image<f32>>>;
}

impl<F> ViewRefiner for F
where
    F: FnMut(&RefineRequest<'_>) -> Result<Vec<Image<f32>>>,
{
    fn refine(&mut self, request: &RefineRequest<'_>) -> Result<Vec<Image<f32>>> {
        self(request)
    }
}

/// Stand-in generator that pulls noised views toward known ground truth:
/// `β·GT + (1−β)·rescaled`, clamped.
pub struct OracleRefiner {
    ground_truth: Vec<Image<f32>>,
    beta: f64,
}

pub fn oracle_refiner(ground_truth: &ViewSet, beta: f64) -> Result<OracleRefiner> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(param(format!("beta {beta} outside [0, 1]")));
    }
    Ok(OracleRefiner {
        ground_truth: ground_truth.images.clone(),
        beta,
    })
}

impl ViewRefiner for OracleRefiner {
    fn refine(&mut self, req: &RefineRequest<'_>) -> Result<Vec<Image<f32>>> {
        if req.noised.len() != self.ground_truth.len() {
            return Err(Error::Shape(format!(
                "oracle holds {} views, got {}",
                self.ground_truth.len(),
                req.noised.len()
            )));
        }
        let b = self.beta;
        req.noised
            .iter()
            .zip(&self.ground_truth)
            .map(|(n, gt)| {
                n.ensure_same_shape(gt, "oracle refiner")?;
                let r = rescale_noised(n, req.sigma_t);
                let data = gt
                    .data()
                    .iter()
                    .zip(r.data())
                    .map(|(&g, &x)| (b * g as f64 + (1.0 - b) * x as f64).clamp(0.0, 1.0) as f32)
                    .collect();
                Image::from_vec(gt.width(), gt.height(), gt.channels(), data)
            })
            .collect()
    }
}

/// Render every camera of `rig`; alphas become masks.
pub fn render_rig(
    cloud: &GaussianCloud,
    rig: &CameraRig,
    background: [f64; 3],
    conditioning: &Conditioning,
) -> Result<ViewSet> {
    rig.validate()?;
    let settings = RasterSettings::default();
    let mut images = Vec::with_capacity(rig.len());
    let mut masks = Vec::with_capacity(rig.len());
    for cam in &rig.cameras {
        let out = render::<f32>(cloud, cam, background, &settings)?;
        images.push(out.rgb);
        masks.push(out.alpha);
    }
    ViewSet::new(images, Some(masks), rig.clone(), conditioning.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub iteration: usize,
    pub sigma_t: f64,
    pub seed: u64,
    pub refiner_seconds: f64,
    /// Mean PSNR between the refined views and the targets they replace.
    #[serde(with = "crate::synth::inf_f64")]
    pub target_change_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutCheckpoint {
    pub iteration: usize,
    /// Rounds completed when the checkpoint was taken.
    pub rounds_done: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub schedule: RefineSchedule,
    pub fit: FitReport,
    pub rounds: Vec<RoundRecord>,
    /// One checkpoint just before each round and one at the end.
    pub heldout: Vec<HeldoutCheckpoint>,
}

impl RefineReport {
    pub fn heldout_psnr_trace(&self) -> Vec<f64> {
        self.heldout.iter().map(|c| c.metrics.mean_psnr).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn checked_refined(views: Vec<Image<f32>>, like: &ViewSet, round: usize) -> Result<Vec<Image<f32>>> {
    let fail = |message: String| Error::Refiner { round, message };
    if views.len() != like.len() {
        return Err(fail(format!("returned {} views, expected {}", views.len(), like.len())));
    }
    for (k, (v, t)) in views.iter().zip(&like.images).enumerate() {
        if !v.same_shape(t) {
            return Err(fail(format!(
                "view {k} is {}x{}x{}, expected {}x{}x{}",
                v.width(),
                v.height(),
                v.channels(),
                t.width(),
                t.height(),
                t.channels()
            )));
        }
        if v.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(fail(format!("view {k} has values outside [0, 1]")));
        }
    }
    Ok(views)
}

/// Fit `initial` while periodically replacing the targets with refined renders.
///
/// With `rounds = 0` this is exactly [`crate::fit::fit`]. When `heldout` is
/// given, the cloud is scored before each round and at the end.
pub fn refine_loop(
    initial: &ViewSet,
    refiner: &mut dyn ViewRefiner,
    config: &FitConfig,
    schedule: &RefineSchedule,
    heldout: Option<&ViewSet>,
) -> Result<(GaussianCloud, ViewSet, RefineReport)> {
    schedule.validate(config.iterations)?;
    let mut fitter = Fitter::new(initial.clone(), config.clone())?;
    let bg = fitter.config().background;
    let mut rounds = Vec::with_capacity(schedule.rounds);
    let mut checkpoints = Vec::new();
    let score = |cloud: &GaussianCloud, it: usize, done: usize, out: &mut Vec<HeldoutCheckpoint>| -> Result<()> {
        if let Some(h) = heldout {
            out.push(HeldoutCheckpoint {
                iteration: it,
                rounds_done: done,
                metrics: evaluate(cloud, h, bg)?,
            });
        }
        Ok(())
    };
    for round in 1..=schedule.rounds {
        let it = schedule.trigger(round);
        fitter.run_until(it, &mut |_, _| {})?;
        score(fitter.cloud(), it, round - 1, &mut checkpoints)?;
        let current = fitter.views();
        let rendered = render_rig(fitter.cloud(), &current.rig, bg, &current.conditioning)?;
        let sigma_t = schedule.sigma_for(round);
        let seed = schedule.round_seed(round);
        let noised = noise_views(&rendered, sigma_t, seed)?;
        let t0 = Instant::now();
        let request = RefineRequest {
            noised: &noised.images,
            sigma_t,
            steps: schedule.refiner_steps,
            round,
            seed,
            conditioning: &current.conditioning,
            rig: &current.rig,
        };
        let refined = refiner.refine(&request).map_err(|e| match e {
            e @ Error::Refiner { .. } => e,
            other => Error::Refiner {
                round,
                message: other.to_string(),
            },
        })?;
        let refiner_seconds = t0.elapsed().as_secs_f64();
        let refined = checked_refined(refined, current, round)?;
        let change = refined
            .iter()
            .zip(&current.images)
            .map(|(a, b)| psnr(a, b))
            .collect::<Result<Vec<_>>>()?;
        let target_change_psnr = change.iter().sum::<f64>() / change.len().max(1) as f64;
        let next = ViewSet::new(refined, rendered.masks, current.rig.clone(), current.conditioning.clone())?;
        log::info!("round {round} at iteration {it}: sigma {sigma_t}, targets moved {target_change_psnr:.2} dB");
        fitter.replace_targets(next)?;
        rounds.push(RoundRecord {
            round,
            iteration: it,
            sigma_t,
            seed,
            refiner_seconds,
            target_change_psnr,
        });
    }
    fitter.run_until(config.iterations, &mut |_, _| {})?;
    score(fitter.cloud(), config.iterations, schedule.rounds, &mut checkpoints)?;
    let views = fitter.views().clone();
    let (cloud, fit) = fitter.finish();
    let report = RefineReport {
        schedule: schedule.clone(),
        fit,
        rounds,
        heldout: checkpoints,
    };
    Ok((cloud, views, report))
}
