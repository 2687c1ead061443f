//! Procedural scenes, turn-table ground truth, view-inconsistency injection and
//! image metrics.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::image::Image;
use crate::losses::{max_levels, ms_ssim_value, ssim};
use crate::raster::{render, RasterSettings};
use crate::scene::{make_turntable_rig, Camera, CameraRig, Conditioning, Gaussian, GaussianCloud, ViewSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    SphereShell,
    Box,
    TwoBlob,
    Layered,
}

impl FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere_shell" => Ok(Self::SphereShell),
            "box" => Ok(Self::Box),
            "two_blob" => Ok(Self::TwoBlob),
            "layered" => Ok(Self::Layered),
            other => Err(param(format!("unknown scene kind {other:?}"))),
        }
    }
}

/// Quaternion (w, x, y, z) rotating +z onto `n`.
fn quat_z_to(n: Vector3<f64>) -> [f64; 4] {
    let z = Vector3::z();
    let c = z.dot(&n);
    if c < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let axis = z.cross(&n);
    let w = 1.0 + c;
    let q = [w, axis.x, axis.y, axis.z];
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / norm)
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn surfel(p: Vector3<f64>, normal: Vector3<f64>, tangent: f64, color: [f64; 3], opacity: f64) -> Gaussian {
    Gaussian {
        mean: [p.x, p.y, p.z],
        log_scale: [tangent.ln(), tangent.ln(), (0.25 * tangent).ln()],
        rotation: quat_z_to(normal),
        opacity_logit: crate::scene::logit(opacity),
        color,
    }
}

fn shell_color(p: &Vector3<f64>) -> [f64; 3] {
    [
        (0.5 + 0.4 * p.x).clamp(0.0, 1.0),
        (0.5 + 0.4 * p.y).clamp(0.0, 1.0),
        (0.5 + 0.4 * p.z).clamp(0.0, 1.0),
    ]
}

/// Deterministic procedural scene of `detail` Gaussians inside the unit ball.
///
/// * `sphere_shell`: surfels on the unit sphere, color a linear function of position.
/// * `box`: surfels on the faces of a cube of half-size 0.6, one color per face.
/// * `two_blob`: two isotropic clusters centred at x = ±0.55.
/// * `layered`: an opaque inner shell (r = 0.45) inside a translucent outer shell (r = 0.9).
pub fn make_synthetic_scene(kind: SceneKind, detail: usize, seed: u64) -> Result<GaussianCloud> {
    if detail == 0 {
        return Err(param("detail must be ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = detail as f64;
    let mut out = Vec::with_capacity(detail);
    match kind {
        SceneKind::SphereShell => {
            let tangent = 0.75 * (4.0 * PI / n).sqrt();
            for _ in 0..detail {
                let p = unit_sphere(&mut rng);
                out.push(surfel(p, p, tangent, shell_color(&p), 0.9));
            }
        }
        SceneKind::Box => {
            let h = 0.55;
            let tangent = 0.7 * (24.0 * h * h / n).sqrt();
            const FACE: [[f64; 3]; 6] = [
                [0.85, 0.2, 0.2],
                [0.2, 0.75, 0.3],
                [0.2, 0.35, 0.85],
                [0.9, 0.8, 0.2],
                [0.75, 0.3, 0.8],
                [0.25, 0.8, 0.8],
            ];
            for _ in 0..detail {
                let face = rng.random_range(0..6usize);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = Vector3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h));
                p[axis] = sign * h;
                let mut nrm = Vector3::zeros();
                nrm[axis] = sign;
                out.push(surfel(p, nrm, tangent, FACE[face], 0.95));
            }
        }
        SceneKind::TwoBlob => {
            let scale = (0.3 * (2.0 / n).cbrt()).min(0.12);
            for i in 0..detail {
                let (cx, color) = if i % 2 == 0 { (-0.55, [0.9, 0.25, 0.15]) } else { (0.55, [0.15, 0.35, 0.9]) };
                let d = unit_sphere(&mut rng) * 0.3 * rng.random_range(0.0f64..1.0).cbrt();
                out.push(Gaussian::isotropic([cx + d.x, d.y, d.z], scale, 0.8, color));
            }
        }
        SceneKind::Layered => {
            let inner = detail.div_ceil(3);
            for i in 0..detail {
                let p = unit_sphere(&mut rng);
                if i < inner {
                    let t = 0.75 * (4.0 * PI * 0.45 * 0.45 / inner as f64).sqrt();
                    out.push(surfel(p * 0.45, p, t, [0.95, 0.6, 0.1], 0.95));
                } else {
                    let t = 0.75 * (4.0 * PI * 0.81 / (detail - inner) as f64).sqrt();
                    out.push(surfel(p * 0.9, p, t, shell_color(&p), 0.25));
                }
            }
        }
    }
    Ok(GaussianCloud::from_gaussians(out, 1.0))
}

/// Turn-table rig parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub views: usize,
    pub elevation: f64,
    pub distance: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub azimuth_offset: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            views: 16,
            elevation: 0.3,
            distance: 3.0,
            fov_y: 45f64.to_radians(),
            width: 256,
            height: 256,
            azimuth_offset: 0.0,
        }
    }
}

impl RigSpec {
    pub fn build(&self) -> Result<CameraRig> {
        make_turntable_rig(
            self.views,
            self.elevation,
            self.distance,
            self.fov_y,
            self.width,
            self.height,
            self.azimuth_offset,
        )
    }
}

fn render_set(
    cloud: &GaussianCloud,
    cams: &[Camera],
    rig: &CameraRig,
    background: [f64; 3],
    conditioning: Conditioning,
) -> Result<ViewSet> {
    let settings = RasterSettings::default();
    let mut images = Vec::with_capacity(cams.len());
    let mut masks = Vec::with_capacity(cams.len());
    for cam in cams {
        let out = render::<f32>(cloud, cam, background, &settings)?;
        images.push(out.rgb);
        masks.push(out.alpha);
    }
    ViewSet::new(images, Some(masks), rig.clone(), conditioning)
}

/// Render every rig camera; masks are the rendered alphas.
pub fn render_ground_truth(cloud: &GaussianCloud, rig: &CameraRig, background: [f64; 3]) -> Result<ViewSet> {
    rig.validate()?;
    render_set(cloud, &rig.cameras, rig, background, Conditioning::with_elevation(rig.elevation))
}

/// Magnitudes of the per-view defects simulated by [`inject_inconsistency`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InconsistencySpec {
    /// Largest rotation angle of the per-view pose error (radians).
    pub pose_jitter: f64,
    /// Largest translation of the per-view pose error (world units).
    pub translation_jitter: f64,
    /// Per-channel foreground gain is drawn from `[1 − g, 1 + g]`.
    pub color_gain_jitter: f64,
    pub seed: u64,
}

impl InconsistencySpec {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("pose_jitter", self.pose_jitter),
            ("translation_jitter", self.translation_jitter),
            ("color_gain_jitter", self.color_gain_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(param(format!("{n} must be finite and ≥ 0")));
            }
        }
        if self.color_gain_jitter >= 1.0 {
            return Err(param("color_gain_jitter must be < 1"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.pose_jitter == 0.0 && self.translation_jitter == 0.0 && self.color_gain_jitter == 0.0
    }
}

/// Pose error applied to one view: the camera turns about its own center by an
/// angle drawn uniformly from `[j/2, j]` about a random axis in the image
/// plane (a pan/tilt; roll barely changes a centered object) and moves by up to
/// `translation_jitter`.
fn perturbed_camera(cam: &Camera, spec: &InconsistencySpec, rng: &mut ChaCha8Rng) -> Camera {
    let phi = rng.random_range(0.0..2.0 * PI);
    let axis = Vector3::new(phi.cos(), phi.sin(), 0.0);
    let angle = if spec.pose_jitter > 0.0 {
        rng.random_range(0.5 * spec.pose_jitter..=spec.pose_jitter)
    } else {
        0.0
    };
    let shift = unit_sphere(rng) * spec.translation_jitter * rng.random_range(0.0f64..=1.0).cbrt();
    let rp: Matrix3<f64> = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
    let mut out = cam.clone();
    out.rotation = rp * cam.rotation;
    out.translation = rp * cam.translation + shift;
    out
}

/// Render each view from a slightly wrong camera and with a slightly wrong
/// foreground color balance. The returned view set still declares `rig`.
pub fn inject_inconsistency(
    cloud: &GaussianCloud,
    rig: &CameraRig,
    spec: &InconsistencySpec,
    background: [f64; 3],
) -> Result<ViewSet> {
    spec.validate()?;
    if spec.is_zero() {
        return render_ground_truth(cloud, rig, background);
    }
    let mut cams = Vec::with_capacity(rig.len());
    let mut gains = Vec::with_capacity(rig.len());
    for (k, cam) in rig.cameras.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(k as u64 + 1);
        cams.push(perturbed_camera(cam, spec, &mut rng));
        let g = spec.color_gain_jitter;
        let gain: [f64; 3] = std::array::from_fn(|_| if g > 0.0 { rng.random_range(1.0 - g..=1.0 + g) } else { 1.0 });
        gains.push(gain);
    }
    let mut vs = render_set(cloud, &cams, rig, background, Conditioning::with_elevation(rig.elevation))?;
    let masks = vs.masks.as_ref().expect("rendered sets carry masks");
    for ((img, mask), gain) in vs.images.iter_mut().zip(masks).zip(&gains) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                let a = mask.get(x, y, 0) as f64;
                for c in 0..3 {
                    let v = img.get(x, y, c) as f64;
                    let fg = v - (1.0 - a) * background[c];
                    img.set(x, y, c, (v + (gain[c] - 1.0) * fg).clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Ok(vs)
}

/// Peak signal-to-noise ratio on `[0, 1]` images; `+∞` when identical.
pub fn psnr<T: crate::Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let n = a.len().max(1) as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.f64() - y.f64();
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub(crate) mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("bad number {t:?}"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    /// `"inf"` in JSON for identical images.
    #[serde(with = "inf_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_view: Vec<ViewMetrics>,
    #[serde(with = "inf_f64")]
    pub mean_psnr: f64,
    #[serde(with = "inf_f64")]
    pub min_psnr: f64,
    pub mean_ssim: f64,
    pub min_ssim: f64,
    pub mean_ms_ssim: f64,
    pub min_ms_ssim: f64,
    pub ms_ssim_levels: usize,
}

impl MetricsReport {
    pub fn from_views(per_view: Vec<ViewMetrics>, ms_ssim_levels: usize) -> Self {
        let n = per_view.len().max(1) as f64;
        let mean = |f: fn(&ViewMetrics) -> f64| per_view.iter().map(f).sum::<f64>() / n;
        let min = |f: fn(&ViewMetrics) -> f64| per_view.iter().map(f).fold(f64::INFINITY, f64::min);
        Self {
            mean_psnr: mean(|m| m.psnr),
            min_psnr: min(|m| m.psnr),
            mean_ssim: mean(|m| m.ssim),
            min_ssim: min(|m| m.ssim),
            mean_ms_ssim: mean(|m| m.ms_ssim),
            min_ms_ssim: min(|m| m.ms_ssim),
            per_view,
            ms_ssim_levels,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned-column text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6}  {:>9}  {:>7}  {:>7}", "view", "psnr_db", "ssim", "ms_ssim");
        for (k, m) in self.per_view.iter().enumerate() {
            let _ = writeln!(s, "{k:>6}  {:>9.3}  {:>7.4}  {:>7.4}", m.psnr, m.ssim, m.ms_ssim);
        }
        let _ = writeln!(s, "{:>6}  {:>9.3}  {:>7.4}  {:>7.4}", "mean", self.mean_psnr, self.mean_ssim, self.mean_ms_ssim);
        let _ = writeln!(s, "{:>6}  {:>9.3}  {:>7.4}  {:>7.4}", "min", self.min_psnr, self.min_ssim, self.min_ms_ssim);
        s
    }
}

/// Score two equally long image lists.
pub fn score_images(pred: &[Image<f32>], target: &[Image<f32>]) -> Result<MetricsReport> {
    if pred.len() != target.len() {
        return Err(Error::Shape("prediction and target counts differ".into()));
    }
    let Some(first) = target.first() else {
        return Ok(MetricsReport::from_views(Vec::new(), 0));
    };
    let levels = max_levels(first.width(), first.height());
    if levels == 0 {
        return Err(Error::ImageTooSmall {
            levels: 1,
            min_dim: first.width().min(first.height()),
            required: crate::losses::ssim::WINDOW,
        });
    }
    let mut per_view = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let (p, t) = (p.convert::<f64>(), t.convert::<f64>());
        per_view.push(ViewMetrics {
            psnr: psnr(&p, &t)?,
            ssim: ssim(&p, &t)?,
            ms_ssim: ms_ssim_value(&p, &t, levels)?,
        });
    }
    Ok(MetricsReport::from_views(per_view, levels))
}

/// Render `cloud` at the held-out cameras and score against the held-out images.
pub fn evaluate(cloud: &GaussianCloud, heldout: &ViewSet, background: [f64; 3]) -> Result<MetricsReport> {
    heldout.validate()?;
    heldout.rig.validate()?;
    let settings = RasterSettings::default();
    let renders = heldout
        .rig
        .cameras
        .iter()
        .map(|cam| render::<f32>(cloud, cam, background, &settings).map(|o| o.rgb))
        .collect::<Result<Vec<_>>>()?;
    score_images(&renders, &heldout.images)
}

/// Everything needed to regenerate a synthetic experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentDescriptor {
    pub scene: SceneKind,
    pub detail: usize,
    pub seed: u64,
    pub rig: RigSpec,
    pub background: [f64; 3],
    /// Also write an inconsistency-injected copy of the training views.
    pub inconsistency: Option<InconsistencySpec>,
    /// Also write held-out views at the interleaved cameras.
    pub heldout: bool,
}

impl Default for ExperimentDescriptor {
    fn default() -> Self {
        Self {
            scene: SceneKind::SphereShell,
            detail: 800,
            seed: 0,
            rig: RigSpec::default(),
            background: [1.0; 3],
            inconsistency: None,
            heldout: true,
        }
    }
}

/// Output of [`run_experiment`].
pub struct ExperimentViews {
    pub scene: GaussianCloud,
    pub clean: ViewSet,
    pub inconsistent: Option<ViewSet>,
    pub heldout: Option<ViewSet>,
}

pub fn run_experiment(d: &ExperimentDescriptor) -> Result<ExperimentViews> {
    let scene = make_synthetic_scene(d.scene, d.detail, d.seed)?;
    let rig = d.rig.build()?;
    let clean = render_ground_truth(&scene, &rig, d.background)?;
    let inconsistent = match &d.inconsistency {
        Some(spec) if !spec.is_zero() => Some(inject_inconsistency(&scene, &rig, spec, d.background)?),
        _ => None,
    };
    let heldout = if d.heldout {
        Some(render_ground_truth(&scene, &rig.interleaved()?, d.background)?)
    } else {
        None
    };
    Ok(ExperimentViews {
        scene,
        clean,
        inconsistent,
        heldout,
    })
}
