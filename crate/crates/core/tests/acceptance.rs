//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! The fitting experiments take hours on a single core; run with
//! `cargo test -p turnsplat --test acceptance -- --nocapture` to watch them.
//! Tests hold a global lock so that timings are not skewed by each other.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use turnsplat::fit::{fit, FitConfig};
use turnsplat::image::Image;
use turnsplat::losses::{max_levels, total_loss, LossWeights, PyramidExtractor};
use turnsplat::meshing::{export_mesh, import_mesh, marching_cubes, MeshFormat, DEFAULT_ISO};
use turnsplat::raster::{render, render_backward, RasterSettings};
use turnsplat::refine::{noise_views, oracle_refiner, refine_loop, RefineSchedule};
use turnsplat::scene::{logit, make_turntable_rig, normalize_quat, Conditioning, Gaussian, GaussianCloud, ViewSet};
use turnsplat::synth::{
    evaluate, make_synthetic_scene, render_ground_truth, run_experiment, ExperimentDescriptor, ExperimentViews,
    InconsistencySpec, MetricsReport, RigSpec, SceneKind,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: usize, name: &str, pass: bool, detail: &str) {
    // Written to the raw handle so the line survives libtest output capture.
    let line = format!("criterion {id} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Resolution of the scaled-down experiments (criteria 3 to 5).
const SMALL: usize = 128;

fn rig(views: usize, size: usize) -> RigSpec {
    RigSpec {
        views,
        width: size,
        height: size,
        ..Default::default()
    }
}

/// sphere_shell scene, clean and jittered 16-view sets, interleaved held-out views.
fn jittered_experiment(seed: u64) -> ExperimentViews {
    run_experiment(&ExperimentDescriptor {
        seed,
        rig: rig(16, SMALL),
        inconsistency: Some(InconsistencySpec {
            pose_jitter: 0.02,
            color_gain_jitter: 0.05,
            seed: 100 + seed,
            ..Default::default()
        }),
        ..Default::default()
    })
    .unwrap()
}

fn with_weights(seed: u64, perceptual: f64, ssim: f64, mask: f64, rgb: f64) -> FitConfig {
    FitConfig {
        seed,
        loss: LossWeights {
            perceptual,
            ssim,
            mask,
            rgb,
        },
        ..Default::default()
    }
}

/// Held-out metrics of the default-config fit on jittered views, shared by criteria 3 and 4.
fn baseline_metrics(seed: u64, ex: &ExperimentViews) -> MetricsReport {
    static CACHE: Mutex<Option<HashMap<u64, MetricsReport>>> = Mutex::new(None);
    if let Some(m) = CACHE.lock().unwrap().get_or_insert_with(HashMap::new).get(&seed) {
        return m.clone();
    }
    let (cloud, _) = fit(ex.inconsistent.as_ref().unwrap(), &with_weights(seed, 10.0, 0.2, 1.0, 0.0)).unwrap();
    let m = evaluate(&cloud, ex.heldout.as_ref().unwrap(), [1.0; 3]).unwrap();
    CACHE.lock().unwrap().get_or_insert_with(HashMap::new).insert(seed, m.clone());
    m
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
    let gs = (0..n)
        .map(|_| Gaussian {
            mean: std::array::from_fn(|_| rng.random_range(-0.4..0.4)),
            log_scale: std::array::from_fn(|_| rng.random_range(-2.6f64..-1.7)),
            rotation: normalize_quat(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
            opacity_logit: logit(rng.random_range(0.2..0.8)),
            color: std::array::from_fn(|_| rng.random_range(0.1..0.9)),
        })
        .collect();
    GaussianCloud::from_gaussians(gs, 1.0)
}

fn perturb(cloud: &GaussianCloud, i: usize, field: usize, comp: usize, h: f64) -> GaussianCloud {
    let mut c = cloud.clone();
    let g = &mut c.gaussians_mut()[i];
    match field {
        0 => g.mean[comp] += h,
        1 => g.log_scale[comp] += h,
        2 => g.rotation[comp] += h,
        3 => g.opacity_logit += h,
        _ => g.color[comp] += h,
    }
    c
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let _serial = serial();
    let start = Instant::now();
    let rig = make_turntable_rig(1, 0.3, 2.0, 0.8, 32, 32, 0.4).unwrap();
    let cam = &rig.cameras[0];
    let bg = [0.3, 0.6, 0.9];
    // A wide cutoff and no early termination keep the render smooth enough for
    // central differences; the analytic path is the same code either way.
    let s = RasterSettings {
        cutoff_sigma: 6.0,
        min_transmittance: 0.0,
        ..Default::default()
    };
    let weights = LossWeights {
        perceptual: 10.0,
        ssim: 0.2,
        mask: 1.0,
        rgb: 1.0,
    };
    let extractor = PyramidExtractor::new(3);
    let levels = max_levels(32, 32);
    let mut worst = 0.0f64;
    let mut worst_field = "";
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let cloud = random_scene(&mut rng, 20);
        let target_scene = random_scene(&mut rng, 20);
        let target = render::<f64>(&target_scene, cam, bg, &s).unwrap();
        let loss_of = |c: &GaussianCloud| {
            let out = render::<f64>(c, cam, bg, &s).unwrap();
            total_loss(&out, &target.rgb, Some(&target.alpha), &weights, &extractor, levels).unwrap()
        };
        let base = loss_of(&cloud);
        assert!(base.terms.perceptual > 0.0 && base.terms.ssim > 0.0 && base.terms.mask > 0.0 && base.terms.rgb > 0.0);
        let grads = render_backward::<f64>(&cloud, cam, bg, &s, &base.grad_rgb, &base.grad_alpha).unwrap();
        let comps = [3usize, 3, 4, 1, 3];
        for (f, (name, analytic)) in grads.fields().iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..cloud.len() {
                for c in 0..comps[f] {
                    let h = 1e-5;
                    let fd = (loss_of(&perturb(&cloud, i, f, c, h)).value - loss_of(&perturb(&cloud, i, f, c, -h)).value)
                        / (2.0 * h);
                    let a = analytic[i * comps[f] + c];
                    num += (a - fd) * (a - fd);
                    den += fd * fd;
                }
            }
            let rel = (num / den.max(1e-300)).sqrt();
            if rel > worst {
                worst = rel;
                worst_field = name;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        worst < 1e-3 && secs < 60.0,
        &format!("worst relative error {worst:.2e} ({worst_field}) over 3 scenes x 20 gaussians, {secs:.1}s"),
    );
}

#[test]
fn criterion_2_self_reconstruction() {
    let _serial = serial();
    let start = Instant::now();
    let ex = run_experiment(&ExperimentDescriptor {
        scene: SceneKind::SphereShell,
        rig: rig(16, 256),
        ..Default::default()
    })
    .unwrap();
    let cfg = FitConfig::default();
    assert_eq!((cfg.init_points, cfg.iterations, cfg.densify_interval), (5000, 1200, 50));
    let (cloud, report) = fit(&ex.clean, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let train = evaluate(&cloud, &ex.clean, [1.0; 3]).unwrap();
    let held = evaluate(&cloud, ex.heldout.as_ref().unwrap(), [1.0; 3]).unwrap();
    verdict(
        2,
        "self-reconstruction",
        train.mean_psnr >= 30.0 && held.mean_psnr >= 27.0 && secs <= 900.0,
        &format!(
            "train {:.2} dB (>= 30), held-out {:.2} dB (>= 27), {} gaussians, {secs:.0}s (<= 900)",
            train.mean_psnr, held.mean_psnr, report.final_gaussians
        ),
    );
}

#[test]
fn criterion_3_loss_ablation_direction() {
    let _serial = serial();
    let mut rows = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let ex = jittered_experiment(seed);
        let train = ex.inconsistent.as_ref().unwrap();
        let heldout = ex.heldout.as_ref().unwrap();
        let full = baseline_metrics(seed, &ex).mean_ms_ssim;
        let score = |cfg: FitConfig| evaluate(&fit(train, &cfg).unwrap().0, heldout, [1.0; 3]).unwrap().mean_ms_ssim;
        let rgb_only = score(with_weights(seed, 0.0, 0.0, 0.0, 1.0));
        let no_perceptual = score(with_weights(seed, 0.0, 0.2, 1.0, 0.0));
        pass &= full - rgb_only > 0.0 && full - no_perceptual > 0.0;
        rows.push(format!("seed {seed}: full {full:.4} rgb-only {rgb_only:.4} no-perceptual {no_perceptual:.4}"));
    }
    verdict(3, "loss-ablation direction (held-out MS-SSIM)", pass, &rows.join("; "));
}

#[test]
fn criterion_4_refinement_direction() {
    let _serial = serial();
    let mut rows = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let ex = jittered_experiment(seed);
        let heldout = ex.heldout.as_ref().unwrap();
        let baseline = baseline_metrics(seed, &ex).mean_psnr;
        let schedule = RefineSchedule {
            seed,
            ..Default::default()
        };
        assert_eq!((schedule.rounds, schedule.refiner_steps, schedule.trigger_every), (2, 10, 500));
        let mut oracle = oracle_refiner(&ex.clean, 1.0).unwrap();
        let cfg = with_weights(seed, 10.0, 0.2, 1.0, 0.0);
        let (_, _, report) =
            refine_loop(ex.inconsistent.as_ref().unwrap(), &mut oracle, &cfg, &schedule, Some(heldout)).unwrap();
        let trace = report.heldout_psnr_trace();
        let monotone = trace.windows(2).all(|w| w[1] >= w[0]);
        let gain = trace.last().unwrap() - baseline;
        pass &= monotone && gain >= 1.0;
        let t: Vec<String> = trace.iter().map(|v| format!("{v:.2}")).collect();
        rows.push(format!("seed {seed}: baseline {baseline:.2} dB, rounds [{}], gain {gain:+.2} dB", t.join(" -> ")));
    }
    verdict(4, "iterative-refinement direction (held-out PSNR)", pass, &rows.join("; "));
}

#[test]
fn criterion_5_frame_count_direction() {
    let _serial = serial();
    let mut rows = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let scene = make_synthetic_scene(SceneKind::SphereShell, 800, seed).unwrap();
        // One held-out set for every K: novel to all three rigs.
        let heldout = render_ground_truth(&scene, &rig(16, SMALL).build().unwrap().interleaved().unwrap(), [1.0; 3]).unwrap();
        let psnr: Vec<f64> = [4usize, 8, 16]
            .iter()
            .map(|&k| {
                let views = render_ground_truth(&scene, &rig(k, SMALL).build().unwrap(), [1.0; 3]).unwrap();
                let cfg = FitConfig {
                    seed,
                    ..Default::default()
                };
                evaluate(&fit(&views, &cfg).unwrap().0, &heldout, [1.0; 3]).unwrap().mean_psnr
            })
            .collect();
        pass &= psnr[0] < psnr[1] && psnr[1] < psnr[2];
        rows.push(format!("seed {seed}: K=4 {:.2} K=8 {:.2} K=16 {:.2}", psnr[0], psnr[1], psnr[2]));
    }
    verdict(5, "frame-count direction (held-out PSNR)", pass, &rows.join("; "));
}

#[test]
fn criterion_6_noise_statistics() {
    let _serial = serial();
    let n = 512 * 512 * 3;
    let rig = make_turntable_rig(1, 0.3, 3.0, 0.8, 512, 512, 0.0).unwrap();
    let j = 0.6f64;
    let views = ViewSet::new(vec![Image::filled(512, 512, 3, j as f32)], None, rig, Conditioning::default()).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for (k, sigma) in [0.25f64, 0.5, 0.9].into_iter().enumerate() {
        let noised = noise_views(&views, sigma, 40 + k as u64).unwrap();
        let data = noised.images[0].data();
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want_mean = (1.0 - sigma * sigma).sqrt() * j;
        let mean_bound = 3.0 * sigma / (n as f64).sqrt();
        let var_bound = 3.0 * sigma * sigma * (2.0 / (n - 1) as f64).sqrt();
        let ok = (mean - want_mean).abs() <= mean_bound && (var - sigma * sigma).abs() <= var_bound;
        pass &= ok;
        details.push(format!(
            "sigma {sigma}: mean err {:.1e} (<= {mean_bound:.1e}), var err {:.1e} (<= {var_bound:.1e})",
            (mean - want_mean).abs(),
            (var - sigma * sigma).abs()
        ));
    }
    verdict(6, "noise statistics", pass, &details.join("; "));
}

#[test]
fn criterion_7_meshing() {
    let _serial = serial();
    let cloud = GaussianCloud::from_gaussians(vec![Gaussian::isotropic([0.1, -0.2, 0.05], 0.4, 0.9, [0.7, 0.3, 0.2])], 1.0);
    let mesh = marching_cubes(&cloud, 64, DEFAULT_ISO).unwrap();
    let r: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|v| ((v[0] - 0.1).powi(2) + (v[1] + 0.2).powi(2) + (v[2] - 0.05).powi(2)).sqrt())
        .collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let cv = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt() / mean;
    let dir = tempfile::tempdir().unwrap();
    let mut round_trip = true;
    for (name, format) in [("m.obj", MeshFormat::Obj), ("m.ply", MeshFormat::Ply)] {
        let path = dir.path().join(name);
        export_mesh(&mesh, &path, format).unwrap();
        let back = import_mesh(&path).unwrap();
        round_trip &= back.vertices.len() == mesh.vertices.len() && back.triangles.len() == mesh.triangles.len();
    }
    verdict(
        7,
        "meshing",
        !mesh.triangles.is_empty() && cv < 0.02 && round_trip,
        &format!(
            "{} vertices, {} triangles, radius cv {:.4}, OBJ/PLY counts preserved: {round_trip}",
            mesh.vertices.len(),
            mesh.triangles.len(),
            cv
        ),
    );
}

#[test]
fn criterion_8_determinism_and_performance() {
    let _serial = serial();
    let d = ExperimentDescriptor {
        detail: 300,
        rig: RigSpec {
            views: 8,
            width: 48,
            height: 48,
            ..Default::default()
        },
        heldout: false,
        ..Default::default()
    };
    let views = run_experiment(&d).unwrap().clean;
    let cfg = FitConfig {
        iterations: 120,
        init_points: 800,
        densify_interval: 20,
        seed: 9,
        ..Default::default()
    };
    let fit_in = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| fit(&views, &cfg).unwrap().0)
    };
    let reference = fit_in(1);
    let identical = [2usize, 4, 8].iter().all(|&t| fit_in(t) == reference);

    // Performance is tracked, not gated.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let big = GaussianCloud::from_gaussians(
        (0..50_000)
            .map(|_| Gaussian {
                mean: std::array::from_fn(|_| rng.random_range(-0.8..0.8)),
                log_scale: std::array::from_fn(|_| rng.random_range(-4.5f64..-3.0)),
                rotation: normalize_quat(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
                opacity_logit: logit(rng.random_range(0.1..0.9)),
                color: std::array::from_fn(|_| rng.random()),
            })
            .collect(),
        1.0,
    );
    let rig = make_turntable_rig(1, 0.3, 3.0, 45f64.to_radians(), 512, 512, 0.0).unwrap();
    let time_in = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let t = Instant::now();
            render::<f32>(&big, &rig.cameras[0], [1.0; 3], &RasterSettings::default()).unwrap();
            t.elapsed().as_secs_f64()
        })
    };
    let t1 = time_in(1);
    let t8 = time_in(8);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    verdict(
        8,
        "determinism",
        identical,
        &format!(
            "fits bit-identical at 1/2/4/8 threads: {identical}; tracked: 512x512 render of 50k gaussians {t1:.2}s at 1 thread \
             (target <= 2s), {:.2}x at 8 threads (target >= 3x, {cores} core(s) available)",
            t1 / t8
        ),
    );
}
