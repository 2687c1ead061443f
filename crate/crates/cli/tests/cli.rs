use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use turnsplat::fit::{init_cloud, rig_extent, FitConfig};
use turnsplat::io::{load_splats, load_view_set, save_splats};
use turnsplat::meshing::import_mesh;
use turnsplat::raster::{render, RasterSettings};
use turnsplat::scene::{Gaussian, GaussianCloud};

fn turnsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turnsplat")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = turnsplat(args);
    assert!(
        out.status.success(),
        "turnsplat {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic experiment: 8 views at 32x32 plus held-out views.
fn small_synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("exp");
    let mut args = vec!["synth", "--out", p(&out), "--views", "8", "--size", "32", "--detail", "200"];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn synth_without_jitter_writes_clean_set_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_synth(dir.path(), &[]);
    assert!(out.join("train/cameras.json").is_file());
    assert!(out.join("heldout/view_007.png").is_file());
    assert!(!out.join("inconsistent").exists());
    assert_eq!(load_view_set(&out.join("train")).unwrap().len(), 8);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("experiment.json")).unwrap()).unwrap();
    assert_eq!(summary["rig"]["views"], 8);
}

#[test]
fn synth_defaults_to_sixteen_views() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--out", p(&out), "--size", "16", "--detail", "50", "--no-heldout"]);
    assert_eq!(load_view_set(&out.join("train")).unwrap().len(), 16);
    assert!(!out.join("heldout").exists());
}

#[test]
fn synth_is_byte_deterministic_and_writes_jittered_set() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["synth", "--out", p(out), "--views", "4", "--size", "24", "--detail", "100", "--pose-jitter", "0.02", "--seed", "5"]);
    }
    for sub in ["train", "inconsistent", "heldout"] {
        for k in 0..4 {
            let name = format!("{sub}/view_{k:03}.png");
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
    assert_ne!(std::fs::read(a.join("train/view_000.png")).unwrap(), std::fs::read(a.join("inconsistent/view_000.png")).unwrap());
}

#[test]
fn default_config_encodes_the_schedule() {
    let text = String::from_utf8(ok(&["config"]).stdout).unwrap();
    for line in ["iterations = 1200", "init_points = 5000", "densify_interval = 50", "perceptual = 10.0", "ssim = 0.2", "mask = 1.0"] {
        assert!(text.lines().any(|l| l.trim() == line), "missing {line:?} in\n{text}");
    }
    let with_schedule = String::from_utf8(ok(&["config", "--schedule"]).stdout).unwrap();
    assert!(with_schedule.contains("rounds = 2"));
    assert!(with_schedule.contains("trigger_every = 500"));
}

#[test]
fn missing_cameras_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnsplat(&["fit", p(dir.path()), "--out", p(&dir.path().join("x.ply"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cameras.json"), "{err}");
    assert!(!dir.path().join("x.ply").exists());
}

#[test]
fn zero_iterations_writes_the_initial_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small_synth(dir.path(), &[]);
    let splat = dir.path().join("init.ply");
    ok(&["fit", p(&exp.join("train")), "--iterations", "0", "--init-points", "300", "--out", p(&splat)]);
    let views = load_view_set(&exp.join("train")).unwrap();
    let cfg = FitConfig {
        iterations: 0,
        init_points: 300,
        extent: Some(rig_extent(&views.rig).unwrap()),
        ..FitConfig::default()
    };
    assert_eq!(load_splats(&splat).unwrap(), init_cloud(&cfg));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small_synth(dir.path(), &[]);
    let cfg = dir.path().join("fit.toml");
    std::fs::write(&cfg, "iterations = 7\nseed = 3\ninit_points = 100\n[loss]\nssim = 0.5\n").unwrap();
    let report = dir.path().join("report.json");
    ok(&[
        "fit",
        p(&exp.join("train")),
        "--config",
        p(&cfg),
        "--iterations",
        "9",
        "--out",
        p(&dir.path().join("c.ply")),
        "--report",
        p(&report),
    ]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["config"]["iterations"], 9);
    assert_eq!(r["config"]["seed"], 3);
    assert_eq!(r["config"]["loss"]["ssim"], 0.5);
    assert_eq!(r["config"]["loss"]["perceptual"], 10.0);
    assert_eq!(r["loss_trace"].as_array().unwrap().len(), 9);
    assert!(r["config"]["extent"].as_f64().unwrap() > 0.0);
}

#[test]
fn render_of_reloaded_cloud_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small_synth(dir.path(), &[]);
    let cloud = load_splats(&exp.join("scene.ply")).unwrap();
    let again = dir.path().join("again.ply");
    save_splats(&cloud, &again).unwrap();
    let reloaded = load_splats(&again).unwrap();
    let views = load_view_set(&exp.join("train")).unwrap();
    let s = RasterSettings::default();
    for cam in &views.rig.cameras {
        let a = render::<f32>(&cloud, cam, [1.0; 3], &s).unwrap();
        let b = render::<f32>(&reloaded, cam, [1.0; 3], &s).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.alpha, b.alpha);
    }
    // The CLI render of the saved ground-truth cloud reproduces the synthesized PNGs.
    let out = dir.path().join("render");
    ok(&["render", p(&exp.join("scene.ply")), "--cameras", p(&exp.join("train")), "--out", p(&out)]);
    for k in 0..8 {
        let name = format!("view_{k:03}.png");
        assert_eq!(std::fs::read(out.join(&name)).unwrap(), std::fs::read(exp.join("train").join(&name)).unwrap());
    }
    let from_file = dir.path().join("render2");
    ok(&["render", p(&again), "--cameras", p(&exp.join("train/cameras.json")), "--out", p(&from_file)]);
    assert_eq!(load_view_set(&from_file).unwrap().len(), 8);
}

#[test]
fn eval_emits_one_entry_per_view() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small_synth(dir.path(), &[]);
    let json = dir.path().join("m.json");
    let out = ok(&["eval", p(&exp.join("scene.ply")), "--heldout", p(&exp.join("heldout")), "--out", p(&json)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean"));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(m["per_view"].as_array().unwrap().len(), 8);
    // The ground-truth cloud reproduces its own renders exactly up to 8-bit rounding.
    assert!(m["mean_psnr"].as_f64().is_none_or(|v| v > 45.0), "{}", m["mean_psnr"]);
}

#[test]
fn mesh_of_a_single_gaussian_is_a_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let splat = dir.path().join("one.ply");
    let cloud = GaussianCloud::from_gaussians(vec![Gaussian::isotropic([0.0; 3], 0.5, 0.9, [0.3, 0.6, 0.9])], 1.0);
    save_splats(&cloud, &splat).unwrap();
    for name in ["m.obj", "m.ply"] {
        let out = dir.path().join(name);
        ok(&["mesh", p(&splat), "--resolution", "64", "--iso", "0.3", "--out", p(&out)]);
        let mesh = import_mesh(&out).unwrap();
        let r: Vec<f64> = mesh.vertices.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
        assert!(sd / mean < 0.02, "{name}: cv {}", sd / mean);
        assert!(mesh.signed_volume() > 0.0);
    }
    assert!(!turnsplat(&["mesh", p(&splat), "--out", p(&dir.path().join("m.stl"))]).status.success());
}

#[test]
fn exec_refiner_round_trips_identity_command() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small_synth(dir.path(), &[]);
    let work = dir.path().join("work");
    let report = dir.path().join("r.json");
    let final_views = dir.path().join("final");
    ok(&[
        "refine",
        p(&exp.join("train")),
        "--refiner",
        r#"exec:cp "$1"/view_*.png "$2"/"#,
        "--iterations",
        "10",
        "--init-points",
        "100",
        "--rounds",
        "1",
        "--trigger-every",
        "5",
        "--sigma-t",
        "0",
        "--workdir",
        p(&work),
        "--out",
        p(&dir.path().join("c.ply")),
        "--report",
        p(&report),
        "--views-out",
        p(&final_views),
    ]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["rounds"].as_array().unwrap().len(), 1);
    assert_eq!(r["schedule"]["rounds"], 1);
    assert_eq!(r["fit"]["config"]["iterations"], 10);
    // With no noise the refined targets are the renders the command copied back.
    let sent = load_view_set(&work.join("round_1/in")).unwrap();
    let got = load_view_set(&final_views).unwrap();
    assert_eq!(sent.images, got.images);
}

#[test]
fn oracle_refiner_with_heldout_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small_synth(dir.path(), &["--pose-jitter", "0.02"]);
    let report = dir.path().join("r.json");
    let spec = format!("oracle:{}:1", p(&exp.join("train")));
    ok(&[
        "refine",
        p(&exp.join("inconsistent")),
        "--refiner",
        &spec,
        "--iterations",
        "20",
        "--init-points",
        "100",
        "--trigger-every",
        "8",
        "--heldout",
        p(&exp.join("heldout")),
        "--out",
        p(&dir.path().join("c.ply")),
        "--report",
        p(&report),
    ]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(r["heldout"].as_array().unwrap().len(), 3);
}

#[test]
fn bad_refiner_specs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small_synth(dir.path(), &[]);
    let out = p(&exp.join("x.ply")).to_string();
    for spec in ["magic", "oracle:/nonexistent:1", "exec:"] {
        let o = turnsplat(&["refine", p(&exp.join("train")), "--refiner", spec, "--iterations", "10", "--trigger-every", "2", "--out", &out]);
        assert!(!o.status.success(), "{spec}");
    }
    let o = turnsplat(&["refine", p(&exp.join("train")), "--refiner", "exec:exit 1", "--iterations", "10", "--trigger-every", "2", "--init-points", "50", "--out", &out]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("round 1"));
}
