//! `turnsplat` subcommands. Every command reads its inputs, writes all of its
//! outputs and returns; the binary maps errors to a nonzero exit code.
//!
//! Configuration precedence is built-in defaults, then a config file, then
//! command-line flags. The effective configuration is echoed into each report.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use turnsplat::fit::{fit, FitConfig};
use turnsplat::image::BitDepth;
use turnsplat::io::{load_document, load_splats, load_view_set, save_splats, save_view_set};
use turnsplat::meshing::{export_mesh, marching_cubes, MeshFormat, DEFAULT_ISO};
use turnsplat::refine::{oracle_refiner, refine_loop, render_rig, ExecRefiner, RefineSchedule, ViewRefiner};
use turnsplat::scene::{CameraRig, Conditioning};
use turnsplat::synth::{evaluate, run_experiment, ExperimentDescriptor, InconsistencySpec, SceneKind};

#[derive(Parser, Debug)]
#[command(name = "turnsplat", version, about = "Turn-table multiview reconstruction with Gaussian splatting")]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic scene into clean, inconsistent and held-out view sets.
    Synth(SynthArgs),
    /// Fit a Gaussian cloud to a view-set directory.
    Fit(FitArgs),
    /// Fit with periodic view refinement.
    Refine(RefineArgs),
    /// Render a splat file at a rig.
    Render(RenderArgs),
    /// Score a splat file against held-out views.
    Eval(EvalArgs),
    /// Extract a triangle mesh from a splat file.
    Mesh(MeshArgs),
    /// Print the effective fit configuration (and refine schedule) as TOML.
    Config(ConfigArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Experiment descriptor (TOML or JSON).
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Output directory; receives train/, inconsistent/, heldout/, scene.ply and experiment.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scene: Option<SceneKind>,
    #[arg(long)]
    pub detail: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Square image size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub elevation: Option<f64>,
    #[arg(long)]
    pub pose_jitter: Option<f64>,
    #[arg(long)]
    pub translation_jitter: Option<f64>,
    #[arg(long)]
    pub color_gain_jitter: Option<f64>,
    #[arg(long)]
    pub jitter_seed: Option<u64>,
    /// Skip the held-out set.
    #[arg(long)]
    pub no_heldout: bool,
    /// Write 16-bit PNGs.
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct FitFlags {
    /// Fit configuration file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub init_points: Option<usize>,
    #[arg(long)]
    pub densify_interval: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub w_perceptual: Option<f64>,
    #[arg(long)]
    pub w_ssim: Option<f64>,
    #[arg(long)]
    pub w_mask: Option<f64>,
    #[arg(long)]
    pub w_rgb: Option<f64>,
    /// Background color as `r,g,b` or a single gray value.
    #[arg(long, value_parser = parse_color)]
    pub background: Option<[f64; 3]>,
}

impl FitFlags {
    pub fn resolve(&self) -> Result<FitConfig> {
        let mut c = match &self.config {
            Some(p) => FitConfig::load(p)?,
            None => FitConfig::default(),
        };
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.init_points {
            c.init_points = v;
        }
        if let Some(v) = self.densify_interval {
            c.densify_interval = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.w_perceptual {
            c.loss.perceptual = v;
        }
        if let Some(v) = self.w_ssim {
            c.loss.ssim = v;
        }
        if let Some(v) = self.w_mask {
            c.loss.mask = v;
        }
        if let Some(v) = self.w_rgb {
            c.loss.rgb = v;
        }
        if let Some(v) = self.background {
            c.background = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// View-set directory (view_%03d.png, cameras.json, ...).
    pub views: PathBuf,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Output splat file.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    pub views: PathBuf,
    /// `oracle:<ground-truth-dir>:<beta>` or `exec:<shell command>`.
    #[arg(long)]
    pub refiner: String,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Refine schedule file (TOML or JSON).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub refiner_steps: Option<usize>,
    #[arg(long)]
    pub trigger_every: Option<usize>,
    /// Noise level; repeat or comma-separate for per-round values.
    #[arg(long, value_delimiter = ',')]
    pub sigma_t: Option<Vec<f64>>,
    /// Held-out view set scored before each round and at the end.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Scratch directory for exec refiners.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the final target views here.
    #[arg(long)]
    pub views_out: Option<PathBuf>,
}

impl RefineArgs {
    pub fn schedule(&self) -> Result<RefineSchedule> {
        let mut s: RefineSchedule = match &self.schedule {
            Some(p) => load_document(p)?,
            None => RefineSchedule::default(),
        };
        if let Some(v) = self.rounds {
            s.rounds = v;
        }
        if let Some(v) = self.refiner_steps {
            s.refiner_steps = v;
        }
        if let Some(v) = self.trigger_every {
            s.trigger_every = v;
        }
        if let Some(v) = &self.sigma_t {
            s.sigma_t = v.clone();
        }
        Ok(s)
    }
}

#[derive(Args, Debug, Clone)]
pub struct RenderArgs {
    pub splat: PathBuf,
    /// A cameras.json file or a view-set directory containing one.
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_color, default_value = "1")]
    pub background: [f64; 3],
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    pub splat: PathBuf,
    #[arg(long)]
    pub heldout: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_color, default_value = "1")]
    pub background: [f64; 3],
}

#[derive(Args, Debug, Clone)]
pub struct MeshArgs {
    pub splat: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, default_value_t = DEFAULT_ISO)]
    pub iso: f64,
    /// Output mesh; the format follows the extension unless --format is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<MeshFormat>,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub fit: FitFlags,
    /// Also print the default refine schedule.
    #[arg(long)]
    pub schedule: bool,
}

pub fn parse_color(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [g] => Ok([*g; 3]),
        [r, g, b] => Ok([*r, *g, *b]),
        _ => Err("expected one value or r,g,b".into()),
    }
}

fn depth(sixteen: bool) -> BitDepth {
    if sixteen {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

fn write_json(path: &Path, json: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

fn load_views(dir: &Path) -> Result<turnsplat::scene::ViewSet> {
    load_view_set(dir).with_context(|| format!("loading view set {}", dir.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::Refine(a) => refine_cmd(&a),
        Command::Render(a) => render_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Mesh(a) => mesh_cmd(&a),
        Command::Config(a) => {
            print!("{}", a.fit.resolve()?.to_toml());
            if a.schedule {
                println!("\n# refine schedule\n{}", toml::to_string_pretty(&RefineSchedule::default())?);
            }
            Ok(())
        }
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut d: ExperimentDescriptor = match &a.descriptor {
        Some(p) => load_document(p)?,
        None => ExperimentDescriptor::default(),
    };
    if let Some(v) = a.scene {
        d.scene = v;
    }
    if let Some(v) = a.detail {
        d.detail = v;
    }
    if let Some(v) = a.seed {
        d.seed = v;
    }
    if let Some(v) = a.views {
        d.rig.views = v;
    }
    if let Some(v) = a.size {
        d.rig.width = v;
        d.rig.height = v;
    }
    if let Some(v) = a.elevation {
        d.rig.elevation = v;
    }
    let touches_jitter = a.pose_jitter.is_some()
        || a.translation_jitter.is_some()
        || a.color_gain_jitter.is_some()
        || a.jitter_seed.is_some();
    if touches_jitter {
        let spec = d.inconsistency.get_or_insert_with(InconsistencySpec::default);
        if let Some(v) = a.pose_jitter {
            spec.pose_jitter = v;
        }
        if let Some(v) = a.translation_jitter {
            spec.translation_jitter = v;
        }
        if let Some(v) = a.color_gain_jitter {
            spec.color_gain_jitter = v;
        }
        if let Some(v) = a.jitter_seed {
            spec.seed = v;
        }
    }
    if a.no_heldout {
        d.heldout = false;
    }
    let ex = run_experiment(&d)?;
    let bits = depth(a.sixteen_bit);
    std::fs::create_dir_all(&a.out)?;
    save_view_set(&ex.clean, &a.out.join("train"), bits)?;
    if let Some(v) = &ex.inconsistent {
        save_view_set(v, &a.out.join("inconsistent"), bits)?;
    }
    if let Some(v) = &ex.heldout {
        save_view_set(v, &a.out.join("heldout"), bits)?;
    }
    save_splats(&ex.scene, &a.out.join("scene.ply"))?;
    write_json(&a.out.join("experiment.json"), &serde_json::to_string_pretty(&d)?)?;
    log::info!("wrote {} views to {}", ex.clean.len(), a.out.display());
    Ok(())
}

pub fn fit_cmd(a: &FitArgs) -> Result<()> {
    let views = load_views(&a.views)?;
    let cfg = a.fit.resolve()?;
    let (cloud, report) = fit(&views, &cfg)?;
    save_splats(&cloud, &a.out)?;
    if let Some(r) = &a.report {
        write_json(r, &report.to_json()?)?;
    }
    log::info!("fitted {} gaussians in {:.1}s", cloud.len(), report.timings.total_seconds);
    Ok(())
}

/// Parse `oracle:<dir>:<beta>` or `exec:<command>`.
pub fn make_refiner(spec: &str, workdir: &Path) -> Result<Box<dyn ViewRefiner>> {
    if let Some(rest) = spec.strip_prefix("oracle:") {
        let (dir, beta) = rest.rsplit_once(':').context("oracle refiner needs oracle:<dir>:<beta>")?;
        let beta: f64 = beta.parse().with_context(|| format!("bad beta {beta:?}"))?;
        let gt = load_views(Path::new(dir))?;
        return Ok(Box::new(oracle_refiner(&gt, beta)?));
    }
    if let Some(cmd) = spec.strip_prefix("exec:") {
        if cmd.trim().is_empty() {
            bail!("exec refiner needs a command");
        }
        return Ok(Box::new(ExecRefiner::new(cmd, workdir)));
    }
    bail!("unknown refiner {spec:?}; expected oracle:<dir>:<beta> or exec:<command>")
}

pub fn refine_cmd(a: &RefineArgs) -> Result<()> {
    let views = load_views(&a.views)?;
    let cfg = a.fit.resolve()?;
    let schedule = a.schedule()?;
    schedule.validate(cfg.iterations)?;
    let workdir = a
        .workdir
        .clone()
        .unwrap_or_else(|| a.out.with_extension("refine"));
    let mut refiner = make_refiner(&a.refiner, &workdir)?;
    let heldout = a.heldout.as_deref().map(load_views).transpose()?;
    let (cloud, final_views, report) = refine_loop(&views, refiner.as_mut(), &cfg, &schedule, heldout.as_ref())?;
    save_splats(&cloud, &a.out)?;
    if let Some(dir) = &a.views_out {
        save_view_set(&final_views, dir, BitDepth::Eight)?;
    }
    if let Some(r) = &a.report {
        write_json(r, &report.to_json()?)?;
    }
    Ok(())
}

fn load_rig(path: &Path) -> Result<(CameraRig, Conditioning)> {
    let (cams, meta) = if path.is_dir() {
        (path.join("cameras.json"), Some(path.join("meta.json")))
    } else {
        (path.to_path_buf(), None)
    };
    let text = std::fs::read_to_string(&cams).with_context(|| format!("reading {}", cams.display()))?;
    let rig = CameraRig::from_json(&text).with_context(|| format!("parsing {}", cams.display()))?;
    let cond = match meta.filter(|m| m.is_file()) {
        Some(m) => serde_json::from_str(&std::fs::read_to_string(&m)?)?,
        None => Conditioning::with_elevation(rig.elevation),
    };
    Ok((rig, cond))
}

pub fn render_cmd(a: &RenderArgs) -> Result<()> {
    let cloud = load_splats(&a.splat)?;
    let (rig, cond) = load_rig(&a.cameras)?;
    let views = render_rig(&cloud, &rig, a.background, &cond)?;
    save_view_set(&views, &a.out, depth(a.sixteen_bit))?;
    Ok(())
}

pub fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let cloud = load_splats(&a.splat)?;
    let held = load_views(&a.heldout)?;
    let metrics = evaluate(&cloud, &held, a.background)?;
    print!("{}", metrics.table());
    if let Some(p) = &a.out {
        write_json(p, &metrics.to_json()?)?;
    }
    Ok(())
}

pub fn mesh_cmd(a: &MeshArgs) -> Result<()> {
    let cloud = load_splats(&a.splat)?;
    let format = match a.format {
        Some(f) => f,
        None => MeshFormat::from_path(&a.out)?,
    };
    let mesh = marching_cubes(&cloud, a.resolution, a.iso)?;
    export_mesh(&mesh, &a.out, format)?;
    log::info!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    Ok(())
}
