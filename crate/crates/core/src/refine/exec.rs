//! Refiner that runs an external program over a directory exchange.
//!
//! For round `r` the refiner writes `<workdir>/round_<r>/in/` containing
//!
//! * `view_%03d.png`: noised views rescaled by `1/√(1−σ²)` and clamped,
//! * `noised_%03d.f32`: the raw noised views, little-endian `f32`, row-major `H×W×3`,
//! * `cameras.json`, `meta.json`: rig and conditioning, as in a view-set directory,
//! * `request.json`: round, sigma_t, steps, seed, view count and size.
//!
//! It then runs `sh -c <command> turnsplat-refiner <in> <out>`, so the command
//! sees the two directories as `$1` and `$2`, and reads `view_%03d.png` back
//! from `<out>`.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;

use super::{rescale_noised, RefineRequest, ViewRefiner};
use crate::error::{Error, Result};
use crate::image::{load_png, save_png, BitDepth, Image};
use crate::io::view_path;
use crate::scene::Conditioning;

pub struct ExecRefiner {
    pub command: String,
    pub workdir: PathBuf,
    pub depth: BitDepth,
}

#[derive(Serialize)]
struct Request<'a> {
    round: usize,
    sigma_t: f64,
    steps: usize,
    seed: u64,
    views: usize,
    width: usize,
    height: usize,
    conditioning: &'a Conditioning,
}

impl ExecRefiner {
    pub fn new(command: impl Into<String>, workdir: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
            workdir: workdir.into(),
            depth: BitDepth::Eight,
        }
    }

    fn write_inputs(&self, req: &RefineRequest<'_>, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, img) in req.noised.iter().enumerate() {
            save_png(&rescale_noised(img, req.sigma_t), &view_path(dir, k), self.depth)?;
            let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            std::fs::write(dir.join(format!("noised_{k:03}.f32")), bytes)?;
        }
        let (w, h) = req.noised.first().map(|i| (i.width(), i.height())).unwrap_or((0, 0));
        let request = Request {
            round: req.round,
            sigma_t: req.sigma_t,
            steps: req.steps,
            seed: req.seed,
            views: req.noised.len(),
            width: w,
            height: h,
            conditioning: req.conditioning,
        };
        std::fs::write(dir.join("request.json"), serde_json::to_string_pretty(&request)?)?;
        std::fs::write(dir.join("cameras.json"), req.rig.to_json()?)?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(req.conditioning)?)?;
        Ok(())
    }
}

impl ViewRefiner for ExecRefiner {
    fn refine(&mut self, req: &RefineRequest<'_>) -> Result<Vec<Image<f32>>> {
        let fail = |message: String| Error::Refiner {
            round: req.round,
            message,
        };
        let base = self.workdir.join(format!("round_{}", req.round));
        let (input, output) = (base.join("in"), base.join("out"));
        if base.exists() {
            std::fs::remove_dir_all(&base)?;
        }
        self.write_inputs(req, &input)?;
        std::fs::create_dir_all(&output)?;
        let status = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .arg("turnsplat-refiner")
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| fail(format!("could not start {:?}: {e}", self.command)))?;
        if !status.success() {
            return Err(fail(format!("{:?} exited with {status}", self.command)));
        }
        (0..req.noised.len())
            .map(|k| {
                let p = view_path(&output, k);
                if !p.is_file() {
                    return Err(fail(format!("missing {}", p.display())));
                }
                load_png::<f32>(&p, 3).map_err(|e| fail(e.to_string()))
            })
            .collect()
    }
}
