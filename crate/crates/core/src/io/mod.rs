//! On-disk formats: splat PLY files and view-set directories.

pub mod ply;

use std::path::{Path, PathBuf};

use crate::error::{format_err, Error, Result};
use crate::image::{load_png, save_png, BitDepth};
use crate::scene::{CameraRig, Conditioning, Gaussian, GaussianCloud, ViewSet};
use ply::{Element, PlyFile, Property, Scalar, Value};

const SPLAT_PROPS: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "f_dc_0", "f_dc_1",
    "f_dc_2",
];

/// Save a cloud as a binary little-endian PLY.
///
/// Every property is written as `double`, so a save/load round trip is exact.
/// `scale_*` hold log-scales, `rot_*` the quaternion `(w, x, y, z)`, `opacity`
/// the logit and `f_dc_*` the RGB color. The extent goes into a header comment.
pub fn save_splats(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let props = SPLAT_PROPS.iter().map(|n| Property::Scalar(n.to_string(), Scalar::F64)).collect();
    let mut vertex = Element::new("vertex", props);
    vertex.rows = cloud
        .gaussians()
        .iter()
        .map(|g| {
            let mut row = Vec::with_capacity(14);
            row.extend(g.mean);
            row.extend(g.log_scale);
            row.extend(g.rotation);
            row.push(g.opacity_logit);
            row.extend(g.color);
            row.into_iter().map(Value::Scalar).collect()
        })
        .collect();
    let file = PlyFile {
        comments: vec![format!("extent {:e}", cloud.extent)],
        elements: vec![vertex],
    };
    ply::write(path, &file)
}

/// Load a splat PLY. Float or double properties are accepted; a missing
/// extent comment falls back to the largest mean norm.
pub fn load_splats(path: &Path) -> Result<GaussianCloud> {
    let file = ply::read(path)?;
    let vertex = file.element("vertex").ok_or_else(|| format_err(path, "no vertex element"))?;
    let cols = SPLAT_PROPS
        .iter()
        .map(|n| vertex.column(n).ok_or_else(|| format_err(path, format!("vertex has no {n} property"))))
        .collect::<Result<Vec<_>>>()?;
    let gaussians: Vec<Gaussian> = vertex
        .rows
        .iter()
        .map(|row| {
            let v = |k: usize| Element::scalar(row, cols[k]);
            Gaussian {
                mean: [v(0), v(1), v(2)],
                log_scale: [v(3), v(4), v(5)],
                rotation: [v(6), v(7), v(8), v(9)],
                opacity_logit: v(10),
                color: [v(11), v(12), v(13)],
            }
        })
        .collect();
    if let Some(i) = gaussians.iter().position(|g| !g.is_finite()) {
        return Err(format_err(path, format!("gaussian {i} has a non-finite value")));
    }
    let extent = file
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("extent ").and_then(|v| v.trim().parse::<f64>().ok()));
    let extent = extent.unwrap_or_else(|| {
        gaussians
            .iter()
            .map(|g| g.mean.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    });
    Ok(GaussianCloud::from_gaussians(gaussians, extent))
}

/// Parse a TOML (`.toml`) or JSON (anything else) document.
pub fn load_document<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
    }
}

pub fn view_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("view_{k:03}.png"))
}

pub fn mask_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("mask_{k:03}.png"))
}

/// Write a view set as `view_%03d.png`, optional `mask_%03d.png`,
/// `cameras.json` (the rig) and `meta.json` (the conditioning).
pub fn save_view_set(views: &ViewSet, dir: &Path, depth: BitDepth) -> Result<()> {
    views.validate()?;
    std::fs::create_dir_all(dir)?;
    for (k, img) in views.images.iter().enumerate() {
        save_png(img, &view_path(dir, k), depth)?;
    }
    if let Some(masks) = &views.masks {
        for (k, m) in masks.iter().enumerate() {
            save_png(m, &mask_path(dir, k), depth)?;
        }
    }
    std::fs::write(dir.join("cameras.json"), views.rig.to_json()?)?;
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&views.conditioning)?)?;
    Ok(())
}

fn count_indexed(dir: &Path, prefix: &str) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(num) = name.strip_prefix(prefix).and_then(|s| s.strip_suffix(".png")) {
            if let Ok(k) = num.parse::<usize>() {
                idx.push(k);
            }
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Read a directory written by [`save_view_set`].
///
/// Image indices must be dense from 0 and match the camera count; masks are
/// either all present or all absent; `meta.json` is optional.
pub fn load_view_set(dir: &Path) -> Result<ViewSet> {
    let cams = dir.join("cameras.json");
    if !cams.is_file() {
        return Err(format_err(&cams, "missing cameras.json"));
    }
    let rig = CameraRig::from_json(&std::fs::read_to_string(&cams)?).map_err(|e| match e {
        Error::Json(j) => format_err(&cams, j.to_string()),
        other => other,
    })?;
    let k = rig.len();
    let views = count_indexed(dir, "view_")?;
    if views != (0..k).collect::<Vec<_>>() {
        return Err(format_err(
            dir,
            format!("expected view_000..view_{:03}.png for {k} cameras, found {} views", k.saturating_sub(1), views.len()),
        ));
    }
    let images = (0..k).map(|i| load_png::<f32>(&view_path(dir, i), 3)).collect::<Result<Vec<_>>>()?;
    let masks = count_indexed(dir, "mask_")?;
    let masks = if masks.is_empty() {
        None
    } else if masks == (0..k).collect::<Vec<_>>() {
        Some((0..k).map(|i| load_png::<f32>(&mask_path(dir, i), 1)).collect::<Result<Vec<_>>>()?)
    } else {
        return Err(format_err(dir, format!("masks must cover all {k} views")));
    };
    let meta = dir.join("meta.json");
    let conditioning: Conditioning = if meta.is_file() {
        serde_json::from_str(&std::fs::read_to_string(&meta)?).map_err(|e| format_err(&meta, e.to_string()))?
    } else {
        Conditioning::default()
    };
    ViewSet::new(images, masks, rig, conditioning)
}
