use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::Mesh;
use crate::error::{format_err, param, Error, Result};
use crate::io::ply::{self, Element, Property, Scalar, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| param("mesh path needs an .obj or .ply extension"))?
            .parse()
    }
}

impl FromStr for MeshFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            _ => Err(param(format!("unknown mesh format {s:?}"))),
        }
    }
}

/// Write `mesh`.
///
/// OBJ: one `v x y z [r g b]` line per vertex, then one 1-based `f a b c` line
/// per triangle. PLY: binary little-endian, element `vertex` with float
/// `x y z` (plus uchar `red green blue` when colored), then element `face` with
/// `list uchar int vertex_indices`.
pub fn export_mesh(mesh: &Mesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    match format {
        MeshFormat::Obj => {
            let mut s = String::new();
            for (i, v) in mesh.vertices.iter().enumerate() {
                match &mesh.colors {
                    Some(c) => {
                        let c = c[i];
                        let _ = writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]);
                    }
                    None => {
                        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
                    }
                }
            }
            for t in &mesh.triangles {
                let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
            }
            std::fs::write(path, s)?;
        }
        MeshFormat::Ply => {
            let mut props = vec![
                Property::Scalar("x".into(), Scalar::F32),
                Property::Scalar("y".into(), Scalar::F32),
                Property::Scalar("z".into(), Scalar::F32),
            ];
            if mesh.colors.is_some() {
                for n in ["red", "green", "blue"] {
                    props.push(Property::Scalar(n.into(), Scalar::U8));
                }
            }
            let mut verts = Element::new("vertex", props);
            for (i, v) in mesh.vertices.iter().enumerate() {
                let mut row: Vec<Value> = v.iter().map(|&x| Value::Scalar(x)).collect();
                if let Some(c) = &mesh.colors {
                    row.extend(c[i].iter().map(|&x| Value::Scalar((x.clamp(0.0, 1.0) * 255.0).round())));
                }
                verts.rows.push(row);
            }
            let mut faces = Element::new("face", vec![Property::List("vertex_indices".into(), Scalar::U8, Scalar::I32)]);
            for t in &mesh.triangles {
                faces.rows.push(vec![Value::List(t.iter().map(|&i| i as f64).collect())]);
            }
            ply::write(
                path,
                &ply::PlyFile {
                    comments: Vec::new(),
                    elements: vec![verts, faces],
                },
            )?;
        }
    }
    Ok(())
}

/// Read a mesh written by [`export_mesh`] (or any triangle OBJ / PLY).
pub fn import_mesh(path: &Path) -> Result<Mesh> {
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => import_obj(path),
        MeshFormat::Ply => import_ply(path),
    }
}

fn import_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    let bad = |l: usize, m: &str| format_err(path, format!("line {}: {m}", l + 1));
    let mut mesh = Mesh::default();
    let mut colors = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let nums: Vec<f64> = tok.map(|t| t.parse().map_err(|_| bad(ln, "bad number"))).collect::<Result<_>>()?;
                if nums.len() < 3 {
                    return Err(bad(ln, "vertex needs 3 coordinates"));
                }
                mesh.vertices.push([nums[0], nums[1], nums[2]]);
                if nums.len() >= 6 {
                    colors.push([nums[3], nums[4], nums[5]]);
                }
            }
            Some("f") => {
                let idx: Vec<u32> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        first.parse::<u32>().ok().filter(|&i| i >= 1).map(|i| i - 1).ok_or_else(|| bad(ln, "bad face index"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad(ln, "face needs 3 indices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if !colors.is_empty() && colors.len() == mesh.vertices.len() {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

fn import_ply(path: &Path) -> Result<Mesh> {
    let file = ply::read(path)?;
    let bad = |m: &str| format_err(path, m.to_string());
    let verts = file.element("vertex").ok_or_else(|| bad("no vertex element"))?;
    let col = |n: &str| verts.column(n).ok_or_else(|| bad(&format!("vertex has no {n}")));
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let rgb = match (verts.column("red"), verts.column("green"), verts.column("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let mut mesh = Mesh::default();
    let mut colors = Vec::new();
    for row in &verts.rows {
        mesh.vertices.push([x, y, z].map(|i| Element::scalar(row, i)));
        if let Some(c) = rgb {
            colors.push(c.map(|i| Element::scalar(row, i) / 255.0));
        }
    }
    if rgb.is_some() {
        mesh.colors = Some(colors);
    }
    if let Some(faces) = file.element("face") {
        let c = faces
            .column("vertex_indices")
            .or_else(|| faces.column("vertex_index"))
            .ok_or_else(|| bad("face has no vertex_indices"))?;
        for row in &faces.rows {
            let Value::List(idx) = &row[c] else {
                return Err(bad("vertex_indices is not a list"));
            };
            for k in 1..idx.len().saturating_sub(1) {
                mesh.triangles.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
            }
        }
    }
    Ok(mesh)
}
