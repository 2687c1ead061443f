//! Density-field meshing of a Gaussian cloud.

mod export;
mod table;

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

pub use export::{export_mesh, import_mesh, MeshFormat};
pub use table::case_table;

use crate::error::{param, Result};
use crate::scene::GaussianCloud;

/// Support of each Gaussian in standard deviations.
pub const CUTOFF_SIGMA: f64 = 3.0;
pub const DEFAULT_ISO: f64 = 0.3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0] - b[0], a[1] - b[1], a[2] - b[2])
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Every index in range and every triangle of nonzero area.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(param("triangle index out of range"));
            }
            if self.triangle_area(t) == 0.0 {
                return Err(param("degenerate triangle"));
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != self.vertices.len() {
                return Err(param("color count differs from vertex count"));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * sub(b, a).cross(&sub(c, a)).norm()
    }

    /// Volume enclosed by the surface, positive for outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| Vector3::from(self.vertices[i as usize]));
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Largest number of triangles sharing one undirected edge.
    pub fn max_edge_valence(&self) -> usize {
        let mut count: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().copied().max().unwrap_or(0)
    }
}

struct Prepared {
    mean: Vector3<f64>,
    inv_cov: Matrix3<f64>,
    opacity: f64,
    color: [f64; 3],
    half_box: Vector3<f64>,
}

/// Opacity-weighted sum of Gaussians, truncated at [`CUTOFF_SIGMA`], with a
/// uniform-grid lookup.
pub struct DensityField {
    items: Vec<Prepared>,
    lo: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl DensityField {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let items: Vec<Prepared> = cloud
            .gaussians()
            .iter()
            .filter_map(|g| {
                let cov = g.covariance();
                let inv_cov = cov.try_inverse()?;
                let half_box = Vector3::new(cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()) * CUTOFF_SIGMA;
                Some(Prepared {
                    mean: g.mean_vec(),
                    inv_cov,
                    opacity: g.opacity(),
                    color: g.color,
                    half_box,
                })
            })
            .collect();
        if items.is_empty() {
            return Self {
                items,
                lo: Vector3::zeros(),
                cell: 1.0,
                dims: [0; 3],
                cells: Vec::new(),
            };
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let mut sizes: Vec<f64> = Vec::with_capacity(items.len());
        for it in &items {
            lo = lo.inf(&(it.mean - it.half_box));
            hi = hi.sup(&(it.mean + it.half_box));
            sizes.push(it.half_box.max());
        }
        sizes.sort_by(f64::total_cmp);
        let span = (hi - lo).max().max(1e-12);
        let cell = sizes[sizes.len() / 2].max(span / 96.0);
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, it) in items.iter().enumerate() {
            let a = Self::coord(lo, cell, dims, &(it.mean - it.half_box));
            let b = Self::coord(lo, cell, dims, &(it.mean + it.half_box));
            for z in a[2]..=b[2] {
                for y in a[1]..=b[1] {
                    for x in a[0]..=b[0] {
                        cells[(z * dims[1] + y) * dims[0] + x].push(i as u32);
                    }
                }
            }
        }
        Self {
            items,
            lo,
            cell,
            dims,
            cells,
        }
    }

    fn coord(lo: Vector3<f64>, cell: f64, dims: [usize; 3], p: &Vector3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor().max(0.0) as usize).min(dims[a] - 1))
    }

    fn candidates(&self, p: &Vector3<f64>) -> &[u32] {
        if self.cells.is_empty() {
            return &[];
        }
        for a in 0..3 {
            let rel = (p[a] - self.lo[a]) / self.cell;
            if rel < 0.0 || rel >= self.dims[a] as f64 {
                return &[];
            }
        }
        let c = Self::coord(self.lo, self.cell, self.dims, p);
        &self.cells[(c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]]
    }

    fn contribution(it: &Prepared, p: &Vector3<f64>) -> Option<f64> {
        let d = p - it.mean;
        let m2 = d.dot(&(it.inv_cov * d));
        (m2 <= CUTOFF_SIGMA * CUTOFF_SIGMA).then(|| it.opacity * (-0.5 * m2).exp())
    }

    pub fn density(&self, p: &Vector3<f64>) -> f64 {
        self.candidates(p)
            .iter()
            .filter_map(|&i| Self::contribution(&self.items[i as usize], p))
            .sum()
    }

    /// Color of the Gaussian contributing most at `p`, or of the nearest mean.
    pub fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        let best = self
            .candidates(p)
            .iter()
            .filter_map(|&i| Self::contribution(&self.items[i as usize], p).map(|c| (c, i)))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        if let Some((_, i)) = best {
            return self.items[i as usize].color;
        }
        self.items
            .iter()
            .min_by(|a, b| (a.mean - p).norm_squared().total_cmp(&(b.mean - p).norm_squared()))
            .map(|it| it.color)
            .unwrap_or([0.5; 3])
    }

    /// Axis-aligned box containing every Gaussian's support.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        if self.items.is_empty() {
            return None;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for it in &self.items {
            lo = lo.inf(&(it.mean - it.half_box));
            hi = hi.sup(&(it.mean + it.half_box));
        }
        Some((lo, hi))
    }
}

/// Density at one point (builds a throwaway accelerator).
pub fn density_at(cloud: &GaussianCloud, p: [f64; 3]) -> f64 {
    DensityField::new(cloud).density(&Vector3::from(p))
}

/// Exact, untruncated density; the reference for the accelerated field.
pub fn density_exact(cloud: &GaussianCloud, p: [f64; 3]) -> f64 {
    let p = Vector3::from(p);
    cloud
        .gaussians()
        .iter()
        .filter_map(|g| {
            let inv = g.covariance().try_inverse()?;
            let d = p - g.mean_vec();
            Some(g.opacity() * (-0.5 * d.dot(&(inv * d))).exp())
        })
        .sum()
}

/// Marching cubes over the density on a cube grid of `grid_resolution` cells
/// per axis bounding the cloud. Triangles are emitted slab by slab in z, then
/// y, x and case-table order; vertices are numbered on first use.
pub fn marching_cubes(cloud: &GaussianCloud, grid_resolution: usize, iso: f64) -> Result<Mesh> {
    if grid_resolution < 2 {
        return Err(param("grid_resolution must be ≥ 2"));
    }
    if !(iso > 0.0 && iso.is_finite()) {
        return Err(param("iso must be positive"));
    }
    let field = DensityField::new(cloud);
    let Some((lo, hi)) = field.bounds() else {
        return Ok(Mesh::default());
    };
    let center = (lo + hi) * 0.5;
    let half = 0.5 * (hi - lo).max();
    if !(half.is_finite() && half > 0.0 && center.iter().all(|v| v.is_finite())) {
        return Err(param("degenerate mesh bounds"));
    }
    let n = grid_resolution;
    let h = 2.0 * half / (n - 2) as f64;
    // One empty cell of padding keeps the surface closed at the border.
    let origin = center - Vector3::repeat(half + h);
    let np = n + 1;
    let at = |x: usize, y: usize, z: usize| origin + Vector3::new(x as f64, y as f64, z as f64) * h;
    let values: Vec<f64> = (0..np)
        .into_par_iter()
        .flat_map_iter(|z| {
            let field = &field;
            (0..np * np).map(move |i| field.density(&at(i % np, i / np, z)))
        })
        .collect();
    let idx = |x: usize, y: usize, z: usize| (z * np + y) * np + x;
    let table = case_table();

    // Each grid edge is keyed by its lower corner and axis.
    let slabs: Vec<Vec<[u64; 3]>> = (0..n)
        .into_par_iter()
        .map(|z| {
            let mut tris = Vec::new();
            for y in 0..n {
                for x in 0..n {
                    let mut case = 0usize;
                    for c in 0..8 {
                        let v = values[idx(x + (c & 1), y + (c >> 1 & 1), z + (c >> 2 & 1))];
                        if v > iso {
                            case |= 1 << c;
                        }
                    }
                    for t in &table[case] {
                        tris.push(t.map(|e| {
                            let (a, b) = table::EDGES[e as usize];
                            let axis = (b - a).trailing_zeros() as u64;
                            let (cx, cy, cz) = (x + (a & 1), y + (a >> 1 & 1), z + (a >> 2 & 1));
                            (idx(cx, cy, cz) as u64) * 3 + axis
                        }));
                    }
                }
            }
            tris
        })
        .collect();

    let mut vid: HashMap<u64, u32> = HashMap::new();
    let mut mesh = Mesh::default();
    let mut vertex = |key: u64, mesh: &mut Mesh| -> u32 {
        *vid.entry(key).or_insert_with(|| {
            let axis = (key % 3) as usize;
            let corner = (key / 3) as usize;
            let (x, y, z) = (corner % np, corner / np % np, corner / (np * np));
            let mut o = [x, y, z];
            o[axis] += 1;
            let (v0, v1) = (values[corner], values[idx(o[0], o[1], o[2])]);
            let t = ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0);
            let p = at(x, y, z) + (at(o[0], o[1], o[2]) - at(x, y, z)) * t;
            mesh.vertices.push([p.x, p.y, p.z]);
            (mesh.vertices.len() - 1) as u32
        })
    };
    for tri in slabs.into_iter().flatten() {
        let ids = tri.map(|k| vertex(k, &mut mesh));
        if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] || mesh.triangle_area(&ids) <= 1e-14 * h * h {
            continue;
        }
        mesh.triangles.push(ids);
    }
    let colors = mesh
        .vertices
        .par_iter()
        .map(|v| field.color(&Vector3::from(*v)))
        .collect();
    mesh.colors = Some(colors);
    Ok(mesh)
}
