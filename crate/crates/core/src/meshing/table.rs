//! Marching-cubes case table, generated rather than transcribed.
//!
//! Corner `i` of the unit cube sits at `(i & 1, (i >> 1) & 1, (i >> 2) & 1)`.
//! On every face the iso-segments are oriented so that, seen from outside the
//! cube, the inside region lies to their right; on faces with two diagonal
//! inside corners the corners are kept separate. The segments of all six faces
//! chain into closed loops which are fan-triangulated. Because the face rule
//! depends only on that face's four corners, neighbouring cubes agree and the
//! surface is closed; the orientation makes triangle normals point from the
//! inside (high values) to the outside.

use std::sync::OnceLock;

/// The 12 cube edges as (lower corner, upper corner).
pub const EDGES: [(usize, usize); 12] = edges();

const fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    let mut i = 0;
    while i < 8 {
        let mut axis = 0;
        while axis < 3 {
            let b = 1 << axis;
            if i & b == 0 {
                out[n] = (i, i | b);
                n += 1;
            }
            axis += 1;
        }
        i += 1;
    }
    out
}

fn edge_id(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == key).expect("corners share an edge")
}

#[cfg(test)]
fn corner_pos(i: usize) -> [f64; 3] {
    [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]
}

/// Faces as 4 corners in counter-clockwise order seen from outside.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        for side in 0..2usize {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let corner = |du: usize, dv: usize| (side << axis) | (du << u) | (dv << v);
            // (u, v, axis) is a cyclic permutation of (x, y, z), so this order
            // winds positively about +axis.
            let mut f = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            if side == 0 {
                f.reverse();
            }
            out.push(f);
        }
    }
    out
}

/// For each of the 256 sign patterns, triangles as triples of edge indices.
pub fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(build_case))
}

fn build_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case >> c & 1 == 1;
    // Segment start edge -> end edge.
    let mut next = [usize::MAX; 12];
    for f in faces() {
        for k in 0..4 {
            let (a, b) = (f[k], f[(k + 1) % 4]);
            if !(inside(a) && !inside(b)) {
                continue;
            }
            // Exit edge (a, b); walk back to the start of the inside run.
            let mut j = k;
            while inside(f[(j + 3) % 4]) {
                j = (j + 3) % 4;
            }
            let entry = edge_id(f[(j + 3) % 4], f[j]);
            next[entry] = edge_id(a, b);
        }
    }
    let mut used = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !used[e] {
            used[e] = true;
            lp.push(e);
            e = next[e];
            assert!(e != usize::MAX, "open loop in case {case}");
        }
        for i in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[i] as u8, lp[i + 1] as u8]);
        }
    }
    tris
}

#[cfg(test)]
fn edge_midpoint(e: usize) -> [f64; 3] {
    let (a, b) = EDGES[e];
    let (p, q) = (corner_pos(a), corner_pos(b));
    [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]
}
