//! Signed distance queries against a watertight mesh: unsigned distance via
//! the closest triangle (uniform-grid accelerated), sign via parity ray
//! casting, negative inside.

use super::voxel::RayCaster;
use crate::tetgrid::SurfaceMesh;
use crate::{CoreError, Result};
use nalgebra::Point3;
use rayon::prelude::*;
use std::collections::HashMap;

/// Closest point on triangle (a, b, c) to p. Ericson, Real-Time Collision
/// Detection, 5.1.5.
fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Uniform grid over triangles for exact closest-triangle queries.
struct TriGrid {
    tris: Vec<[Point3<f64>; 3]>,
    origin: Point3<f64>,
    cell: f64,
    dims: [usize; 3],
    bins: Vec<Vec<u32>>,
}

impl TriGrid {
    fn build(mesh: &SurfaceMesh) -> TriGrid {
        let tris: Vec<[Point3<f64>; 3]> = mesh
            .triangles
            .iter()
            .map(|t| {
                [
                    mesh.vertices[t[0] as usize],
                    mesh.vertices[t[1] as usize],
                    mesh.vertices[t[2] as usize],
                ]
            })
            .collect();
        let mut lo = tris[0][0];
        let mut hi = tris[0][0];
        for t in &tris {
            for p in t {
                for i in 0..3 {
                    lo[i] = lo[i].min(p[i]);
                    hi[i] = hi[i].max(p[i]);
                }
            }
        }
        let extent = (0..3).map(|i| hi[i] - lo[i]).fold(0.0f64, f64::max).max(1e-9);
        let cell = extent / 48.0;
        let mut dims = [1usize; 3];
        for i in 0..3 {
            dims[i] = (((hi[i] - lo[i]) / cell).floor() as usize + 1).min(64);
        }
        let mut bins = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        for (i, t) in tris.iter().enumerate() {
            let mut tlo = [f64::INFINITY; 3];
            let mut thi = [f64::NEG_INFINITY; 3];
            for p in t {
                for k in 0..3 {
                    tlo[k] = tlo[k].min(p[k]);
                    thi[k] = thi[k].max(p[k]);
                }
            }
            let c0: Vec<usize> = (0..3)
                .map(|k| clampi((tlo[k] - lo[k]) / cell, dims[k]))
                .collect();
            let c1: Vec<usize> = (0..3)
                .map(|k| clampi((thi[k] - lo[k]) / cell, dims[k]))
                .collect();
            for z in c0[2]..=c1[2] {
                for y in c0[1]..=c1[1] {
                    for x in c0[0]..=c1[0] {
                        bins[(z * dims[1] + y) * dims[0] + x].push(i as u32);
                    }
                }
            }
        }
        TriGrid {
            tris,
            origin: lo,
            cell,
            dims,
            bins,
        }
    }

    fn cell_of(&self, p: &Point3<f64>) -> [usize; 3] {
        let mut c = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.cell).floor();
            c[i] = (f.max(0.0) as usize).min(self.dims[i] - 1);
        }
        c
    }

    /// Exact unsigned distance to the surface.
    fn distance(&self, q: &Point3<f64>) -> f64 {
        let c0 = self.cell_of(q);
        let mut best = f64::INFINITY;
        let max_ring = *self.dims.iter().max().unwrap();
        for r in 0..=max_ring {
            let lo: Vec<i64> = (0..3).map(|i| c0[i] as i64 - r as i64).collect();
            let hi: Vec<i64> = (0..3).map(|i| c0[i] as i64 + r as i64).collect();
            for z in lo[2]..=hi[2] {
                if z < 0 || z >= self.dims[2] as i64 {
                    continue;
                }
                for y in lo[1]..=hi[1] {
                    if y < 0 || y >= self.dims[1] as i64 {
                        continue;
                    }
                    let on_shell_zy = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                    let mut x = lo[0];
                    while x <= hi[0] {
                        if !on_shell_zy && r > 0 && x != lo[0] && x != hi[0] {
                            x = hi[0];
                            continue;
                        }
                        if x >= 0 && x < self.dims[0] as i64 {
                            let bi = (z as usize * self.dims[1] + y as usize) * self.dims[0]
                                + x as usize;
                            for &ti in &self.bins[bi] {
                                let t = &self.tris[ti as usize];
                                let cp = closest_point_on_triangle(q, &t[0], &t[1], &t[2]);
                                best = best.min((cp - q).norm_squared());
                            }
                        }
                        x += 1;
                    }
                }
            }
            if best.is_finite() {
                let bound = r as f64 * self.cell;
                if best <= bound * bound {
                    break;
                }
            }
        }
        best.sqrt()
    }
}

/// Signed distances (mm) from `points` to the mesh surface, negative inside.
pub fn mesh_sdf_query(mesh: &SurfaceMesh, points: &[Point3<f64>]) -> Result<Vec<f64>> {
    if mesh.is_empty() {
        return Err(CoreError::empty("mesh_sdf_query requires a nonempty mesh"));
    }
    if !mesh.is_watertight() {
        return Err(CoreError::open("mesh_sdf_query requires a watertight mesh"));
    }
    let tri_grid = TriGrid::build(mesh);
    let caster = RayCaster::build(mesh);

    // Queries sharing a (y, z) line share one ray cast; lattice queries form
    // long rows, arbitrary points degrade to singleton groups.
    let mut rows: HashMap<(u64, u64), Vec<u32>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        rows.entry((p.y.to_bits(), p.z.to_bits()))
            .or_default()
            .push(i as u32);
    }
    let mut row_list: Vec<(&(u64, u64), &Vec<u32>)> = rows.iter().collect();
    row_list.sort_unstable_by_key(|(k, _)| **k);

    let signs: Vec<Vec<(u32, bool)>> = row_list
        .par_iter()
        .with_min_len(4)
        .map(|(_, idxs)| {
            let p0 = points[idxs[0] as usize];
            let hits = caster.hits_x(p0.y, p0.z);
            idxs.iter()
                .map(|&i| (i, RayCaster::parity(&hits, points[i as usize].x)))
                .collect()
        })
        .collect();

    let mut inside = vec![false; points.len()];
    for group in &signs {
        for &(i, ins) in group {
            inside[i as usize] = ins;
        }
    }

    let distances: Vec<f64> = points
        .par_iter()
        .with_min_len(64)
        .enumerate()
        .map(|(i, p)| {
            let d = tri_grid.distance(p);
            if inside[i] {
                -d
            } else {
                d
            }
        })
        .collect();
    Ok(distances)
}
