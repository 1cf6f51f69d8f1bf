//! Mesh/plane intersection: cut segments, closed contour chaining and
//! arc-length resampling.

use super::{Polyline2, SlicePlane};
use crate::tetgrid::SurfaceMesh;
use crate::{CoreError, Result};
use nalgebra::Point3;
use std::collections::HashMap;

/// A contour point on the mesh edge (va, vb), `p = pa + t (pb - pa)`.
#[derive(Debug, Clone, Copy)]
pub struct CutPoint {
    pub va: u32,
    pub vb: u32,
    pub t: f64,
    pub world: Point3<f64>,
    pub uv: [f64; 2],
}

/// One triangle's intersection with the plane, directed so that walking
/// a -> b keeps the cross-section interior on the left (positive signed
/// area for material regions).
#[derive(Debug, Clone, Copy)]
pub struct CutSegment {
    pub a: CutPoint,
    pub b: CutPoint,
}

const PLANE_TIE_EPS: f64 = 1e-12;

#[inline]
fn tie_broken(d: f64) -> f64 {
    if d.abs() < PLANE_TIE_EPS {
        PLANE_TIE_EPS
    } else {
        d
    }
}

/// Raw triangle/plane cut segments of a mesh; does not require closure, so
/// open surfaces are fine. Segment endpoints on shared mesh edges agree
/// bit-exactly.
pub fn slice_mesh_cuts(mesh: &SurfaceMesh, plane: &SlicePlane) -> Vec<CutSegment> {
    let n = plane.normal();
    let dist: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|p| tie_broken((p - plane.origin_mm).dot(&n)))
        .collect();

    let cut_point = |va: u32, vb: u32| -> CutPoint {
        let (lo, hi) = (va.min(vb), va.max(vb));
        let (da, db) = (dist[lo as usize], dist[hi as usize]);
        let t = da / (da - db);
        let pa = mesh.vertices[lo as usize];
        let pb = mesh.vertices[hi as usize];
        let world = pa + (pb - pa) * t;
        let (u, v, _) = plane.world_to_slice(&world);
        CutPoint {
            va: lo,
            vb: hi,
            t,
            world,
            uv: [u, v],
        }
    };

    let mut segments = Vec::new();
    for tri in &mesh.triangles {
        let d = [
            dist[tri[0] as usize],
            dist[tri[1] as usize],
            dist[tri[2] as usize],
        ];
        let neg: Vec<usize> = (0..3).filter(|&i| d[i] < 0.0).collect();
        if neg.is_empty() || neg.len() == 3 {
            continue;
        }
        // the lone vertex on its own side determines the two crossing edges
        let lone = if neg.len() == 1 {
            neg[0]
        } else {
            (0..3).find(|i| !neg.contains(i)).unwrap()
        };
        let (j, k) = ((lone + 1) % 3, (lone + 2) % 3);
        let p1 = cut_point(tri[lone], tri[j]);
        let p2 = cut_point(tri[lone], tri[k]);

        let va = mesh.vertices[tri[0] as usize];
        let vb = mesh.vertices[tri[1] as usize];
        let vc = mesh.vertices[tri[2] as usize];
        let tri_n = (vb - va).cross(&(vc - va));
        let dir = n.cross(&tri_n);
        let seg = p2.world - p1.world;
        if seg.dot(&dir) >= 0.0 {
            segments.push(CutSegment { a: p1, b: p2 });
        } else {
            segments.push(CutSegment { a: p2, b: p1 });
        }
    }
    segments
}

/// Intersects a watertight mesh with a plane, returning closed polylines in
/// slice coordinates. Outer boundaries of material regions come out with
/// positive signed area, holes negative.
pub fn slice_mesh(mesh: &SurfaceMesh, plane: &SlicePlane) -> Result<Vec<Polyline2>> {
    if mesh.is_empty() {
        return Ok(Vec::new());
    }
    if !mesh.is_watertight() {
        return Err(CoreError::open("slice_mesh requires a watertight mesh"));
    }
    let segments = slice_mesh_cuts(mesh, plane);
    Ok(chain_segments(&segments))
}

/// Chains directed segments into closed polylines. Points are identified by
/// their generating mesh edge.
pub(crate) fn chain_segments(segments: &[CutSegment]) -> Vec<Polyline2> {
    if segments.is_empty() {
        return Vec::new();
    }
    let key = |p: &CutPoint| (p.va, p.vb);
    // assign dense ids by first appearance
    let mut ids: HashMap<(u32, u32), u32> = HashMap::new();
    let mut uv: Vec<[f64; 2]> = Vec::new();
    let mut intern = |p: &CutPoint| -> u32 {
        *ids.entry(key(p)).or_insert_with(|| {
            uv.push(p.uv);
            (uv.len() - 1) as u32
        })
    };
    let mut next: Vec<u32> = Vec::new();
    let mut pairs = Vec::with_capacity(segments.len());
    for s in segments {
        let a = intern(&s.a);
        let b = intern(&s.b);
        pairs.push((a, b));
    }
    next.resize(uv.len(), u32::MAX);
    for &(a, b) in &pairs {
        if next[a as usize] != u32::MAX {
            log::warn!("duplicate outgoing cut segment at point {a}; keeping first");
            continue;
        }
        next[a as usize] = b;
    }

    let mut visited = vec![false; uv.len()];
    let mut contours = Vec::new();
    for start in 0..uv.len() as u32 {
        if visited[start as usize] || next[start as usize] == u32::MAX {
            continue;
        }
        let mut poly: Polyline2 = Vec::new();
        let mut cur = start;
        loop {
            if visited[cur as usize] {
                break;
            }
            visited[cur as usize] = true;
            poly.push(uv[cur as usize]);
            let nxt = next[cur as usize];
            if nxt == u32::MAX {
                break; // broken chain; drop openly rather than fabricate closure
            }
            cur = nxt;
            if cur == start {
                poly.push(uv[start as usize]);
                contours.push(std::mem::take(&mut poly));
                break;
            }
        }
    }
    contours
}

/// Shoelace signed area of a closed polyline (first point repeated at end).
pub fn signed_polyline_area(poly: &Polyline2) -> f64 {
    let mut a = 0.0;
    for w in poly.windows(2) {
        a += w[0][0] * w[1][1] - w[1][0] * w[0][1];
    }
    0.5 * a
}

/// Total length of a polyline.
pub fn polyline_length(poly: &Polyline2) -> f64 {
    poly.windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum()
}

/// Arc-length uniform resampling at `samples_per_mm`; returns at least 4
/// samples for any nonempty contour. The closure point is not duplicated.
pub fn sample_polyline(poly: &Polyline2, samples_per_mm: f64) -> Vec<[f64; 2]> {
    sample_polyline_segments(poly, samples_per_mm)
        .into_iter()
        .map(|(seg, t)| {
            let a = poly[seg];
            let b = poly[seg + 1];
            [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
        })
        .collect()
}

/// As [`sample_polyline`] but returns (segment index, parameter) pairs so the
/// samples can be differentiated through the segment endpoints.
pub(crate) fn sample_polyline_segments(poly: &Polyline2, samples_per_mm: f64) -> Vec<(usize, f64)> {
    if poly.len() < 2 {
        return Vec::new();
    }
    let total = polyline_length(poly);
    if total <= 0.0 {
        return Vec::new();
    }
    let n = ((total * samples_per_mm).ceil() as usize).max(4);
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    let mut seg_len = segment_len(poly, 0);
    for k in 0..n {
        let s = k as f64 * step;
        while s > seg_start + seg_len && seg + 2 < poly.len() {
            seg_start += seg_len;
            seg += 1;
            seg_len = segment_len(poly, seg);
        }
        let t = if seg_len > 0.0 {
            ((s - seg_start) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push((seg, t));
    }
    out
}

fn segment_len(poly: &Polyline2, seg: usize) -> f64 {
    let a = poly[seg];
    let b = poly[seg + 1];
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}
