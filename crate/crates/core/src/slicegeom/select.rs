//! Nearest-slice / nearest-position selection and the slice confidence
//! field it induces over grid vertices.

use super::SliceSet;
use crate::tetgrid::TetGrid;
use crate::{CoreError, Result};
use nalgebra::Point3;
use rayon::prelude::*;

/// One selected (slice, pixel) pair for a query point. `distance_mm` is the
/// 3D distance from the query to the pixel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnSelection {
    pub slice: usize,
    pub pixel: usize,
    pub distance_mm: f64,
}

/// For each query: the `k1` nearest slices by absolute out-of-plane distance
/// (all slices when S <= k1), then within each selected slice the `k2`
/// nearest pixel centers to the query's in-plane projection. Ties break to
/// the lower slice/pixel index.
pub fn nn_select(
    query_points: &[Point3<f64>],
    slices: &SliceSet,
    k1: usize,
    k2: usize,
) -> Result<Vec<Vec<NnSelection>>> {
    if k1 == 0 || k2 == 0 {
        return Err(CoreError::invalid("k1 and k2 must be >= 1"));
    }
    slices.validate()?;

    let out: Vec<Vec<NnSelection>> = query_points
        .par_iter()
        .with_min_len(16)
        .map(|q| select_one(q, slices, k1, k2))
        .collect();
    Ok(out)
}

fn select_one(q: &Point3<f64>, slices: &SliceSet, k1: usize, k2: usize) -> Vec<NnSelection> {
    let mut slice_dist: Vec<(f64, usize)> = slices
        .observations
        .iter()
        .enumerate()
        .map(|(i, obs)| (obs.plane.plane_distance(q).abs(), i))
        .collect();
    slice_dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let take = k1.min(slice_dist.len());

    let mut out = Vec::with_capacity(take * k2);
    for &(d_plane, si) in slice_dist.iter().take(take) {
        let plane = &slices.observations[si].plane;
        let (u, v, _) = plane.world_to_slice(q);
        let [h, w] = plane.extent_px;
        let mut pix: Vec<(f64, usize)> = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let (pu, pv) = plane.pixel_uv(r, c);
                let d2 = (pu - u).powi(2) + (pv - v).powi(2);
                pix.push((d2, r * w + c));
            }
        }
        let kk = k2.min(pix.len());
        pix.select_nth_unstable_by(kk - 1, |a, b| a.partial_cmp(b).unwrap());
        pix.truncate(kk);
        pix.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (d2, pi) in pix {
            out.push(NnSelection {
                slice: si,
                pixel: pi,
                distance_mm: (d2 + d_plane * d_plane).sqrt(),
            });
        }
    }
    out
}

/// Per-grid-vertex weights in [0, 1] that decay with distance to the
/// observed slices: `w(v) = exp(-mean_k1 |d| / scale_mm)` at the base lattice
/// position.
#[derive(Debug, Clone)]
pub struct ConfidenceField {
    pub weights: Vec<f64>,
}

pub fn confidence_field(
    grid: &TetGrid,
    slices: &SliceSet,
    k1: usize,
    scale_mm: f64,
) -> Result<ConfidenceField> {
    if k1 == 0 {
        return Err(CoreError::invalid("k1 must be >= 1"));
    }
    if !(scale_mm.is_finite() && scale_mm > 0.0) {
        return Err(CoreError::invalid("scale_mm must be positive"));
    }
    slices.validate()?;

    let spacing = grid.spacing_mm();
    let weights: Vec<f64> = grid
        .base_vertices()
        .par_iter()
        .with_min_len(1024)
        .map(|v| {
            let p = Point3::from(v.coords * spacing);
            let mut d: Vec<f64> = slices
                .observations
                .iter()
                .map(|obs| obs.plane.plane_distance(&p).abs())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let take = k1.min(d.len());
            let mean = d[..take].iter().sum::<f64>() / take as f64;
            (-mean / scale_mm).exp()
        })
        .collect();
    Ok(ConfidenceField { weights })
}
