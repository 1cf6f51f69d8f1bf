//! Label volumes, parity-raycast voxelization and Dice overlap.

use crate::tetgrid::SurfaceMesh;
use crate::{CoreError, Result};
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Placement of a voxel array in world space. `dims` counts voxels as
/// (D, H, W) = (z, y, x); `spacing_mm` is ordered (x, y, z); `origin_mm` is
/// the world position of the center of voxel (0, 0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl VolumeGeometry {
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        Point3::new(
            self.origin_mm[0] + ix as f64 * self.spacing_mm[0],
            self.origin_mm[1] + iy as f64 * self.spacing_mm[1],
            self.origin_mm[2] + iz as f64 * self.spacing_mm[2],
        )
    }

    /// Volume of one voxel in mm^3.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm[0] * self.spacing_mm[1] * self.spacing_mm[2]
    }
}

/// Voxel class-id array (0 = background) with world placement.
#[derive(Debug, Clone)]
pub struct LabelVolume {
    pub geometry: VolumeGeometry,
    pub labels: Vec<u8>,
}

impl LabelVolume {
    pub fn empty(geometry: VolumeGeometry) -> LabelVolume {
        let n = geometry.voxel_count();
        LabelVolume {
            geometry,
            labels: vec![0; n],
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [_, h, w] = self.geometry.dims;
        (iz * h + iy) * w + ix
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Ray/triangle-soup caster for +x parity queries, with triangles binned over
/// the (y, z) plane. Exact edge or vertex hits retry the line at a
/// deterministic 1e-9 mm offset.
pub(crate) struct RayCaster {
    tris: Vec<[Point3<f64>; 3]>,
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    bins: Vec<Vec<u32>>,
}

const EDGE_TIE_REL: f64 = 1e-10;
const TIE_STEP_MM: f64 = 1e-9;

impl RayCaster {
    pub(crate) fn build(mesh: &SurfaceMesh) -> RayCaster {
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
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for t in &tris {
            for p in t {
                lo[0] = lo[0].min(p.y);
                hi[0] = hi[0].max(p.y);
                lo[1] = lo[1].min(p.z);
                hi[1] = hi[1].max(p.z);
            }
        }
        if tris.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
        let cell = extent / 128.0;
        let dims = [
            ((hi[0] - lo[0]) / cell).floor() as usize + 1,
            ((hi[1] - lo[1]) / cell).floor() as usize + 1,
        ];
        let mut bins = vec![Vec::new(); dims[0] * dims[1]];
        let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        for (i, t) in tris.iter().enumerate() {
            let (mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut zlo, mut zhi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in t {
                ylo = ylo.min(p.y);
                yhi = yhi.max(p.y);
                zlo = zlo.min(p.z);
                zhi = zhi.max(p.z);
            }
            // pad so tie-step perturbations never escape the candidate set
            let pad = 1e-6;
            let y0 = clampi(((ylo - pad) - lo[0]) / cell, dims[0]);
            let y1 = clampi(((yhi + pad) - lo[0]) / cell, dims[0]);
            let z0 = clampi(((zlo - pad) - lo[1]) / cell, dims[1]);
            let z1 = clampi(((zhi + pad) - lo[1]) / cell, dims[1]);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    bins[z * dims[0] + y].push(i as u32);
                }
            }
        }
        RayCaster {
            tris,
            origin: lo,
            cell,
            dims,
            bins,
        }
    }

    fn candidates(&self, y: f64, z: f64) -> &[u32] {
        if self.tris.is_empty() {
            return &[];
        }
        let cy = (((y - self.origin[0]) / self.cell).max(0.0) as usize).min(self.dims[0] - 1);
        let cz = (((z - self.origin[1]) / self.cell).max(0.0) as usize).min(self.dims[1] - 1);
        &self.bins[cz * self.dims[0] + cy]
    }

    /// Sorted x coordinates where the line (t, y, z) crosses the surface.
    pub(crate) fn hits_x(&self, y: f64, z: f64) -> Vec<f64> {
        for attempt in 0..64u32 {
            let dy = y + attempt as f64 * TIE_STEP_MM;
            let dz = z + attempt as f64 * 1.37 * TIE_STEP_MM;
            if let Some(mut hits) = self.try_line(dy, dz) {
                hits.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
                return hits;
            }
        }
        // A watertight mesh cannot keep producing exact ties along a line of
        // irrational slope in the perturbation; treat as no crossings.
        log::warn!("ray cast at y={y} z={z} stayed degenerate after retries");
        Vec::new()
    }

    fn try_line(&self, y: f64, z: f64) -> Option<Vec<f64>> {
        let mut hits = Vec::new();
        for &ti in self.candidates(y, z) {
            let t = &self.tris[ti as usize];
            let u0 = [t[0].y - y, t[0].z - z];
            let u1 = [t[1].y - y, t[1].z - z];
            let u2 = [t[2].y - y, t[2].z - z];
            let cross = |a: [f64; 2], b: [f64; 2]| a[0] * b[1] - a[1] * b[0];
            let w0 = cross(u1, u2);
            let w1 = cross(u2, u0);
            let w2 = cross(u0, u1);
            let denom = w0 + w1 + w2;
            let scale = u0[0].abs().max(u1[0].abs()).max(u2[0].abs()).max(
                u0[1].abs().max(u1[1].abs()).max(u2[1].abs()),
            );
            if denom.abs() <= 1e-14 * (scale * scale).max(1.0) {
                // Projected triangle is degenerate; if the line grazes its
                // bounding box the configuration is ambiguous.
                let near = (-1e-7..=1e-7).contains(&u0[0].min(u1[0]).min(u2[0]).min(0.0))
                    || ((u0[0].min(u1[0]).min(u2[0]) <= 1e-7)
                        && (u0[0].max(u1[0]).max(u2[0]) >= -1e-7)
                        && (u0[1].min(u1[1]).min(u2[1]) <= 1e-7)
                        && (u0[1].max(u1[1]).max(u2[1]) >= -1e-7));
                if near {
                    return None;
                }
                continue;
            }
            let tie = EDGE_TIE_REL * denom.abs();
            if w0.abs() <= tie || w1.abs() <= tie || w2.abs() <= tie {
                return None; // exact edge/vertex hit: perturb and retry
            }
            let same_sign = (w0 > 0.0) == (denom > 0.0)
                && (w1 > 0.0) == (denom > 0.0)
                && (w2 > 0.0) == (denom > 0.0);
            if same_sign {
                let inv = 1.0 / denom;
                hits.push((w0 * t[0].x + w1 * t[1].x + w2 * t[2].x) * inv);
            }
        }
        Some(hits)
    }

    /// Parity test along +x; hits exactly at the query x re-test at a 1e-9 mm
    /// offset.
    pub(crate) fn parity(sorted_hits: &[f64], x: f64) -> bool {
        let tied = sorted_hits.iter().any(|h| (h - x).abs() < 1e-12);
        let q = if tied { x + TIE_STEP_MM } else { x };
        let after = sorted_hits.len() - sorted_hits.partition_point(|&h| h <= q);
        after % 2 == 1
    }
}

/// Labels every voxel whose center lies inside the mesh with `class_id`.
pub fn voxelize(mesh: &SurfaceMesh, geometry: &VolumeGeometry, class_id: u8) -> Result<LabelVolume> {
    if class_id == 0 {
        return Err(CoreError::invalid("class_id 0 is reserved for background"));
    }
    let mut vol = LabelVolume::empty(geometry.clone());
    voxelize_into(mesh, &mut vol, class_id)?;
    Ok(vol)
}

/// Voxelizes several class meshes into one volume; later entries overwrite
/// earlier ones where they overlap.
pub fn voxelize_multi(
    meshes: &[(&SurfaceMesh, u8)],
    geometry: &VolumeGeometry,
) -> Result<LabelVolume> {
    let mut vol = LabelVolume::empty(geometry.clone());
    for &(mesh, label) in meshes {
        if label == 0 {
            return Err(CoreError::invalid("class_id 0 is reserved for background"));
        }
        voxelize_into(mesh, &mut vol, label)?;
    }
    Ok(vol)
}

fn voxelize_into(mesh: &SurfaceMesh, vol: &mut LabelVolume, class_id: u8) -> Result<()> {
    if mesh.is_empty() {
        return Ok(());
    }
    if !mesh.is_watertight() {
        return Err(CoreError::open("voxelize requires a watertight mesh"));
    }
    let caster = RayCaster::build(mesh);
    let geom = vol.geometry.clone();
    let [d, h, w] = geom.dims;

    let rows: Vec<Vec<u32>> = (0..d * h)
        .into_par_iter()
        .with_min_len(8)
        .map(|row| {
            let iz = row / h;
            let iy = row % h;
            let y = geom.origin_mm[1] + iy as f64 * geom.spacing_mm[1];
            let z = geom.origin_mm[2] + iz as f64 * geom.spacing_mm[2];
            let hits = caster.hits_x(y, z);
            let mut inside = Vec::new();
            if !hits.is_empty() {
                for ix in 0..w {
                    let x = geom.origin_mm[0] + ix as f64 * geom.spacing_mm[0];
                    if RayCaster::parity(&hits, x) {
                        inside.push(ix as u32);
                    }
                }
            }
            inside
        })
        .collect();

    for (row, inside) in rows.iter().enumerate() {
        let iz = row / h;
        let iy = row % h;
        for &ix in inside {
            let idx = vol.index(ix as usize, iy, iz);
            vol.labels[idx] = class_id;
        }
    }
    Ok(())
}

/// Dice overlap `2|A∩B| / (|A|+|B|)` of one class between two volumes on the
/// same geometry. Both masks empty counts as perfect agreement (1.0).
pub fn dice(a: &LabelVolume, b: &LabelVolume, class_id: u8) -> Result<f64> {
    if a.geometry != b.geometry {
        return Err(CoreError::invalid(
            "dice requires identical dims, spacing and origin",
        ));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        let ia = la == class_id;
        let ib = lb == class_id;
        inter += (ia && ib) as usize;
        total += ia as usize + ib as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[derive(Serialize, Deserialize)]
struct LabelHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
}

/// Writes the raw u8 array plus its JSON header.
pub fn write_label_volume(vol: &LabelVolume, raw_path: &Path, header_path: &Path) -> Result<()> {
    fs::write(raw_path, &vol.labels)?;
    let header = LabelHeader {
        dims: vol.geometry.dims,
        spacing_mm: vol.geometry.spacing_mm,
        origin_mm: vol.geometry.origin_mm,
    };
    fs::write(header_path, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_label_volume(raw_path: &Path, header_path: &Path) -> Result<LabelVolume> {
    let header: LabelHeader = serde_json::from_str(&fs::read_to_string(header_path)?)?;
    let labels = fs::read(raw_path)?;
    let geometry = VolumeGeometry {
        dims: header.dims,
        spacing_mm: header.spacing_mm,
        origin_mm: header.origin_mm,
    };
    if labels.len() != geometry.voxel_count() {
        return Err(CoreError::invalid(format!(
            "raw file holds {} voxels, header says {}",
            labels.len(),
            geometry.voxel_count()
        )));
    }
    Ok(LabelVolume { geometry, labels })
}
