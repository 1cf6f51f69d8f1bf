//! Deformable tetrahedral grid with per-class SDF values and vertex offsets.
//!
//! The grid is the hybrid representation everything else builds on: a
//! regular lattice over the unit cube, split into tetrahedra, where every
//! vertex carries one signed distance value and one displacement per class.
//! Surfaces are pulled out of it with marching tetrahedra
//! ([`marching_tets`]), differentiably ([`marching_tets_grad`]).

mod marching;
mod mesh;

pub mod io;

pub use marching::{marching_tets, marching_tets_grad, SurfaceGradients, VertexGradient};
pub use mesh::{SurfaceMesh, VertexProvenance};

use crate::{CoreError, Result};
use nalgebra::{Point3, Vector3};

/// SDF magnitudes below this are treated as `+ZERO_SDF_EPS` during
/// extraction, keeping interpolation parameters strictly inside (0,1).
pub const ZERO_SDF_EPS: f64 = 1e-12;

/// Fraction of one lattice cell a static offset may reach per component.
/// Below 0.5 no tetrahedron of the Kuhn split can invert.
pub const DEFAULT_OFFSET_CLAMP_FRACTION: f64 = 0.45;

/// Per-cell Kuhn split: six tetrahedra sharing the main cube diagonal, one
/// per axis permutation, each reordered to positive orientation. Entries are
/// corner offsets (dx, dy, dz).
const CELL_TETS: [[[u32; 3]; 4]; 6] = [
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]],
    [[0, 0, 0], [1, 0, 1], [1, 0, 0], [1, 1, 1]],
    [[0, 0, 0], [1, 1, 0], [0, 1, 0], [1, 1, 1]],
    [[0, 0, 0], [0, 1, 0], [0, 1, 1], [1, 1, 1]],
    [[0, 0, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1]],
    [[0, 0, 0], [0, 1, 1], [0, 0, 1], [1, 1, 1]],
];

/// Deformable tetrahedral grid over the unit cube.
///
/// Base vertices live in normalized coordinates `[0,1]^3`; `spacing_mm`
/// scales one normalized unit to millimetres. SDF values are stored in
/// millimetres (negative inside), offsets in normalized units.
#[derive(Debug, Clone)]
pub struct TetGrid {
    resolution: u32,
    class_count: usize,
    spacing_mm: f64,
    base_vertices: Vec<Point3<f64>>,
    tets: Vec<[u32; 4]>,
    sdf: Vec<f64>,
    offsets: Vec<Vector3<f64>>,
    offset_clamp: f64,
    lattice: bool,
}

/// Builds a lattice grid of `resolution` vertices per axis, split into
/// `6*(resolution-1)^3` positively oriented tetrahedra, with zero offsets and
/// every class SDF initialized to a centered sphere of radius 0.25
/// (normalized units, values in mm).
pub fn build_grid(resolution: u32, class_count: usize, spacing_mm: f64) -> Result<TetGrid> {
    if resolution < 2 {
        return Err(CoreError::invalid(format!(
            "grid resolution must be >= 2, got {resolution}"
        )));
    }
    if class_count < 1 {
        return Err(CoreError::invalid("class_count must be >= 1"));
    }
    if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
        return Err(CoreError::invalid(format!(
            "spacing_mm must be positive and finite, got {spacing_mm}"
        )));
    }

    let r = resolution as usize;
    let step = 1.0 / (resolution - 1) as f64;

    let mut base_vertices = Vec::with_capacity(r * r * r);
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                base_vertices.push(Point3::new(i as f64 * step, j as f64 * step, k as f64 * step));
            }
        }
    }

    let cells = r - 1;
    let mut tets = Vec::with_capacity(6 * cells * cells * cells);
    let vid = |i: u32, j: u32, k: u32| -> u32 { (k * resolution + j) * resolution + i };
    for k in 0..cells as u32 {
        for j in 0..cells as u32 {
            for i in 0..cells as u32 {
                for corners in &CELL_TETS {
                    tets.push([
                        vid(i + corners[0][0], j + corners[0][1], k + corners[0][2]),
                        vid(i + corners[1][0], j + corners[1][1], k + corners[1][2]),
                        vid(i + corners[2][0], j + corners[2][1], k + corners[2][2]),
                        vid(i + corners[3][0], j + corners[3][1], k + corners[3][2]),
                    ]);
                }
            }
        }
    }

    let vertex_count = base_vertices.len();
    let center = Point3::new(0.5, 0.5, 0.5);
    let mut sdf = Vec::with_capacity(class_count * vertex_count);
    for _ in 0..class_count {
        for v in &base_vertices {
            sdf.push(((v - center).norm() - 0.25) * spacing_mm);
        }
    }

    Ok(TetGrid {
        resolution,
        class_count,
        spacing_mm,
        base_vertices,
        tets,
        sdf,
        offsets: vec![Vector3::zeros(); class_count * vertex_count],
        offset_clamp: DEFAULT_OFFSET_CLAMP_FRACTION * step,
        lattice: true,
    })
}

impl TetGrid {
    /// Assembles a grid from explicit parts. Intended for tests and
    /// non-lattice experiments; lattice grids come from [`build_grid`].
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        base_vertices: Vec<Point3<f64>>,
        tets: Vec<[u32; 4]>,
        class_count: usize,
        spacing_mm: f64,
        sdf: Vec<f64>,
        offsets: Vec<Vector3<f64>>,
        offset_clamp: f64,
    ) -> Result<TetGrid> {
        if class_count < 1 {
            return Err(CoreError::invalid("class_count must be >= 1"));
        }
        let n = base_vertices.len();
        if sdf.len() != class_count * n || offsets.len() != class_count * n {
            return Err(CoreError::invalid(format!(
                "sdf/offsets must have class_count*|V| = {} entries, got {}/{}",
                class_count * n,
                sdf.len(),
                offsets.len()
            )));
        }
        if !(offset_clamp.is_finite() && offset_clamp > 0.0) {
            return Err(CoreError::invalid("offset_clamp must be positive"));
        }
        for (ti, tet) in tets.iter().enumerate() {
            if tet.iter().any(|&v| v as usize >= n) {
                return Err(CoreError::invalid(format!("tet {ti} indexes out of range")));
            }
            let vol = signed_tet_volume(
                &base_vertices[tet[0] as usize],
                &base_vertices[tet[1] as usize],
                &base_vertices[tet[2] as usize],
                &base_vertices[tet[3] as usize],
            );
            if vol <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "tet {ti} has non-positive signed volume {vol}"
                )));
            }
        }
        Ok(TetGrid {
            resolution: 0,
            class_count,
            spacing_mm,
            base_vertices,
            tets,
            sdf,
            offsets,
            offset_clamp,
            lattice: false,
        })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn vertex_count(&self) -> usize {
        self.base_vertices.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    pub fn is_lattice(&self) -> bool {
        self.lattice
    }

    pub fn base_vertices(&self) -> &[Point3<f64>] {
        &self.base_vertices
    }

    pub fn tets(&self) -> &[[u32; 4]] {
        &self.tets
    }

    /// Normalized lattice step, `1/(resolution-1)` for lattice grids.
    pub fn lattice_step(&self) -> f64 {
        if self.lattice {
            1.0 / (self.resolution - 1) as f64
        } else {
            1.0
        }
    }

    pub fn offset_clamp(&self) -> f64 {
        self.offset_clamp
    }

    /// Replaces the offset clamp. Motion fitting raises it well above the
    /// static default because cardiac displacements span several cells.
    pub fn set_offset_clamp(&mut self, clamp: f64) -> Result<()> {
        if !(clamp.is_finite() && clamp > 0.0) {
            return Err(CoreError::invalid("offset_clamp must be positive"));
        }
        self.offset_clamp = clamp;
        Ok(())
    }

    pub fn sdf(&self, class: usize) -> &[f64] {
        let n = self.vertex_count();
        &self.sdf[class * n..(class + 1) * n]
    }

    pub fn sdf_mut(&mut self, class: usize) -> &mut [f64] {
        let n = self.vertex_count();
        &mut self.sdf[class * n..(class + 1) * n]
    }

    pub fn offsets(&self, class: usize) -> &[Vector3<f64>] {
        let n = self.vertex_count();
        &self.offsets[class * n..(class + 1) * n]
    }

    pub(crate) fn offsets_mut(&mut self, class: usize) -> &mut [Vector3<f64>] {
        let n = self.vertex_count();
        &mut self.offsets[class * n..(class + 1) * n]
    }

    /// Sets a class's offsets, clamping each component to the grid's bound.
    pub fn set_offsets(&mut self, class: usize, values: &[Vector3<f64>]) -> Result<()> {
        if class >= self.class_count {
            return Err(CoreError::invalid(format!("class {class} out of range")));
        }
        if values.len() != self.vertex_count() {
            return Err(CoreError::invalid("offset array length mismatch"));
        }
        let clamp = self.offset_clamp;
        for (dst, src) in self.offsets_mut(class).iter_mut().zip(values) {
            *dst = clamp_vec(*src, clamp);
        }
        Ok(())
    }

    /// Deformed position of grid vertex `v` for `class`, in millimetres.
    #[inline]
    pub fn position_mm(&self, class: usize, v: usize) -> Point3<f64> {
        let n = self.vertex_count();
        let base = self.base_vertices[v];
        let off = self.offsets[class * n + v];
        Point3::from((base.coords + off) * self.spacing_mm)
    }

    /// Returns a grid with `offsets <- clamp(offsets + motion)`; SDF values
    /// are untouched, so only vertices move.
    pub fn apply_motion(&self, motion: &[Vector3<f64>]) -> Result<TetGrid> {
        if motion.len() != self.offsets.len() {
            return Err(CoreError::invalid(format!(
                "motion must have {} entries, got {}",
                self.offsets.len(),
                motion.len()
            )));
        }
        let mut out = self.clone();
        for (dst, m) in out.offsets.iter_mut().zip(motion) {
            *dst = clamp_vec(*dst + m, self.offset_clamp);
        }
        #[cfg(debug_assertions)]
        out.assert_no_inversion();
        Ok(out)
    }

    /// With the default clamp no tet can invert; checked in debug builds on
    /// grids small enough for the scan to be cheap.
    #[cfg(debug_assertions)]
    fn assert_no_inversion(&self) {
        if !self.lattice || self.tet_count() > 100_000 {
            return;
        }
        let step = self.lattice_step();
        if self.offset_clamp > 0.5 * step {
            return; // raised clamp: inversion is permitted by design
        }
        for class in 0..self.class_count {
            for tet in &self.tets {
                let p: Vec<Point3<f64>> = tet
                    .iter()
                    .map(|&v| self.position_mm(class, v as usize))
                    .collect();
                debug_assert!(
                    signed_tet_volume(&p[0], &p[1], &p[2], &p[3]) > 0.0,
                    "tet inverted under clamped offsets"
                );
            }
        }
    }

    /// Tie-broken SDF value: exact zeros become `+ZERO_SDF_EPS`.
    #[inline]
    pub(crate) fn effective_sdf(&self, class: usize, v: usize) -> f64 {
        let s = self.sdf[class * self.vertex_count() + v];
        if s.abs() < ZERO_SDF_EPS {
            ZERO_SDF_EPS
        } else {
            s
        }
    }
}

#[inline]
fn clamp_vec(v: Vector3<f64>, bound: f64) -> Vector3<f64> {
    Vector3::new(
        v.x.clamp(-bound, bound),
        v.y.clamp(-bound, bound),
        v.z.clamp(-bound, bound),
    )
}

/// Signed volume of tetrahedron (a,b,c,d); positive for positive orientation.
pub fn signed_tet_volume(
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
    d: &Point3<f64>,
) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_lattice() {
        let g = build_grid(2, 1, 1.0).unwrap();
        assert_eq!(g.vertex_count(), 8);
        assert_eq!(g.tet_count(), 6);
        assert!(g.offsets(0).iter().all(|o| o.norm() == 0.0));
    }

    #[test]
    fn sdf_entry_count_is_classes_times_vertices() {
        let g = build_grid(5, 3, 2.0).unwrap();
        assert_eq!(g.sdf.len(), 3 * 125);
        assert_eq!(g.offsets.len(), 3 * 125);
    }

    #[test]
    fn tet_count_matches_cell_enumeration() {
        // Brute force: every cell of the decomposition contributes 6 tets.
        let g = build_grid(3, 2, 1.0).unwrap();
        let cells = (3 - 1) * (3 - 1) * (3 - 1);
        assert_eq!(g.tet_count(), 6 * cells);
        assert_eq!(g.tet_count(), 48);
    }

    #[test]
    fn all_tets_positively_oriented() {
        let g = build_grid(4, 1, 1.0).unwrap();
        for tet in g.tets() {
            let vol = signed_tet_volume(
                &g.base_vertices[tet[0] as usize],
                &g.base_vertices[tet[1] as usize],
                &g.base_vertices[tet[2] as usize],
                &g.base_vertices[tet[3] as usize],
            );
            assert!(vol > 0.0, "non-positive tet volume {vol}");
        }
    }

    #[test]
    fn tets_tile_the_cube() {
        let g = build_grid(4, 1, 1.0).unwrap();
        let total: f64 = g
            .tets()
            .iter()
            .map(|t| {
                signed_tet_volume(
                    &g.base_vertices[t[0] as usize],
                    &g.base_vertices[t[1] as usize],
                    &g.base_vertices[t[2] as usize],
                    &g.base_vertices[t[3] as usize],
                )
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "tet volumes sum to {total}");
    }

    #[test]
    fn base_lattice_symmetric_under_axis_permutation() {
        let g = build_grid(4, 1, 1.0).unwrap();
        let mut perm: Vec<[u64; 3]> = g
            .base_vertices()
            .iter()
            .map(|p| [p.y.to_bits(), p.z.to_bits(), p.x.to_bits()])
            .collect();
        let mut orig: Vec<[u64; 3]> = g
            .base_vertices()
            .iter()
            .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
            .collect();
        perm.sort_unstable();
        orig.sort_unstable();
        assert_eq!(perm, orig);
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(build_grid(1, 1, 1.0).is_err());
        assert!(build_grid(4, 0, 1.0).is_err());
        assert!(build_grid(4, 1, -2.0).is_err());
    }

    #[test]
    fn zero_motion_is_identity() {
        let g = build_grid(3, 2, 1.0).unwrap();
        let motion = vec![Vector3::zeros(); 2 * g.vertex_count()];
        let moved = g.apply_motion(&motion).unwrap();
        for (a, b) in g.offsets.iter().zip(&moved.offsets) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn motion_saturates_at_clamp() {
        let g = build_grid(3, 1, 1.0).unwrap();
        let mut motion = vec![Vector3::zeros(); g.vertex_count()];
        motion[5] = Vector3::new(10.0, -10.0, 0.1);
        let moved = g.apply_motion(&motion).unwrap();
        let clamp = g.offset_clamp();
        assert_eq!(moved.offsets(0)[5].x, clamp);
        assert_eq!(moved.offsets(0)[5].y, -clamp);
        assert_eq!(moved.offsets(0)[5].z, 0.1);
    }

    #[test]
    fn motion_shape_mismatch_rejected() {
        let g = build_grid(3, 1, 1.0).unwrap();
        assert!(g.apply_motion(&[Vector3::zeros(); 3]).is_err());
    }
}
