//! Oriented 2D slice geometry: world/slice transforms, mesh contouring,
//! nearest-slice selection and observation assembly.

mod contour;
mod observe;
mod select;

pub mod io;

pub use contour::{
    polyline_length, sample_polyline, signed_polyline_area, slice_mesh, slice_mesh_cuts,
    CutPoint, CutSegment,
};
pub use observe::{make_observation, point_in_contours, rasterize_contours};
pub use select::{confidence_field, nn_select, ConfidenceField, NnSelection};

use crate::{CoreError, Result};
use nalgebra::{Point3, Vector3};

/// Closed 2D polyline in slice coordinates (mm); first point equals last.
pub type Polyline2 = Vec<[f64; 2]>;

/// An oriented imaging plane. `origin_mm` is the world position of pixel
/// (0, 0); pixel (r, c) sits at `origin + c*ps[0]*row_dir + r*ps[1]*col_dir`.
/// In-plane coordinates are u along `row_dir`, v along `col_dir`; the plane
/// normal is `row_dir x col_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlane {
    pub origin_mm: Point3<f64>,
    pub row_dir: Vector3<f64>,
    pub col_dir: Vector3<f64>,
    pub pixel_spacing_mm: [f64; 2],
    /// (H, W): rows, columns.
    pub extent_px: [usize; 2],
}

impl SlicePlane {
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9;
        if (self.row_dir.norm() - 1.0).abs() > tol || (self.col_dir.norm() - 1.0).abs() > tol {
            return Err(CoreError::invalid("plane direction vectors must be unit length"));
        }
        if self.row_dir.dot(&self.col_dir).abs() > tol {
            return Err(CoreError::invalid("plane directions must be orthogonal"));
        }
        if self.pixel_spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(CoreError::invalid("pixel spacing must be positive"));
        }
        if self.extent_px.iter().any(|&e| e == 0) {
            return Err(CoreError::invalid("pixel extent must be nonzero"));
        }
        Ok(())
    }

    #[inline]
    pub fn normal(&self) -> Vector3<f64> {
        self.row_dir.cross(&self.col_dir)
    }

    /// (u, v, d): in-plane coordinates and signed out-of-plane distance.
    #[inline]
    pub fn world_to_slice(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        let r = p - self.origin_mm;
        (r.dot(&self.row_dir), r.dot(&self.col_dir), r.dot(&self.normal()))
    }

    #[inline]
    pub fn slice_to_world(&self, u: f64, v: f64, d: f64) -> Point3<f64> {
        self.origin_mm + self.row_dir * u + self.col_dir * v + self.normal() * d
    }

    /// Signed out-of-plane distance only.
    #[inline]
    pub fn plane_distance(&self, p: &Point3<f64>) -> f64 {
        (p - self.origin_mm).dot(&self.normal())
    }

    pub fn pixel_count(&self) -> usize {
        self.extent_px[0] * self.extent_px[1]
    }

    /// In-plane coordinates of pixel (r, c) center.
    #[inline]
    pub fn pixel_uv(&self, r: usize, c: usize) -> (f64, f64) {
        (c as f64 * self.pixel_spacing_mm[0], r as f64 * self.pixel_spacing_mm[1])
    }

    /// World position of pixel index `i = r*W + c`.
    pub fn pixel_world(&self, i: usize) -> Point3<f64> {
        let w = self.extent_px[1];
        let (u, v) = self.pixel_uv(i / w, i % w);
        self.slice_to_world(u, v, 0.0)
    }
}

/// Builds a short-axis style plane: normal along +z (before tilt), centered
/// on `center_mm` shifted by `level_mm` along the normal, covering a square
/// `fov_mm` field of view. `tilt_deg` rotates about the row direction to
/// emulate scanning-angle discrepancy.
pub fn axial_plane(
    center_mm: Point3<f64>,
    level_mm: f64,
    fov_mm: f64,
    pixel_spacing_mm: f64,
    tilt_deg: f64,
) -> SlicePlane {
    let row = Vector3::new(1.0, 0.0, 0.0);
    let mut col = Vector3::new(0.0, 1.0, 0.0);
    if tilt_deg != 0.0 {
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(row),
            tilt_deg.to_radians(),
        );
        col = rot * col;
    }
    let n = row.cross(&col);
    let px = ((fov_mm / pixel_spacing_mm).round() as usize).max(2);
    let half = (px - 1) as f64 * pixel_spacing_mm * 0.5;
    let center = center_mm + n * level_mm;
    SlicePlane {
        origin_mm: center - row * half - col * half,
        row_dir: row,
        col_dir: col,
        pixel_spacing_mm: [pixel_spacing_mm; 2],
        extent_px: [px, px],
    }
}

/// Observed contours (and optionally a class mask) on one plane at one frame.
#[derive(Debug, Clone)]
pub struct SliceObservation {
    pub plane: SlicePlane,
    pub frame_index: usize,
    /// contours[class] is the list of closed polylines for that class.
    pub contours: Vec<Vec<Polyline2>>,
    /// Row-major H*W class-id image, 0 = background.
    pub mask: Option<Vec<u8>>,
}

impl SliceObservation {
    pub fn class_count(&self) -> usize {
        self.contours.len()
    }
}

/// All observations of one frame, arbitrary count and orientations.
#[derive(Debug, Clone)]
pub struct SliceSet {
    pub frame_index: usize,
    pub observations: Vec<SliceObservation>,
}

impl SliceSet {
    pub fn validate(&self) -> Result<()> {
        if self.observations.is_empty() {
            return Err(CoreError::invalid("slice set must hold at least one observation"));
        }
        for obs in &self.observations {
            if obs.frame_index != self.frame_index {
                return Err(CoreError::invalid(format!(
                    "observation frame {} does not match set frame {}",
                    obs.frame_index, self.frame_index
                )));
            }
            obs.plane.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_plane(rng: &mut rand_chacha::ChaCha8Rng) -> SlicePlane {
        let raw = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let row = if raw.norm() < 1e-6 { Vector3::x() } else { raw.normalize() };
        let helper = if row.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let col = row.cross(&helper).normalize();
        SlicePlane {
            origin_mm: Point3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            ),
            row_dir: row,
            col_dir: col,
            pixel_spacing_mm: [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)],
            extent_px: [rng.gen_range(2..30), rng.gen_range(2..30)],
        }
    }

    #[test]
    fn origin_maps_to_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let plane = random_plane(&mut rng);
        let (u, v, d) = plane.world_to_slice(&plane.origin_mm);
        assert!(u.abs() < 1e-12 && v.abs() < 1e-12 && d.abs() < 1e-12);
    }

    #[test]
    fn row_direction_maps_to_u() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let plane = random_plane(&mut rng);
        let p = plane.origin_mm + plane.row_dir * 3.0;
        let (u, v, d) = plane.world_to_slice(&p);
        assert!((u - 3.0).abs() < 1e-9);
        assert!(v.abs() < 1e-9 && d.abs() < 1e-9);
    }

    #[test]
    fn round_trip_within_nanometre() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let plane = random_plane(&mut rng);
            plane.validate().unwrap();
            let p = Point3::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            );
            let (u, v, d) = plane.world_to_slice(&p);
            let q = plane.slice_to_world(u, v, d);
            assert!((p - q).norm() < 1e-9, "round trip error {}", (p - q).norm());
        }
    }

    #[test]
    fn invalid_planes_rejected() {
        let mut plane = axial_plane(Point3::origin(), 0.0, 20.0, 1.0, 0.0);
        plane.row_dir *= 2.0;
        assert!(plane.validate().is_err());

        let mut skewed = axial_plane(Point3::origin(), 0.0, 20.0, 1.0, 0.0);
        skewed.col_dir = (skewed.col_dir + skewed.row_dir * 0.5).normalize();
        assert!(skewed.validate().is_err());
    }

    #[test]
    fn tilted_plane_is_still_orthonormal() {
        let plane = axial_plane(Point3::new(10.0, 20.0, 30.0), 5.0, 40.0, 1.25, 10.0);
        plane.validate().unwrap();
        assert!((plane.normal().norm() - 1.0).abs() < 1e-12);
    }
}
