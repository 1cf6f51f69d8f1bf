//! Building slice observations from ground-truth meshes: contour extraction
//! plus scanline mask rasterization.

use super::{slice_mesh, Polyline2, SliceObservation, SlicePlane, SliceSet};
use crate::tetgrid::SurfaceMesh;
use crate::{CoreError, Result};

/// Even-odd insideness of (u, v) against a set of closed contours.
pub fn point_in_contours(contours: &[Polyline2], u: f64, v: f64) -> bool {
    let mut crossings = 0usize;
    for poly in contours {
        for w in poly.windows(2) {
            let (v1, v2) = (w[0][1], w[1][1]);
            if (v1 > v) != (v2 > v) {
                let t = (v - v1) / (v2 - v1);
                let x = w[0][0] + t * (w[1][0] - w[0][0]);
                if u < x {
                    crossings += 1;
                }
            }
        }
    }
    crossings % 2 == 1
}

/// Rasterizes per-class contours into an H*W class-id image; later classes
/// overwrite earlier ones. Scanline parity per pixel row.
pub fn rasterize_contours(plane: &SlicePlane, per_class: &[Vec<Polyline2>]) -> Vec<u8> {
    let [h, w] = plane.extent_px;
    let mut mask = vec![0u8; h * w];
    for (ci, contours) in per_class.iter().enumerate() {
        if contours.is_empty() {
            continue;
        }
        let label = (ci + 1) as u8;
        for r in 0..h {
            let (_, v) = plane.pixel_uv(r, 0);
            let mut xs: Vec<f64> = Vec::new();
            for poly in contours {
                for seg in poly.windows(2) {
                    let (v1, v2) = (seg[0][1], seg[1][1]);
                    if (v1 > v) != (v2 > v) {
                        let t = (v - v1) / (v2 - v1);
                        xs.push(seg[0][0] + t * (seg[1][0] - seg[0][0]));
                    }
                }
            }
            if xs.is_empty() {
                continue;
            }
            xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            for c in 0..w {
                let (u, _) = plane.pixel_uv(r, c);
                let after = xs.len() - xs.partition_point(|&x| x <= u);
                if after % 2 == 1 {
                    mask[r * w + c] = label;
                }
            }
        }
    }
    mask
}

/// Slices every class mesh with every plane, producing one observation per
/// plane with contours and a rasterized mask. Planes that miss the meshes
/// yield empty contours but are retained.
pub fn make_observation(
    class_meshes: &[SurfaceMesh],
    frame_index: usize,
    planes: &[SlicePlane],
) -> Result<SliceSet> {
    if planes.is_empty() {
        return Err(CoreError::invalid("make_observation requires at least one plane"));
    }
    let mut observations = Vec::with_capacity(planes.len());
    for plane in planes {
        plane.validate()?;
        let mut contours = Vec::with_capacity(class_meshes.len());
        for mesh in class_meshes {
            contours.push(slice_mesh(mesh, plane)?);
        }
        let mask = rasterize_contours(plane, &contours);
        observations.push(SliceObservation {
            plane: plane.clone(),
            frame_index,
            contours,
            mask: Some(mask),
        });
    }
    Ok(SliceSet {
        frame_index,
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshops::testmesh::sphere_mesh;
    use crate::slicegeom::axial_plane;
    use crate::slicegeom::contour::signed_polyline_area;
    use nalgebra::Point3;

    #[test]
    fn square_point_in_polygon() {
        let square: Polyline2 = vec![
            [0.0, 0.0],
            [4.0, 0.0],
            [4.0, 4.0],
            [0.0, 4.0],
            [0.0, 0.0],
        ];
        assert!(point_in_contours(&[square.clone()], 2.0, 2.0));
        assert!(!point_in_contours(&[square], 5.0, 2.0));
    }

    #[test]
    fn rasterized_disk_area_matches_contour_area() {
        let mesh = sphere_mesh(48, 80.0); // r=20 at (40,40,40)
        let center = Point3::new(40.0, 40.0, 40.0);
        let plane = axial_plane(center, 0.0, 100.0, 1.25, 0.0);
        let set = make_observation(&[mesh], 0, std::slice::from_ref(&plane)).unwrap();
        let obs = &set.observations[0];
        let mask = obs.mask.as_ref().unwrap();
        let pixel_area = 1.25 * 1.25;
        let mask_area = mask.iter().filter(|&&m| m == 1).count() as f64 * pixel_area;
        let contour_area: f64 = obs.contours[0].iter().map(|c| signed_polyline_area(c)).sum();
        assert!(
            (mask_area - contour_area).abs() / contour_area < 0.03,
            "mask {mask_area} vs contour {contour_area}"
        );
    }

    #[test]
    fn missing_plane_keeps_observation_with_empty_contours() {
        let mesh = sphere_mesh(16, 80.0);
        let plane = axial_plane(Point3::new(40.0, 40.0, 40.0), 75.0, 100.0, 1.25, 0.0);
        let set = make_observation(&[mesh], 3, &[plane]).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.observations[0].contours[0].is_empty());
        assert!(set.observations[0].mask.as_ref().unwrap().iter().all(|&m| m == 0));
    }

    #[test]
    fn no_planes_rejected() {
        let mesh = sphere_mesh(8, 10.0);
        assert!(make_observation(&[mesh], 0, &[]).is_err());
    }

    #[test]
    fn tilted_plane_contours_closed() {
        let mesh = sphere_mesh(32, 80.0);
        let plane = axial_plane(Point3::new(40.0, 40.0, 40.0), 0.0, 100.0, 1.25, 10.0);
        let set = make_observation(&[mesh], 0, &[plane]).unwrap();
        for contour in &set.observations[0].contours[0] {
            let first = contour[0];
            let last = contour[contour.len() - 1];
            assert!((first[0] - last[0]).abs() < 1e-9 && (first[1] - last[1]).abs() < 1e-9);
        }
    }
}
