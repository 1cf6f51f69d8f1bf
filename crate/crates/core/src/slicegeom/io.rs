//! Slice plane JSON and slice-set bundle directories.
//!
//! A bundle holds, per slice, `slice_%03d.plane.json`, a contour CSV with
//! columns (class, point, u_mm, v_mm) where the point index restarting at 0
//! starts a new contour, and optionally `slice_%03d.mask.raw` + `.json`.

use super::{Polyline2, SliceObservation, SlicePlane, SliceSet};
use crate::{CoreError, Result};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct PlaneJson {
    origin_mm: [f64; 3],
    row_dir: [f64; 3],
    col_dir: [f64; 3],
    pixel_spacing_mm: [f64; 2],
    extent_px: [usize; 2],
}

impl From<&SlicePlane> for PlaneJson {
    fn from(p: &SlicePlane) -> Self {
        PlaneJson {
            origin_mm: p.origin_mm.coords.into(),
            row_dir: p.row_dir.into(),
            col_dir: p.col_dir.into(),
            pixel_spacing_mm: p.pixel_spacing_mm,
            extent_px: p.extent_px,
        }
    }
}

impl From<PlaneJson> for SlicePlane {
    fn from(j: PlaneJson) -> Self {
        SlicePlane {
            origin_mm: Point3::from(j.origin_mm),
            row_dir: Vector3::from(j.row_dir),
            col_dir: Vector3::from(j.col_dir),
            pixel_spacing_mm: j.pixel_spacing_mm,
            extent_px: j.extent_px,
        }
    }
}

pub fn write_plane(plane: &SlicePlane, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&PlaneJson::from(plane))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn read_plane(path: &Path) -> Result<SlicePlane> {
    let j: PlaneJson = serde_json::from_str(&fs::read_to_string(path)?)?;
    let plane: SlicePlane = j.into();
    plane.validate()?;
    Ok(plane)
}

fn write_contour_csv(contours: &[Vec<Polyline2>], path: &Path) -> Result<()> {
    let mut out = String::from("class,point,u_mm,v_mm\n");
    for (ci, class_contours) in contours.iter().enumerate() {
        for poly in class_contours {
            for (pi, p) in poly.iter().enumerate() {
                out.push_str(&format!("{ci},{pi},{},{}\n", p[0], p[1]));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_contour_csv(path: &Path, class_count: usize) -> Result<Vec<Vec<Polyline2>>> {
    let text = fs::read_to_string(path)?;
    let mut contours: Vec<Vec<Polyline2>> = vec![Vec::new(); class_count];
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CoreError::invalid(format!("bad contour row at line {}", ln + 1)));
        }
        let class: usize = fields[0]
            .parse()
            .map_err(|_| CoreError::invalid(format!("bad class at line {}", ln + 1)))?;
        let point: usize = fields[1]
            .parse()
            .map_err(|_| CoreError::invalid(format!("bad point index at line {}", ln + 1)))?;
        let u: f64 = fields[2]
            .parse()
            .map_err(|_| CoreError::invalid(format!("bad u at line {}", ln + 1)))?;
        let v: f64 = fields[3]
            .parse()
            .map_err(|_| CoreError::invalid(format!("bad v at line {}", ln + 1)))?;
        if class >= contours.len() {
            contours.resize(class + 1, Vec::new());
        }
        if point == 0 {
            contours[class].push(Vec::new());
        }
        let poly = contours[class]
            .last_mut()
            .ok_or_else(|| CoreError::invalid(format!("point index never restarted, line {}", ln + 1)))?;
        poly.push([u, v]);
    }
    Ok(contours)
}

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    extent_px: [usize; 2],
    pixel_spacing_mm: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct SetHeader {
    frame_index: usize,
    slice_count: usize,
    class_count: usize,
}

/// Writes a slice-set bundle directory.
pub fn write_slice_set(set: &SliceSet, dir: &Path) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir)?;
    let class_count = set
        .observations
        .iter()
        .map(|o| o.contours.len())
        .max()
        .unwrap_or(0);
    let header = SetHeader {
        frame_index: set.frame_index,
        slice_count: set.observations.len(),
        class_count,
    };
    fs::write(dir.join("set.json"), serde_json::to_string_pretty(&header)?)?;
    for (i, obs) in set.observations.iter().enumerate() {
        write_plane(&obs.plane, &dir.join(format!("slice_{i:03}.plane.json")))?;
        write_contour_csv(&obs.contours, &dir.join(format!("slice_{i:03}.contours.csv")))?;
        if let Some(mask) = &obs.mask {
            fs::write(dir.join(format!("slice_{i:03}.mask.raw")), mask)?;
            let mh = MaskHeader {
                extent_px: obs.plane.extent_px,
                pixel_spacing_mm: obs.plane.pixel_spacing_mm,
            };
            fs::write(
                dir.join(format!("slice_{i:03}.mask.json")),
                serde_json::to_string_pretty(&mh)?,
            )?;
        }
    }
    Ok(())
}

/// Reads a bundle written by [`write_slice_set`].
pub fn read_slice_set(dir: &Path) -> Result<SliceSet> {
    let header: SetHeader = serde_json::from_str(&fs::read_to_string(dir.join("set.json"))?)?;
    let mut observations = Vec::with_capacity(header.slice_count);
    for i in 0..header.slice_count {
        let plane = read_plane(&dir.join(format!("slice_{i:03}.plane.json")))?;
        let contours = read_contour_csv(
            &dir.join(format!("slice_{i:03}.contours.csv")),
            header.class_count,
        )?;
        let mask_path = dir.join(format!("slice_{i:03}.mask.raw"));
        let mask = if mask_path.exists() {
            let bytes = fs::read(&mask_path)?;
            if bytes.len() != plane.pixel_count() {
                return Err(CoreError::invalid(format!(
                    "mask {i} holds {} pixels, plane expects {}",
                    bytes.len(),
                    plane.pixel_count()
                )));
            }
            Some(bytes)
        } else {
            None
        };
        observations.push(SliceObservation {
            plane,
            frame_index: header.frame_index,
            contours,
            mask,
        });
    }
    let set = SliceSet {
        frame_index: header.frame_index,
        observations,
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshops::testmesh::sphere_mesh;
    use crate::slicegeom::{axial_plane, make_observation};
    use tempfile::tempdir;

    #[test]
    fn plane_json_round_trip() {
        let plane = axial_plane(Point3::new(1.0, 2.0, 3.0), 4.0, 30.0, 1.25, 7.0);
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.json");
        write_plane(&plane, &path).unwrap();
        let back = read_plane(&path).unwrap();
        assert!((back.origin_mm - plane.origin_mm).norm() < 1e-12);
        assert!((back.row_dir - plane.row_dir).norm() < 1e-12);
        assert!((back.col_dir - plane.col_dir).norm() < 1e-12);
        assert_eq!(back.extent_px, plane.extent_px);
    }

    #[test]
    fn bundle_round_trip_preserves_contours_and_masks() {
        let mesh = sphere_mesh(24, 80.0);
        let planes = vec![
            axial_plane(Point3::new(40.0, 40.0, 40.0), 0.0, 100.0, 1.25, 0.0),
            axial_plane(Point3::new(40.0, 40.0, 40.0), 10.0, 100.0, 1.25, 0.0),
        ];
        let set = make_observation(&[mesh], 5, &planes).unwrap();
        let dir = tempdir().unwrap();
        write_slice_set(&set, dir.path()).unwrap();
        let back = read_slice_set(dir.path()).unwrap();
        assert_eq!(back.frame_index, 5);
        assert_eq!(back.len(), 2);
        for (a, b) in set.observations.iter().zip(&back.observations) {
            assert_eq!(a.contours.len(), b.contours.len());
            for (ca, cb) in a.contours.iter().zip(&b.contours) {
                assert_eq!(ca.len(), cb.len());
                for (pa, pb) in ca.iter().zip(cb) {
                    assert_eq!(pa.len(), pb.len());
                    for (qa, qb) in pa.iter().zip(pb) {
                        assert!((qa[0] - qb[0]).abs() < 1e-12);
                        assert!((qa[1] - qb[1]).abs() < 1e-12);
                    }
                }
            }
            assert_eq!(a.mask, b.mask);
        }
    }
}
