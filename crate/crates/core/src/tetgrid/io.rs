//! Mesh export (ASCII OBJ, binary little-endian PLY) and grid snapshots.
//!
//! A snapshot is a directory holding the flat f64 arrays (`sdf.bin`,
//! `offsets.bin`, little-endian) plus `grid.json` with the lattice metadata
//! and the SHA-256 of each array, verified on read.

use super::{SurfaceMesh, TetGrid};
use crate::{CoreError, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

/// Writes `v x y z` / `f i j k` records with 1-based indices.
pub fn write_obj(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a mesh back from an OBJ written by [`write_obj`]. Provenance is not
/// representable in OBJ and comes back empty.
pub fn read_obj(path: &Path) -> Result<SurfaceMesh> {
    let text = fs::read_to_string(path)?;
    let mut mesh = SurfaceMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for slot in &mut p {
                    *slot = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| CoreError::invalid(format!("bad vertex at line {}", ln + 1)))?;
                }
                mesh.vertices.push(nalgebra::Point3::new(p[0], p[1], p[2]));
            }
            Some("f") => {
                let mut t = [0u32; 3];
                for slot in &mut t {
                    let token = it
                        .next()
                        .ok_or_else(|| CoreError::invalid(format!("bad face at line {}", ln + 1)))?;
                    let idx: u32 = token
                        .split('/')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| CoreError::invalid(format!("bad face at line {}", ln + 1)))?;
                    if idx == 0 || idx as usize > mesh.vertices.len() {
                        return Err(CoreError::invalid(format!("face index out of range, line {}", ln + 1)));
                    }
                    *slot = idx - 1;
                }
                mesh.triangles.push(t);
            }
            _ => {}
        }
    }
    mesh.open_surface = !mesh.is_watertight();
    Ok(mesh)
}

/// Binary little-endian PLY with double-precision vertex coordinates.
pub fn write_ply(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    for v in &mesh.vertices {
        w.write_all(&v.x.to_le_bytes())?;
        w.write_all(&v.y.to_le_bytes())?;
        w.write_all(&v.z.to_le_bytes())?;
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct GridSidecar {
    resolution: u32,
    class_count: usize,
    spacing_mm: f64,
    offset_clamp: f64,
    sha256: SnapshotHashes,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHashes {
    sdf: String,
    offsets: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn f64s_to_le_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes `sdf.bin`, `offsets.bin` and `grid.json` into `dir`.
pub fn write_snapshot(grid: &TetGrid, dir: &Path) -> Result<()> {
    if !grid.is_lattice() {
        return Err(CoreError::invalid(
            "snapshots are only defined for lattice grids built by build_grid",
        ));
    }
    fs::create_dir_all(dir)?;
    let n = grid.vertex_count();
    let sdf_bytes = f64s_to_le_bytes((0..grid.class_count()).flat_map(|c| grid.sdf(c).iter().copied()));
    let off_bytes = f64s_to_le_bytes((0..grid.class_count()).flat_map(|c| {
        grid.offsets(c)
            .iter()
            .flat_map(|v| [v.x, v.y, v.z])
            .collect::<Vec<_>>()
    }));
    debug_assert_eq!(sdf_bytes.len(), grid.class_count() * n * 8);
    fs::write(dir.join("sdf.bin"), &sdf_bytes)?;
    fs::write(dir.join("offsets.bin"), &off_bytes)?;
    let sidecar = GridSidecar {
        resolution: grid.resolution(),
        class_count: grid.class_count(),
        spacing_mm: grid.spacing_mm(),
        offset_clamp: grid.offset_clamp(),
        sha256: SnapshotHashes {
            sdf: sha256_hex(&sdf_bytes),
            offsets: sha256_hex(&off_bytes),
        },
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(dir.join("grid.json"), json)?;
    Ok(())
}

/// Reads a snapshot directory, verifying array hashes.
pub fn read_snapshot(dir: &Path) -> Result<TetGrid> {
    let sidecar: GridSidecar = serde_json::from_str(&fs::read_to_string(dir.join("grid.json"))?)?;
    let mut sdf_bytes = Vec::new();
    File::open(dir.join("sdf.bin"))?.read_to_end(&mut sdf_bytes)?;
    let mut off_bytes = Vec::new();
    File::open(dir.join("offsets.bin"))?.read_to_end(&mut off_bytes)?;
    if sha256_hex(&sdf_bytes) != sidecar.sha256.sdf {
        return Err(CoreError::invalid("sdf.bin hash mismatch"));
    }
    if sha256_hex(&off_bytes) != sidecar.sha256.offsets {
        return Err(CoreError::invalid("offsets.bin hash mismatch"));
    }

    let mut grid = super::build_grid(sidecar.resolution, sidecar.class_count, sidecar.spacing_mm)?;
    let n = grid.vertex_count();
    if sdf_bytes.len() != sidecar.class_count * n * 8 {
        return Err(CoreError::invalid("sdf.bin has wrong length"));
    }
    if off_bytes.len() != sidecar.class_count * n * 24 {
        return Err(CoreError::invalid("offsets.bin has wrong length"));
    }
    let read_f64 = |bytes: &[u8], i: usize| f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
    for c in 0..sidecar.class_count {
        for v in 0..n {
            grid.sdf_mut(c)[v] = read_f64(&sdf_bytes, c * n + v);
        }
        let offs = grid.offsets_mut(c);
        for (v, off) in offs.iter_mut().enumerate() {
            let base = (c * n + v) * 3;
            *off = Vector3::new(
                read_f64(&off_bytes, base),
                read_f64(&off_bytes, base + 1),
                read_f64(&off_bytes, base + 2),
            );
        }
    }
    grid.set_offset_clamp(sidecar.offset_clamp)?;
    Ok(grid)
}
