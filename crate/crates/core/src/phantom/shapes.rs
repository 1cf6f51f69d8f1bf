//! Parametric shape builders: icospheres, spheroid shells and the crescent
//! cavity clipped against the outer wall sphere.

use crate::tetgrid::SurfaceMesh;
use nalgebra::{Point3, Vector3};
use std::collections::HashMap;

/// Unit icosphere: icosahedron subdivided `subdivisions` times, vertices on
/// the unit sphere, outward oriented.
pub fn icosphere(subdivisions: u32) -> SurfaceMesh {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|v| Point3::from(Vector3::new(v[0], v[1], v[2]).normalize()))
        .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for i in 0..3 {
                let a = f[i];
                let b = f[(i + 1) % 3];
                let key = (a.min(b), a.max(b));
                mid[i] = *midpoint.entry(key).or_insert_with(|| {
                    let p = (vertices[a as usize].coords + vertices[b as usize].coords).normalize();
                    vertices.push(Point3::from(p));
                    (vertices.len() - 1) as u32
                });
            }
            next_faces.push([f[0], mid[0], mid[2]]);
            next_faces.push([f[1], mid[1], mid[0]]);
            next_faces.push([f[2], mid[2], mid[1]]);
            next_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = next_faces;
    }

    SurfaceMesh {
        vertices,
        triangles: faces,
        ..Default::default()
    }
}

/// Smooth radial modulation field on the unit sphere: a seeded sum of
/// squared projections, normalized into [-1, 1].
pub struct RadialNoise {
    dirs: Vec<Vector3<f64>>,
    coeffs: Vec<f64>,
    norm: f64,
}

impl RadialNoise {
    pub fn new(seed: u64) -> RadialNoise {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut dirs = Vec::new();
        let mut coeffs = Vec::new();
        for _ in 0..4 {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            dirs.push(if v.norm() < 1e-6 { Vector3::x() } else { v.normalize() });
            coeffs.push(rng.gen_range(-1.0..1.0));
        }
        let norm = coeffs.iter().map(|c: &f64| c.abs()).sum::<f64>().max(1e-12);
        RadialNoise { dirs, coeffs, norm }
    }

    pub fn eval(&self, dir: &Vector3<f64>) -> f64 {
        self.dirs
            .iter()
            .zip(&self.coeffs)
            .map(|(u, c)| c * dir.dot(u).powi(2))
            .sum::<f64>()
            / self.norm
    }
}

/// Scales a unit icosphere to radius `radius`, optionally modulated by
/// `noise` with amplitude `amp` (same length unit as `radius`).
pub fn noisy_sphere(unit: &SurfaceMesh, radius: f64, noise: Option<(&RadialNoise, f64)>) -> SurfaceMesh {
    let mut out = unit.clone();
    for p in &mut out.vertices {
        let dir = p.coords;
        let r = match noise {
            Some((field, amp)) if amp != 0.0 => radius + amp * field.eval(&dir),
            _ => radius,
        };
        *p = Point3::from(dir * r);
    }
    out
}

/// Merges `outer` with an orientation-reversed `inner` into one shell mesh.
pub fn shell(outer: &SurfaceMesh, inner: &SurfaceMesh) -> SurfaceMesh {
    let mut mesh = outer.clone();
    let base = mesh.vertices.len() as u32;
    mesh.vertices.extend(inner.vertices.iter().copied());
    mesh.triangles
        .extend(inner.triangles.iter().map(|t| [t[0] + base, t[2] + base, t[1] + base]));
    mesh
}

/// Crescent cavity: the part of a sphere of radius `rb` centered at
/// (`offset`, 0, 0) lying outside the wall sphere of radius `ra` centered at
/// the origin. The shared boundary circle is welded so the mesh is
/// watertight; the septal patch lies exactly on the wall sphere.
pub fn crescent(ra: f64, rb: f64, offset: f64, segments: usize, rings: usize) -> SurfaceMesh {
    let d = offset;
    assert!(d > (ra - rb).abs() && d < ra + rb, "spheres must overlap partially");
    let cos_phi = ((rb * rb + d * d - ra * ra) / (2.0 * d * rb)).clamp(-1.0, 1.0);
    let cos_chi = ((ra * ra + d * d - rb * rb) / (2.0 * d * ra)).clamp(-1.0, 1.0);
    let phi_star = cos_phi.acos();
    let chi_star = cos_chi.acos();

    let m = segments.max(8);
    let n_outer = rings.max(2);
    let n_septal = rings.max(2);

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    // shared rim circle, computed once from the wall-sphere parameterization
    let rim: Vec<u32> = (0..m)
        .map(|j| {
            let psi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            let p = Point3::new(
                ra * chi_star.cos(),
                ra * chi_star.sin() * psi.cos(),
                ra * chi_star.sin() * psi.sin(),
            );
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
        .collect();

    // outer patch on sphere B: polar angle from phi_star (rim) to pi (pole),
    // measured from the axis pointing from B toward A (-x).
    let mut prev_ring = rim.clone();
    for i in 1..=n_outer {
        let phi = phi_star + (std::f64::consts::PI - phi_star) * i as f64 / n_outer as f64;
        if i == n_outer {
            let pole = Point3::new(d + rb, 0.0, 0.0);
            vertices.push(pole);
            let pole_id = (vertices.len() - 1) as u32;
            for j in 0..m {
                let jn = (j + 1) % m;
                triangles.push([prev_ring[j], prev_ring[jn], pole_id]);
            }
        } else {
            let ring: Vec<u32> = (0..m)
                .map(|j| {
                    let psi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    // w = -x, e1 = y, e2 = z
                    let p = Point3::new(
                        d - rb * phi.cos(),
                        rb * phi.sin() * psi.cos(),
                        rb * phi.sin() * psi.sin(),
                    );
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                })
                .collect();
            for j in 0..m {
                let jn = (j + 1) % m;
                triangles.push([prev_ring[j], prev_ring[jn], ring[j]]);
                triangles.push([ring[j], prev_ring[jn], ring[jn]]);
            }
            prev_ring = ring;
        }
    }

    // septal patch on sphere A: polar angle from chi_star (rim) down to 0
    // (pole toward B), orientation reversed so normals point into the wall.
    let mut prev_ring = rim;
    for i in 1..=n_septal {
        let chi = chi_star * (1.0 - i as f64 / n_septal as f64);
        if i == n_septal {
            let pole = Point3::new(ra, 0.0, 0.0);
            vertices.push(pole);
            let pole_id = (vertices.len() - 1) as u32;
            for j in 0..m {
                let jn = (j + 1) % m;
                triangles.push([prev_ring[jn], prev_ring[j], pole_id]);
            }
        } else {
            let ring: Vec<u32> = (0..m)
                .map(|j| {
                    let psi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    let p = Point3::new(
                        ra * chi.cos(),
                        ra * chi.sin() * psi.cos(),
                        ra * chi.sin() * psi.sin(),
                    );
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                })
                .collect();
            for j in 0..m {
                let jn = (j + 1) % m;
                triangles.push([prev_ring[jn], prev_ring[j], ring[j]]);
                triangles.push([prev_ring[jn], ring[j], ring[jn]]);
            }
            prev_ring = ring;
        }
    }

    let mut mesh = SurfaceMesh {
        vertices,
        triangles,
        ..Default::default()
    };
    // Ensure outward orientation: enclosed volume must be positive.
    if signed_volume_mm3(&mesh) < 0.0 {
        mesh.reverse_orientation();
    }
    mesh
}

fn signed_volume_mm3(mesh: &SurfaceMesh) -> f64 {
    let mut six = 0.0;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0] as usize].coords;
        let b = mesh.vertices[t[1] as usize].coords;
        let c = mesh.vertices[t[2] as usize].coords;
        six += a.cross(&b).dot(&c);
    }
    six / 6.0
}

/// Affine frame transform: sphere-space point -> world mm point with radial
/// scale on (x, y), total axial scale on z, then translation to `center`.
pub fn transform_mesh(
    sphere_space: &SurfaceMesh,
    radial: f64,
    axial: f64,
    center: &Point3<f64>,
) -> SurfaceMesh {
    let mut out = sphere_space.clone();
    for p in &mut out.vertices {
        *p = Point3::new(
            center.x + p.x * radial,
            center.y + p.y * radial,
            center.z + p.z * axial,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshops::mesh_volume;

    #[test]
    fn icosphere_counts_and_watertight() {
        let s = icosphere(2);
        assert_eq!(s.triangles.len(), 20 * 4usize.pow(2));
        assert!(s.is_watertight());
        let v = mesh_volume(&s).unwrap();
        assert!(v > 0.0, "outward orientation expected, volume {v}");
    }

    #[test]
    fn icosphere_volume_converges_to_sphere() {
        let s = icosphere(4);
        let v = mesh_volume(&s).unwrap() * 1000.0; // mm^3 for unit radius
        let analytic = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((v - analytic).abs() / analytic < 0.005, "{v}");
    }

    #[test]
    fn crescent_watertight_and_positive() {
        let c = crescent(35.0, 30.0, 38.0, 64, 16);
        assert!(c.is_watertight(), "crescent must be closed");
        let v = mesh_volume(&c).unwrap();
        assert!(v > 0.0);
        // strictly smaller than the full B sphere
        let full = 4.0 / 3.0 * std::f64::consts::PI * 30.0f64.powi(3) / 1000.0;
        assert!(v < full, "{v} vs {full}");
    }

    #[test]
    fn crescent_septal_points_on_wall_sphere() {
        let ra = 35.0;
        let c = crescent(ra, 30.0, 38.0, 48, 12);
        let on_wall = c
            .vertices
            .iter()
            .filter(|p| (p.coords.norm() - ra).abs() < 1e-9)
            .count();
        assert!(on_wall > 100, "septal patch vertices on the wall sphere");
    }

    #[test]
    fn shell_volume_is_difference() {
        let unit = icosphere(3);
        let outer = noisy_sphere(&unit, 2.0, None);
        let inner = noisy_sphere(&unit, 1.0, None);
        let sh = shell(&outer, &inner);
        assert!(sh.is_watertight());
        let vs = mesh_volume(&sh).unwrap();
        let vo = mesh_volume(&outer).unwrap();
        let vi = mesh_volume(&inner).unwrap();
        assert!((vs - (vo - vi)).abs() / (vo - vi) < 1e-9);
    }

    #[test]
    fn radial_noise_is_bounded_and_deterministic() {
        let a = RadialNoise::new(9);
        let b = RadialNoise::new(9);
        let dir = Vector3::new(0.3, -0.5, 0.8).normalize();
        assert_eq!(a.eval(&dir), b.eval(&dir));
        for i in 0..100 {
            let t = i as f64 / 100.0 * std::f64::consts::TAU;
            let d = Vector3::new(t.cos(), t.sin(), (t * 0.7).sin()).normalize();
            assert!(a.eval(&d).abs() <= 1.0 + 1e-12);
        }
    }
}
