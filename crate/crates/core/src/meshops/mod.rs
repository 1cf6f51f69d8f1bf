//! Mesh-level numerics: surface sampling, chamfer distance with analytic
//! gradients, signed volumes, voxelization, Dice overlap and SDF queries.

mod nn;
mod sdfquery;
mod voxel;

pub use nn::PointGrid;
pub use sdfquery::mesh_sdf_query;
pub use voxel::{
    dice, read_label_volume, voxelize, voxelize_multi, write_label_volume, LabelVolume,
    VolumeGeometry,
};

use crate::tetgrid::SurfaceMesh;
use crate::{CoreError, Result};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Area-weighted surface samples.
#[derive(Debug, Clone)]
pub struct PointSample {
    pub points: Vec<Point3<f64>>,
    pub source_triangles: Vec<u32>,
    /// Per-point weight; all equal, summing to the total mesh area.
    pub weights: Vec<f64>,
}

/// Draws `n` area-weighted uniform samples; deterministic for a fixed seed.
pub fn sample_surface(mesh: &SurfaceMesh, n: usize, seed: u64) -> Result<PointSample> {
    sample_surface_with_bary(mesh, n, seed).map(|(s, _)| s)
}

/// As [`sample_surface`], also returning each sample's barycentric
/// coordinates (needed to pull gradients back to mesh vertices).
pub fn sample_surface_with_bary(
    mesh: &SurfaceMesh,
    n: usize,
    seed: u64,
) -> Result<(PointSample, Vec<[f64; 3]>)> {
    if n == 0 {
        return Err(CoreError::invalid("sample count must be positive"));
    }
    if mesh.is_empty() {
        return Err(CoreError::empty("cannot sample an empty mesh"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(CoreError::empty("mesh has zero surface area"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    let mut bary = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen_range(0.0..total);
        let ti = cumulative.partition_point(|&c| c <= u).min(mesh.triangles.len() - 1);
        let t = mesh.triangles[ti];
        let (mut r1, mut r2) = (rng.gen::<f64>(), rng.gen::<f64>());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        let b = [1.0 - r1 - r2, r1, r2];
        let p = mesh.vertices[t[0] as usize].coords * b[0]
            + mesh.vertices[t[1] as usize].coords * b[1]
            + mesh.vertices[t[2] as usize].coords * b[2];
        points.push(Point3::from(p));
        source.push(ti as u32);
        bary.push(b);
    }
    Ok((
        PointSample {
            points,
            source_triangles: source,
            weights: vec![total / n as f64; n],
        },
        bary,
    ))
}

/// Symmetric squared-L2 chamfer distance in mm^2:
/// `mean_a min_b |a-b|^2 + mean_b min_a |b-a|^2`, with the analytic gradient
/// with respect to `a`'s points (both directions contribute). Nearest
/// neighbor ties break to the lowest index.
pub fn chamfer(a: &PointSample, b: &PointSample) -> Result<(f64, Vec<Vector3<f64>>)> {
    chamfer_points(&a.points, &b.points)
}

/// [`chamfer`] on bare point lists.
pub fn chamfer_points(
    a: &[Point3<f64>],
    b: &[Point3<f64>],
) -> Result<(f64, Vec<Vector3<f64>>)> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::empty("chamfer requires two nonempty point sets"));
    }
    let grid_b = PointGrid::build(b);
    let grid_a = PointGrid::build(a);

    let nn_ab: Vec<(usize, f64)> = a
        .par_iter()
        .with_min_len(256)
        .map(|p| grid_b.nearest(p))
        .collect();
    let nn_ba: Vec<(usize, f64)> = b
        .par_iter()
        .with_min_len(256)
        .map(|p| grid_a.nearest(p))
        .collect();

    let inv_na = 1.0 / a.len() as f64;
    let inv_nb = 1.0 / b.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![Vector3::zeros(); a.len()];
    for (i, &(j, d2)) in nn_ab.iter().enumerate() {
        value += d2 * inv_na;
        grad[i] += (a[i] - b[j]) * (2.0 * inv_na);
    }
    for (j, &(i, d2)) in nn_ba.iter().enumerate() {
        value += d2 * inv_nb;
        grad[i] += (a[i] - b[j]) * (2.0 * inv_nb);
    }
    Ok((value, grad))
}

/// Divergence-theorem signed volume in millilitres; positive for outward
/// orientation. The mesh must be closed.
pub fn mesh_volume(mesh: &SurfaceMesh) -> Result<f64> {
    if mesh.is_empty() {
        return Ok(0.0);
    }
    if !mesh.is_watertight() {
        return Err(CoreError::open("mesh_volume requires a watertight mesh"));
    }
    let mut six_vol = 0.0;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0] as usize].coords;
        let b = mesh.vertices[t[1] as usize].coords;
        let c = mesh.vertices[t[2] as usize].coords;
        six_vol += a.cross(&b).dot(&c);
    }
    Ok(six_vol / 6.0 / 1000.0)
}

#[cfg(test)]
pub(crate) mod testmesh {
    use super::*;
    use crate::tetgrid::{build_grid, marching_tets};

    /// Sphere of radius 0.25*spacing, centered, from the grid's default SDF.
    pub(crate) fn sphere_mesh(resolution: u32, spacing_mm: f64) -> SurfaceMesh {
        let grid = build_grid(resolution, 1, spacing_mm).unwrap();
        marching_tets(&grid, 0).unwrap()
    }

    /// Axis-aligned cube spanning [0, side]^3, outward oriented.
    pub(crate) fn cube_mesh(side_mm: f64) -> SurfaceMesh {
        let s = side_mm;
        let v = |x: f64, y: f64, z: f64| Point3::new(x * s, y * s, z * s);
        SurfaceMesh {
            vertices: vec![
                v(0., 0., 0.),
                v(1., 0., 0.),
                v(1., 1., 0.),
                v(0., 1., 0.),
                v(0., 0., 1.),
                v(1., 0., 1.),
                v(1., 1., 1.),
                v(0., 1., 1.),
            ],
            triangles: vec![
                [0, 2, 1],
                [0, 3, 2],
                [4, 5, 6],
                [4, 6, 7],
                [0, 1, 5],
                [0, 5, 4],
                [2, 3, 7],
                [2, 7, 6],
                [0, 4, 7],
                [0, 7, 3],
                [1, 2, 6],
                [1, 6, 5],
            ],
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testmesh::{cube_mesh, sphere_mesh};
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Point3;

    fn unit_square_mesh() -> SurfaceMesh {
        SurfaceMesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            ..Default::default()
        }
    }

    fn sample_points(points: &[Point3<f64>]) -> PointSample {
        PointSample {
            points: points.to_vec(),
            source_triangles: vec![0; points.len()],
            weights: vec![1.0; points.len()],
        }
    }

    #[test]
    fn square_samples_stay_inside_and_weights_sum_to_area() {
        let mesh = unit_square_mesh();
        let s = sample_surface(&mesh, 4, 11).unwrap();
        for p in &s.points {
            assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
            assert_eq!(p.z, 0.0);
        }
        let w: f64 = s.weights.iter().sum();
        assert_relative_eq!(w, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(sample_surface(&unit_square_mesh(), 0, 1).is_err());
    }

    #[test]
    fn empty_mesh_rejected() {
        assert!(sample_surface(&SurfaceMesh::default(), 10, 1).is_err());
    }

    #[test]
    fn sphere_sample_centroid_near_center() {
        let mesh = sphere_mesh(32, 100.0);
        let s = sample_surface(&mesh, 10_000, 3).unwrap();
        let centroid = s
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / s.points.len() as f64;
        let center = Vector3::new(50.0, 50.0, 50.0);
        // Monte-Carlo symmetry: centroid within 1% of domain scale.
        assert!((centroid - center).norm() < 0.01 * 100.0, "{centroid:?}");
    }

    #[test]
    fn samples_lie_on_their_source_triangle() {
        let mesh = sphere_mesh(16, 10.0);
        let (s, bary) = sample_surface_with_bary(&mesh, 500, 5).unwrap();
        for ((p, &ti), b) in s.points.iter().zip(&s.source_triangles).zip(&bary) {
            let t = mesh.triangles[ti as usize];
            let q = mesh.vertices[t[0] as usize].coords * b[0]
                + mesh.vertices[t[1] as usize].coords * b[1]
                + mesh.vertices[t[2] as usize].coords * b[2];
            assert!((p.coords - q).norm() < 1e-9);
        }
    }

    #[test]
    fn chamfer_identical_sets_is_zero() {
        let pts: Vec<Point3<f64>> = (0..40)
            .map(|i| Point3::new(i as f64 * 0.1, (i % 5) as f64, 0.3))
            .collect();
        let s = sample_points(&pts);
        let (v, g) = chamfer(&s, &s).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|gi| gi.norm() == 0.0));
    }

    #[test]
    fn chamfer_two_singletons() {
        let a = sample_points(&[Point3::new(0.0, 0.0, 0.0)]);
        let b = sample_points(&[Point3::new(1.0, 0.0, 0.0)]);
        let (v, g) = chamfer(&a, &b).unwrap();
        // mean over a of min d^2, plus mean over b: 1 + 1
        assert_relative_eq!(v, 2.0);
        // both directions pull a toward b: 2(a-b)/1 + 2(a-b)/1
        assert_relative_eq!(g[0].x, -4.0);
    }

    #[test]
    fn chamfer_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let na = rng.gen_range(1..60);
            let nb = rng.gen_range(1..60);
            let randp = |rng: &mut rand_chacha::ChaCha8Rng| {
                Point3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                )
            };
            let a: Vec<_> = (0..na).map(|_| randp(&mut rng)).collect();
            let b: Vec<_> = (0..nb).map(|_| randp(&mut rng)).collect();
            let (v, _) = chamfer_points(&a, &b).unwrap();

            let mut oracle = 0.0;
            for p in &a {
                oracle += b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
                    / na as f64;
            }
            for q in &b {
                oracle += a.iter().map(|p| (q - p).norm_squared()).fold(f64::INFINITY, f64::min)
                    / nb as f64;
            }
            assert_relative_eq!(v, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for case in 0..50 {
            let na = rng.gen_range(2..25);
            let nb = rng.gen_range(2..25);
            let randp = |rng: &mut rand_chacha::ChaCha8Rng| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            };
            let a: Vec<_> = (0..na).map(|_| randp(&mut rng)).collect();
            let b: Vec<_> = (0..nb).map(|_| randp(&mut rng)).collect();
            let (_, grad) = chamfer_points(&a, &b).unwrap();

            let i = rng.gen_range(0..na);
            let axis = rng.gen_range(0..3);
            let h = 1e-6;
            let mut ap = a.clone();
            ap[i][axis] += h;
            let mut am = a.clone();
            am[i][axis] -= h;
            let (vp, _) = chamfer_points(&ap, &b).unwrap();
            let (vm, _) = chamfer_points(&am, &b).unwrap();
            let fd = (vp - vm) / (2.0 * h);
            let an = grad[i][axis];
            let denom = fd.abs().max(an.abs());
            if denom > 1e-8 {
                assert!(
                    (fd - an).abs() / denom < 1e-5,
                    "case {case}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn chamfer_symmetry() {
        let a: Vec<Point3<f64>> = (0..30)
            .map(|i| Point3::new(i as f64, (i * 3 % 7) as f64, 1.0))
            .collect();
        let b: Vec<Point3<f64>> = (0..20)
            .map(|i| Point3::new(i as f64 + 0.3, (i * 5 % 11) as f64, -1.0))
            .collect();
        let (vab, _) = chamfer_points(&a, &b).unwrap();
        let (vba, _) = chamfer_points(&b, &a).unwrap();
        assert!((vab - vba).abs() < 1e-12);
    }

    #[test]
    fn chamfer_rigid_invariance() {
        use nalgebra::Rotation3;
        let a: Vec<Point3<f64>> = (0..25)
            .map(|i| Point3::new((i % 5) as f64, (i / 5) as f64, 0.5 * i as f64))
            .collect();
        let b: Vec<Point3<f64>> = (0..25)
            .map(|i| Point3::new((i % 5) as f64 + 0.2, (i / 5) as f64 - 0.4, 0.45 * i as f64))
            .collect();
        let (v0, _) = chamfer_points(&a, &b).unwrap();
        let rot = Rotation3::from_euler_angles(0.3, -0.8, 1.2);
        let t = Vector3::new(5.0, -2.0, 7.0);
        let ar: Vec<_> = a.iter().map(|p| rot * p + t).collect();
        let br: Vec<_> = b.iter().map(|p| rot * p + t).collect();
        let (v1, _) = chamfer_points(&ar, &br).unwrap();
        assert!((v0 - v1).abs() < 1e-9, "{v0} vs {v1}");
    }

    #[test]
    fn chamfer_empty_inputs_rejected() {
        let a = sample_points(&[Point3::origin()]);
        let empty = PointSample {
            points: vec![],
            source_triangles: vec![],
            weights: vec![],
        };
        assert!(chamfer(&a, &empty).is_err());
        assert!(chamfer(&empty, &a).is_err());
    }

    #[test]
    fn unit_cube_volume_is_one_microliter() {
        let v = mesh_volume(&cube_mesh(1.0)).unwrap();
        assert_relative_eq!(v, 0.001, epsilon = 1e-15);
    }

    #[test]
    fn flipped_cube_volume_is_negative() {
        let mut m = cube_mesh(1.0);
        m.reverse_orientation();
        let v = mesh_volume(&m).unwrap();
        assert_relative_eq!(v, -0.001, epsilon = 1e-15);
    }

    #[test]
    fn sphere_volume_within_one_percent() {
        // resolution 64, radius 0.25*80mm = 20mm
        let mesh = sphere_mesh(64, 80.0);
        let v = mesh_volume(&mesh).unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 20.0f64.powi(3) / 1000.0;
        assert!((v - analytic).abs() / analytic < 0.01, "{v} vs {analytic}");
        assert!((analytic - 33.51).abs() < 0.01);
    }

    #[test]
    fn sphere_volume_error_non_increasing_with_resolution() {
        use rand::{Rng, SeedableRng};
        // Median error over 5 random sphere centers, resolutions 16/32/64.
        let analytic = |r: f64| 4.0 / 3.0 * std::f64::consts::PI * r.powi(3) / 1000.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100);
        let centers: Vec<Point3<f64>> = (0..5)
            .map(|_| {
                Point3::new(
                    rng.gen_range(0.4..0.6),
                    rng.gen_range(0.4..0.6),
                    rng.gen_range(0.4..0.6),
                )
            })
            .collect();
        let spacing = 100.0;
        let radius_norm = 0.22;
        let mut medians = Vec::new();
        for &res in &[16u32, 32, 64] {
            let mut errs: Vec<f64> = centers
                .iter()
                .map(|c| {
                    let mut grid = crate::tetgrid::build_grid(res, 1, spacing).unwrap();
                    let verts = grid.base_vertices().to_vec();
                    for (s, v) in grid.sdf_mut(0).iter_mut().zip(&verts) {
                        *s = ((v - c).norm() - radius_norm) * spacing;
                    }
                    let mesh = crate::tetgrid::marching_tets(&grid, 0).unwrap();
                    let v = mesh_volume(&mesh).unwrap();
                    let a = analytic(radius_norm * spacing);
                    (v - a).abs() / a
                })
                .collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(errs[2]);
        }
        assert!(
            medians[0] >= medians[1] && medians[1] >= medians[2],
            "volume error not monotone: {medians:?}"
        );
    }

    #[test]
    fn open_mesh_volume_rejected() {
        let mut m = cube_mesh(1.0);
        m.triangles.pop();
        assert!(matches!(mesh_volume(&m), Err(CoreError::OpenSurface(_))));
    }

    #[test]
    fn volume_translation_invariance_and_cubic_scaling() {
        let m = sphere_mesh(24, 50.0);
        let v0 = mesh_volume(&m).unwrap();
        let mut shifted = m.clone();
        for p in &mut shifted.vertices {
            *p += Vector3::new(123.0, -45.0, 9.0);
        }
        let v1 = mesh_volume(&shifted).unwrap();
        assert!((v1 - v0).abs() / v0 < 1e-9);

        let lambda = 1.7;
        let mut scaled = m.clone();
        for p in &mut scaled.vertices {
            *p = Point3::from(p.coords * lambda);
        }
        let v2 = mesh_volume(&scaled).unwrap();
        assert_relative_eq!(v2 / v0, lambda.powi(3), epsilon = 1e-9);
    }
}
