//! Static shape fit: optimizes per-class SDF values and vertex offsets so
//! the extracted surfaces match a dense reference target.
//!
//! The objective per class is a symmetric chamfer term between samples of
//! the extracted surface and samples of the target, plus (for mesh targets)
//! an L1 term tying grid SDF values to signed distances queried from the
//! target mesh at the base lattice positions. Gradients reach the SDF and
//! offset variables through the closed-form marching-tets Jacobians.

use super::{derive_seed, FitConfig};
use crate::meshops::{chamfer_points, mesh_sdf_query, sample_surface, sample_surface_with_bary};
use crate::slicegeom::{sample_polyline, SliceSet};
use crate::tetgrid::{marching_tets_grad, SurfaceGradients, SurfaceMesh, TetGrid};
use crate::{CoreError, Result};
use nalgebra::{Point3, Vector3};

/// Dense reference target for the static stage.
pub enum StaticTarget<'a> {
    /// One ground-truth mesh per class.
    Meshes(&'a [SurfaceMesh]),
    /// Dense contour observations; the SDF term is dropped and chamfer runs
    /// against the contour points in 3D.
    Slices(&'a SliceSet),
}

/// Gradient of the full static objective in physical variable units:
/// per-mm for SDF values, per normalized offset unit for offsets.
pub struct StaticGradient {
    pub d_sdf: Vec<f64>,
    pub d_offsets: Vec<Vector3<f64>>,
}

/// Frozen sampling: fit-side (triangle, barycentric) pairs and target points,
/// pinned at a reference state so the objective can be re-evaluated under
/// small perturbations as one fixed smooth function.
pub struct StaticPin {
    fit: Vec<Vec<(u32, [f64; 3])>>,
    targets: Vec<Vec<Point3<f64>>>,
}

pub(crate) struct StaticProblem {
    pub grid: TetGrid,
    pub n: usize,
    pub classes: usize,
    /// mm per SDF parameter unit; keeps Adam's step meaningful across blocks
    pub sdf_scale: f64,
    pub cfg: FitConfig,
    pub sdf_targets: Option<Vec<Vec<f64>>>,
    pub target_meshes: Option<Vec<SurfaceMesh>>,
    pub slice_points: Option<Vec<Vec<Point3<f64>>>>,
    pub last_cd: Vec<f64>,
    cache_key: Vec<f64>,
    cache: Option<Vec<(SurfaceMesh, SurfaceGradients)>>,
}

impl StaticProblem {
    pub fn new(grid: &TetGrid, target: &StaticTarget, cfg: &FitConfig) -> Result<StaticProblem> {
        let classes = grid.class_count();
        let n = grid.vertex_count();
        let spacing = grid.spacing_mm();

        let mut sdf_targets = None;
        let mut target_meshes = None;
        let mut slice_points = None;
        match target {
            StaticTarget::Meshes(meshes) => {
                if meshes.len() != classes {
                    return Err(CoreError::invalid(format!(
                        "target has {} classes, grid has {classes}",
                        meshes.len()
                    )));
                }
                let base: Vec<Point3<f64>> = grid
                    .base_vertices()
                    .iter()
                    .map(|v| Point3::from(v.coords * spacing))
                    .collect();
                let mut targets = Vec::with_capacity(classes);
                for mesh in meshes.iter() {
                    targets.push(mesh_sdf_query(mesh, &base)?);
                }
                sdf_targets = Some(targets);
                target_meshes = Some(meshes.to_vec());
            }
            StaticTarget::Slices(set) => {
                set.validate()?;
                let obs_classes = set
                    .observations
                    .iter()
                    .map(|o| o.contours.len())
                    .max()
                    .unwrap_or(0);
                if obs_classes != classes {
                    return Err(CoreError::invalid(format!(
                        "observations carry {obs_classes} classes, grid has {classes}"
                    )));
                }
                let mut pts = vec![Vec::new(); classes];
                for obs in &set.observations {
                    for (c, contours) in obs.contours.iter().enumerate() {
                        for poly in contours {
                            for s in sample_polyline(poly, cfg.contour_samples_per_mm) {
                                pts[c].push(obs.plane.slice_to_world(s[0], s[1], 0.0));
                            }
                        }
                    }
                }
                slice_points = Some(pts);
            }
        }

        Ok(StaticProblem {
            grid: grid.clone(),
            n,
            classes,
            sdf_scale: 0.1 * spacing,
            cfg: cfg.clone(),
            sdf_targets,
            target_meshes,
            slice_points,
            last_cd: vec![f64::NAN; classes],
            cache_key: Vec::new(),
            cache: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.classes * self.n * 4
    }

    fn sdf_block(&self) -> usize {
        self.classes * self.n
    }

    pub fn pack(&self) -> Vec<f64> {
        let clamp = self.grid.offset_clamp();
        let mut p = Vec::with_capacity(self.param_count());
        for c in 0..self.classes {
            p.extend(self.grid.sdf(c).iter().map(|s| s / self.sdf_scale));
        }
        for c in 0..self.classes {
            for o in self.grid.offsets(c) {
                p.push(o.x / clamp);
                p.push(o.y / clamp);
                p.push(o.z / clamp);
            }
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let clamp = self.grid.offset_clamp();
        let n = self.n;
        let block = self.sdf_block();
        let sdf_scale = self.sdf_scale;
        for c in 0..self.classes {
            for (dst, src) in self.grid.sdf_mut(c).iter_mut().zip(&params[c * n..(c + 1) * n]) {
                *dst = src * sdf_scale;
            }
            let offs = self.grid.offsets_mut(c);
            for (i, o) in offs.iter_mut().enumerate() {
                let k = block + (c * n + i) * 3;
                *o = Vector3::new(params[k], params[k + 1], params[k + 2]) * clamp;
            }
        }
    }

    /// Clamps the offset block into its unit box; SDF values are free.
    pub fn project(params: &mut [f64], sdf_block: usize) {
        for p in &mut params[sdf_block..] {
            *p = p.clamp(-1.0, 1.0);
        }
    }

    fn refresh_extraction(&mut self, params: &[f64]) -> Result<()> {
        if self.cache.is_none() || self.cache_key != params {
            self.set_params(params);
            let mut ext = Vec::with_capacity(self.classes);
            for c in 0..self.classes {
                ext.push(marching_tets_grad(&self.grid, c)?);
            }
            self.cache_key = params.to_vec();
            self.cache = Some(ext);
        }
        Ok(())
    }

    /// Draws this state's fit samples and target points: the pinned smooth
    /// objective used by gradient checks.
    pub fn pin(&mut self, params: &[f64]) -> Result<StaticPin> {
        self.refresh_extraction(params)?;
        let cfg = &self.cfg;
        let ext = self.cache.as_ref().unwrap();
        let mut fit = Vec::with_capacity(self.classes);
        let mut targets = Vec::with_capacity(self.classes);
        for c in 0..self.classes {
            let (mesh, _) = &ext[c];
            if mesh.is_empty() {
                fit.push(Vec::new());
                targets.push(Vec::new());
                continue;
            }
            let (s, bary) =
                sample_surface_with_bary(mesh, cfg.samples_per_mesh, derive_seed(cfg.seed, 0, (c as u64) * 2))?;
            fit.push(
                s.source_triangles
                    .iter()
                    .zip(&bary)
                    .map(|(&t, &b)| (t, b))
                    .collect(),
            );
            let tgt = if let Some(meshes) = &self.target_meshes {
                sample_surface(&meshes[c], cfg.samples_per_mesh, derive_seed(cfg.seed, 0, (c as u64) * 2 + 1))?
                    .points
            } else {
                self.slice_points.as_ref().unwrap()[c].clone()
            };
            targets.push(tgt);
        }
        Ok(StaticPin { fit, targets })
    }

    /// Loss (and optionally the parameter-space gradient) at `params`.
    /// With `pin` set, the pinned samples are used; otherwise samples are
    /// drawn from iteration `iter`'s seed.
    pub fn eval(
        &mut self,
        params: &[f64],
        iter: usize,
        want_grad: bool,
        pin: Option<&StaticPin>,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let cfg = self.cfg.clone();
        let sample_iter = if cfg.freeze_sampling { 0 } else { iter };
        let spacing = self.grid.spacing_mm();
        let clamp = self.grid.offset_clamp();
        let n = self.n;
        let classes = self.classes;
        let block = self.sdf_block();

        self.refresh_extraction(params)?;

        let mut loss = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; params.len()]);
        let mut cd_values = vec![f64::NAN; classes];

        for c in 0..classes {
            let mesh_empty = self.cache.as_ref().unwrap()[c].0.is_empty();
            if mesh_empty {
                if pin.is_none() && iter >= cfg.warmup_iters {
                    return Err(CoreError::DegenerateClass {
                        class: c,
                        detail: format!("surface vanished at iteration {iter}"),
                    });
                }
                log::warn!("class {c}: empty surface (iteration {iter})");
                continue;
            }

            // fit-side samples: (triangle, barycentric) pairs
            let samples: Vec<(u32, [f64; 3])> = if let Some(pin) = pin {
                pin.fit[c].clone()
            } else {
                let (s, bary) = sample_surface_with_bary(
                    &self.cache.as_ref().unwrap()[c].0,
                    cfg.samples_per_mesh,
                    derive_seed(cfg.seed, sample_iter as u64, (c as u64) * 2),
                )?;
                s.source_triangles.iter().zip(&bary).map(|(&t, &b)| (t, b)).collect()
            };

            // target points
            let target_points: Vec<Point3<f64>> = if let Some(pin) = pin {
                pin.targets[c].clone()
            } else if let Some(meshes) = &self.target_meshes {
                sample_surface(
                    &meshes[c],
                    cfg.samples_per_mesh,
                    derive_seed(cfg.seed, sample_iter as u64, (c as u64) * 2 + 1),
                )?
                .points
            } else {
                self.slice_points.as_ref().unwrap()[c].clone()
            };
            if target_points.is_empty() || samples.is_empty() {
                log::warn!("class {c}: no usable samples, skipping chamfer term");
                continue;
            }

            let ext = self.cache.as_ref().unwrap();
            let (mesh, grads) = &ext[c];
            let fit_points: Vec<Point3<f64>> = samples
                .iter()
                .map(|&(ti, b)| {
                    let t = mesh.triangles[ti as usize];
                    Point3::from(
                        mesh.vertices[t[0] as usize].coords * b[0]
                            + mesh.vertices[t[1] as usize].coords * b[1]
                            + mesh.vertices[t[2] as usize].coords * b[2],
                    )
                })
                .collect();
            let (cd, grad_pts) = chamfer_points(&fit_points, &target_points)?;
            cd_values[c] = cd;
            loss += cfg.lambda_cd * cd;

            if let Some(g) = grad.as_mut() {
                // pull chamfer gradients back: sample -> triangle vertices ->
                // generating grid edge (SDF values and positions)
                let mut gmesh = vec![Vector3::<f64>::zeros(); mesh.vertices.len()];
                for (j, gp) in grad_pts.iter().enumerate() {
                    let (ti, b) = samples[j];
                    let tri = mesh.triangles[ti as usize];
                    let gs = gp * cfg.lambda_cd;
                    for k in 0..3 {
                        gmesh[tri[k] as usize] += gs * b[k];
                    }
                }
                for (sv, gm) in gmesh.iter().enumerate() {
                    if gm.x == 0.0 && gm.y == 0.0 && gm.z == 0.0 {
                        continue;
                    }
                    let e = grads.entries[sv];
                    let (a, b) = (e.grid_a as usize, e.grid_b as usize);
                    g[c * n + a] += gm.dot(&e.d_sdf_a) * self.sdf_scale;
                    g[c * n + b] += gm.dot(&e.d_sdf_b) * self.sdf_scale;
                    // position chain rule, scaled into offset-box units
                    let s = spacing * clamp;
                    let ka = block + (c * n + a) * 3;
                    let kb = block + (c * n + b) * 3;
                    let (wa, wb) = (1.0 - e.t, e.t);
                    g[ka] += gm.x * wa * s;
                    g[ka + 1] += gm.y * wa * s;
                    g[ka + 2] += gm.z * wa * s;
                    g[kb] += gm.x * wb * s;
                    g[kb + 1] += gm.y * wb * s;
                    g[kb + 2] += gm.z * wb * s;
                }
            }

            if let Some(targets) = &self.sdf_targets {
                let tgt = &targets[c];
                let inv_n = 1.0 / n as f64;
                let mut l1 = 0.0;
                for i in 0..n {
                    let r = params[c * n + i] * self.sdf_scale - tgt[i];
                    l1 += r.abs();
                    if let Some(g) = grad.as_mut() {
                        g[c * n + i] += cfg.lambda_sdf * r.signum() * inv_n * self.sdf_scale;
                    }
                }
                loss += cfg.lambda_sdf * l1 * inv_n;
            }
        }

        self.last_cd = cd_values;
        Ok((loss, grad))
    }
}

/// Value and gradient of the full static objective at the grid's current
/// state, together with the pinned sampling that defines the smooth
/// objective. Gradients are per physical variable: mm for SDF values,
/// normalized units for offsets.
pub fn static_objective(
    grid: &TetGrid,
    target: &StaticTarget,
    cfg: &FitConfig,
) -> Result<(f64, StaticGradient, StaticPin)> {
    let mut problem = StaticProblem::new(grid, target, cfg)?;
    let params = problem.pack();
    let pin = problem.pin(&params)?;
    let (loss, grad) = problem.eval(&params, 0, true, Some(&pin))?;
    let grad = grad.unwrap();
    let n = problem.n;
    let classes = problem.classes;
    let block = classes * n;
    let clamp = grid.offset_clamp();
    let sdf_scale = problem.sdf_scale;
    let d_sdf: Vec<f64> = grad[..block].iter().map(|g| g / sdf_scale).collect();
    let mut d_offsets = Vec::with_capacity(block);
    for i in 0..block {
        // parameter is offset/clamp, so d/d(offset) = d/d(param) / clamp
        d_offsets.push(
            Vector3::new(grad[block + i * 3], grad[block + i * 3 + 1], grad[block + i * 3 + 2])
                / clamp,
        );
    }
    Ok((loss, StaticGradient { d_sdf, d_offsets }, pin))
}

/// The pinned objective value at a (perturbed) grid state; the
/// finite-difference counterpart of [`static_objective`].
pub fn static_objective_value(
    grid: &TetGrid,
    target: &StaticTarget,
    cfg: &FitConfig,
    pin: &StaticPin,
) -> Result<f64> {
    let mut problem = StaticProblem::new(grid, target, cfg)?;
    let params = problem.pack();
    let (loss, _) = problem.eval(&params, 0, false, Some(pin))?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshops::testmesh::sphere_mesh;
    use crate::tetgrid::build_grid;
    use rand::{Rng, SeedableRng};

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let spacing = 40.0;
        let mut grid = build_grid(12, 1, spacing).unwrap();
        for s in grid.sdf_mut(0) {
            *s += rng.gen_range(-0.5..0.5);
        }
        let clamp = grid.offset_clamp();
        let offs: Vec<Vector3<f64>> = (0..grid.vertex_count())
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-0.5..0.5) * clamp,
                    rng.gen_range(-0.5..0.5) * clamp,
                    rng.gen_range(-0.5..0.5) * clamp,
                )
            })
            .collect();
        grid.set_offsets(0, &offs).unwrap();

        let target = [sphere_mesh(16, spacing)];
        let cfg = FitConfig {
            samples_per_mesh: 256,
            ..FitConfig::default()
        };
        let (_, analytic, pin) =
            static_objective(&grid, &StaticTarget::Meshes(&target), &cfg).unwrap();

        let mut checked = 0;
        for _ in 0..60 {
            if checked >= 12 {
                break;
            }
            let vi = rng.gen_range(0..grid.vertex_count());
            if rng.gen_bool(0.5) {
                let an = analytic.d_sdf[vi];
                if an.abs() < 1e-9 || grid.sdf(0)[vi].abs() < 0.05 {
                    continue;
                }
                let h = 1e-5 * spacing;
                let mut gp = grid.clone();
                gp.sdf_mut(0)[vi] += h;
                let mut gm = grid.clone();
                gm.sdf_mut(0)[vi] -= h;
                let fp =
                    static_objective_value(&gp, &StaticTarget::Meshes(&target), &cfg, &pin).unwrap();
                let fm =
                    static_objective_value(&gm, &StaticTarget::Meshes(&target), &cfg, &pin).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(an.abs());
                assert!(
                    (fd - an).abs() / denom < 1e-3,
                    "sdf grad at {vi}: fd {fd} vs analytic {an}"
                );
                checked += 1;
            } else {
                let axis = rng.gen_range(0..3);
                let an = analytic.d_offsets[vi][axis];
                if an.abs() < 1e-9 {
                    continue;
                }
                let h = 1e-7;
                let mut op = offs.clone();
                op[vi][axis] += h;
                let mut om = offs.clone();
                om[vi][axis] -= h;
                let mut gp = grid.clone();
                gp.set_offsets(0, &op).unwrap();
                let mut gm = grid.clone();
                gm.set_offsets(0, &om).unwrap();
                let fp =
                    static_objective_value(&gp, &StaticTarget::Meshes(&target), &cfg, &pin).unwrap();
                let fm =
                    static_objective_value(&gm, &StaticTarget::Meshes(&target), &cfg, &pin).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(an.abs());
                assert!(
                    (fd - an).abs() / denom < 1e-3,
                    "offset grad at {vi}.{axis}: fd {fd} vs analytic {an}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 8, "too few checkable variables ({checked})");
    }
}
