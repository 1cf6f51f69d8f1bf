//! Per-frame motion recovery: free per-class per-vertex displacements
//! optimized so the deformed grid's slice contours match the observed 2D
//! contours, under Laplacian smoothness and confidence-weighted anchoring.
//!
//! SDF values are frozen in this stage, so each class's surface topology and
//! interpolation parameters never change: extraction reduces to recomputing
//! surface vertex positions, and only vertices touching sign-crossing edges
//! (plus a few rings) can influence the surface at all. Displacements are
//! therefore restricted to that band.

use super::FitConfig;
use crate::meshops::{chamfer_points, PointGrid};
use crate::slicegeom::{confidence_field, sample_polyline, SliceSet};
use crate::tetgrid::{marching_tets, TetGrid};
use crate::{CoreError, Result};
use nalgebra::{Matrix3, Point3, Vector3};

/// Recovered motion: per-frame, per-class, band-sparse displacement arrays
/// relative to the stage-1 grid. Frame 0 is the reference and carries an
/// identically zero displacement.
#[derive(Debug, Clone)]
pub struct MotionState {
    /// The stage-1 reference grid.
    pub grid: TetGrid,
    /// Per class: sorted grid-vertex ids that may move.
    pub band: Vec<Vec<u32>>,
    /// Fitted frames, ascending frame index, never including frame 0.
    pub frames: Vec<FrameMotion>,
    /// Per-component displacement bound, normalized units.
    pub motion_clamp: f64,
}

#[derive(Debug, Clone)]
pub struct FrameMotion {
    pub frame_index: usize,
    /// displacement[class][slot] pairs with `band[class][slot]`.
    pub displacement: Vec<Vec<Vector3<f64>>>,
}

impl MotionState {
    /// A state with zero displacement for every listed frame: the identity
    /// motion baseline, and the starting point for externally supplied
    /// displacement fields.
    pub fn zero(grid: &TetGrid, frames: &[usize], cfg: &FitConfig) -> MotionState {
        let topo = band_topology(grid, cfg.band_rings);
        let frames = frames
            .iter()
            .filter(|&&f| f != 0)
            .map(|&f| FrameMotion {
                frame_index: f,
                displacement: topo
                    .band
                    .iter()
                    .map(|ids| vec![Vector3::zeros(); ids.len()])
                    .collect(),
            })
            .collect();
        MotionState {
            grid: grid.clone(),
            band: topo.band,
            frames,
            motion_clamp: cfg.motion_clamp,
        }
    }

    /// Dense C*|V| displacement array for one fitted frame slot.
    pub fn full_displacement(&self, slot: usize) -> Vec<Vector3<f64>> {
        let n = self.grid.vertex_count();
        let mut full = vec![Vector3::zeros(); self.grid.class_count() * n];
        let frame = &self.frames[slot];
        for (c, (ids, disp)) in self.band.iter().zip(&frame.displacement).enumerate() {
            for (&v, d) in ids.iter().zip(disp) {
                full[c * n + v as usize] = *d;
            }
        }
        full
    }

    pub fn frame_slot(&self, frame_index: usize) -> Option<usize> {
        self.frames.iter().position(|f| f.frame_index == frame_index)
    }

    /// The grid deformed to `frame_index` (frame 0 returns the reference).
    /// The offset clamp is widened to admit the motion bound.
    pub fn deformed_grid(&self, frame_index: usize) -> Result<TetGrid> {
        let mut grid = self.grid.clone();
        grid.set_offset_clamp(self.grid.offset_clamp() + self.motion_clamp)?;
        if frame_index == 0 {
            return Ok(grid);
        }
        let slot = self.frame_slot(frame_index).ok_or_else(|| {
            CoreError::invalid(format!("frame {frame_index} was not fitted"))
        })?;
        grid.apply_motion(&self.full_displacement(slot))
    }

    pub fn fitted_frames(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.frame_index).collect()
    }
}

/// Fixed surface topology of one class during motion: triangles plus the
/// generating edge of every surface vertex.
pub(crate) struct MotionSurface {
    pub triangles: Vec<[u32; 3]>,
    /// (grid_a, grid_b, t) per surface vertex, a < b, t fixed by the SDF.
    pub verts: Vec<(u32, u32, f64)>,
}

impl MotionSurface {
    pub fn extract(grid: &TetGrid, class: usize) -> Result<MotionSurface> {
        let mesh = marching_tets(grid, class)?;
        Ok(MotionSurface {
            triangles: mesh.triangles,
            verts: mesh
                .provenance
                .iter()
                .map(|p| (p.grid_a, p.grid_b, p.t))
                .collect(),
        })
    }

    /// Surface vertex positions for a band displacement vector.
    pub fn positions(
        &self,
        grid: &TetGrid,
        class: usize,
        band_slot: &[i64],
        disp: &[Vector3<f64>],
    ) -> Vec<Point3<f64>> {
        let spacing = grid.spacing_mm();
        let pos = |v: u32| -> Vector3<f64> {
            let vi = v as usize;
            let mut p = grid.base_vertices()[vi].coords + grid.offsets(class)[vi];
            let slot = band_slot[vi];
            if slot >= 0 {
                p += disp[slot as usize];
            }
            p * spacing
        };
        self.verts
            .iter()
            .map(|&(a, b, t)| {
                let xa = pos(a);
                let xb = pos(b);
                Point3::from(xa + (xb - xa) * t)
            })
            .collect()
    }
}

/// Vertex adjacency of the lattice tet graph.
pub(crate) fn vertex_adjacency(grid: &TetGrid) -> Vec<Vec<u32>> {
    let n = grid.vertex_count();
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    const TET_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
    for tet in grid.tets() {
        for [i, j] in TET_EDGES {
            let (a, b) = (tet[i], tet[j]);
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Vertices incident to a sign-crossing edge of `class`, dilated by
/// `rings` hops.
pub(crate) fn surface_band(
    grid: &TetGrid,
    class: usize,
    adj: &[Vec<u32>],
    rings: usize,
) -> Vec<u32> {
    let n = grid.vertex_count();
    let inside: Vec<bool> = (0..n).map(|v| grid.effective_sdf(class, v) < 0.0).collect();
    let mut in_band = vec![false; n];
    for (v, list) in adj.iter().enumerate() {
        if list.iter().any(|&u| inside[u as usize] != inside[v]) {
            in_band[v] = true;
        }
    }
    for _ in 0..rings {
        let snapshot = in_band.clone();
        for (v, list) in adj.iter().enumerate() {
            if !snapshot[v] && list.iter().any(|&u| snapshot[u as usize]) {
                in_band[v] = true;
            }
        }
    }
    (0..n as u32).filter(|&v| in_band[v as usize]).collect()
}

pub(crate) struct BandTopology {
    /// band vertex ids per class (sorted)
    pub band: Vec<Vec<u32>>,
    /// vertex -> band slot (or -1) per class
    pub slot: Vec<Vec<i64>>,
    /// adjacency between band slots per class
    pub adj: Vec<Vec<Vec<u32>>>,
}

pub(crate) fn band_topology(grid: &TetGrid, rings: usize) -> BandTopology {
    let global_adj = vertex_adjacency(grid);
    let n = grid.vertex_count();
    let mut band = Vec::new();
    let mut slot = Vec::new();
    let mut adj = Vec::new();
    for c in 0..grid.class_count() {
        let ids = surface_band(grid, c, &global_adj, rings);
        let mut lookup = vec![-1i64; n];
        for (s, &v) in ids.iter().enumerate() {
            lookup[v as usize] = s as i64;
        }
        let restricted: Vec<Vec<u32>> = ids
            .iter()
            .map(|&v| {
                global_adj[v as usize]
                    .iter()
                    .filter_map(|&u| {
                        let s = lookup[u as usize];
                        (s >= 0).then_some(s as u32)
                    })
                    .collect()
            })
            .collect();
        band.push(ids);
        slot.push(lookup);
        adj.push(restricted);
    }
    BandTopology { band, slot, adj }
}

/// One fit sample on a cut segment and its dependence on up to four surface
/// vertices.
struct CutSample {
    point: Point3<f64>,
    deps: [(u32, Matrix3<f64>); 4],
    dep_count: usize,
}

pub(crate) struct FrameProblem<'a> {
    pub grid: &'a TetGrid,
    pub surfaces: &'a [MotionSurface],
    pub topo: &'a BandTopology,
    pub cfg: &'a FitConfig,
    /// per observation, per class: fixed target points (world mm)
    pub obs_points: Vec<Vec<Vec<Point3<f64>>>>,
    pub planes: Vec<(Point3<f64>, Vector3<f64>)>,
    /// per class, per band slot: anchor weight (1 - confidence)
    pub anchor: Vec<Vec<f64>>,
    pub param_offsets: Vec<usize>,
}

impl<'a> FrameProblem<'a> {
    pub fn new(
        grid: &'a TetGrid,
        surfaces: &'a [MotionSurface],
        topo: &'a BandTopology,
        cfg: &'a FitConfig,
        obs: &SliceSet,
    ) -> Result<FrameProblem<'a>> {
        obs.validate()?;
        let classes = grid.class_count();
        let mut obs_points = Vec::with_capacity(obs.len());
        let mut planes = Vec::with_capacity(obs.len());
        for o in &obs.observations {
            let mut per_class = Vec::with_capacity(classes);
            for c in 0..classes {
                let mut pts = Vec::new();
                if let Some(contours) = o.contours.get(c) {
                    for poly in contours {
                        for s in sample_polyline(poly, cfg.contour_samples_per_mm) {
                            pts.push(o.plane.slice_to_world(s[0], s[1], 0.0));
                        }
                    }
                }
                per_class.push(pts);
            }
            obs_points.push(per_class);
            planes.push((o.plane.origin_mm, o.plane.normal()));
        }

        let conf = confidence_field(grid, obs, cfg.k1, cfg.confidence_scale_mm)?;
        let anchor: Vec<Vec<f64>> = topo
            .band
            .iter()
            .map(|ids| ids.iter().map(|&v| 1.0 - conf.weights[v as usize]).collect())
            .collect();

        let mut param_offsets = Vec::with_capacity(classes);
        let mut acc = 0usize;
        for ids in &topo.band {
            param_offsets.push(acc);
            acc += ids.len() * 3;
        }
        Ok(FrameProblem {
            grid,
            surfaces,
            topo,
            cfg,
            obs_points,
            planes,
            anchor,
            param_offsets,
        })
    }

    fn unpack_class(&self, params: &[f64], c: usize) -> Vec<Vector3<f64>> {
        let base = self.param_offsets[c];
        let len = self.topo.band[c].len();
        let clamp = self.cfg.motion_clamp;
        (0..len)
            .map(|i| {
                Vector3::new(
                    params[base + i * 3],
                    params[base + i * 3 + 1],
                    params[base + i * 3 + 2],
                ) * clamp
            })
            .collect()
    }

    /// True when at least one (observation, class) pair with observed
    /// contours is actually cut by the class surface at `params`.
    pub fn has_overlap(&self, params: &[f64]) -> bool {
        let classes = self.grid.class_count();
        let mut any_obs = false;
        for c in 0..classes {
            let disp = self.unpack_class(params, c);
            let pos = self.surfaces[c].positions(self.grid, c, &self.topo.slot[c], &disp);
            for (oi, (origin, normal)) in self.planes.iter().enumerate() {
                if self.obs_points[oi][c].is_empty() {
                    continue;
                }
                any_obs = true;
                let has_cut = self.surfaces[c].triangles.iter().any(|t| {
                    let d0 = (pos[t[0] as usize] - origin).dot(normal);
                    let d1 = (pos[t[1] as usize] - origin).dot(normal);
                    let d2 = (pos[t[2] as usize] - origin).dot(normal);
                    (d0 < 0.0) != (d1 < 0.0) || (d0 < 0.0) != (d2 < 0.0)
                });
                if has_cut {
                    return true;
                }
            }
        }
        !any_obs // nothing observed at all counts as trivially consistent
    }

    pub fn eval(
        &self,
        params: &[f64],
        _iter: usize,
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let classes = self.grid.class_count();
        let spacing = self.grid.spacing_mm();
        let clamp = self.cfg.motion_clamp;
        let mut loss = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; params.len()]);

        for c in 0..classes {
            let surface = &self.surfaces[c];
            let disp = self.unpack_class(params, c);
            let pos = surface.positions(self.grid, c, &self.topo.slot[c], &disp);
            let mut gmesh = vec![Vector3::<f64>::zeros(); pos.len()];

            for (oi, (origin, normal)) in self.planes.iter().enumerate() {
                let obs_pts = &self.obs_points[oi][c];
                if obs_pts.is_empty() {
                    continue;
                }
                let samples = cut_samples(surface, &pos, origin, normal, self.cfg.contour_samples_per_mm);
                if samples.is_empty() {
                    // surface does not reach the plane: pull the nearest
                    // surface vertices toward the observed contour
                    if pos.is_empty() {
                        continue;
                    }
                    let vgrid = PointGrid::build(&pos);
                    let inv = 1.0 / obs_pts.len() as f64;
                    for o in obs_pts {
                        let (k, d2) = vgrid.nearest(o);
                        loss += d2 * inv;
                        gmesh[k] += (pos[k] - o) * (2.0 * inv);
                    }
                    continue;
                }
                let fit_pts: Vec<Point3<f64>> = samples.iter().map(|s| s.point).collect();
                let (cd, gpts) = chamfer_points(&fit_pts, obs_pts)?;
                loss += cd;
                if want_grad {
                    for (s, gp) in samples.iter().zip(&gpts) {
                        for k in 0..s.dep_count {
                            let (sv, m) = s.deps[k];
                            gmesh[sv as usize] += m.transpose() * gp;
                        }
                    }
                }
            }

            // regularizers in mm on the band displacements
            let ids = &self.topo.band[c];
            let nb = ids.len().max(1);
            let inv_nb = 1.0 / nb as f64;
            let dmm: Vec<Vector3<f64>> = disp.iter().map(|d| d * spacing).collect();
            let adj = &self.topo.adj[c];
            let mut residual = vec![Vector3::<f64>::zeros(); ids.len()];
            let mut lap = 0.0;
            for (i, nbrs) in adj.iter().enumerate() {
                if nbrs.is_empty() {
                    continue;
                }
                let mean = nbrs
                    .iter()
                    .fold(Vector3::zeros(), |acc: Vector3<f64>, &j| acc + dmm[j as usize])
                    / nbrs.len() as f64;
                residual[i] = dmm[i] - mean;
                lap += residual[i].norm_squared();
            }
            loss += self.cfg.lambda_smooth * lap * inv_nb;

            let mut anchor_val = 0.0;
            for (i, d) in dmm.iter().enumerate() {
                anchor_val += self.anchor[c][i] * d.norm_squared();
            }
            loss += self.cfg.lambda_anchor * anchor_val * inv_nb;

            if let Some(g) = grad.as_mut() {
                let base = self.param_offsets[c];
                // fold surface-vertex gradients into band parameters
                for (sv, gm) in gmesh.iter().enumerate() {
                    if gm.x == 0.0 && gm.y == 0.0 && gm.z == 0.0 {
                        continue;
                    }
                    let (a, b, t) = surface.verts[sv];
                    let chain = spacing * clamp;
                    for (v, w) in [(a, 1.0 - t), (b, t)] {
                        let slot = self.topo.slot[c][v as usize];
                        debug_assert!(slot >= 0, "crossing-edge vertex outside band");
                        let k = base + slot as usize * 3;
                        g[k] += gm.x * w * chain;
                        g[k + 1] += gm.y * w * chain;
                        g[k + 2] += gm.z * w * chain;
                    }
                }
                // laplacian gradient: 2/nb * (r_i - sum_{j: i in N(j)} r_j/deg_j)
                let chain = spacing * clamp;
                let coeff = 2.0 * self.cfg.lambda_smooth * inv_nb;
                for (i, nbrs) in adj.iter().enumerate() {
                    let k = base + i * 3;
                    g[k] += coeff * residual[i].x * chain;
                    g[k + 1] += coeff * residual[i].y * chain;
                    g[k + 2] += coeff * residual[i].z * chain;
                    if nbrs.is_empty() {
                        continue;
                    }
                    let spread = coeff / nbrs.len() as f64;
                    for &j in nbrs {
                        let kj = base + j as usize * 3;
                        g[kj] -= spread * residual[i].x * chain;
                        g[kj + 1] -= spread * residual[i].y * chain;
                        g[kj + 2] -= spread * residual[i].z * chain;
                    }
                }
                // anchor gradient
                let acoeff = 2.0 * self.cfg.lambda_anchor * inv_nb;
                for (i, d) in dmm.iter().enumerate() {
                    let k = base + i * 3;
                    let w = self.anchor[c][i] * acoeff;
                    g[k] += w * d.x * chain;
                    g[k + 1] += w * d.y * chain;
                    g[k + 2] += w * d.z * chain;
                }
            }
        }
        Ok((loss, grad))
    }
}

/// Plane cuts of the fixed-topology surface, sampled roughly uniformly, with
/// the Jacobian of each sample with respect to its supporting surface
/// vertices.
fn cut_samples(
    surface: &MotionSurface,
    pos: &[Point3<f64>],
    origin: &Point3<f64>,
    normal: &Vector3<f64>,
    samples_per_mm: f64,
) -> Vec<CutSample> {
    const TIE: f64 = 1e-12;
    let dist: Vec<f64> = pos
        .iter()
        .map(|p| {
            let d = (p - origin).dot(normal);
            if d.abs() < TIE {
                TIE
            } else {
                d
            }
        })
        .collect();

    let mut out = Vec::new();
    for tri in &surface.triangles {
        let d = [
            dist[tri[0] as usize],
            dist[tri[1] as usize],
            dist[tri[2] as usize],
        ];
        let neg: Vec<usize> = (0..3).filter(|&i| d[i] < 0.0).collect();
        if neg.is_empty() || neg.len() == 3 {
            continue;
        }
        let lone = if neg.len() == 1 {
            neg[0]
        } else {
            (0..3).find(|i| !neg.contains(i)).unwrap()
        };
        let j = (lone + 1) % 3;
        let k = (lone + 2) % 3;

        // cut point on edge (a, b): p = pa + t (pb - pa), t = da/(da-db)
        let cut = |a: usize, b: usize| -> (Point3<f64>, u32, Matrix3<f64>, u32, Matrix3<f64>) {
            let (va, vb) = (tri[a], tri[b]);
            let (da, db) = (d[a], d[b]);
            let t = da / (da - db);
            let pa = pos[va as usize];
            let pb = pos[vb as usize];
            let dir = pb - pa;
            let p = pa + dir * t;
            let denom2 = (da - db) * (da - db);
            let outer_a = dir * (-db / denom2);
            let outer_b = dir * (da / denom2);
            // dp/dpa = (1-t) I + outer(dir, n) * dt/dda, dda/dpa = n
            let ja = Matrix3::identity() * (1.0 - t) + outer_a * normal.transpose();
            let jb = Matrix3::identity() * t + outer_b * normal.transpose();
            (p, va, ja, vb, jb)
        };
        let (p1, a1, ja1, b1, jb1) = cut(lone, j);
        let (p2, a2, ja2, b2, jb2) = cut(lone, k);

        let len = (p2 - p1).norm();
        let count = ((len * samples_per_mm).round() as usize).max(1);
        for s in 0..count {
            let u = (s as f64 + 0.5) / count as f64;
            let point = Point3::from(p1.coords * (1.0 - u) + p2.coords * u);
            let w1 = 1.0 - u;
            let w2 = u;
            out.push(CutSample {
                point,
                deps: [
                    (a1, ja1 * w1),
                    (b1, jb1 * w1),
                    (a2, ja2 * w2),
                    (b2, jb2 * w2),
                ],
                dep_count: 4,
            });
        }
    }
    out
}
