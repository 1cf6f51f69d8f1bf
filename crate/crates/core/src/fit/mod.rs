//! Two-stage optimization engine: a dense static fit of the grid to the
//! reference frame, then per-frame motion recovery from sparse slice
//! observations.

mod adam;
mod report;
mod stage1;
mod stage2;

pub use report::{ClinicalIndexes, ConfigEcho, FitReport, FrameTrace, MetricRow};
pub use stage1::{static_objective, static_objective_value, StaticGradient, StaticPin, StaticTarget};
pub use stage2::{FrameMotion, MotionState};

use crate::meshops::{chamfer_points, dice, mesh_volume, sample_surface, voxelize_multi};
use crate::phantom::PhantomSequence;
use crate::slicegeom::{rasterize_contours, slice_mesh, SliceSet};
use crate::tetgrid::{marching_tets, SurfaceMesh, TetGrid};
use crate::{CoreError, Result};
use adam::AdamParams;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Deterministic per-(iteration, stream) seed derivation (splitmix-style).
pub(crate) fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut x = master
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Optimization settings shared by both stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Chamfer weight in the static objective.
    pub lambda_cd: f64,
    /// SDF supervision weight in the static objective.
    pub lambda_sdf: f64,
    /// Displacement Laplacian weight in the motion objective.
    pub lambda_smooth: f64,
    /// Confidence-weighted anchoring weight in the motion objective.
    pub lambda_anchor: f64,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_floor: f64,
    pub max_iters_static: usize,
    pub max_iters_motion: usize,
    /// Stop when the relative loss change over `tol_window` iterations falls
    /// below this.
    pub tol_rel_change: f64,
    pub tol_window: usize,
    pub samples_per_mesh: usize,
    pub contour_samples_per_mm: f64,
    pub seed: u64,
    pub k1: usize,
    pub k2: usize,
    pub confidence_scale_mm: f64,
    /// Per-component motion displacement bound, normalized units. Cardiac
    /// motion spans several lattice cells, so this is far above the static
    /// offset clamp.
    pub motion_clamp: f64,
    /// Dilation rings when restricting motion variables to the surface band.
    pub band_rings: usize,
    /// Use iteration-0 sampling for every iteration (gradient checks and
    /// trace-monotonicity tests).
    pub freeze_sampling: bool,
    /// Iterations during which an empty class surface is tolerated.
    pub warmup_iters: usize,
    /// Voxel pitch of the static report's Dice template, mm.
    pub report_dice_spacing_mm: f64,
}

impl Default for FitConfig {
    fn default() -> FitConfig {
        FitConfig {
            lambda_cd: 1.0,
            lambda_sdf: 0.1,
            lambda_smooth: 0.1,
            lambda_anchor: 0.01,
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_floor: 1e-6,
            max_iters_static: 2000,
            max_iters_motion: 500,
            tol_rel_change: 1e-5,
            tol_window: 20,
            samples_per_mesh: 4096,
            contour_samples_per_mm: 2.0,
            seed: 0,
            k1: 3,
            k2: 9,
            confidence_scale_mm: 10.0,
            motion_clamp: 0.15,
            band_rings: 2,
            freeze_sampling: false,
            warmup_iters: 10,
            report_dice_spacing_mm: 2.5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_cd < 0.0
            || self.lambda_sdf < 0.0
            || self.lambda_smooth < 0.0
            || self.lambda_anchor < 0.0
        {
            return Err(CoreError::invalid("loss weights must be non-negative"));
        }
        if !(self.step_size > 0.0 && self.step_floor > 0.0) {
            return Err(CoreError::invalid("step sizes must be positive"));
        }
        if self.max_iters_static == 0 || self.max_iters_motion == 0 {
            return Err(CoreError::invalid("iteration caps must be >= 1"));
        }
        if self.samples_per_mesh == 0 {
            return Err(CoreError::invalid("samples_per_mesh must be >= 1"));
        }
        if self.k1 == 0 || self.k2 == 0 {
            return Err(CoreError::invalid("k1 and k2 must be >= 1"));
        }
        if !(self.motion_clamp > 0.0) {
            return Err(CoreError::invalid("motion_clamp must be positive"));
        }
        if self.tol_window == 0 {
            return Err(CoreError::invalid("tol_window must be >= 1"));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<FitConfig> {
        let cfg: FitConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            step: self.step_size,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            step_floor: self.step_floor,
        }
    }
}

/// Fit failures that carry the last usable state so callers can persist it.
#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("static fit diverged at iteration {iteration}")]
    StaticDiverged {
        iteration: usize,
        grid: Box<TetGrid>,
        report: Box<FitReport>,
    },
    #[error("motion fit diverged at frame {frame}, iteration {iteration}")]
    MotionDiverged {
        frame: usize,
        iteration: usize,
        state: Box<MotionState>,
        report: Box<FitReport>,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

fn eval_seed(master: u64, frame: u64, class: u64, role: u64) -> u64 {
    derive_seed(master ^ 0xE7A1_11CE_0000_0000, frame * 8 + role, class)
}

/// Stage 1: fits per-class SDF values and offsets to a dense target.
pub fn fit_static(
    grid: &TetGrid,
    target: &StaticTarget,
    cfg: &FitConfig,
) -> std::result::Result<(TetGrid, FitReport), FitError> {
    cfg.validate().map_err(FitError::Core)?;
    let start = Instant::now();
    let mut problem = stage1::StaticProblem::new(grid, target, cfg).map_err(FitError::Core)?;
    let mut params = problem.pack();
    let sdf_block = grid.class_count() * grid.vertex_count();

    let outcome = adam::minimize(
        &mut params,
        cfg.adam(),
        cfg.max_iters_static,
        cfg.tol_rel_change,
        cfg.tol_window,
        |p| stage1::StaticProblem::project(p, sdf_block),
        |p, iter, want_grad| problem.eval(p, iter, want_grad, None),
    );

    problem.set_params(&params);
    let fitted = problem.grid.clone();
    let mut report = FitReport::new("static", cfg.clone());

    match outcome {
        Ok(out) => {
            report.iterations = out.trace.len();
            report.converged = out.converged;
            report.loss_trace = out.trace;
            static_report_rows(&fitted, &problem, cfg, &mut report).map_err(FitError::Core)?;
            report.wall_clock_s = start.elapsed().as_secs_f64();
            Ok((fitted, report))
        }
        Err(CoreError::Diverged { iteration, detail }) => {
            log::error!("static fit diverged at iteration {iteration}: {detail}");
            report.diverged = true;
            report.iterations = iteration;
            report.wall_clock_s = start.elapsed().as_secs_f64();
            Err(FitError::StaticDiverged {
                iteration,
                grid: Box::new(fitted),
                report: Box::new(report),
            })
        }
        Err(e) => Err(FitError::Core(e)),
    }
}

/// Final static metrics: chamfer against the target under held-out seeds,
/// Dice on a coarse template (mesh targets only) and extracted volumes.
fn static_report_rows(
    fitted: &TetGrid,
    problem: &stage1::StaticProblem,
    cfg: &FitConfig,
    report: &mut FitReport,
) -> Result<()> {
    let classes = fitted.class_count();
    let mut fitted_meshes = Vec::with_capacity(classes);
    for c in 0..classes {
        fitted_meshes.push(marching_tets(fitted, c)?);
    }

    let dice_per_class: Vec<Option<f64>> = if let Some(targets) = &problem.target_meshes {
        let spacing = cfg.report_dice_spacing_mm;
        let dims = (fitted.spacing_mm() / spacing).round() as usize;
        let geom = crate::meshops::VolumeGeometry {
            dims: [dims, dims, dims],
            spacing_mm: [spacing; 3],
            origin_mm: [spacing / 2.0; 3],
        };
        let fit_entries: Vec<(&SurfaceMesh, u8)> = fitted_meshes
            .iter()
            .enumerate()
            .map(|(c, m)| (m, (c + 1) as u8))
            .collect();
        let tgt_entries: Vec<(&SurfaceMesh, u8)> = targets
            .iter()
            .enumerate()
            .map(|(c, m)| (m, (c + 1) as u8))
            .collect();
        let fit_vol = voxelize_multi(&fit_entries, &geom)?;
        let tgt_vol = voxelize_multi(&tgt_entries, &geom)?;
        (0..classes)
            .map(|c| dice(&fit_vol, &tgt_vol, (c + 1) as u8).ok())
            .collect()
    } else {
        vec![None; classes]
    };

    for (c, mesh) in fitted_meshes.iter().enumerate() {
        let cd = if mesh.is_empty() {
            None
        } else {
            let fit_pts = sample_surface(mesh, cfg.samples_per_mesh, eval_seed(cfg.seed, 0, c as u64, 0))?;
            let tgt_pts: Vec<nalgebra::Point3<f64>> = if let Some(meshes) = &problem.target_meshes {
                sample_surface(&meshes[c], cfg.samples_per_mesh, eval_seed(cfg.seed, 0, c as u64, 1))?
                    .points
            } else {
                problem.slice_points.as_ref().unwrap()[c].clone()
            };
            if tgt_pts.is_empty() {
                None
            } else {
                Some(chamfer_points(&fit_pts.points, &tgt_pts)?.0)
            }
        };
        let volume = (!mesh.is_empty() && !mesh.open_surface)
            .then(|| mesh_volume(mesh))
            .transpose()?;
        report.rows.push(MetricRow {
            frame: 0,
            class: c,
            cd_mm2: cd,
            dice: dice_per_class[c],
            volume_ml: volume,
            inslice_dice: None,
            headline: false,
        });
    }
    Ok(())
}

/// Stage 2: recovers per-frame displacements matching the observations.
/// Frames are fitted in ascending order, each warm-started from the previous
/// one; displacements stay relative to the stage-1 grid.
pub fn fit_motion(
    grid: &TetGrid,
    observations: &[SliceSet],
    cfg: &FitConfig,
) -> std::result::Result<(MotionState, FitReport), FitError> {
    cfg.validate().map_err(FitError::Core)?;
    if observations.is_empty() {
        return Err(FitError::Core(CoreError::invalid(
            "fit_motion requires at least one frame of observations",
        )));
    }
    let start = Instant::now();

    let mut sets: Vec<&SliceSet> = observations.iter().collect();
    sets.sort_by_key(|s| s.frame_index);
    for w in sets.windows(2) {
        if w[0].frame_index == w[1].frame_index {
            return Err(FitError::Core(CoreError::invalid(format!(
                "duplicate observations for frame {}",
                w[0].frame_index
            ))));
        }
    }

    let topo = stage2::band_topology(grid, cfg.band_rings);
    let mut surfaces = Vec::with_capacity(grid.class_count());
    for c in 0..grid.class_count() {
        surfaces.push(stage2::MotionSurface::extract(grid, c).map_err(FitError::Core)?);
    }

    let param_count: usize = topo.band.iter().map(|b| b.len() * 3).sum();
    let mut params = vec![0.0; param_count];
    let mut report = FitReport::new("motion", cfg.clone());
    let mut frames: Vec<FrameMotion> = Vec::new();

    for set in sets {
        let frame = set.frame_index;
        if frame == 0 {
            log::info!("frame 0 is the reference; its displacement stays zero");
            continue;
        }
        let problem =
            stage2::FrameProblem::new(grid, &surfaces, &topo, cfg, set).map_err(FitError::Core)?;
        if !problem.has_overlap(&params) {
            return Err(FitError::Core(CoreError::NoOverlap {
                frame,
                detail: "observed contours intersect no class surface at warm start".into(),
            }));
        }

        let outcome = adam::minimize(
            &mut params,
            cfg.adam(),
            cfg.max_iters_motion,
            cfg.tol_rel_change,
            cfg.tol_window,
            |p| {
                for x in p.iter_mut() {
                    *x = x.clamp(-1.0, 1.0);
                }
            },
            |p, iter, want_grad| problem.eval(p, iter, want_grad),
        );

        match outcome {
            Ok(out) => {
                report.frame_traces.push(FrameTrace {
                    frame,
                    iterations: out.trace.len(),
                    converged: out.converged,
                    trace: out.trace,
                });
                report.iterations += report.frame_traces.last().unwrap().iterations;
                let displacement: Vec<Vec<nalgebra::Vector3<f64>>> = (0..grid.class_count())
                    .map(|c| problem_unpack(&problem, &params, c))
                    .collect();
                frames.push(FrameMotion {
                    frame_index: frame,
                    displacement,
                });
            }
            Err(CoreError::Diverged { iteration, detail }) => {
                log::error!("motion fit diverged at frame {frame}, iteration {iteration}: {detail}");
                report.diverged = true;
                report.wall_clock_s = start.elapsed().as_secs_f64();
                let state = MotionState {
                    grid: grid.clone(),
                    band: topo.band.clone(),
                    frames,
                    motion_clamp: cfg.motion_clamp,
                };
                return Err(FitError::MotionDiverged {
                    frame,
                    iteration,
                    state: Box::new(state),
                    report: Box::new(report),
                });
            }
            Err(e) => return Err(FitError::Core(e)),
        }
    }

    let state = MotionState {
        grid: grid.clone(),
        band: topo.band.clone(),
        frames,
        motion_clamp: cfg.motion_clamp,
    };
    motion_report_rows(&state, observations, &mut report)?;
    report.converged = report.frame_traces.iter().all(|f| f.converged);
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((state, report))
}

fn problem_unpack(
    problem: &stage2::FrameProblem,
    params: &[f64],
    class: usize,
) -> Vec<nalgebra::Vector3<f64>> {
    let base = problem.param_offsets[class];
    let len = problem.topo.band[class].len();
    (0..len)
        .map(|i| {
            nalgebra::Vector3::new(
                params[base + i * 3],
                params[base + i * 3 + 1],
                params[base + i * 3 + 2],
            ) * problem.cfg.motion_clamp
        })
        .collect()
}

/// Volume-time rows plus in-slice mask agreement for the fitted frames.
fn motion_report_rows(
    state: &MotionState,
    observations: &[SliceSet],
    report: &mut FitReport,
) -> Result<()> {
    let classes = state.grid.class_count();
    let mut eval_frames: Vec<usize> = vec![0];
    eval_frames.extend(state.fitted_frames());
    for frame in eval_frames {
        let grid_t = state.deformed_grid(frame)?;
        let obs = observations.iter().find(|s| s.frame_index == frame);
        for c in 0..classes {
            let mesh = marching_tets(&grid_t, c)?;
            let volume = (!mesh.is_empty() && !mesh.open_surface)
                .then(|| mesh_volume(&mesh))
                .transpose()?;
            let inslice = match obs {
                Some(set) => inslice_dice(&mesh, set, c)?,
                None => None,
            };
            report.rows.push(MetricRow {
                frame,
                class: c,
                cd_mm2: None,
                dice: None,
                volume_ml: volume,
                inslice_dice: inslice,
                headline: false,
            });
        }
    }
    Ok(())
}

/// Mean per-slice mask Dice of one class between the fitted surface and the
/// observation masks.
fn inslice_dice(mesh: &SurfaceMesh, set: &SliceSet, class: usize) -> Result<Option<f64>> {
    let label = (class + 1) as u8;
    let mut scores = Vec::new();
    for obs in &set.observations {
        let Some(mask) = &obs.mask else { continue };
        if mesh.is_empty() || mesh.open_surface {
            continue;
        }
        let contours = slice_mesh(mesh, &obs.plane)?;
        let mut per_class = vec![Vec::new(); class + 1];
        per_class[class] = contours;
        let fit_mask = rasterize_contours(&obs.plane, &per_class);
        let mut inter = 0usize;
        let mut total = 0usize;
        for (&a, &b) in mask.iter().zip(&fit_mask) {
            let ia = a == label;
            let ib = b == label;
            inter += (ia && ib) as usize;
            total += ia as usize + ib as usize;
        }
        if total > 0 {
            scores.push(2.0 * inter as f64 / total as f64);
        }
    }
    if scores.is_empty() {
        Ok(None)
    } else {
        Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
    }
}

/// Compares a fitted motion state against the generating phantom: per-frame
/// per-class chamfer and 3D Dice, volumes, and ES-frame clinical indexes.
pub fn evaluate(state: &MotionState, seq: &PhantomSequence) -> Result<FitReport> {
    let classes = state.grid.class_count();
    if classes != seq.frames[0].meshes.len() {
        return Err(CoreError::invalid(format!(
            "state has {classes} classes, phantom has {}",
            seq.frames[0].meshes.len()
        )));
    }
    for f in state.fitted_frames() {
        if f >= seq.frame_count() {
            return Err(CoreError::invalid(format!(
                "fitted frame {f} outside the phantom's {} frames",
                seq.frame_count()
            )));
        }
    }

    let start = Instant::now();
    let cfg = FitConfig::default();
    let mut report = FitReport::new("evaluate", cfg.clone());
    let es = seq.es_frame();

    let mut eval_frames: Vec<usize> = vec![0];
    eval_frames.extend(state.fitted_frames());

    let mut volumes: Vec<Vec<Option<f64>>> = Vec::new();
    for &frame in &eval_frames {
        let grid_t = state.deformed_grid(frame)?;
        let mut fitted_meshes = Vec::with_capacity(classes);
        for c in 0..classes {
            fitted_meshes.push(marching_tets(&grid_t, c)?);
        }
        let fit_entries: Vec<(&SurfaceMesh, u8)> = fitted_meshes
            .iter()
            .enumerate()
            .map(|(c, m)| (m, (c + 1) as u8))
            .collect();
        let fit_labels = voxelize_multi(&fit_entries, &seq.frames[frame].labels.geometry)?;

        let mut frame_volumes = Vec::with_capacity(classes);
        for c in 0..classes {
            let mesh = &fitted_meshes[c];
            let gt = &seq.frames[frame].meshes[c];
            let cd = if mesh.is_empty() {
                None
            } else {
                let fit_pts = sample_surface(
                    mesh,
                    cfg.samples_per_mesh,
                    eval_seed(cfg.seed, frame as u64, c as u64, 2),
                )?;
                let gt_pts = sample_surface(
                    gt,
                    cfg.samples_per_mesh,
                    eval_seed(cfg.seed, frame as u64, c as u64, 3),
                )?;
                Some(chamfer_points(&fit_pts.points, &gt_pts.points)?.0)
            };
            let d = dice(&fit_labels, &seq.frames[frame].labels, (c + 1) as u8)?;
            let volume = (!mesh.is_empty() && !mesh.open_surface)
                .then(|| mesh_volume(mesh))
                .transpose()?;
            frame_volumes.push(volume);
            report.rows.push(MetricRow {
                frame,
                class: c,
                cd_mm2: cd,
                dice: Some(d),
                volume_ml: volume,
                inslice_dice: None,
                headline: frame == es,
            });
        }
        volumes.push(frame_volumes);
    }

    // clinical indexes need the ES frame among the evaluated ones
    let es_slot = eval_frames.iter().position(|&f| f == es);
    if let Some(es_slot) = es_slot {
        use crate::phantom::{CLASS_LV, CLASS_RV};
        let lvedv = volumes[0][CLASS_LV];
        let lvesv = volumes[es_slot][CLASS_LV];
        let rvedv = volumes[0][CLASS_RV];
        let rvesv = volumes[es_slot][CLASS_RV];
        if let (Some(lvedv), Some(lvesv), Some(rvedv), Some(rvesv)) = (lvedv, lvesv, rvedv, rvesv) {
            let lvef = (lvedv - lvesv) / lvedv;
            let rvef = (rvedv - rvesv) / rvedv;
            report.clinical = Some(ClinicalIndexes {
                es_frame: es,
                lvedv_ml: lvedv,
                lvesv_ml: lvesv,
                lvef,
                rvedv_ml: rvedv,
                rvesv_ml: rvesv,
                rvef,
                gt_lvedv_ml: seq.lv_volumes_ml[0],
                gt_lvesv_ml: seq.lv_volumes_ml[es],
                gt_lvef: seq.lv_ef,
                gt_rvedv_ml: seq.rv_volumes_ml[0],
                gt_rvesv_ml: seq.rv_volumes_ml[es],
                gt_rvef: seq.rv_ef,
                lvesv_mae_ml: (lvesv - seq.lv_volumes_ml[es]).abs(),
                lvef_mae_pp: (lvef - seq.lv_ef).abs() * 100.0,
                rvesv_mae_ml: (rvesv - seq.rv_volumes_ml[es]).abs(),
                rvef_mae_pp: (rvef - seq.rv_ef).abs() * 100.0,
            });
        }
    }

    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}
