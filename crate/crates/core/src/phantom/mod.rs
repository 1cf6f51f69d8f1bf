//! Deterministic synthetic 4D multi-class heart: per-frame ground-truth
//! meshes, label volumes and derived clinical indexes, standing in for CMR
//! data so every downstream claim is checkable against known geometry.
//!
//! Classes are fixed: 0 = LV blood pool, 1 = myocardium, 2 = RV. The LV is a
//! prolate spheroid shell; the RV a crescent cavity sharing the epicardial
//! wall. Frame `t` scales radii by `1 - contraction*phase(t)` and the long
//! axis by `1 - shortening*phase(t)`.

mod shapes;

pub mod io;

pub use shapes::{crescent, icosphere, noisy_sphere, shell, transform_mesh, RadialNoise};

use crate::meshops::{mesh_volume, voxelize_multi, LabelVolume, VolumeGeometry};
use crate::tetgrid::SurfaceMesh;
use crate::{CoreError, Result};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

/// Class ids, in composition order.
pub const CLASS_LV: usize = 0;
pub const CLASS_MYO: usize = 1;
pub const CLASS_RV: usize = 2;
pub const CLASS_NAMES: [&str; 3] = ["lv", "myo", "rv"];
pub const CLASS_COUNT: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// Frames per cardiac cycle.
    pub frame_count: usize,
    /// LV endocardial equatorial radius at ED, mm.
    pub lv_endo_radius_mm: f64,
    /// LV epicardial equatorial radius at ED, mm.
    pub lv_epi_radius_mm: f64,
    /// Long-axis over equatorial radius ratio (prolate factor).
    pub long_axis_ratio: f64,
    /// RV cavity sphere radius, mm (equatorial, before axis scaling).
    pub rv_radius_mm: f64,
    /// RV sphere center offset along +x from the LV center, mm.
    pub rv_offset_mm: f64,
    /// Radial contraction amplitude alpha in [0, 1).
    pub contraction: f64,
    /// Longitudinal shortening amplitude beta in [0, 1).
    pub shortening: f64,
    /// Fraction of the cycle spent contracting (ED -> ES).
    pub systolic_fraction: f64,
    /// Frame index of end-systole; must coincide with peak phase.
    pub es_frame: usize,
    /// Heart center in world mm.
    pub center_mm: [f64; 3],
    /// Physical edge length of the cubic domain, mm (grid spacing_mm).
    pub domain_mm: f64,
    /// Label volume voxel spacing (x, y, z), mm.
    pub label_spacing_mm: [f64; 3],
    /// Icosphere subdivision level for the LV spheroids.
    pub subdivisions: u32,
    /// Azimuthal segments of the RV crescent.
    pub rv_segments: usize,
    /// Polar rings per crescent patch.
    pub rv_rings: usize,
    /// Smooth radial shape irregularity amplitude, mm (0 = exact spheroids).
    pub noise_amplitude_mm: f64,
    /// Seed for the radial irregularity field.
    pub noise_seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig::normal()
    }
}

impl PhantomConfig {
    /// Normal-heart preset (ejection fraction around 55%).
    pub fn normal() -> PhantomConfig {
        PhantomConfig {
            frame_count: 30,
            lv_endo_radius_mm: 25.0,
            lv_epi_radius_mm: 35.0,
            long_axis_ratio: 1.7,
            rv_radius_mm: 30.0,
            rv_offset_mm: 38.0,
            contraction: 0.285,
            shortening: 0.12,
            systolic_fraction: 1.0 / 3.0,
            es_frame: 10,
            center_mm: [80.0, 80.0, 80.0],
            domain_mm: 160.0,
            label_spacing_mm: [1.25, 1.25, 1.25],
            subdivisions: 4,
            rv_segments: 96,
            rv_rings: 24,
            noise_amplitude_mm: 0.0,
            noise_seed: 1,
        }
    }

    /// Dilated, hypokinetic preset (ejection fraction around 23%).
    pub fn dilated() -> PhantomConfig {
        PhantomConfig {
            lv_endo_radius_mm: 34.0,
            lv_epi_radius_mm: 40.0,
            long_axis_ratio: 1.6,
            rv_radius_mm: 32.0,
            rv_offset_mm: 40.0,
            contraction: 0.10,
            shortening: 0.05,
            ..PhantomConfig::normal()
        }
    }

    /// Periodic phase: 0 at ED, rising to 1 over the systolic fraction,
    /// falling back to 0 at cycle end. Piecewise cosine.
    pub fn phase(&self, frame: usize) -> f64 {
        let tau = (frame as f64 / self.frame_count as f64).fract();
        let fs = self.systolic_fraction;
        if tau <= fs {
            0.5 * (1.0 - (std::f64::consts::PI * tau / fs).cos())
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (tau - fs) / (1.0 - fs)).cos())
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::InvalidArgument(msg));
        if self.frame_count < 2 {
            return fail(format!("frame_count must be >= 2, got {}", self.frame_count));
        }
        if !(0.0..1.0).contains(&self.contraction) || !(0.0..1.0).contains(&self.shortening) {
            return fail("contraction and shortening must lie in [0, 1)".into());
        }
        if !(0.05..0.95).contains(&self.systolic_fraction) {
            return fail("systolic_fraction must lie in (0.05, 0.95)".into());
        }
        if self.lv_epi_radius_mm < self.lv_endo_radius_mm + 2.0 {
            return fail(format!(
                "epi radius {} must exceed endo radius {} by at least 2 mm",
                self.lv_epi_radius_mm, self.lv_endo_radius_mm
            ));
        }
        let wall_ed = self.lv_epi_radius_mm - self.lv_endo_radius_mm - 2.0 * self.noise_amplitude_mm;
        let wall_es = wall_ed * (1.0 - self.contraction);
        if wall_es < 1.0 {
            return fail(format!(
                "wall thickness at peak contraction is {wall_es:.2} mm, below the 1 mm floor"
            ));
        }
        if self.long_axis_ratio < 1.0 {
            return fail("long_axis_ratio must be >= 1".into());
        }
        let d = self.rv_offset_mm;
        let (ra, rb) = (self.lv_epi_radius_mm, self.rv_radius_mm);
        if d <= (ra - rb).abs() + 1.0 || d >= ra + rb - 1.0 {
            return fail(format!(
                "rv_offset_mm {d} must keep the cavity spheres partially overlapping"
            ));
        }
        // all surfaces must stay strictly inside the domain at ED
        let margin = 2.0;
        let reach_xy = (d + rb).max(ra);
        let reach_z = ra.max(rb) * self.long_axis_ratio;
        for (axis, reach) in [(0usize, reach_xy), (1, ra), (2, reach_z)] {
            let c = self.center_mm[axis];
            if c - reach < margin || c + reach > self.domain_mm - margin {
                return fail(format!(
                    "geometry reaches {reach:.1} mm from center along axis {axis}, outside the {} mm domain",
                    self.domain_mm
                ));
            }
        }
        if self.es_frame >= self.frame_count {
            return fail("es_frame must be a valid frame index".into());
        }
        // the designated ES frame must carry the maximum sampled phase
        let peak = (0..self.frame_count)
            .max_by(|&a, &b| self.phase(a).partial_cmp(&self.phase(b)).unwrap())
            .unwrap();
        if (self.phase(peak) - self.phase(self.es_frame)).abs() > 1e-12 {
            return fail(format!(
                "es_frame {} does not carry the peak phase (frame {peak} does)",
                self.es_frame
            ));
        }
        if self.label_spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return fail("label spacing must be positive".into());
        }
        if self.subdivisions > 6 {
            return fail("subdivision level above 6 is unreasonable".into());
        }
        if self.noise_amplitude_mm < 0.0 {
            return fail("noise amplitude must be non-negative".into());
        }
        Ok(())
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.center_mm)
    }

    /// Label volume placement covering the whole domain.
    pub fn label_geometry(&self) -> VolumeGeometry {
        let dims_of = |s: f64| (self.domain_mm / s).round() as usize;
        let [sx, sy, sz] = self.label_spacing_mm;
        VolumeGeometry {
            dims: [dims_of(sz), dims_of(sy), dims_of(sx)],
            spacing_mm: self.label_spacing_mm,
            origin_mm: [sx / 2.0, sy / 2.0, sz / 2.0],
        }
    }
}

/// One frame: per-class ground-truth meshes plus the composed label volume.
#[derive(Debug, Clone)]
pub struct PhantomFrame {
    pub index: usize,
    /// meshes[CLASS_LV], meshes[CLASS_MYO], meshes[CLASS_RV]
    pub meshes: Vec<SurfaceMesh>,
    pub labels: LabelVolume,
}

/// Generated sequence with measured ground-truth volumes and ejection
/// fractions.
#[derive(Debug, Clone)]
pub struct PhantomSequence {
    pub config: PhantomConfig,
    pub frames: Vec<PhantomFrame>,
    pub lv_volumes_ml: Vec<f64>,
    pub rv_volumes_ml: Vec<f64>,
    pub lv_ef: f64,
    pub rv_ef: f64,
}

impl PhantomSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn es_frame(&self) -> usize {
        self.config.es_frame
    }
}

/// Keyframe annotation bundle: the weak-supervision data regime exposes only
/// these two frames; the rest of the sequence is for evaluation.
#[derive(Debug, Clone)]
pub struct Keyframes {
    pub ed_frame: usize,
    pub es_frame: usize,
    pub ed_meshes: Vec<SurfaceMesh>,
    pub es_meshes: Vec<SurfaceMesh>,
    pub ed_lv_volume_ml: f64,
    pub es_lv_volume_ml: f64,
    pub ed_rv_volume_ml: f64,
    pub es_rv_volume_ml: f64,
}

/// Generates the full deterministic sequence: ground-truth meshes, label
/// volumes and measured volumes/EF per ventricle.
pub fn generate(config: &PhantomConfig) -> Result<PhantomSequence> {
    config.validate()?;
    let unit = icosphere(config.subdivisions);
    let noise = RadialNoise::new(config.noise_seed);
    let noise_ref = (config.noise_amplitude_mm != 0.0)
        .then_some((&noise, config.noise_amplitude_mm));

    // sphere-space prototypes (equatorial radii, z still unit-ratio)
    let endo_proto = noisy_sphere(&unit, config.lv_endo_radius_mm, noise_ref);
    let epi_proto = noisy_sphere(&unit, config.lv_epi_radius_mm, noise_ref);
    let rv_proto = crescent(
        config.lv_epi_radius_mm,
        config.rv_radius_mm,
        config.rv_offset_mm,
        config.rv_segments,
        config.rv_rings,
    );

    let geometry = config.label_geometry();
    let center = config.center();

    let mut frames = Vec::with_capacity(config.frame_count);
    let mut lv_volumes = Vec::with_capacity(config.frame_count);
    let mut rv_volumes = Vec::with_capacity(config.frame_count);
    for t in 0..config.frame_count {
        let phi = config.phase(t);
        let radial = 1.0 - config.contraction * phi;
        let axial = config.long_axis_ratio * (1.0 - config.shortening * phi);

        let endo = transform_mesh(&endo_proto, radial, axial, &center);
        let epi = transform_mesh(&epi_proto, radial, axial, &center);
        let rv = transform_mesh(&rv_proto, radial, axial, &center);
        let myo = shell(&epi, &endo);

        let lv_ml = mesh_volume(&endo)?;
        let rv_ml = mesh_volume(&rv)?;
        lv_volumes.push(lv_ml);
        rv_volumes.push(rv_ml);

        let labels = voxelize_multi(&[(&endo, 1), (&myo, 2), (&rv, 3)], &geometry)?;
        frames.push(PhantomFrame {
            index: t,
            meshes: vec![endo, myo, rv],
            labels,
        });
    }

    let edv = lv_volumes[0];
    let esv = lv_volumes[config.es_frame];
    let lv_ef = (edv - esv) / edv;
    let rv_edv = rv_volumes[0];
    let rv_esv = rv_volumes[config.es_frame];
    let rv_ef = (rv_edv - rv_esv) / rv_edv;

    Ok(PhantomSequence {
        config: config.clone(),
        frames,
        lv_volumes_ml: lv_volumes,
        rv_volumes_ml: rv_volumes,
        lv_ef,
        rv_ef,
    })
}

/// Returns the ED and ES keyframes only, mirroring datasets that annotate
/// just those two phases.
pub fn keyframe_annotations(seq: &PhantomSequence) -> Keyframes {
    let ed = 0;
    let es = seq.config.es_frame;
    Keyframes {
        ed_frame: ed,
        es_frame: es,
        ed_meshes: seq.frames[ed].meshes.clone(),
        es_meshes: seq.frames[es].meshes.clone(),
        ed_lv_volume_ml: seq.lv_volumes_ml[ed],
        es_lv_volume_ml: seq.lv_volumes_ml[es],
        ed_rv_volume_ml: seq.rv_volumes_ml[ed],
        es_rv_volume_ml: seq.rv_volumes_ml[es],
    }
}

/// A small, fast configuration for tests: coarse meshes, coarse labels,
/// few frames.
pub fn quick_config() -> PhantomConfig {
    PhantomConfig {
        frame_count: 6,
        es_frame: 2,
        subdivisions: 2,
        rv_segments: 32,
        rv_rings: 8,
        label_spacing_mm: [2.5, 2.5, 2.5],
        ..PhantomConfig::normal()
    }
}
