//! Fit reports: loss traces, per-frame per-class metrics, clinical indexes,
//! JSON and CSV writers.
//!
//! Wall-clock time is kept out of the serialized report so repeated runs
//! with the same seed produce byte-identical files; run manifests carry the
//! timing instead.

use super::FitConfig;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub frame: usize,
    pub class: usize,
    pub cd_mm2: Option<f64>,
    pub dice: Option<f64>,
    pub volume_ml: Option<f64>,
    /// Mean in-plane mask overlap against the frame's observations, when
    /// masks were available.
    pub inslice_dice: Option<f64>,
    /// Marks the ED->ES comparison rows.
    pub headline: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTrace {
    pub frame: usize,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClinicalIndexes {
    pub es_frame: usize,
    pub lvedv_ml: f64,
    pub lvesv_ml: f64,
    pub lvef: f64,
    pub rvedv_ml: f64,
    pub rvesv_ml: f64,
    pub rvef: f64,
    pub gt_lvedv_ml: f64,
    pub gt_lvesv_ml: f64,
    pub gt_lvef: f64,
    pub gt_rvedv_ml: f64,
    pub gt_rvesv_ml: f64,
    pub gt_rvef: f64,
    pub lvesv_mae_ml: f64,
    /// percentage points
    pub lvef_mae_pp: f64,
    pub rvesv_mae_ml: f64,
    pub rvef_mae_pp: f64,
}

/// Configuration echo embedded in every report. Loss terms that exist in
/// related training pipelines but have no counterpart in this tool are
/// listed as explicitly disabled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub fit: FitConfig,
    pub disabled_terms: Vec<String>,
}

impl ConfigEcho {
    pub fn new(fit: FitConfig) -> ConfigEcho {
        ConfigEcho {
            fit,
            disabled_terms: vec![
                "segmentation_cross_entropy".to_string(),
                "full_to_sparse_feature_distillation".to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub stage: String,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    /// Static stage: one entry per accepted iteration.
    pub loss_trace: Vec<f64>,
    /// Motion stage: one trace per fitted frame.
    pub frame_traces: Vec<FrameTrace>,
    pub rows: Vec<MetricRow>,
    pub clinical: Option<ClinicalIndexes>,
    #[serde(skip)]
    pub wall_clock_s: f64,
    pub config: ConfigEcho,
}

impl FitReport {
    pub fn new(stage: &str, cfg: FitConfig) -> FitReport {
        FitReport {
            stage: stage.to_string(),
            iterations: 0,
            converged: false,
            diverged: false,
            loss_trace: Vec::new(),
            frame_traces: Vec::new(),
            rows: Vec::new(),
            clinical: None,
            wall_clock_s: 0.0,
            config: ConfigEcho::new(cfg),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// One row per frame per class: frame, class, CD, dice, volume.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame,class,cd_mm2,dice,volume_ml,inslice_dice,headline\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.frame,
                r.class,
                fmt(r.cd_mm2),
                fmt(r.dice),
                fmt(r.volume_ml),
                fmt(r.inslice_dice),
                r.headline as u8
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Long-format loss trace: stage, frame (empty for static), iteration,
    /// loss.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("stage,frame,iteration,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{},,{i},{l}\n", self.stage));
        }
        for ft in &self.frame_traces {
            for (i, l) in ft.trace.iter().enumerate() {
                out.push_str(&format!("{},{},{i},{l}\n", self.stage, ft.frame));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_excludes_wall_clock() {
        let mut report = FitReport::new("static", FitConfig::default());
        report.wall_clock_s = 123.0;
        let json = serde_json::to_string(&report).unwrap();
        assert!(!json.contains("wall_clock"));
        assert!(json.contains("disabled_terms"));
    }

    #[test]
    fn csv_rows_are_stable() {
        let mut report = FitReport::new("motion", FitConfig::default());
        report.rows.push(MetricRow {
            frame: 2,
            class: 1,
            cd_mm2: Some(1.5),
            dice: None,
            volume_ml: Some(42.25),
            inslice_dice: None,
            headline: true,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        report.write_metrics_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "frame,class,cd_mm2,dice,volume_ml,inslice_dice,headline\n2,1,1.5,,42.25,,1\n"
        );
    }
}
