//! Phantom configuration JSON and the sequence output layout:
//! `frame_%03d/{class_%d.obj, labels.raw, labels.json}` plus a ground-truth
//! metrics CSV.

use super::{PhantomConfig, PhantomSequence, CLASS_NAMES};
use crate::meshops::write_label_volume;
use crate::tetgrid::io::write_obj;
use crate::Result;
use std::fs;
use std::path::Path;

pub fn write_config(config: &PhantomConfig, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(config)?)?;
    Ok(())
}

pub fn read_config(path: &Path) -> Result<PhantomConfig> {
    let config: PhantomConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    config.validate()?;
    Ok(config)
}

/// Writes the per-frame layout and the ground-truth metrics CSV into `dir`.
pub fn write_sequence(seq: &PhantomSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_config(&seq.config, &dir.join("phantom.json"))?;
    for frame in &seq.frames {
        let fdir = dir.join(format!("frame_{:03}", frame.index));
        fs::create_dir_all(&fdir)?;
        for (c, mesh) in frame.meshes.iter().enumerate() {
            write_obj(mesh, &fdir.join(format!("class_{c}.obj")))?;
        }
        write_label_volume(&frame.labels, &fdir.join("labels.raw"), &fdir.join("labels.json"))?;
    }
    let mut csv = String::from("frame,phase,lv_volume_ml,rv_volume_ml\n");
    for (t, (lv, rv)) in seq
        .lv_volumes_ml
        .iter()
        .zip(&seq.rv_volumes_ml)
        .enumerate()
    {
        csv.push_str(&format!("{t},{},{lv},{rv}\n", seq.config.phase(t)));
    }
    csv.push_str(&format!(
        "# es_frame={} lv_ef={} rv_ef={}\n",
        seq.config.es_frame, seq.lv_ef, seq.rv_ef
    ));
    fs::write(dir.join("ground_truth.csv"), csv)?;
    Ok(())
}

/// Reads the meshes of one frame back from a sequence directory.
pub fn read_frame_meshes(dir: &Path, frame: usize) -> Result<Vec<crate::tetgrid::SurfaceMesh>> {
    let fdir = dir.join(format!("frame_{frame:03}"));
    let mut meshes = Vec::new();
    for c in 0..CLASS_NAMES.len() {
        meshes.push(crate::tetgrid::io::read_obj(&fdir.join(format!("class_{c}.obj")))?);
    }
    Ok(meshes)
}
