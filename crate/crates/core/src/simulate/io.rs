//! Sweep persistence: one single-slice `.mhd` per frame plus `sweep.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, ImagingParams, ProbeGeometry, Sweep, SweepMeta};
use crate::error::{Error, Result};
use crate::mhd::{load_volume, save_volume};
use crate::pose::RigidTransform;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    #[serde(flatten)]
    pub pose: RigidTransform,
}

/// Contents of `sweep.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFile {
    pub geometry: ProbeGeometry,
    pub params: ImagingParams,
    pub meta: SweepMeta,
    pub frames: Vec<FrameEntry>,
}

/// Parse and check `sweep.json` without touching the frame files.
pub fn parse_sweep_json(text: &str) -> Result<SweepFile> {
    let doc: SweepFile = serde_json::from_str(text)?;
    doc.geometry.validate()?;
    doc.params.validate()?;
    for f in &doc.frames {
        f.pose.validate()?;
        if f.file.is_empty() || f.file.contains(['/', '\\']) || f.file.starts_with('.') {
            return Err(Error::Config(format!("frame file {:?} must be a plain name", f.file)));
        }
    }
    Ok(doc)
}

pub fn save_sweep(sweep: &Sweep, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(sweep.frames.len());
    for (i, frame) in sweep.frames.iter().enumerate() {
        let file = format!("frame_{i:04}.mhd");
        save_volume(&frame.to_volume()?, dir.join(&file))?;
        entries.push(FrameEntry { file, pose: frame.pose });
    }
    let doc = SweepFile {
        geometry: sweep.geometry.clone(),
        params: sweep.params.clone(),
        meta: sweep.meta.clone(),
        frames: entries,
    };
    let path = dir.join("sweep.json");
    fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))
}

pub fn load_sweep(dir: impl AsRef<Path>) -> Result<Sweep> {
    let dir = dir.as_ref();
    let path = dir.join("sweep.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc = parse_sweep_json(&text)?;
    let mut frames = Vec::with_capacity(doc.frames.len());
    for entry in doc.frames {
        let vol = load_volume(dir.join(&entry.file))?;
        let expect = [doc.geometry.element_count, doc.geometry.samples_per_line, 1];
        if vol.dims() != expect {
            return Err(Error::ShapeMismatch(format!(
                "{}: dims {:?}, geometry implies {:?}",
                entry.file,
                vol.dims(),
                expect
            )));
        }
        let pixels = vol
            .as_f32()
            .ok_or_else(|| Error::Config(format!("{}: frames must be MET_FLOAT", entry.file)))?
            .to_vec();
        frames.push(Frame {
            pixels,
            pose: entry.pose,
            geometry: doc.geometry.clone(),
        });
    }
    let sweep = Sweep {
        frames,
        geometry: doc.geometry,
        params: doc.params,
        meta: doc.meta,
    };
    sweep.validate()?;
    Ok(sweep)
}
