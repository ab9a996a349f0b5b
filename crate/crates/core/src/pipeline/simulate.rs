//! Config for simulating a single sweep from a label volume.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::TrajectorySpec;
use crate::error::{Error, Result};
use crate::mhd::load_volume;
use crate::simulate::{simulate_sweep, ImagingParams, ProbeGeometry, Sweep};
use crate::tissue::{bind_tissue_map, TissueTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub tissue_map: PathBuf,
    /// JSON property table; the built-in table when absent.
    #[serde(default)]
    pub tissue_table: Option<PathBuf>,
    #[serde(default)]
    pub background_label: u8,
    pub probe: ProbeGeometry,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub params: ImagingParams,
}

impl SimulateConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut c: SimulateConfig = serde_json::from_str(text)?;
        if c.tissue_map.is_relative() {
            c.tissue_map = base.join(&c.tissue_map);
        }
        if let Some(t) = c.tissue_table.as_mut() {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        c.probe.validate()?;
        c.params.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn run(&self) -> Result<Sweep> {
        let labels = load_volume(&self.tissue_map)?;
        let table = match &self.tissue_table {
            Some(p) => TissueTable::load(p)?,
            None => TissueTable::default(),
        };
        let poses = self.trajectory.poses(&labels)?;
        let tm = bind_tissue_map(labels, table, self.background_label)?;
        let mut sweep = simulate_sweep(&tm, &poses, &self.probe, &self.params)?;
        sweep.meta.tissue_map_id = self
            .tissue_map
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned());
        Ok(sweep)
    }
}
