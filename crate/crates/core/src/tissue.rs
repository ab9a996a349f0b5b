//! Tissue label maps bound to per-class acoustic properties.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ElementKind, Interpolation, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcousticProperties {
    #[serde(default)]
    pub name: String,
    /// MRayl.
    pub impedance: f64,
    /// dB / (cm · MHz).
    pub attenuation: f64,
    pub scatter_density: f64,
    pub scatter_mean: f64,
    pub scatter_sigma: f64,
}

impl AcousticProperties {
    pub fn new(name: &str, impedance: f64, attenuation: f64, density: f64, mean: f64, sigma: f64) -> Self {
        AcousticProperties {
            name: name.to_string(),
            impedance,
            attenuation,
            scatter_density: density,
            scatter_mean: mean,
            scatter_sigma: sigma,
        }
    }

    fn validate(&self, label: u8) -> Result<()> {
        let fail = |what: &str| Err(Error::Config(format!("label {label} ({}): {what}", self.name)));
        let all = [
            self.impedance,
            self.attenuation,
            self.scatter_density,
            self.scatter_mean,
            self.scatter_sigma,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return fail("non-finite property");
        }
        if self.impedance <= 0.0 {
            return fail("impedance must be > 0");
        }
        if self.attenuation < 0.0 {
            return fail("attenuation must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.scatter_density) {
            return fail("scatter_density must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.scatter_mean) {
            return fail("scatter_mean must lie in [0, 1]");
        }
        if self.scatter_sigma < 0.0 {
            return fail("scatter_sigma must be >= 0");
        }
        Ok(())
    }
}

/// Property table in its JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueTable {
    pub labels: BTreeMap<u8, AcousticProperties>,
    pub background: u8,
}

impl Default for TissueTable {
    /// Shipped defaults: plausible soft-tissue values, not measured constants.
    fn default() -> Self {
        let mut labels = BTreeMap::new();
        labels.insert(0, AcousticProperties::new("background", 0.0004, 0.0, 0.0, 0.0, 0.0));
        labels.insert(1, AcousticProperties::new("white_matter", 1.6, 0.6, 0.5, 0.5, 0.1));
        labels.insert(2, AcousticProperties::new("gray_matter", 1.62, 0.55, 0.45, 0.45, 0.1));
        labels.insert(3, AcousticProperties::new("csf", 1.48, 0.002, 0.02, 0.1, 0.01));
        labels.insert(4, AcousticProperties::new("lateral_ventricle", 1.48, 0.002, 0.02, 0.1, 0.01));
        TissueTable { labels, background: 0 }
    }
}

impl TissueTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: TissueTable = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tissue table serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (&l, p) in &self.labels {
            p.validate(l)?;
        }
        let bg = self
            .labels
            .get(&self.background)
            .ok_or(Error::MissingLabel(self.background))?;
        if bg.scatter_density != 0.0 || bg.scatter_mean != 0.0 {
            return Err(Error::Config("background label must not scatter".into()));
        }
        Ok(())
    }
}

/// A label volume with a validated property table.
#[derive(Clone, Debug)]
pub struct TissueMap {
    labels: Volume3D,
    table: TissueTable,
    census: Vec<(u8, usize)>,
}

/// Validate `labels` against `table` and count foreground classes.
pub fn bind_tissue_map(labels: Volume3D, table: TissueTable, background: u8) -> Result<TissueMap> {
    let raw = match labels.kind() {
        ElementKind::UInt8 => labels.as_u8().unwrap(),
        ElementKind::Float32 => {
            return Err(Error::Config("tissue labels must be a uint8 volume".into()));
        }
    };
    let table = TissueTable { background, ..table };
    table.validate()?;
    let mut counts = [0usize; 256];
    for &l in raw {
        counts[l as usize] += 1;
    }
    let mut census = Vec::new();
    for l in 0..=255u8 {
        let n = counts[l as usize];
        if n == 0 {
            continue;
        }
        if !table.labels.contains_key(&l) {
            return Err(Error::MissingLabel(l));
        }
        if l != background {
            census.push((l, n));
        }
    }
    Ok(TissueMap { labels, table, census })
}

impl TissueMap {
    pub fn labels(&self) -> &Volume3D {
        &self.labels
    }

    pub fn table(&self) -> &TissueTable {
        &self.table
    }

    pub fn background(&self) -> u8 {
        self.table.background
    }

    /// Foreground `(label, voxel count)` pairs, ascending by label.
    pub fn census(&self) -> &[(u8, usize)] {
        &self.census
    }

    pub fn background_properties(&self) -> &AcousticProperties {
        &self.table.labels[&self.table.background]
    }

    /// Label and linear voxel index at a world point; outside the grid the
    /// background label is returned with no index.
    #[inline]
    pub fn label_at(&self, p: [f64; 3]) -> (u8, Option<usize>) {
        let g = self.labels.grid();
        match g.nearest_index(g.world_to_voxel(p)) {
            Some([i, j, k]) => {
                let idx = g.index(i, j, k);
                (self.labels.as_u8().unwrap()[idx], Some(idx))
            }
            None => (self.table.background, None),
        }
    }

    pub fn properties_of(&self, label: u8) -> &AcousticProperties {
        &self.table.labels[&label]
    }

    pub fn properties_at(&self, p: [f64; 3]) -> &AcousticProperties {
        self.properties_of(self.label_at(p).0)
    }

    /// Binary mask of the given foreground classes.
    pub fn foreground_mask(&self, classes: &[u8]) -> Volume3D {
        self.labels.mask_where(|v| classes.contains(&(v as u8)))
    }

    /// Nearest-neighbour label resampling onto `grid`.
    pub fn labels_on(&self, grid: &crate::volume::Grid) -> Result<Volume3D> {
        self.labels.resample_to_grid(grid, Interpolation::Nearest)
    }
}
