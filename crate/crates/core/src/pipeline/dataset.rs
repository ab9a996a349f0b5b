//! Simulated training data: sweep every tissue map under every imaging
//! parameter combination, compound, and pair each volume with its labels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compound::{compound_detailed, CompoundingConfig};
use crate::error::{Error, Result};
use crate::mhd::{load_volume, save_volume};
use crate::phantom::{PhantomSpec, RandomEllipsoidFamily};
use crate::pose::RigidTransform;
use crate::rng::{self, stream};
use crate::simulate::{simulate_sweep, ImagingParams, ProbeGeometry, SpeckleKeying, Sweep};
use crate::tissue::{bind_tissue_map, TissueMap, TissueTable};
use crate::volume::Volume3D;

/// Where tissue label maps come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TissueSource {
    File { id: String, path: PathBuf },
    Phantom { id: String, spec: PhantomSpec },
    /// `count` random maps named `<id>_000`, `<id>_001`, ...
    Family { id: String, family: RandomEllipsoidFamily, count: usize },
}

/// Probe poses for each sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Probe looking along +z from just above the map, centered in x, with
    /// `frames` poses spread evenly over the map's y extent.
    Auto { frames: usize },
    Poses { poses: Vec<RigidTransform> },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::Auto { frames: 24 }
    }
}

/// Frame plane axes for the automatic trajectory: lateral to +x, depth to
/// +z, elevation to -y.
pub fn looking_down() -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
}

impl TrajectorySpec {
    pub fn poses(&self, map: &Volume3D) -> Result<Vec<RigidTransform>> {
        match self {
            TrajectorySpec::Poses { poses } => {
                for p in poses {
                    p.validate()?;
                }
                Ok(poses.clone())
            }
            TrajectorySpec::Auto { frames } => {
                if *frames < 2 {
                    return Err(Error::Config("an automatic trajectory needs at least 2 frames".into()));
                }
                let g = map.grid();
                let lo = g.voxel_to_world([0.0; 3]);
                let hi = g.voxel_to_world(g.dims.map(|d| (d - 1) as f64));
                let x = 0.5 * (lo[0] + hi[0]);
                let z = lo[2].min(hi[2]) + 1e-3;
                let (y0, y1) = (lo[1].min(hi[1]), lo[1].max(hi[1]));
                Ok((0..*frames)
                    .map(|i| {
                        let y = y0 + (y1 - y0) * i as f64 / (*frames - 1) as f64;
                        RigidTransform::new(looking_down(), [x, y, z])
                    })
                    .collect())
            }
        }
    }
}

pub const MAX_COMBINATIONS: usize = 100_000;

/// Lists of values whose Cartesian product gives the parameter combinations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamGrid {
    pub tgc_gain_db_per_cm: Vec<f64>,
    pub dynamic_range_db: Vec<f64>,
    pub psf_axial_sigma_mm: Vec<f64>,
    pub psf_lateral_sigma_mm: Vec<f64>,
    pub noise_floor: Vec<f64>,
    /// Multiplies every label's attenuation.
    pub attenuation_scale: Vec<f64>,
    /// Multiplies every label's mean scatter amplitude.
    pub scatter_scale: Vec<f64>,
    pub speckle: SpeckleKeying,
}

impl Default for ParamGrid {
    fn default() -> Self {
        let p = ImagingParams::default();
        ParamGrid {
            tgc_gain_db_per_cm: vec![p.tgc_gain_db_per_cm],
            dynamic_range_db: vec![p.dynamic_range_db],
            psf_axial_sigma_mm: vec![p.psf_axial_sigma_mm],
            psf_lateral_sigma_mm: vec![p.psf_lateral_sigma_mm],
            noise_floor: vec![p.noise_floor],
            attenuation_scale: vec![1.0],
            scatter_scale: vec![1.0],
            speckle: SpeckleKeying::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub params: ImagingParams,
    pub attenuation_scale: f64,
    pub scatter_scale: f64,
}

impl ParamGrid {
    /// Combinations in row-major order over the fields as declared (the
    /// last field varies fastest). Seeds are left at 0.
    pub fn combinations(&self) -> Result<Vec<Combination>> {
        let axes: [&Vec<f64>; 7] = [
            &self.tgc_gain_db_per_cm,
            &self.dynamic_range_db,
            &self.psf_axial_sigma_mm,
            &self.psf_lateral_sigma_mm,
            &self.noise_floor,
            &self.attenuation_scale,
            &self.scatter_scale,
        ];
        if axes.iter().any(|a| a.is_empty()) {
            return Err(Error::Config("every parameter grid axis needs at least one value".into()));
        }
        let total = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
            .filter(|&t| t <= MAX_COMBINATIONS)
            .ok_or_else(|| Error::Config(format!("parameter grid exceeds {MAX_COMBINATIONS} combinations")))?;
        let mut out = Vec::with_capacity(total);
        for n in 0..total {
            let mut rem = n;
            let mut pick = [0.0; 7];
            for a in (0..7).rev() {
                pick[a] = axes[a][rem % axes[a].len()];
                rem /= axes[a].len();
            }
            let params = ImagingParams {
                tgc_gain_db_per_cm: pick[0],
                dynamic_range_db: pick[1],
                psf_axial_sigma_mm: pick[2],
                psf_lateral_sigma_mm: pick[3],
                noise_floor: pick[4],
                seed: 0,
                speckle: self.speckle,
            };
            params.validate()?;
            if !(pick[5] >= 0.0 && pick[6] >= 0.0) {
                return Err(Error::Config("acoustic scales must be >= 0".into()));
            }
            out.push(Combination {
                params,
                attenuation_scale: pick[5],
                scatter_scale: pick[6],
            });
        }
        Ok(out)
    }
}

fn default_foreground() -> Vec<u8> {
    vec![4]
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub tissue_maps: Vec<TissueSource>,
    /// Property table; the built-in table when absent.
    #[serde(default)]
    pub tissue_table: Option<TissueTable>,
    #[serde(default)]
    pub background_label: u8,
    /// Label classes forming the segmentation target.
    #[serde(default = "default_foreground")]
    pub foreground_labels: Vec<u8>,
    pub probe: ProbeGeometry,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub param_grid: ParamGrid,
    #[serde(default = "one")]
    pub sweeps_per_combo: usize,
    #[serde(default)]
    pub compounding: CompoundingConfig,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: DatasetConfig = serde_json::from_str(text)?;
        if c.tissue_maps.is_empty() {
            return Err(Error::Config("dataset config lists no tissue maps".into()));
        }
        if c.sweeps_per_combo == 0 {
            return Err(Error::Config("sweeps_per_combo must be >= 1".into()));
        }
        c.probe.validate()?;
        c.param_grid.combinations()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub tissue_map_id: String,
    pub combination: usize,
    pub repetition: usize,
    pub params: ImagingParams,
    pub attenuation_scale: f64,
    pub scatter_scale: f64,
    /// Relative to the manifest directory.
    pub image: PathBuf,
    pub label: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub id: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub items: Vec<DatasetItem>,
    #[serde(default)]
    pub errors: Vec<ItemError>,
}

pub const MANIFEST_FILE: &str = "dataset.json";

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn subjects(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn item(&self, id: &str) -> Result<&DatasetItem> {
        self.items
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| Error::Config(format!("dataset has no item {id:?}")))
    }
}

/// Resolve every tissue source to `(id, label volume)`.
pub fn resolve_tissue_maps(sources: &[TissueSource], seed: u64, base: &Path) -> Result<Vec<(String, Volume3D)>> {
    let mut out = Vec::new();
    for src in sources {
        match src {
            TissueSource::File { id, path } => out.push((id.clone(), load_volume(base.join(path))?)),
            TissueSource::Phantom { id, spec } => out.push((id.clone(), spec.build()?)),
            TissueSource::Family { id, family, count } => {
                let key = rng::hash(&[seed, stream::DATASET, rng::str_key(id)]);
                for i in 0..*count {
                    out.push((format!("{id}_{i:03}"), family.draw(key, i as u64).build()?));
                }
            }
        }
    }
    let mut ids: Vec<&String> = out.iter().map(|(i, _)| i).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("tissue map ids must be unique".into()));
    }
    Ok(out)
}

fn scaled_table(table: &TissueTable, attenuation: f64, scatter: f64) -> TissueTable {
    let mut t = table.clone();
    for p in t.labels.values_mut() {
        p.attenuation *= attenuation;
        p.scatter_mean *= scatter;
    }
    t
}

/// Image and label volume for one sweep, on the compounded grid. Labels are
/// the foreground classes restricted to where the sweep has data.
pub fn compound_pair(sweep: &Sweep, map: &TissueMap, foreground: &[u8], cfg: &CompoundingConfig) -> Result<(Volume3D, Volume3D)> {
    let c = compound_detailed(sweep, cfg)?;
    let labels = map.labels_on(c.volume.grid())?;
    let support = c.support.as_u8().unwrap();
    let lab = labels.as_u8().unwrap();
    let grid = c.volume.grid().clone();
    let mask = Volume3D::from_fn_u8(grid.clone(), |i, j, k| {
        let n = grid.index(i, j, k);
        (support[n] == 1 && foreground.contains(&lab[n])) as u8
    })?;
    Ok((c.volume, mask))
}

/// Generate the dataset into `out_dir` and write its manifest there.
/// Failures of single items are recorded in the manifest rather than
/// aborting the run.
pub fn generate_simulated_dataset(cfg: &DatasetConfig, out_dir: &Path, config_dir: &Path) -> Result<DatasetManifest> {
    let maps = resolve_tissue_maps(&cfg.tissue_maps, cfg.seed, config_dir)?;
    let combos = cfg.param_grid.combinations()?;
    let table = cfg.tissue_table.clone().unwrap_or_default();
    for sub in ["images", "labels"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (mi, (map_id, labels)) in maps.iter().enumerate() {
        for (ci, combo) in combos.iter().enumerate() {
            for rep in 0..cfg.sweeps_per_combo {
                let id = format!("{map_id}_c{ci:03}_r{rep:02}");
                let mut params = combo.params.clone();
                params.seed = rng::hash(&[cfg.seed, stream::DATASET, mi as u64, ci as u64, rep as u64]);
                let attempt = || -> Result<DatasetItem> {
                    let t = scaled_table(&table, combo.attenuation_scale, combo.scatter_scale);
                    let tm = bind_tissue_map(labels.clone(), t, cfg.background_label)?;
                    let poses = cfg.trajectory.poses(labels)?;
                    let mut sweep = simulate_sweep(&tm, &poses, &cfg.probe, &params)?;
                    sweep.meta.tissue_map_id = Some(map_id.clone());
                    let (img, lab) = compound_pair(&sweep, &tm, &cfg.foreground_labels, &cfg.compounding)?;
                    let image = PathBuf::from("images").join(format!("{id}.mhd"));
                    let label = PathBuf::from("labels").join(format!("{id}.mhd"));
                    save_volume(&img, out_dir.join(&image))?;
                    save_volume(&lab, out_dir.join(&label))?;
                    Ok(DatasetItem {
                        id: id.clone(),
                        tissue_map_id: map_id.clone(),
                        combination: ci,
                        repetition: rep,
                        params: params.clone(),
                        attenuation_scale: combo.attenuation_scale,
                        scatter_scale: combo.scatter_scale,
                        image,
                        label,
                    })
                };
                match attempt() {
                    Ok(item) => items.push(item),
                    Err(e) => {
                        log::warn!("dataset item {id} failed: {e}");
                        errors.push(ItemError {
                            id,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        items,
        errors,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
