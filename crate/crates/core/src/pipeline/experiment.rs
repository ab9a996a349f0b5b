//! Training runs: one fold of one mode, from config to evaluated cases.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetManifest;
use super::splits::SplitManifest;
use crate::augment::PatchSpec;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_case, write_case_csv, CaseReport};
use crate::mhd::{load_volume, save_volume};
use crate::net::checkpoint;
use crate::net::train::{write_loss_curve, AugmentBounds};
use crate::net::{predict_volume, Case, Dataset, NetConfig, Network, TrainOptions, TrainSchedule, Trainer};

pub const REAL: &str = "real";
pub const SIMULATED: &str = "simulated";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Scratch,
    Finetuned,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Scratch => "scratch",
            Mode::Finetuned => "finetuned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub overlap: f64,
    pub threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            overlap: 0.25,
            threshold: 0.5,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub net: NetConfig,
    /// Phases name the datasets `"simulated"` and `"real"`.
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub augmentation: AugmentBounds,
    #[serde(default = "yes")]
    pub augment_real: bool,
    #[serde(default)]
    pub augment_simulated: bool,
    /// Dataset manifest of the subjects that are split into folds.
    pub real_dataset: PathBuf,
    /// Dataset manifest used only for pre-training.
    #[serde(default)]
    pub simulated_dataset: Option<PathBuf>,
    pub splits: PathBuf,
    #[serde(default)]
    pub predict: PredictConfig,
    /// Set in the frozen copy written to each run directory.
    #[serde(default)]
    pub fold: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.schedule.validate()?;
        self.train.patch.validate()?;
        self.train.adam.validate()?;
        let ids: Vec<&str> = self.schedule.phases.iter().map(|p| p.dataset_id.as_str()).collect();
        match self.mode {
            Mode::Scratch if ids != [REAL] => {
                return Err(Error::Config(format!("scratch mode trains one phase on {REAL:?}, got {ids:?}")));
            }
            Mode::Finetuned if ids != [SIMULATED, REAL] => {
                return Err(Error::Config(format!(
                    "finetuned mode trains on {SIMULATED:?} then {REAL:?}, got {ids:?}"
                )));
            }
            Mode::Finetuned if self.simulated_dataset.is_none() => {
                return Err(Error::Config("finetuned mode needs simulated_dataset".into()));
            }
            _ => {}
        }
        let p = &self.predict;
        if !(p.threshold > 0.0 && p.threshold < 1.0) || !(0.0..1.0).contains(&p.overlap) {
            return Err(Error::Config("predict needs threshold in (0, 1) and overlap in [0, 1)".into()));
        }
        Ok(())
    }

    /// Parse and make relative paths relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = serde_json::from_str(text)?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut c.real_dataset);
        fix(&mut c.splits);
        if let Some(p) = c.simulated_dataset.as_mut() {
            fix(p);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        Self::from_json(&text, &base)
    }
}

pub fn run_dir(output: &Path, mode: Mode, fold: usize) -> PathBuf {
    output.join(mode.name()).join(format!("fold{fold}"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn load_cases(manifest_path: &Path, ids: &[String]) -> Result<Vec<Case>> {
    let m = DatasetManifest::load(manifest_path)?;
    let dir = manifest_dir(manifest_path);
    ids.iter()
        .map(|id| {
            let item = m.item(id)?;
            Ok(Case {
                id: id.clone(),
                image: load_volume(dir.join(&item.image))?,
                label: load_volume(dir.join(&item.label))?,
            })
        })
        .collect()
}

/// Trainer-side record of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub fold: usize,
    pub parameter_count: usize,
    pub iterations: u64,
    pub final_loss: f64,
    pub train_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    /// Mean Dice of the final network on the validation subjects.
    pub validation_dice: Option<f64>,
    /// Final-iteration parameters are kept; no early stopping.
    pub checkpoint_policy: String,
    /// Full-scale protocol values for reference next to the desk-scale run.
    pub reference_settings: ReferenceSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSettings {
    pub patch_size: [usize; 3],
    pub batch_size: usize,
    pub iterations_per_phase: u64,
    pub learning_rate: f64,
    pub target_spacing_mm: f64,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings {
            patch_size: [128; 3],
            batch_size: 8,
            iterations_per_phase: 100_000,
            learning_rate: 2e-5,
            target_spacing_mm: 0.3,
        }
    }
}

/// Train one fold and write `config.json`, `checkpoint.bin`,
/// `loss_curve.csv` and `summary.json` into its run directory.
pub fn train_fold(cfg: &ExperimentConfig, fold: usize, output: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let splits = SplitManifest::load(&cfg.splits)?;
    let f = splits.fold(fold)?.clone();
    let dir = run_dir(output, cfg.mode, fold);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let frozen = ExperimentConfig {
        fold: Some(fold),
        ..cfg.clone()
    };
    write(&dir.join("config.json"), serde_json::to_string_pretty(&frozen)?)?;

    let mut datasets = vec![Dataset {
        id: REAL.into(),
        cases: load_cases(&cfg.real_dataset, &f.train_subjects)?,
        augment: cfg.augment_real.then_some(cfg.augmentation),
    }];
    if cfg.mode == Mode::Finetuned {
        let path = cfg.simulated_dataset.as_ref().unwrap();
        let ids = DatasetManifest::load(path)?.subjects();
        datasets.push(Dataset {
            id: SIMULATED.into(),
            cases: load_cases(path, &ids)?,
            augment: cfg.augment_simulated.then_some(cfg.augmentation),
        });
    }
    let net = Network::init(cfg.net.clone(), cfg.schedule.seed)?;
    let trainer = Trainer::new(net, cfg.schedule.clone(), &datasets, cfg.train.clone())?;
    let (net, state, curve) = trainer.finish()?;
    checkpoint::save(dir.join("checkpoint.bin"), &net, &state)?;
    let mut csv = Vec::new();
    write_loss_curve(&curve, &mut csv)?;
    write(&dir.join("loss_curve.csv"), csv)?;

    let validation_dice = if f.validation_subjects.is_empty() {
        None
    } else {
        let cases = load_cases(&cfg.real_dataset, &f.validation_subjects)?;
        let mut total = 0.0;
        for c in &cases {
            let pred = predict_volume(&net, &c.image, &cfg.train.patch, cfg.predict.overlap, cfg.predict.threshold)?;
            total += crate::metrics::dice(&pred, &c.label)?;
        }
        Some(total / cases.len() as f64)
    };
    let summary = TrainSummary {
        mode: cfg.mode,
        fold,
        parameter_count: net.params().len(),
        iterations: curve.len() as u64,
        final_loss: curve.last().map_or(f64::NAN, |r| r.loss),
        train_subjects: f.train_subjects.clone(),
        validation_subjects: f.validation_subjects.clone(),
        test_subjects: f.test_subjects.clone(),
        validation_dice,
        checkpoint_policy: "final iteration".into(),
        reference_settings: ReferenceSettings::default(),
    };
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(dir)
}

pub fn load_frozen(run: &Path) -> Result<(ExperimentConfig, usize)> {
    let cfg = ExperimentConfig::load(run.join("config.json"))?;
    let fold = cfg
        .fold
        .ok_or_else(|| Error::Config(format!("{}: frozen config has no fold", run.display())))?;
    Ok((cfg, fold))
}

/// Predict every test subject of a trained run into `predictions/`.
pub fn predict_fold(run: &Path) -> Result<Vec<PathBuf>> {
    let (cfg, fold) = load_frozen(run)?;
    let (net, _) = checkpoint::load(run.join("checkpoint.bin"))?;
    let splits = SplitManifest::load(&cfg.splits)?;
    let test = &splits.fold(fold)?.test_subjects;
    let pred_dir = run.join("predictions");
    std::fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    let mut out = Vec::new();
    for case in load_cases(&cfg.real_dataset, test)? {
        let pred = predict_with(&net, &case.image, &cfg.train.patch, &cfg.predict)?;
        let path = pred_dir.join(format!("{}.mhd", case.id));
        save_volume(&pred, &path)?;
        out.push(path);
    }
    Ok(out)
}

pub fn predict_with(net: &Network, image: &crate::volume::Volume3D, patch: &PatchSpec, p: &PredictConfig) -> Result<crate::volume::Volume3D> {
    predict_volume(net, image, patch, p.overlap, p.threshold)
}

/// Score saved predictions against the labels; writes `cases.csv`,
/// `aggregate.json` and `evaluation.json` (the truth grid spacing each case
/// was measured on).
pub fn evaluate_fold(run: &Path) -> Result<Vec<CaseReport>> {
    let (cfg, fold) = load_frozen(run)?;
    let splits = SplitManifest::load(&cfg.splits)?;
    let manifest = DatasetManifest::load(&cfg.real_dataset)?;
    let dir = manifest_dir(&cfg.real_dataset);
    let mut reports = Vec::new();
    let mut spacing = serde_json::Map::new();
    for id in &splits.fold(fold)?.test_subjects {
        let pred = load_volume(run.join("predictions").join(format!("{id}.mhd")))?;
        let truth = load_volume(dir.join(&manifest.item(id)?.label))?;
        reports.push(evaluate_case(&pred, &truth, id, fold as i64)?);
        spacing.insert(id.clone(), serde_json::json!(truth.spacing()));
    }
    let info = serde_json::json!({ "distance_grid": "truth", "spacing_mm": spacing });
    write(&run.join("evaluation.json"), serde_json::to_string_pretty(&info)?)?;
    let mut csv = Vec::new();
    write_case_csv(&reports, &mut csv)?;
    write(&run.join("cases.csv"), csv)?;
    write(&run.join("aggregate.json"), serde_json::to_string_pretty(&aggregate(&reports)?)?)?;
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub predictions: Vec<PathBuf>,
    pub cases: Vec<CaseReport>,
}

/// Train, predict and evaluate one fold.
pub fn run_experiment(cfg: &ExperimentConfig, fold: usize, output: &Path) -> Result<RunArtifacts> {
    let dir = train_fold(cfg, fold, output)?;
    let predictions = predict_fold(&dir)?;
    let cases = evaluate_fold(&dir)?;
    Ok(RunArtifacts { dir, predictions, cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"{"mode": "scratch",
        "schedule": {"phases": [{"dataset_id": "real", "iterations": 3}], "seed": 1},
        "real_dataset": "data/dataset.json", "splits": "/abs/splits.json"}"#;

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let c = ExperimentConfig::from_json(CFG, Path::new("/work")).unwrap();
        assert_eq!(c.real_dataset, Path::new("/work/data/dataset.json"));
        assert_eq!(c.splits, Path::new("/abs/splits.json"));
        assert!(c.augment_real && !c.augment_simulated);
        assert_eq!(c.predict, PredictConfig::default());
        assert_eq!(c.train.patch.size, [128; 3]);
        assert_eq!(c.schedule.phases[0].batch_size, 8);
    }

    #[test]
    fn frozen_copy_round_trips() {
        let c = ExperimentConfig::from_json(CFG, Path::new("/work")).unwrap();
        let text = serde_json::to_string(&ExperimentConfig { fold: Some(2), ..c.clone() }).unwrap();
        let back = ExperimentConfig::from_json(&text, Path::new("/elsewhere")).unwrap();
        assert_eq!(back.fold, Some(2));
        assert_eq!(back.real_dataset, c.real_dataset);
    }

    #[test]
    fn rejects_bad_predict_settings() {
        let mut c = ExperimentConfig::from_json(CFG, Path::new("/w")).unwrap();
        c.predict.threshold = 1.0;
        assert!(c.validate().is_err());
        c.predict = PredictConfig { overlap: 1.0, threshold: 0.5 };
        assert!(c.validate().is_err());
        assert_eq!(run_dir(Path::new("o"), Mode::Finetuned, 3), Path::new("o/finetuned/fold3"));
    }
}
