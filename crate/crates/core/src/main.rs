use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use usseg::compound::{compound_detailed, CompoundingConfig};
use usseg::error::{Error, Result};
use usseg::metrics::evaluate_case;
use usseg::mhd::{load_volume, save_volume};
use usseg::pipeline::dataset::{generate_simulated_dataset, DatasetConfig, DatasetManifest};
use usseg::pipeline::experiment::{evaluate_fold, predict_fold, train_fold, ExperimentConfig};
use usseg::pipeline::report::collect;
use usseg::pipeline::simulate::SimulateConfig;
use usseg::pipeline::splits::make_splits;
use usseg::simulate::{load_sweep, save_sweep};
use usseg::volume::{ElementKind, Interpolation};

#[derive(Parser)]
#[command(name = "usseg", version, about = "Simulated ultrasound sweeps and volumetric segmentation experiments")]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Interp {
    Nearest,
    Trilinear,
}

#[derive(Subcommand)]
enum Command {
    /// Label volume to a sweep directory (config: simulation JSON).
    Simulate,
    /// Sweep directory to an .mhd volume (config: optional compounding JSON).
    Compound {
        sweep: PathBuf,
        /// Also write the support mask here.
        #[arg(long)]
        support: Option<PathBuf>,
    },
    /// Resample a volume to isotropic spacing.
    Resample {
        input: PathBuf,
        #[arg(long)]
        spacing: f64,
        /// Defaults to nearest for label volumes, trilinear otherwise.
        #[arg(long, value_enum)]
        interp: Option<Interp>,
    },
    /// Simulate and compound a labelled dataset (config: dataset JSON).
    GenDataset,
    /// Fold manifest over the items of a dataset manifest.
    Split {
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Train one fold (config: experiment JSON).
    Train {
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Predict the test subjects of a trained run.
    Predict { run: PathBuf },
    /// Score a run's predictions, or one prediction against one label.
    Evaluate {
        run: Option<PathBuf>,
        #[arg(long, requires = "truth", conflicts_with = "run")]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare evaluated runs across modes.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("this subcommand needs --{flag}")))
}

fn base_of(p: &Path) -> PathBuf {
    std::path::absolute(p.parent().unwrap_or(Path::new("."))).unwrap_or_else(|_| PathBuf::from("."))
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Simulate => {
            let cfg_path = need(&cli.config, "config")?;
            let mut cfg = SimulateConfig::from_json(&read(cfg_path)?, &base_of(cfg_path))?;
            if let Some(s) = cli.seed {
                cfg.params.seed = s;
            }
            let out = need(&cli.output, "output")?;
            let sweep = cfg.run()?;
            save_sweep(&sweep, out)?;
            Ok(json!({ "sweep": out, "frames": sweep.frames.len(), "params_id": sweep.meta.params_id }))
        }
        Command::Compound { sweep, support } => {
            let cfg: CompoundingConfig = match &cli.config {
                Some(p) => serde_json::from_str(&read(p)?)?,
                None => CompoundingConfig::default(),
            };
            let out = need(&cli.output, "output")?;
            let c = compound_detailed(&load_sweep(&sweep)?, &cfg)?;
            save_volume(&c.volume, out)?;
            if let Some(s) = &support {
                save_volume(&c.support, s)?;
            }
            Ok(json!({ "volume": out, "dims": c.volume.dims() }))
        }
        Command::Resample { input, spacing, interp } => {
            let out = need(&cli.output, "output")?;
            let vol = load_volume(&input)?;
            let interp = match interp {
                Some(Interp::Nearest) => Interpolation::Nearest,
                Some(Interp::Trilinear) => Interpolation::Trilinear,
                None if vol.kind() == ElementKind::UInt8 => Interpolation::Nearest,
                None => Interpolation::Trilinear,
            };
            let r = vol.resample([spacing; 3], interp)?;
            save_volume(&r, out)?;
            Ok(json!({ "volume": out, "dims": r.dims() }))
        }
        Command::GenDataset => {
            let cfg_path = need(&cli.config, "config")?;
            let mut cfg = DatasetConfig::from_json(&read(cfg_path)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = need(&cli.output, "output")?;
            let m = generate_simulated_dataset(&cfg, out, &base_of(cfg_path))?;
            Ok(json!({ "items": m.items.len(), "errors": m.errors.len() }))
        }
        Command::Split { dataset, folds } => {
            let out = need(&cli.output, "output")?;
            let subjects = DatasetManifest::load(&dataset)?.subjects();
            let m = make_splits(&subjects, folds, cli.seed.unwrap_or(0))?;
            m.save(out)?;
            Ok(json!({ "splits": out, "folds": m.folds.len() }))
        }
        Command::Train { fold } => {
            let mut cfg = ExperimentConfig::load(need(&cli.config, "config")?)?;
            if let Some(s) = cli.seed {
                cfg.schedule.seed = s;
            }
            let fold = fold.or(cfg.fold).unwrap_or(0);
            let dir = train_fold(&cfg, fold, need(&cli.output, "output")?)?;
            Ok(json!({ "run": dir }))
        }
        Command::Predict { run } => {
            let files = predict_fold(&run)?;
            Ok(json!({ "predictions": files }))
        }
        Command::Evaluate { run, pred, truth } => match (run, pred, truth) {
            (Some(run), None, _) => {
                let reports = evaluate_fold(&run)?;
                Ok(json!({ "cases": reports }))
            }
            (None, Some(p), Some(t)) => {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let r = evaluate_case(&load_volume(&p)?, &load_volume(&t)?, &id, -1)?;
                Ok(serde_json::to_value(r)?)
            }
            _ => Err(Error::Config("evaluate needs a run directory or --pred with --truth".into())),
        },
        Command::Report { runs } => {
            let out = need(&cli.output, "output")?;
            let rep = collect(&runs)?;
            rep.write(out)?;
            Ok(json!({ "report": out, "modes": rep.aggregates.keys().map(|m| m.name()).collect::<Vec<_>>(), "missing": rep.missing.len() }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": "threads", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
