use std::path::Path;
use std::process::Command;

use usseg::metrics::{aggregate, read_case_csv};
use usseg::pipeline::dataset::{generate_simulated_dataset, DatasetConfig};
use usseg::pipeline::experiment::{run_experiment, train_fold, ExperimentConfig, Mode};
use usseg::pipeline::report::collect;
use usseg::pipeline::splits::make_splits;

const DATA: &str = r#"{
  "tissue_maps": [{"kind": "family", "id": "m", "count": 3,
    "family": {"dims": [20,20,20], "spacing_mm": 1.0, "medium_label": 1, "inclusion_label": 4, "radius_range_mm": [3.0, 6.0]}}],
  "probe": {"kind": "linear", "element_count": 20, "width_mm": 19.0, "depth_mm": 19.0, "samples_per_line": 40, "center_frequency_MHz": 5.0},
  "trajectory": {"kind": "auto", "frames": 10},
  "compounding": {"target_spacing_mm": 1.0},
  "seed": 5
}"#;

fn dataset(root: &Path, name: &str) {
    let cfg = DatasetConfig::from_json(DATA).unwrap();
    let m = generate_simulated_dataset(&cfg, &root.join(name), root).unwrap();
    assert_eq!(m.items.len(), 3);
    make_splits(&m.subjects(), 3, 2).unwrap().save(root.join("splits.json")).unwrap();
}

fn experiment(mode: &str, root: &Path) -> ExperimentConfig {
    let phases = match mode {
        "scratch" => r#"[{"dataset_id": "real", "iterations": 6, "batch_size": 2}]"#,
        _ => r#"[{"dataset_id": "simulated", "iterations": 4, "batch_size": 2}, {"dataset_id": "real", "iterations": 6, "batch_size": 2}]"#,
    };
    let text = format!(
        r#"{{"mode": "{mode}", "net": {{"base_channels": 2, "dense_block_layers": 1, "scales": 2, "growth": 2}},
          "schedule": {{"phases": {phases}, "seed": 8}},
          "train": {{"patch": {{"size": [8,8,8]}}, "adam": {{"lr": 0.001}}}},
          "real_dataset": "real/dataset.json", "simulated_dataset": "real/dataset.json", "splits": "splits.json"}}"#
    );
    ExperimentConfig::from_json(&text, root).unwrap()
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn dataset_generation_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "a");
    dataset(tmp.path(), "b");
    for sub in ["images", "labels"] {
        for e in std::fs::read_dir(tmp.path().join("a").join(sub)).unwrap() {
            let name = e.unwrap().file_name();
            assert_eq!(bytes(tmp.path().join("a").join(sub).join(&name)), bytes(tmp.path().join("b").join(sub).join(&name)));
        }
    }
    assert_eq!(bytes(tmp.path().join("a/dataset.json")), bytes(tmp.path().join("b/dataset.json")));
}

#[test]
fn single_item_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let text = DATA.replace("\"count\": 3", "\"count\": 1");
    let m = generate_simulated_dataset(&DatasetConfig::from_json(&text).unwrap(), tmp.path(), tmp.path()).unwrap();
    assert_eq!(m.items.len(), 1);
    assert!(tmp.path().join(&m.items[0].image).exists());
    assert!(tmp.path().join(&m.items[0].label).exists());
}

#[test]
fn mode_phase_law() {
    let tmp = tempfile::tempdir().unwrap();
    let good = experiment("finetuned", tmp.path());
    assert_eq!(good.schedule.phases.len(), 2);
    let mut bad = good.clone();
    bad.mode = Mode::Scratch;
    assert!(bad.validate().is_err());
    let mut bad = experiment("scratch", tmp.path());
    bad.mode = Mode::Finetuned;
    assert!(bad.validate().is_err());
    let mut no_sim = good;
    no_sim.simulated_dataset = None;
    assert!(no_sim.validate().is_err());
}

#[test]
fn frozen_config_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    dataset(root, "real");
    let first = run_experiment(&experiment("finetuned", root), 1, &root.join("out1")).unwrap();
    assert_eq!(first.cases.len(), 1);
    let info: serde_json::Value = serde_json::from_slice(&bytes(first.dir.join("evaluation.json"))).unwrap();
    assert_eq!(info["spacing_mm"][&first.cases[0].case_id], serde_json::json!([1.0, 1.0, 1.0]));
    let frozen = ExperimentConfig::load(first.dir.join("config.json")).unwrap();
    assert_eq!(frozen.fold, Some(1));
    let second = run_experiment(&frozen, 1, &root.join("out2")).unwrap();
    assert_eq!(first.cases, second.cases);
    for f in ["checkpoint.bin", "loss_curve.csv", "cases.csv", "config.json", "summary.json", "evaluation.json"] {
        assert_eq!(bytes(first.dir.join(f)), bytes(second.dir.join(f)), "{f}");
    }
    for (a, b) in first.predictions.iter().zip(&second.predictions) {
        assert_eq!(bytes(a.with_extension("raw")), bytes(b.with_extension("raw")));
    }
}

#[test]
fn report_pairs_modes_and_flags_missing() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    dataset(root, "real");
    let out = root.join("runs");
    let mut scratch_cases = Vec::new();
    let mut dirs = Vec::new();
    for fold in 0..3 {
        let r = run_experiment(&experiment("scratch", root), fold, &out).unwrap();
        scratch_cases.extend(r.cases);
        dirs.push(r.dir);
    }
    let f = run_experiment(&experiment("finetuned", root), 0, &out).unwrap();
    // both modes see the same test set on a fold
    assert_eq!(f.cases[0].case_id, read_case_csv(std::fs::File::open(dirs[0].join("cases.csv")).unwrap()).unwrap()[0].case_id);
    dirs.push(f.dir);

    let rep = collect(&dirs).unwrap();
    assert_eq!(rep.cases[&Mode::Scratch].len(), 3);
    assert_eq!(rep.missing.len(), 2);
    assert!(rep.missing.iter().all(|(_, m)| *m == Mode::Finetuned));
    assert_eq!(rep.aggregates[&Mode::Scratch], aggregate(&scratch_cases).unwrap());

    let dir = root.join("report");
    rep.write(&dir).unwrap();
    let csv = std::fs::read_to_string(dir.join("per_patient.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("case_id,scratch_fold,") && lines[0].contains("finetuned_dice"));
    assert_eq!(lines.iter().filter(|l| l.ends_with(",finetuned")).count(), 2);
    // per-patient scratch dice re-aggregate to the stored summary
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "scratch_dice").unwrap();
    let dice: Vec<f64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    let mean = dice.iter().sum::<f64>() / dice.len() as f64;
    assert_eq!(mean, rep.aggregates[&Mode::Scratch].dice.mean);
    assert!(dir.join("aggregate_finetuned.json").exists());
    let text = std::fs::read_to_string(dir.join("comparison.txt")).unwrap();
    assert!(text.contains("missing:"));

    // a case cannot be counted twice in one mode
    let twice = [dirs[0].clone(), dirs[0].clone()];
    assert!(collect(&twice).is_err());
}

#[test]
fn single_run_single_case_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    dataset(root, "real");
    let r = run_experiment(&experiment("scratch", root), 2, &root.join("runs")).unwrap();
    let rep = collect(&[r.dir]).unwrap();
    assert_eq!(rep.per_patient_csv().unwrap().lines().count(), 2);
    assert!(rep.missing.is_empty());
}

#[test]
fn train_refuses_bad_fold() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "real");
    assert!(train_fold(&experiment("scratch", tmp.path()), 3, &tmp.path().join("runs")).is_err());
}

fn usseg(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_usseg")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn cli_errors_are_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = usseg(&["split", "missing.json", "--output", "s.json"], tmp.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("missing.json"));

    std::fs::write(tmp.path().join("bad.json"), "{\"tissue_maps\": []}").unwrap();
    let out = usseg(&["gen-dataset", "--config", "bad.json", "--output", "d"], tmp.path());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "json");

    let out = usseg(&["no-such-command"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");
}

#[test]
fn cli_thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("data.json"), DATA.replace("\"count\": 3", "\"count\": 1")).unwrap();
    for t in ["1", "3"] {
        let out = usseg(&["gen-dataset", "--config", "data.json", "--threads", t, "--output", &format!("d{t}")], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let name = "images/m_000_c000_r00.raw";
    assert_eq!(bytes(tmp.path().join("d1").join(name)), bytes(tmp.path().join("d3").join(name)));
}

#[test]
fn cli_simulate_compound_resample() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let spec: usseg::phantom::PhantomSpec = serde_json::from_str(
        r#"{"dims": [16,16,16], "spacing_mm": 1.0, "medium_label": 1,
            "ellipsoids": [{"center": [7.5,7.5,8.0], "radii": [4.0,4.0,4.0], "label": 4}]}"#,
    )
    .unwrap();
    usseg::mhd::save_volume(&spec.build().unwrap(), dir.join("map.mhd")).unwrap();
    std::fs::write(
        dir.join("sim.json"),
        r#"{"tissue_map": "map.mhd",
            "probe": {"kind": "linear", "element_count": 16, "width_mm": 15.0, "depth_mm": 15.0, "samples_per_line": 30, "center_frequency_MHz": 5.0},
            "trajectory": {"kind": "auto", "frames": 6}}"#,
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = usseg(args, dir);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    assert_eq!(run(&["simulate", "--config", "sim.json", "--seed", "3", "--output", "sweep"])["frames"], 6);
    std::fs::write(dir.join("comp.json"), r#"{"target_spacing_mm": 1.0}"#).unwrap();
    run(&["compound", "sweep", "--config", "comp.json", "--support", "support.mhd", "--output", "vol.mhd"]);
    let v = usseg::mhd::load_volume(dir.join("vol.mhd")).unwrap();
    assert_eq!(v.spacing(), [1.0; 3]);
    let r = run(&["resample", "map.mhd", "--spacing", "2", "--output", "half.mhd"]);
    assert_eq!(r["dims"], serde_json::json!([8, 8, 8]));
    let half = usseg::mhd::load_volume(dir.join("half.mhd")).unwrap();
    assert_eq!(half.kind(), usseg::volume::ElementKind::UInt8);
}
