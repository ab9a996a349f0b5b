//! Cross-fold tables comparing the training modes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::{load_frozen, Mode};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, read_case_csv, AggregateReport, CaseReport, MetricSummary};

#[derive(Clone, Debug)]
pub struct Report {
    /// Per mode, every test case once.
    pub cases: BTreeMap<Mode, Vec<CaseReport>>,
    pub aggregates: BTreeMap<Mode, AggregateReport>,
    /// Subjects evaluated in one mode but absent from another.
    pub missing: Vec<(String, Mode)>,
}

/// Gather `cases.csv` from evaluated run directories.
pub fn collect(runs: &[PathBuf]) -> Result<Report> {
    let mut cases: BTreeMap<Mode, Vec<CaseReport>> = BTreeMap::new();
    for run in runs {
        let (cfg, _) = load_frozen(run)?;
        let path = run.join("cases.csv");
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        cases.entry(cfg.mode).or_default().extend(read_case_csv(file)?);
    }
    if cases.is_empty() {
        return Err(Error::Empty("no run directories to report".into()));
    }
    let mut aggregates = BTreeMap::new();
    for (mode, list) in &mut cases {
        list.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        if let Some(w) = list.windows(2).find(|w| w[0].case_id == w[1].case_id) {
            return Err(Error::Config(format!(
                "case {} evaluated twice in {} runs",
                w[0].case_id,
                mode.name()
            )));
        }
        aggregates.insert(*mode, aggregate(list)?);
    }
    let all: BTreeSet<&str> = cases.values().flatten().map(|c| c.case_id.as_str()).collect();
    let mut missing = Vec::new();
    for id in &all {
        for (mode, list) in &cases {
            if list.binary_search_by(|c| c.case_id.as_str().cmp(id)).is_err() {
                missing.push((id.to_string(), *mode));
            }
        }
    }
    Ok(Report {
        cases,
        aggregates,
        missing,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

impl Report {
    /// One row per subject with the modes side by side.
    pub fn per_patient_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["case_id".to_string()];
        for mode in self.cases.keys() {
            for col in ["fold", "dice", "jaccard", "avg_distance_mm", "hausdorff_mm"] {
                header.push(format!("{}_{col}", mode.name()));
            }
        }
        header.push("missing".into());
        w.write_record(&header).map_err(csv_err)?;
        let ids: BTreeSet<&str> = self.cases.values().flatten().map(|c| c.case_id.as_str()).collect();
        for id in ids {
            let mut row = vec![id.to_string()];
            let mut absent = Vec::new();
            for (mode, list) in &self.cases {
                match list.iter().find(|c| c.case_id == id) {
                    Some(c) => row.extend([
                        c.fold.to_string(),
                        format!("{}", c.dice),
                        format!("{}", c.jaccard),
                        cell(c.avg_distance_mm),
                        cell(c.hausdorff_mm),
                    ]),
                    None => {
                        row.extend(std::iter::repeat_n("NA".to_string(), 5));
                        absent.push(mode.name());
                    }
                }
            }
            row.push(absent.join(";"));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn comparison_text(&self) -> String {
        let fmt = |s: Option<&MetricSummary>| match s {
            Some(s) => format!("{:.4} +/- {:.4} (n={})", s.mean, s.std, s.n),
            None => "NA".into(),
        };
        let mut out = String::new();
        for (mode, a) in &self.aggregates {
            let _ = writeln!(out, "{} ({} cases)", mode.name(), a.n_cases);
            let _ = writeln!(out, "  dice             {}", fmt(Some(&a.dice)));
            let _ = writeln!(out, "  jaccard          {}", fmt(Some(&a.jaccard)));
            let _ = writeln!(out, "  avg_distance_mm  {}", fmt(a.avg_distance_mm.as_ref()));
            let _ = writeln!(out, "  hausdorff_mm     {}", fmt(a.hausdorff_mm.as_ref()));
            if a.missing_distances > 0 {
                let _ = writeln!(out, "  cases without distances: {}", a.missing_distances);
            }
        }
        if let (Some(s), Some(f)) = (
            self.aggregates.get(&Mode::Scratch),
            self.aggregates.get(&Mode::Finetuned),
        ) {
            let _ = writeln!(out, "dice difference (finetuned - scratch): {:+.4}", f.dice.mean - s.dice.mean);
        }
        for (id, mode) in &self.missing {
            let _ = writeln!(out, "missing: {id} has no {} result", mode.name());
        }
        out
    }

    /// Writes `per_patient.csv`, `aggregate_<mode>.json` and `comparison.txt`.
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let put = |name: String, text: String| {
            let p = out.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("per_patient.csv".into(), self.per_patient_csv()?)?;
        for (mode, a) in &self.aggregates {
            put(format!("aggregate_{}.json", mode.name()), serde_json::to_string_pretty(a)?)?;
        }
        put("comparison.txt".into(), self.comparison_text())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}
