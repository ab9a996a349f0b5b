//! Cross-validation split manifests.
//!
//! Test folds partition the subjects as evenly as possible. Within each
//! fold the remaining subjects are split 3:1 into training and validation,
//! which with five folds approximates a 60/20/20 division of the whole set.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POLICY: &str = "k test folds partitioning the subjects; per fold the rest split train:validation 3:1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fold {
    pub fold_id: usize,
    pub test_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub train_subjects: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub seed: u64,
    pub n_folds: usize,
    pub policy: String,
    pub subjects: Vec<String>,
    pub folds: Vec<Fold>,
}

pub fn make_splits(subjects: &[String], n_folds: usize, seed: u64) -> Result<SplitManifest> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if subjects.len() < n_folds {
        return Err(Error::Config(format!(
            "{} subjects cannot fill {n_folds} folds",
            subjects.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for s in subjects {
        if !seen.insert(s) {
            return Err(Error::Config(format!("duplicate subject {s:?}")));
        }
    }
    let mut order = subjects.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let (base, extra) = (n / n_folds, n % n_folds);
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for k in 0..n_folds {
        let size = base + (k < extra) as usize;
        let test = order[start..start + size].to_vec();
        // the rest in cyclic order starting right after the test block
        let rest: Vec<String> = (0..n - size).map(|i| order[(start + size + i) % n].clone()).collect();
        let n_val = (rest.len() as f64 / 4.0).round() as usize;
        folds.push(Fold {
            fold_id: k,
            test_subjects: test,
            validation_subjects: rest[..n_val].to_vec(),
            train_subjects: rest[n_val..].to_vec(),
        });
        start += size;
    }
    Ok(SplitManifest {
        seed,
        n_folds,
        policy: POLICY.to_string(),
        subjects: subjects.to_vec(),
        folds,
    })
}

impl SplitManifest {
    pub fn fold(&self, k: usize) -> Result<&Fold> {
        self.folds
            .iter()
            .find(|f| f.fold_id == k)
            .ok_or_else(|| Error::Config(format!("split manifest has no fold {k}")))
    }

    /// Check the partition laws.
    pub fn validate(&self) -> Result<()> {
        let all: BTreeSet<&String> = self.subjects.iter().collect();
        if all.len() != self.subjects.len() {
            return Err(Error::Config("duplicate subjects in manifest".into()));
        }
        let mut tested = BTreeSet::new();
        for f in &self.folds {
            let mut within = BTreeSet::new();
            for s in f.test_subjects.iter().chain(&f.validation_subjects).chain(&f.train_subjects) {
                if !all.contains(s) || !within.insert(s) {
                    return Err(Error::Config(format!("fold {}: subject {s:?} unknown or repeated", f.fold_id)));
                }
            }
            if within.len() != all.len() {
                return Err(Error::Config(format!("fold {} does not cover every subject", f.fold_id)));
            }
            for s in &f.test_subjects {
                if !tested.insert(s) {
                    return Err(Error::Config(format!("subject {s:?} tested in more than one fold")));
                }
            }
        }
        if tested.len() != all.len() {
            return Err(Error::Config("test sets do not cover every subject".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SplitManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("p{i:02}")).collect()
    }

    #[test]
    fn twenty_three_in_five() {
        let m = make_splits(&ids(23), 5, 0).unwrap();
        let sizes: Vec<usize> = m.folds.iter().map(|f| f.test_subjects.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        for f in &m.folds {
            let rest = 23 - f.test_subjects.len();
            assert_eq!(f.validation_subjects.len(), (rest as f64 / 4.0).round() as usize);
        }
        assert_eq!(m, make_splits(&ids(23), 5, 0).unwrap());
        assert_ne!(m, make_splits(&ids(23), 5, 1).unwrap());
        m.validate().unwrap();
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(make_splits(&ids(3), 1, 0).is_err());
        assert!(make_splits(&ids(3), 4, 0).is_err());
        let mut dup = ids(4);
        dup.push("p01".into());
        assert!(make_splits(&dup, 2, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = make_splits(&ids(7), 3, 9).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(SplitManifest::from_json(&text).unwrap(), m);
    }

    proptest! {
        #[test]
        fn partition_laws(n in 2usize..=30, k in 2usize..=30, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let m = make_splits(&ids(n), k, seed).unwrap();
            m.validate().unwrap();
            let sizes: Vec<usize> = m.folds.iter().map(|f| f.test_subjects.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        }
    }
}
