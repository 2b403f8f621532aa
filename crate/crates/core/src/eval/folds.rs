use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Study-level k-fold partition shared by every method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

/// Shuffles the distinct study ids with `seed` and deals them round-robin into `k` folds.
pub fn make_folds<S: AsRef<str>>(study_ids: &[S], k: usize, seed: u64) -> Result<FoldSplit> {
    let unique: BTreeSet<&str> = study_ids.iter().map(AsRef::as_ref).collect();
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if unique.len() < k {
        return Err(Error::Config(format!(
            "{} studies cannot fill {k} folds",
            unique.len()
        )));
    }
    let mut ids: Vec<&str> = unique.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id.to_string());
    }
    for fold in &mut folds {
        fold.sort();
    }
    Ok(FoldSplit { k, seed, folds })
}

impl FoldSplit {
    pub fn fold_of(&self, study: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|s| s == study))
    }

    /// Study id to fold index.
    pub fn assignment(&self) -> BTreeMap<&str, usize> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(i, f)| f.iter().map(move |s| (s.as_str(), i)))
            .collect()
    }

    pub fn studies_in(&self, folds: &[usize]) -> BTreeSet<String> {
        folds
            .iter()
            .filter_map(|&f| self.folds.get(f))
            .flatten()
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::Consistency {
                ids: vec![format!("{} folds listed for k = {}", self.folds.len(), self.k)],
            });
        }
        let mut seen = BTreeSet::new();
        let duplicated: Vec<String> = self
            .folds
            .iter()
            .flatten()
            .filter(|s| !seen.insert(s.as_str()))
            .cloned()
            .collect();
        if !duplicated.is_empty() {
            return Err(Error::Consistency { ids: duplicated });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Dependency { path: path.to_path_buf() });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: FoldSplit = serde_json::from_str(&text)?;
        split.validate()?;
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_studies_five_folds() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let split = make_folds(&ids, 5, 1).unwrap();
        assert!(split.folds.iter().all(|f| f.len() == 2));
        split.validate().unwrap();
        assert_eq!(split, make_folds(&ids, 5, 1).unwrap());
    }

    #[test]
    fn too_few_studies_is_config_error() {
        assert!(matches!(make_folds(&["a", "b"], 5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_is_dependency_error() {
        assert!(matches!(FoldSplit::load(Path::new("/nonexistent/folds.json")), Err(Error::Dependency { .. })));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let split = make_folds(&["a", "b", "c"], 3, 2).unwrap();
        let path = dir.path().join("folds.json");
        split.save(&path).unwrap();
        assert_eq!(FoldSplit::load(&path).unwrap(), split);
    }

    proptest! {
        #[test]
        fn every_study_in_exactly_one_fold(n in 5usize..60, k in 2usize..6, seed in any::<u64>()) {
            let ids: Vec<String> = (0..n).map(|i| format!("study{i}")).collect();
            let split = make_folds(&ids, k, seed).unwrap();
            for id in &ids {
                prop_assert_eq!(split.folds.iter().filter(|f| f.contains(id)).count(), 1);
            }
            let sizes: Vec<usize> = split.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
