//! Train/val split handling. The repo ships ID-list files (`train.txt`,
//! `val.txt`, 3712/3769 ids over the 7481-frame training set); on partial
//! datasets the split is the intersection with whatever frames exist.

use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

fn read_id_file(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "split id file missing: {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Load the split from `image_set_dir` (expects `train.txt` and `val.txt`),
/// optionally restricted to the available frame ids.
pub fn make_split(image_set_dir: &Path, available: Option<&BTreeSet<String>>) -> Result<SplitSpec> {
    let train = read_id_file(&image_set_dir.join("train.txt"))?;
    let val = read_id_file(&image_set_dir.join("val.txt"))?;

    let train_set: BTreeSet<&String> = train.iter().collect();
    if let Some(overlap) = val.iter().find(|id| train_set.contains(id)) {
        return Err(Error::Config(format!(
            "split lists overlap on frame {overlap}"
        )));
    }

    let restrict = |ids: Vec<String>| -> Vec<String> {
        match available {
            Some(avail) => ids.into_iter().filter(|id| avail.contains(id)).collect(),
            None => ids,
        }
    };
    Ok(SplitSpec {
        train: restrict(train),
        val: restrict(val),
    })
}

/// Deterministic fresh split of `ids` with the given training fraction.
pub fn generate_split(ids: &[String], train_fraction: f64, seed: u64) -> SplitSpec {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = ((ids.len() as f64) * train_fraction).round() as usize;
    let (train, val) = shuffled.split_at(n_train.min(ids.len()));
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort();
    val.sort();
    SplitSpec { train, val }
}

pub fn write_split_files(dir: &Path, spec: &SplitSpec) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, ids) in [("train.txt", &spec.train), ("val.txt", &spec.val)] {
        let path = dir.join(name);
        let mut text = ids.join("\n");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
