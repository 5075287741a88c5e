//! Line-oriented dataset index.
//!
//! ```text
//! # seed 42
//! US_Kitsap_00001<TAB>images/US_Kitsap_00001.tif<TAB>labels/US_Kitsap_00001.tif<TAB>US_Kitsap<TAB>test
//! ```
//!
//! Paths are relative to the directory holding the manifest. Lines starting
//! with `#` are comments; `# seed <n>` records the split seed.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::tile::{load_tile, Tile};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub city: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

/// How the trainval entries are partitioned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// `round(ratio * N)` entries go to train.
    Ratio(f64),
    /// Exact counts; they must sum to the number of trainval entries.
    Counts { train: usize, val: usize },
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(seed) = comment.trim().strip_prefix("seed") {
                    manifest.seed = seed
                        .trim()
                        .parse()
                        .map_err(|_| Error::Manifest(format!("line {}: bad seed", lineno + 1)))?;
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, image, mask, city, split] = fields[..] else {
                return Err(Error::Manifest(format!(
                    "line {}: expected 5 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            };
            manifest.entries.push(ManifestEntry {
                id: id.to_string(),
                image: PathBuf::from(image),
                mask: PathBuf::from(mask),
                city: city.to_string(),
                split: split
                    .parse()
                    .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?,
            });
        }
        manifest.check_unique_ids()?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id '{}'", e.id)));
            }
        }
        Ok(())
    }

    /// Checks id uniqueness and that every referenced file exists under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        self.check_unique_ids()?;
        for e in &self.entries {
            for p in [&e.image, &e.mask] {
                let full = root.join(p);
                if !full.exists() {
                    return Err(Error::MissingFile(full));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every tile of `split` from disk, in manifest order.
    ///
    /// With `workers > 1` the files are decoded on scoped threads; the result
    /// order does not depend on the worker count.
    pub fn load_split(&self, root: &Path, split: Split, workers: usize) -> Result<Vec<Tile>> {
        let entries: Vec<&ManifestEntry> = self.of_split(split).collect();
        let load = |e: &ManifestEntry| -> Result<Tile> {
            let mut tile = load_tile(&root.join(&e.image), &root.join(&e.mask))?;
            tile.id = e.id.clone();
            tile.city = e.city.clone();
            Ok(tile)
        };
        let workers = workers.max(1).min(entries.len().max(1));
        if workers == 1 {
            return entries.into_iter().map(load).collect();
        }
        let chunk = entries.len().div_ceil(workers);
        let results: Vec<Result<Vec<Tile>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = entries
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|e| load(e)).collect::<Result<Vec<_>>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("loader thread panicked")).collect()
        });
        let mut tiles = Vec::with_capacity(entries.len());
        for r in results {
            tiles.extend(r?);
        }
        Ok(tiles)
    }
}

impl fmt::Display for DatasetManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# seed {}", self.seed)?;
        for e in &self.entries {
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}",
                e.id,
                e.image.display(),
                e.mask.display(),
                e.city,
                e.split
            )?;
        }
        Ok(())
    }
}

/// Randomly partitions the non-test entries into train and val.
///
/// Test entries keep their label. Entry order is preserved; only the split
/// column changes.
pub fn split_trainval(manifest: &DatasetManifest, rule: SplitRule, seed: u64) -> Result<DatasetManifest> {
    let mut trainval: Vec<usize> = (0..manifest.entries.len())
        .filter(|&i| manifest.entries[i].split != Split::Test)
        .collect();
    let n = trainval.len();
    let n_train = match rule {
        SplitRule::Ratio(r) => {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidArgument(format!("split ratio {r} outside (0, 1]")));
            }
            ((r * n as f64).round() as usize).min(n)
        }
        SplitRule::Counts { train, val } => {
            if train > n || val > n {
                return Err(Error::InvalidArgument(format!(
                    "explicit counts {train}/{val} exceed the {n} trainval entries"
                )));
            }
            if train + val != n {
                return Err(Error::InvalidArgument(format!(
                    "explicit counts {train} + {val} do not sum to {n}"
                )));
            }
            train
        }
    };
    trainval.shuffle(&mut stream(seed, Purpose::Split, 0));
    let mut out = manifest.clone();
    out.seed = seed;
    for (rank, &i) in trainval.iter().enumerate() {
        out.entries[i].split = if rank < n_train { Split::Train } else { Split::Val };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn manifest_of(n: usize) -> DatasetManifest {
        DatasetManifest {
            entries: (0..n)
                .map(|i| ManifestEntry {
                    id: format!("C_{i:05}"),
                    image: format!("images/C_{i:05}.tif").into(),
                    mask: format!("labels/C_{i:05}.tif").into(),
                    city: "C".into(),
                    split: Split::Train,
                })
                .collect(),
            seed: 0,
        }
    }

    fn members(m: &DatasetManifest, split: Split) -> Vec<String> {
        m.of_split(split).map(|e| e.id.clone()).collect()
    }

    #[test]
    fn explicit_counts_are_honoured() {
        let m = split_trainval(&manifest_of(43727), SplitRule::Counts { train: 39346, val: 4381 }, 1).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Val)), (39346, 4381));
    }

    #[test]
    fn ratio_one_puts_everything_in_train() {
        let m = split_trainval(&manifest_of(7), SplitRule::Ratio(1.0), 3).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Val)), (7, 0));
    }

    #[test]
    fn ratio_split_is_seed_deterministic() {
        let a = split_trainval(&manifest_of(10), SplitRule::Ratio(0.9), 11).unwrap();
        let b = split_trainval(&manifest_of(10), SplitRule::Ratio(0.9), 11).unwrap();
        assert_eq!((a.count(Split::Train), a.count(Split::Val)), (9, 1));
        assert_eq!(members(&a, Split::Val), members(&b, Split::Val));
        assert_eq!(a.seed, 11);
    }

    #[test]
    fn invalid_rules_rejected() {
        let m = manifest_of(10);
        assert!(split_trainval(&m, SplitRule::Counts { train: 11, val: 0 }, 0).is_err());
        assert!(split_trainval(&m, SplitRule::Counts { train: 5, val: 4 }, 0).is_err());
        assert!(split_trainval(&m, SplitRule::Ratio(0.0), 0).is_err());
        assert!(split_trainval(&m, SplitRule::Ratio(1.5), 0).is_err());
    }

    #[test]
    fn test_entries_are_untouched() {
        let mut m = manifest_of(6);
        m.entries[2].split = Split::Test;
        let out = split_trainval(&m, SplitRule::Ratio(0.5), 0).unwrap();
        assert_eq!(out.entries[2].split, Split::Test);
        assert_eq!(out.count(Split::Train), 3);
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let m = split_trainval(&manifest_of(5), SplitRule::Ratio(0.6), 9).unwrap();
        assert_eq!(DatasetManifest::parse(&m.to_string()).unwrap(), m);
        assert!(DatasetManifest::parse("a\tb\tc\n").is_err());
        assert!(DatasetManifest::parse("a\tb\tc\td\tholdout\n").is_err());
        assert!(DatasetManifest::parse("a\tb\tc\td\ttrain\na\tb\tc\td\tval\n").is_err());
    }

    #[test]
    fn validate_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(manifest_of(1).validate(dir.path()), Err(Error::MissingFile(_))));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..200, ratio in 0.01f64..=1.0, seed in any::<u64>()) {
            let m = split_trainval(&manifest_of(n), SplitRule::Ratio(ratio), seed).unwrap();
            let train: HashSet<String> = members(&m, Split::Train).into_iter().collect();
            let val: HashSet<String> = members(&m, Split::Val).into_iter().collect();
            prop_assert!(train.is_disjoint(&val));
            prop_assert_eq!(train.len() + val.len(), n);
            prop_assert_eq!(train.len(), ((ratio * n as f64).round() as usize).min(n));
        }
    }
}
