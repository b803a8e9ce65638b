//! Seeded, class-balanced train/val/test manifests.
//!
//! Pools are canonicalized by sorting on `patch_id` before sampling, so a
//! manifest depends only on pool content, parameters and seed. Each split draws
//! from its own ChaCha stream: training uses stream 0, Test 1 stream 1 and
//! Test 2 stream 2.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::class::ClassLabel;
use crate::error::{Error, Result};

pub const DEFAULT_PER_CLASS: usize = 5_000;
pub const DEFAULT_VAL_FRACTION: f64 = 0.10;
pub const DEFAULT_TEST_PER_CLASS: usize = 500;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoolEntry {
    pub patch_id: String,
    pub class_label: ClassLabel,
}

impl PoolEntry {
    pub fn new(patch_id: impl Into<String>, class_label: ClassLabel) -> Self {
        PoolEntry { patch_id: patch_id.into(), class_label }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test1,
    Test2,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test1, Split::Test2];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test1 => "test1",
            Split::Test2 => "test2",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train | Split::Val => 0,
            Split::Test1 => 1,
            Split::Test2 => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub patch_id: String,
    pub class_label: ClassLabel,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub per_class: usize,
    pub val_fraction: f64,
    pub test_per_class: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            per_class: DEFAULT_PER_CLASS,
            val_fraction: DEFAULT_VAL_FRACTION,
            test_per_class: DEFAULT_TEST_PER_CLASS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub seed: u64,
    pub params: SplitParams,
    /// SHA-256 over the sorted patch ids of each pool, newline-joined.
    pub pool_digests: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub params: SplitParams,
    pub entries: Vec<ManifestEntry>,
    pub pool_digests: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn count(&self, class: ClassLabel, split: Split) -> usize {
        self.entries.iter().filter(|e| e.class_label == class && e.split == split).count()
    }

    pub fn counts(&self) -> BTreeMap<(ClassLabel, Split), usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry((e.class_label, e.split)).or_insert(0) += 1;
        }
        m
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn ids(&self, split: Split) -> HashSet<&str> {
        self.split(split).map(|e| e.patch_id.as_str()).collect()
    }

    pub fn metadata(&self) -> ManifestMetadata {
        ManifestMetadata {
            seed: self.seed,
            params: self.params.clone(),
            pool_digests: self.pool_digests.clone(),
            counts: self.counts().into_iter().map(|((c, s), n)| (format!("{c}/{s}"), n)).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("patch_id,class,split\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", e.patch_id, e.class_label, e.split));
        }
        s
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let meta = serde_json::to_string_pretty(&self.metadata()).expect("metadata serializes");
        fs::write(json_path, meta + "\n").map_err(|e| Error::io(json_path, e))
    }

    pub fn read(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let meta: ManifestMetadata = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { context: json_path.display().to_string(), message: e.to_string() })?;
        let mut rdr = csv::Reader::from_path(csv_path)
            .map_err(|e| Error::Parse { context: csv_path.display().to_string(), message: e.to_string() })?;
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                context: format!("{} record {}", csv_path.display(), i + 1),
                message: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(Error::Parse {
                    context: format!("{} record {}", csv_path.display(), i + 1),
                    message: format!("expected 3 fields, got {}", rec.len()),
                });
            }
            entries.push(ManifestEntry {
                patch_id: rec[0].to_string(),
                class_label: rec[1].parse()?,
                split: rec[2].parse()?,
            });
        }
        Ok(DatasetManifest { seed: meta.seed, params: meta.params, entries, pool_digests: meta.pool_digests })
    }
}

pub fn pool_digest(pool: &[PoolEntry]) -> String {
    let mut ids: Vec<&str> = pool.iter().map(|e| e.patch_id.as_str()).collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(id.as_bytes());
    }
    hex::encode(h.finalize())
}

fn rng_for(seed: u64, split: Split) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    rng
}

/// Sorted ids of one class, after exclusions.
fn class_ids<'a>(pool: &'a [PoolEntry], class: ClassLabel, exclusions: &HashSet<&str>) -> Vec<&'a str> {
    let mut ids: Vec<&str> = pool
        .iter()
        .filter(|e| e.class_label == class && !exclusions.contains(e.patch_id.as_str()))
        .map(|e| e.patch_id.as_str())
        .collect();
    ids.sort_unstable();
    ids
}

/// First `k` elements of a Fisher–Yates shuffle of `ids`.
fn partial_shuffle<'a>(mut ids: Vec<&'a str>, k: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let n = ids.len();
    for i in 0..k {
        let j = rng.random_range(i as u64..n as u64) as usize;
        ids.swap(i, j);
    }
    ids.truncate(k);
    ids
}

fn check_unique(pool: &[PoolEntry]) -> Result<()> {
    let mut seen = HashSet::with_capacity(pool.len());
    for e in pool {
        if !seen.insert(e.patch_id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate patch id {} in pool", e.patch_id)));
        }
    }
    Ok(())
}

/// Selects `per_class` patches per class; the last `round(val_fraction ·
/// per_class)` of each class's selection become validation.
pub fn sample_training(
    pool: &[PoolEntry],
    per_class: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    check_unique(pool)?;
    let n_val = (val_fraction * per_class as f64).round() as usize;
    let mut rng = rng_for(seed, Split::Train);
    let none = HashSet::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in ClassLabel::ALL {
        let ids = class_ids(pool, class, &none);
        if ids.len() < per_class {
            return Err(Error::InsufficientPool { class: class.to_string(), needed: per_class, available: ids.len() });
        }
        let chosen = partial_shuffle(ids, per_class, &mut rng);
        let cut = per_class - n_val;
        let entry = |id: &str, split| ManifestEntry { patch_id: id.to_string(), class_label: class, split };
        train.extend(chosen[..cut].iter().map(|id| entry(id, Split::Train)));
        val.extend(chosen[cut..].iter().map(|id| entry(id, Split::Val)));
    }
    train.extend(val);
    Ok(train)
}

/// Selects `per_class` patches per class from `pool` minus `exclusions`.
pub fn sample_test(
    pool: &[PoolEntry],
    per_class: usize,
    exclusions: &HashSet<&str>,
    seed: u64,
    split: Split,
) -> Result<Vec<ManifestEntry>> {
    if !matches!(split, Split::Test1 | Split::Test2) {
        return Err(Error::InvalidInput(format!("{split} is not a test split")));
    }
    check_unique(pool)?;
    let mut rng = rng_for(seed, split);
    let mut out = Vec::new();
    for class in ClassLabel::ALL {
        let ids = class_ids(pool, class, exclusions);
        if ids.len() < per_class {
            return Err(Error::InsufficientPool { class: class.to_string(), needed: per_class, available: ids.len() });
        }
        out.extend(partial_shuffle(ids, per_class, &mut rng).into_iter().map(|id| ManifestEntry {
            patch_id: id.to_string(),
            class_label: class,
            split,
        }));
    }
    Ok(out)
}

/// Full protocol: train/val and Test 1 from image set 1 (Test 1 disjoint from
/// train∪val), Test 2 from image set 2 when that pool is non-empty.
pub fn build_manifest(
    set1: &[PoolEntry],
    set2: &[PoolEntry],
    params: &SplitParams,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut entries = sample_training(set1, params.per_class, params.val_fraction, seed)?;
    let used: HashSet<&str> = entries.iter().map(|e| e.patch_id.as_str()).collect();
    let test1 = sample_test(set1, params.test_per_class, &used, seed, Split::Test1)?;
    let mut pool_digests = BTreeMap::from([("image_set_1".to_string(), pool_digest(set1))]);
    let test2 = if set2.is_empty() {
        Vec::new()
    } else {
        let set1_ids: HashSet<&str> = set1.iter().map(|e| e.patch_id.as_str()).collect();
        if let Some(dup) = set2.iter().find(|e| set1_ids.contains(e.patch_id.as_str())) {
            return Err(Error::InvalidInput(format!("patch id {} appears in both image sets", dup.patch_id)));
        }
        pool_digests.insert("image_set_2".to_string(), pool_digest(set2));
        sample_test(set2, params.test_per_class, &HashSet::new(), seed, Split::Test2)?
    };
    entries.extend(test1);
    entries.extend(test2);
    Ok(DatasetManifest { seed, params: params.clone(), entries, pool_digests })
}
