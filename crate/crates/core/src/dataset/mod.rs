//! Corpus manifests, narrow-band filtering, split statistics and batching.

pub mod fixture;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::BandReport;
use crate::metrics::Class;
use crate::mix_seed;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error("row {row}: bad label '{value}' (expected positive|negative|unknown)")]
    BadLabel { row: usize, value: String },
    #[error("row {row}: bad split '{value}' (expected train|dev|test)")]
    BadSplit { row: usize, value: String },
    #[error("no bandwidth report for '{0}'")]
    MissingReport(String),
    #[error("split '{0}' is empty")]
    EmptySplit(Split),
    #[error("batch size must be >= 1")]
    ZeroBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Unknown,
}

impl Label {
    pub fn class(self) -> Option<Class> {
        match self {
            Label::Positive => Some(Class::Positive),
            Label::Negative => Some(Class::Negative),
            Label::Unknown => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Unknown => "unknown",
        }
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "unknown" | "?" => Ok(Label::Unknown),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "devel" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav_path: String,
    pub label: Label,
    pub split: Split,
    pub is_narrowband: Option<bool>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    id: String,
    wav_path: String,
    label: String,
    split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_narrowband: Option<bool>,
}

/// Validated corpus index. Relative wav paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    base_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(DatasetError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self {
            entries,
            base_dir: None,
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve_wav(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.wav_path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Per-split counts by label.
    pub fn stats(&self) -> ManifestStats {
        let mut splits = BTreeMap::new();
        for e in &self.entries {
            let s: &mut SplitStats = splits.entry(e.split.as_str().to_string()).or_default();
            s.total += 1;
            match e.label {
                Label::Positive => s.positive += 1,
                Label::Negative => s.negative += 1,
                Label::Unknown => s.unknown += 1,
            }
            if e.is_narrowband == Some(true) {
                s.narrowband += 1;
            }
        }
        ManifestStats { splits }
    }

    /// Drops narrow-band train/dev recordings; the test split is never touched.
    pub fn filter_narrowband(&self, reports: &HashMap<String, BandReport>) -> Result<Manifest, DatasetError> {
        let mut kept = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.split == Split::Test {
                kept.push(e.clone());
                continue;
            }
            let report = reports
                .get(&e.id)
                .ok_or_else(|| DatasetError::MissingReport(e.id.clone()))?;
            if !report.is_narrowband {
                let mut e = e.clone();
                e.is_narrowband = Some(false);
                kept.push(e);
            }
        }
        Ok(Manifest {
            entries: kept,
            base_dir: self.base_dir.clone(),
        })
    }

    /// Seeded id groups over one split; see [`Batches`].
    pub fn batches(&self, split: Split, batch_size: usize, seed: u64) -> Result<Batches, DatasetError> {
        let ids: Vec<String> = self.split(split).map(|e| e.id.clone()).collect();
        if ids.is_empty() {
            return Err(DatasetError::EmptySplit(split));
        }
        if batch_size == 0 {
            return Err(DatasetError::ZeroBatch);
        }
        Ok(Batches {
            ids,
            batch_size,
            seed,
            pass: 0,
            queue: Vec::new(),
        })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            let line = i + 2;
            let label = row.label.parse().map_err(|_| DatasetError::BadLabel {
                row: line,
                value: row.label.clone(),
            })?;
            let split = row.split.parse().map_err(|_| DatasetError::BadSplit {
                row: line,
                value: row.split.clone(),
            })?;
            entries.push(ManifestEntry {
                id: row.id,
                wav_path: row.wav_path,
                label,
                split,
                is_narrowband: row.is_narrowband,
            });
        }
        Manifest::new(entries)
    }

    pub fn to_writer<W: std::io::Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let with_nb = self.entries.iter().any(|e| e.is_narrowband.is_some());
        if with_nb {
            wtr.write_record(["id", "wav_path", "label", "split", "is_narrowband"])?;
        } else {
            wtr.write_record(["id", "wav_path", "label", "split"])?;
        }
        for e in &self.entries {
            let mut rec = vec![
                e.id.clone(),
                e.wav_path.clone(),
                e.label.as_str().to_string(),
                e.split.as_str().to_string(),
            ];
            if with_nb {
                rec.push(e.is_narrowband.map_or(String::new(), |b| b.to_string()));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Loads a manifest CSV with header `id,wav_path,label,split[,is_narrowband]`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let m = Manifest::from_reader(file)?;
    Ok(match path.parent() {
        Some(dir) => m.with_base_dir(dir),
        None => m,
    })
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    m.to_writer(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
    pub unknown: usize,
    pub narrowband: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestStats {
    #[serde(flatten)]
    pub splits: BTreeMap<String, SplitStats>,
}

impl ManifestStats {
    pub fn get(&self, split: Split) -> SplitStats {
        self.splits.get(split.as_str()).copied().unwrap_or_default()
    }
}

/// Index groups for one pass over `n` items: a seeded shuffle cut into
/// groups of `batch_size`, keeping the final short group.
pub fn shuffled_groups(n: usize, batch_size: usize, seed: u64, pass: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, pass));
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Endless sequence of id groups, reshuffled on every pass.
#[derive(Debug, Clone)]
pub struct Batches {
    ids: Vec<String>,
    batch_size: usize,
    seed: u64,
    pass: u64,
    queue: Vec<Vec<String>>,
}

impl Batches {
    /// The groups making up pass `index`.
    pub fn pass(&self, index: u64) -> Vec<Vec<String>> {
        shuffled_groups(self.ids.len(), self.batch_size, self.seed, index)
            .into_iter()
            .map(|g| g.into_iter().map(|i| self.ids[i].clone()).collect())
            .collect()
    }

    pub fn groups_per_pass(&self) -> usize {
        self.ids.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches {
    type Item = Vec<String>;

    fn next(&mut self) -> Option<Vec<String>> {
        if self.queue.is_empty() {
            let mut groups = self.pass(self.pass);
            groups.reverse();
            self.queue = groups;
            self.pass += 1;
        }
        self.queue.pop()
    }
}
