//! Corpus manifest, patch datasets, class balancing and fold splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectro::{Patch, RgbImage, SpectroError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("manifest {path} lacks required column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("manifest line {line}, column `{column}`: invalid value {value:?}")]
    InvalidValue {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("manifest line {line}: duplicate id {id:?}")]
    DuplicateId { line: u64, id: String },
    #[error("malformed CSV in {path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error("fold {fold} out of range for k = {k}")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("dataset has no {0} examples")]
    MissingClass(Label),
    #[error("patch references unknown recording {0:?}")]
    UnknownRecording(String),
    #[error(transparent)]
    Image(#[from] SpectroError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn class_index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        })
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" | "0" => Ok(Label::Negative),
            "positive" | "1" => Ok(Label::Positive),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    /// One-hot code: female = [1, 0], male = [0, 1].
    pub fn one_hot(self) -> [f32; 2] {
        match self {
            Gender::Female => [1.0, 0.0],
            Gender::Male => [0.0, 1.0],
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

impl FromStr for Gender {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            _ => Err(()),
        }
    }
}

/// Cross-validation fold of a record, or the held-out test marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FoldAssignment {
    Fold(usize),
    Test,
}

impl fmt::Display for FoldAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldAssignment::Fold(k) => write!(f, "{k}"),
            FoldAssignment::Test => f.write_str("test"),
        }
    }
}

impl FromStr for FoldAssignment {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("test") {
            return Ok(FoldAssignment::Test);
        }
        s.parse().map(FoldAssignment::Fold).map_err(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub label: Label,
    pub gender: Gender,
    pub fold: FoldAssignment,
}

/// A recording to score. Label and gender are optional here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingInput {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<Label>,
    pub gender: Option<Gender>,
}

impl From<&SampleRecord> for RecordingInput {
    fn from(r: &SampleRecord) -> Self {
        Self {
            id: r.id.clone(),
            path: r.path.clone(),
            label: Some(r.label),
            gender: Some(r.gender),
        }
    }
}

struct RawManifest {
    headers: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
    base: PathBuf,
}

fn read_raw(path: &Path) -> Result<RawManifest, DatasetError> {
    let csv_err = |e: csv::Error| DatasetError::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) => DatasetError::Io {
                path: path.to_path_buf(),
                reason: io.to_string(),
            },
            _ => csv_err(e),
        })?;
    let headers = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_ascii_lowercase(), i))
        .collect();
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        rows.push((line, row));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(RawManifest { headers, rows, base })
}

impl RawManifest {
    fn column(&self, path: &Path, name: &'static str) -> Result<usize, DatasetError> {
        self.headers.get(name).copied().ok_or(DatasetError::MissingColumn {
            path: path.to_path_buf(),
            column: name,
        })
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }
}

fn field(row: &csv::StringRecord, idx: usize) -> &str {
    row.get(idx).unwrap_or("")
}

fn parse_field<T: FromStr>(row: &csv::StringRecord, idx: usize, line: u64, column: &'static str) -> Result<T, DatasetError> {
    let raw = field(row, idx);
    raw.parse().map_err(|_| DatasetError::InvalidValue {
        line,
        column,
        value: raw.to_string(),
    })
}

fn optional_field<T: FromStr>(row: &csv::StringRecord, col: Option<usize>, line: u64, column: &'static str) -> Result<Option<T>, DatasetError> {
    col.filter(|&c| !field(row, c).is_empty())
        .map(|c| parse_field(row, c, line, column))
        .transpose()
}

fn check_id(seen: &mut HashSet<String>, id: &str, line: u64) -> Result<(), DatasetError> {
    if id.is_empty() {
        return Err(DatasetError::InvalidValue {
            line,
            column: "id",
            value: String::new(),
        });
    }
    if !seen.insert(id.to_string()) {
        return Err(DatasetError::DuplicateId {
            line,
            id: id.to_string(),
        });
    }
    Ok(())
}

/// Parses a training manifest with header `id,path,label,gender,fold`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>, DatasetError> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let id_col = raw.column(path, "id")?;
    let path_col = raw.column(path, "path")?;
    let label_col = raw.column(path, "label")?;
    let gender_col = raw.column(path, "gender")?;
    let fold_col = raw.column(path, "fold")?;

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.rows.len());
    for (line, row) in &raw.rows {
        let id = field(row, id_col);
        check_id(&mut seen, id, *line)?;
        records.push(SampleRecord {
            id: id.to_string(),
            path: raw.resolve(field(row, path_col)),
            label: parse_field(row, label_col, *line, "label")?,
            gender: parse_field(row, gender_col, *line, "gender")?,
            fold: parse_field(row, fold_col, *line, "fold")?,
        });
    }
    Ok(records)
}

/// Parses a scoring manifest: `id,path` required, `label` and `gender`
/// optional (columns may be absent or cells empty). The flag reports
/// whether a gender column exists.
pub fn load_inputs(path: impl AsRef<Path>) -> Result<(Vec<RecordingInput>, bool), DatasetError> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let id_col = raw.column(path, "id")?;
    let path_col = raw.column(path, "path")?;
    let label_col = raw.headers.get("label").copied();
    let gender_col = raw.headers.get("gender").copied();

    let mut seen = HashSet::new();
    let mut inputs = Vec::with_capacity(raw.rows.len());
    for (line, row) in &raw.rows {
        let id = field(row, id_col);
        check_id(&mut seen, id, *line)?;
        inputs.push(RecordingInput {
            id: id.to_string(),
            path: raw.resolve(field(row, path_col)),
            label: optional_field(row, label_col, *line, "label")?,
            gender: optional_field(row, gender_col, *line, "gender")?,
        });
    }
    Ok((inputs, gender_col.is_some()))
}

/// Writes a manifest; paths under `base` are stored relative to it.
pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<(), DatasetError> {
    let io_err = |reason: String| DatasetError::Io {
        path: path.to_path_buf(),
        reason,
    };
    let base = path.parent().unwrap_or(Path::new(""));
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(e.to_string()))?;
    writer
        .write_record(["id", "path", "label", "gender", "fold"])
        .map_err(|e| io_err(e.to_string()))?;
    for r in records {
        let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
        writer
            .write_record([
                r.id.as_str(),
                &rel.to_string_lossy(),
                &r.label.to_string(),
                &r.gender.to_string(),
                &r.fold.to_string(),
            ])
            .map_err(|e| io_err(e.to_string()))?;
    }
    writer.flush().map_err(|e| io_err(e.to_string()))
}

/// Per-class record counts `(negative, positive)`.
pub fn class_counts(records: &[SampleRecord]) -> (usize, usize) {
    let pos = records.iter().filter(|r| r.label.is_positive()).count();
    (records.len() - pos, pos)
}

/// Splits cross-validation records into (train, validation) for `val_fold`.
/// Records marked as test belong to neither.
pub fn split_folds(records: &[SampleRecord], k: usize, val_fold: usize) -> Result<(Vec<&SampleRecord>, Vec<&SampleRecord>), DatasetError> {
    if val_fold >= k {
        return Err(DatasetError::FoldOutOfRange { fold: val_fold, k });
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for r in records {
        match r.fold {
            FoldAssignment::Fold(f) if f >= k => return Err(DatasetError::FoldOutOfRange { fold: f, k }),
            FoldAssignment::Fold(f) if f == val_fold => val.push(r),
            FoldAssignment::Fold(_) => train.push(r),
            FoldAssignment::Test => {}
        }
    }
    Ok((train, val))
}

/// Assigns folds round-robin within each (label, gender) stratum after a
/// seeded shuffle.
pub fn assign_stratified_folds<R: Rng>(records: &mut [SampleRecord], k: usize, rng: &mut R) {
    let mut strata: BTreeMap<(Label, Gender), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        strata.entry((r.label, r.gender)).or_default().push(i);
    }
    let mut offset = 0;
    for indices in strata.values_mut() {
        indices.shuffle(rng);
        for (j, &i) in indices.iter().enumerate() {
            records[i].fold = FoldAssignment::Fold((j + offset) % k);
        }
        offset += indices.len();
    }
}

/// One training example. Replicas share the underlying patch.
#[derive(Debug, Clone)]
pub struct PatchItem {
    pub patch: Arc<Patch>,
    pub label: Label,
    pub gender: Gender,
}

impl PatchItem {
    pub fn source_id(&self) -> &str {
        &self.patch.source_id
    }
}

#[derive(Debug, Clone, Default)]
pub struct PatchDataset {
    pub items: Vec<PatchItem>,
}

impl PatchDataset {
    /// Collects the patches of `records`, checking every patch belongs to one of them.
    pub fn build(records: &[&SampleRecord], patches: &HashMap<String, Vec<Arc<Patch>>>) -> Result<Self, DatasetError> {
        let mut items = Vec::new();
        for r in records {
            let list = patches.get(&r.id).ok_or_else(|| DatasetError::UnknownRecording(r.id.clone()))?;
            for p in list {
                if p.source_id != r.id {
                    return Err(DatasetError::UnknownRecording(p.source_id.clone()));
                }
                items.push(PatchItem {
                    patch: Arc::clone(p),
                    label: r.label,
                    gender: r.gender,
                });
            }
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(negative, positive)` patch counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.items.iter().filter(|i| i.label.is_positive()).count();
        (self.items.len() - pos, pos)
    }
}

/// Replicates the minority class until both classes have the same number of
/// patches. With `n_major = q * n_minor + r`, every minority item appears
/// `q` times and the first `r` get one more copy. Copies share pixel data.
pub fn balance_by_replication(ds: &PatchDataset) -> Result<PatchDataset, DatasetError> {
    let (neg, pos) = ds.class_counts();
    if neg == 0 {
        return Err(DatasetError::MissingClass(Label::Negative));
    }
    if pos == 0 {
        return Err(DatasetError::MissingClass(Label::Positive));
    }
    let (minority, n_minor, n_major) = if pos <= neg {
        (Label::Positive, pos, neg)
    } else {
        (Label::Negative, neg, pos)
    };
    let copies = n_major / n_minor;
    let remainder = n_major % n_minor;

    let minor_items: Vec<&PatchItem> = ds.items.iter().filter(|i| i.label == minority).collect();
    let mut items = ds.items.clone();
    for _ in 1..copies {
        items.extend(minor_items.iter().map(|&i| i.clone()));
    }
    items.extend(minor_items.iter().take(remainder).map(|&i| i.clone()));
    Ok(PatchDataset { items })
}

/// Writes patches to `<dir>/<id>/<start_ms>.png` and appends them to `index.csv`.
pub struct PatchCacheWriter {
    dir: PathBuf,
    rows: Vec<(String, u64, String)>,
}

pub const CACHE_INDEX: &str = "index.csv";

impl PatchCacheWriter {
    pub fn new(dir: &Path) -> Result<Self, DatasetError> {
        fs::create_dir_all(dir).map_err(|e| DatasetError::Io {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            rows: Vec::new(),
        })
    }

    pub fn add(&mut self, patches: &[Patch]) -> Result<(), DatasetError> {
        for p in patches {
            let rec_dir = self.dir.join(&p.source_id);
            fs::create_dir_all(&rec_dir).map_err(|e| DatasetError::Io {
                path: rec_dir.clone(),
                reason: e.to_string(),
            })?;
            let rel = format!("{}/{}.png", p.source_id, p.start_ms());
            p.image.write_png(&self.dir.join(&rel))?;
            self.rows.push((p.source_id.clone(), p.start_ms(), rel));
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize, DatasetError> {
        let path = self.dir.join(CACHE_INDEX);
        let io_err = |reason: String| DatasetError::Io {
            path: path.clone(),
            reason,
        };
        self.rows.sort();
        let mut writer = csv::Writer::from_path(&path).map_err(|e| io_err(e.to_string()))?;
        writer.write_record(["id", "start_ms", "file"]).map_err(|e| io_err(e.to_string()))?;
        for (id, start, file) in &self.rows {
            writer
                .write_record([id.as_str(), &start.to_string(), file.as_str()])
                .map_err(|e| io_err(e.to_string()))?;
        }
        writer.flush().map_err(|e| io_err(e.to_string()))?;
        Ok(self.rows.len())
    }
}

/// Reads a patch cache back, grouped by recording id in start order.
pub fn load_patch_cache(dir: &Path) -> Result<HashMap<String, Vec<Arc<Patch>>>, DatasetError> {
    let index = dir.join(CACHE_INDEX);
    let raw = read_raw(&index)?;
    let id_col = raw.column(&index, "id")?;
    let start_col = raw.column(&index, "start_ms")?;
    let file_col = raw.column(&index, "file")?;
    let mut out: HashMap<String, Vec<Arc<Patch>>> = HashMap::new();
    for (line, row) in &raw.rows {
        let start_ms: u64 = parse_field(row, start_col, *line, "start_ms")?;
        let image = RgbImage::read_png(&dir.join(field(row, file_col)))?;
        out.entry(field(row, id_col).to_string()).or_default().push(Arc::new(Patch {
            image: Arc::new(image),
            source_id: field(row, id_col).to_string(),
            start_s: start_ms as f64 / 1000.0,
        }));
    }
    for list in out.values_mut() {
        list.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    }
    Ok(out)
}
