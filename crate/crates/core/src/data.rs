//! Dataset ingestion, min-max scaling and stratified fold planning.
//!
//! A [`Dataset`] is an immutable numeric matrix with one label per row. Labels
//! are already encoded as `0`, `1` or `2`; the human-readable readmission
//! windows live in [`CLASS_NAMES`] and are metadata only.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of readmission classes.
pub const NUM_CLASSES: usize = 3;

/// Display names of the three label ids.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["0 days", "<30 days", ">30 days"];

/// Default name of the label column in input CSV files.
pub const DEFAULT_LABEL_COLUMN: &str = "readmitted";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, feature_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(Error::shape(format!(
                "{} feature columns but {} names",
                features.ncols(),
                feature_names.len()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                row,
                label: label.to_string(),
            });
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateFeature(name.clone()));
            }
        }
        let features = standard(features);
        Ok(Dataset {
            features,
            labels,
            feature_names,
        })
    }

    /// Builds a dataset from row vectors, naming columns `f0`, `f1`, ...
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: width,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let features = Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::shape(e.to_string()))?;
        let names = (0..width).map(|j| format!("f{j}")).collect();
        Dataset::new(features, labels, names)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.n_features();
        let flat = self.features.as_slice().expect("standard layout");
        &flat[i * width..(i + 1) * width]
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.features.column(j)
    }

    /// Row-major backing storage.
    pub fn as_flat(&self) -> &[f64] {
        self.features.as_slice().expect("standard layout")
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        class_counts(&self.labels)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: standard(self.features.select(Axis(0), indices)),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Columns at `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: standard(self.features.select(Axis(1), indices)),
            labels: self.labels.clone(),
            feature_names: indices.iter().map(|&j| self.feature_names[j].clone()).collect(),
        }
    }

    /// Same features with replacement labels. Used for binary remapping.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.features.clone(), labels, self.feature_names.clone())
    }

    /// Appends rows (features flattened row-major) with their labels.
    pub fn append_rows(&self, rows: &[f64], labels: &[usize]) -> Result<Dataset> {
        let width = self.n_features();
        if rows.len() != labels.len() * width {
            return Err(Error::shape("appended rows do not match label count"));
        }
        let mut flat = self.as_flat().to_vec();
        flat.extend_from_slice(rows);
        let mut all_labels = self.labels.clone();
        all_labels.extend_from_slice(labels);
        let features =
            Array2::from_shape_vec((all_labels.len(), width), flat).map_err(|e| Error::shape(e.to_string()))?;
        Dataset::new(features, all_labels, self.feature_names.clone())
    }

    /// Writes the dataset in the same CSV dialect `load_dataset` reads.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        writer.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut record: Vec<String> = self.row(i).iter().map(|v| format_real(*v)).collect();
            record.push(self.labels[i].to_string());
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Row-major copy unless `a` already is.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}

/// Shortest round-tripping decimal representation.
fn format_real(v: f64) -> String {
    format!("{v:?}")
}

pub fn class_counts(labels: &[usize]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Reads a header-first CSV with numeric features and a 0/1/2 label column.
pub fn load_dataset(path: &Path, label_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();

    let width = names.len();
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j == label_idx {
                let label = parse_label(cell).ok_or_else(|| Error::LabelOutOfRange {
                    row,
                    label: cell.to_string(),
                })?;
                labels.push(label);
            } else {
                let value: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    row,
                    column: header[j].trim().to_string(),
                    value: cell.to_string(),
                })?;
                flat.push(value);
            }
        }
    }
    let features = Array2::from_shape_vec((labels.len(), width), flat).map_err(|e| Error::shape(e.to_string()))?;
    Dataset::new(features, labels, names)
}

fn parse_label(cell: &str) -> Option<usize> {
    let value: f64 = cell.parse().ok()?;
    if value.fract() != 0.0 || !(0.0..NUM_CLASSES as f64).contains(&value) {
        return None;
    }
    Some(value as usize)
}

/// Per-column range observed on a fit set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn is_constant(&self) -> bool {
        self.max == self.min
    }
}

/// Min-max scaling parameters, one range per named column.
///
/// Serializes as a JSON object mapping column name to `{min, max}`, in column
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSpec {
    columns: Vec<(String, ColumnRange)>,
}

impl ScalingSpec {
    pub fn fit(data: &Dataset) -> ScalingSpec {
        let columns = data
            .feature_names()
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col = data.column(j);
                let (min, max) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
                let range = if col.is_empty() {
                    ColumnRange { min: 0.0, max: 0.0 }
                } else {
                    ColumnRange { min, max }
                };
                (name.clone(), range)
            })
            .collect();
        ScalingSpec { columns }
    }

    pub fn columns(&self) -> &[(String, ColumnRange)] {
        &self.columns
    }

    /// Indices of columns whose fit range is a single value.
    pub fn constant_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| r.is_constant())
            .map(|(j, _)| j)
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.n_features() != self.columns.len() {
            return Err(Error::shape(format!(
                "scaling spec has {} columns, dataset has {}",
                self.columns.len(),
                data.n_features()
            )));
        }
        for ((name, _), have) in self.columns.iter().zip(data.feature_names()) {
            if name != have {
                return Err(Error::shape(format!("scaling column `{name}` does not match `{have}`")));
            }
        }
        let mut features = data.features().clone();
        for (j, mut col) in features.columns_mut().into_iter().enumerate() {
            let range = self.columns[j].1;
            let span = range.max - range.min;
            col.mapv_inplace(|v| if span > 0.0 { (v - range.min) / span } else { 0.0 });
        }
        Dataset::new(features, data.labels().to_vec(), data.feature_names().to_vec())
    }
}

impl Serialize for ScalingSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.columns.len()))?;
        for (name, range) in &self.columns {
            map.serialize_entry(name, range)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ScalingSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct OrderedVisitor;

        impl<'de> Visitor<'de> for OrderedVisitor {
            type Value = ScalingSpec;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of column name to {min, max}")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<ScalingSpec, A::Error> {
                let mut columns = Vec::new();
                while let Some((name, range)) = access.next_entry::<String, ColumnRange>()? {
                    if range.max < range.min {
                        return Err(serde::de::Error::custom(format!("column `{name}` has max < min")));
                    }
                    columns.push((name, range));
                }
                Ok(ScalingSpec { columns })
            }
        }

        deserializer.deserialize_map(OrderedVisitor)
    }
}

/// Maps every column onto `[0, 1]` with `(x - min) / (max - min)`.
///
/// With `spec = None` a fresh spec is fit on `data`; otherwise the supplied
/// spec is applied unchanged (fold-safe transform of held-out rows). Constant
/// columns become all-zero and are listed by [`ScalingSpec::constant_columns`].
pub fn min_max_normalize(data: &Dataset, spec: Option<&ScalingSpec>) -> Result<(Dataset, ScalingSpec)> {
    let spec = match spec {
        Some(s) => s.clone(),
        None => ScalingSpec::fit(data),
    };
    let scaled = spec.apply(data)?;
    Ok((scaled, spec))
}

/// `k` disjoint test folds over the instance indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index not in `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        train.sort_unstable();
        train
    }

    pub fn n_instances(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }
}

/// Seeded stratified fold assignment.
///
/// Each class's indices are shuffled and dealt round-robin over the folds; the
/// dealing position carries over between classes so fold sizes stay within one
/// of each other.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("fold count must be at least 2, got {k}")));
    }
    let by_class = indices_by_class(labels);
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                needed: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for idx in members {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}

pub fn indices_by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Seeded stratified subsample keeping `round(fraction * n_c)` rows of every
/// class (at least one per non-empty class). Indices are returned ascending.
pub fn stratified_subsample(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for mut members in indices_by_class(labels) {
        if members.is_empty() {
            continue;
        }
        let take = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len());
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..take]);
    }
    keep.sort_unstable();
    Ok(keep)
}
