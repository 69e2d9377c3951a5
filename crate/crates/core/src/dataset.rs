//! Genotype tables: CSV loading and writing, row serialization for prompts,
//! few-shot sampling and stratified folds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::rng_for;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file: no header row")]
    MissingHeader,
    #[error("malformed cell at line {line}, column {column} ({name:?}): {value:?} is not a genotype in {{0,1,2}}")]
    MalformedCell {
        line: usize,
        column: usize,
        name: String,
        value: String,
    },
    #[error("line {line} has {found} fields, header has {expected}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("duplicate variant name {0:?}")]
    DuplicateVariantName(String),
    #[error("variant name in column {0} is empty")]
    EmptyVariantName(usize),
    #[error("empty label at line {0}")]
    EmptyLabel(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("{requested} shots cannot cover {needed} classes")]
    TooFewShots { requested: usize, needed: usize },
    #[error("{requested} shots requested but only {available} rows exist")]
    TooManyShots { requested: usize, available: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("gene map line {line}: {message}")]
    GeneMap { line: usize, message: String },
}

/// An N×d table of minor-allele counts with one categorical label per row.
///
/// Class order is the first-appearance order of labels in the source file and
/// is preserved by every derived view, so probability vectors produced
/// downstream always share the same column order.
#[derive(Clone, Debug, PartialEq)]
pub struct GenotypeDataset {
    id_column: String,
    label_column: String,
    sample_ids: Vec<String>,
    variant_names: Vec<String>,
    values: Array2<u8>,
    labels: Vec<String>,
    class_set: Vec<String>,
    label_idx: Vec<usize>,
}

impl GenotypeDataset {
    /// Builds a validated dataset. Class order is first appearance in `labels`.
    pub fn new(
        sample_ids: Vec<String>,
        variant_names: Vec<String>,
        values: Array2<u8>,
        labels: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let mut class_set: Vec<String> = Vec::new();
        for l in &labels {
            if !class_set.contains(l) {
                class_set.push(l.clone());
            }
        }
        Self::with_classes(sample_ids, variant_names, values, labels, class_set)
    }

    /// Like [`GenotypeDataset::new`] but with an explicit class order, which
    /// may include classes absent from `labels`.
    pub fn with_classes(
        sample_ids: Vec<String>,
        variant_names: Vec<String>,
        values: Array2<u8>,
        labels: Vec<String>,
        class_set: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let (n, d) = values.dim();
        if sample_ids.len() != n || labels.len() != n {
            return Err(DatasetError::Shape(format!(
                "{} ids, {} labels, {} rows",
                sample_ids.len(),
                labels.len(),
                n
            )));
        }
        if variant_names.len() != d {
            return Err(DatasetError::Shape(format!(
                "{} variant names for {} columns",
                variant_names.len(),
                d
            )));
        }
        let mut seen = HashSet::with_capacity(d);
        for (j, name) in variant_names.iter().enumerate() {
            if name.is_empty() {
                return Err(DatasetError::EmptyVariantName(j));
            }
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::DuplicateVariantName(name.clone()));
            }
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, &v)| v > 2) {
            return Err(DatasetError::MalformedCell {
                line: i + 2,
                column: j + 1,
                name: variant_names[j].clone(),
                value: v.to_string(),
            });
        }
        let class_pos: HashMap<&str, usize> = class_set.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let label_idx = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                class_pos
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| DatasetError::Shape(format!("label {l:?} of row {i} not in class set")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            id_column: "sample_id".into(),
            label_column: "label".into(),
            sample_ids,
            variant_names,
            values,
            labels,
            class_set,
            label_idx,
        })
    }

    pub fn with_column_names(mut self, id_column: &str, label_column: &str) -> Self {
        self.id_column = id_column.to_string();
        self.label_column = label_column.to_string();
        self
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_variants(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn variant_names(&self) -> &[String] {
        &self.variant_names
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_set(&self) -> &[String] {
        &self.class_set
    }

    /// Label of each row as an index into [`class_set`](Self::class_set).
    pub fn label_indices(&self) -> &[usize] {
        &self.label_idx
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn variant_index(&self, name: &str) -> Option<usize> {
        self.variant_names.iter().position(|v| v == name)
    }

    /// Rows `rows`, in the given order, sharing this dataset's class order.
    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        let values = self.values.select(ndarray::Axis(0), rows);
        Self {
            id_column: self.id_column.clone(),
            label_column: self.label_column.clone(),
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            variant_names: self.variant_names.clone(),
            values,
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            class_set: self.class_set.clone(),
            label_idx: rows.iter().map(|&r| self.label_idx[r]).collect(),
        }
    }

    /// Columns named by `features`, in that order.
    pub fn restrict(&self, features: &[String]) -> Result<Self, DatasetError> {
        let cols = self.column_indices(features)?;
        let mut out = self.clone();
        out.values = self.values.select(ndarray::Axis(1), &cols);
        out.variant_names = features.to_vec();
        Ok(out)
    }

    fn column_indices(&self, features: &[String]) -> Result<Vec<usize>, DatasetError> {
        let index: HashMap<&str, usize> = self
            .variant_names
            .iter()
            .enumerate()
            .map(|(j, v)| (v.as_str(), j))
            .collect();
        features
            .iter()
            .map(|f| {
                index
                    .get(f.as_str())
                    .copied()
                    .ok_or_else(|| DatasetError::UnknownVariant(f.clone()))
            })
            .collect()
    }

    /// Real-valued design matrix over all columns.
    pub fn to_matrix(&self) -> LabeledMatrix {
        LabeledMatrix {
            columns: self.variant_names.clone(),
            x: self.values.mapv(f64::from),
            y: self.label_idx.clone(),
            class_names: self.class_set.clone(),
        }
    }

    /// Number of rows per class, in class order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_set.len()];
        for &c in &self.label_idx {
            counts[c] += 1;
        }
        counts
    }
}

/// Real-valued features with integer class labels, the input every
/// classifier consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub columns: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledMatrix {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            x: self.x.select(ndarray::Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn select_columns(&self, names: &[String]) -> Result<Self, DatasetError> {
        let cols = names
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| DatasetError::UnknownVariant(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            columns: names.to_vec(),
            x: self.x.select(ndarray::Axis(1), &cols),
            y: self.y.clone(),
            class_names: self.class_names.clone(),
        })
    }
}

/// Reads a genotype CSV. The first column holds sample ids, `label_column`
/// (usually the last column) holds the phenotype and every other column is a
/// variant.
pub fn load_dataset(path: impl AsRef<Path>, label_column: &str) -> Result<GenotypeDataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file, label_column)
}

pub fn read_dataset<R: Read>(reader: R, label_column: &str) -> Result<GenotypeDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(DatasetError::MissingHeader),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let label_pos = header
        .iter()
        .position(|h| h == label_column)
        .filter(|&p| p != 0)
        .ok_or_else(|| DatasetError::MissingLabelColumn(label_column.to_string()))?;
    let variant_cols: Vec<usize> = (1..header.len()).filter(|&c| c != label_pos).collect();
    let variant_names: Vec<String> = variant_cols.iter().map(|&c| header[c].clone()).collect();
    let mut seen = HashSet::new();
    for (j, name) in variant_names.iter().enumerate() {
        if name.is_empty() {
            return Err(DatasetError::EmptyVariantName(j));
        }
        if !seen.insert(name.as_str()) {
            return Err(DatasetError::DuplicateVariantName(name.clone()));
        }
    }

    let d = variant_cols.len();
    let mut flat = Vec::new();
    let mut sample_ids = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(DatasetError::RaggedRow {
                line,
                expected: header.len(),
                found: rec.len(),
            });
        }
        sample_ids.push(rec[0].trim().to_string());
        let label = rec[label_pos].trim();
        if label.is_empty() {
            return Err(DatasetError::EmptyLabel(line));
        }
        labels.push(label.to_string());
        for (j, &c) in variant_cols.iter().enumerate() {
            let cell = rec[c].trim();
            let v = match cell {
                "0" => 0u8,
                "1" => 1,
                "2" => 2,
                _ => {
                    return Err(DatasetError::MalformedCell {
                        line,
                        column: c + 1,
                        name: variant_names[j].clone(),
                        value: cell.to_string(),
                    })
                }
            };
            flat.push(v);
        }
    }
    let n = sample_ids.len();
    let values = Array2::from_shape_vec((n, d), flat).map_err(|e| DatasetError::Shape(e.to_string()))?;
    Ok(GenotypeDataset::new(sample_ids, variant_names, values, labels)?.with_column_names(&header[0], label_column))
}

/// Writes `ds` in the same layout [`load_dataset`] reads: id first, variants,
/// label last.
pub fn write_dataset<W: Write>(ds: &GenotypeDataset, writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(ds.n_variants() + 2);
    header.push(ds.id_column.as_str());
    header.extend(ds.variant_names.iter().map(String::as_str));
    header.push(ds.label_column.as_str());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..ds.n_samples() {
        row.clear();
        row.push(ds.sample_ids[i].clone());
        row.extend(ds.values.row(i).iter().map(|v| v.to_string()));
        row.push(ds.labels[i].clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn save_dataset(ds: &GenotypeDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_dataset(ds, std::io::BufWriter::new(file))
}

/// Reads a two-column `variant,gene` CSV with a header row.
pub fn load_gene_map(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let mut map = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(DatasetError::GeneMap {
                line: i + 2,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        map.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerializationStyle {
    /// `rs1 is 0. rs2 is 2. Answer: EUR`
    #[default]
    Simple,
    /// `The rs1 variant of the person has 0 minor alleles. ...`
    Genotype,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SerializationTemplate {
    #[serde(default)]
    pub style: SerializationStyle,
    /// Optional variant → gene symbol annotation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gene_map: Option<BTreeMap<String, String>>,
}

impl SerializationTemplate {
    pub fn simple() -> Self {
        Self::default()
    }

    pub fn genotype() -> Self {
        Self {
            style: SerializationStyle::Genotype,
            gene_map: None,
        }
    }

    pub fn with_gene_map(mut self, gene_map: BTreeMap<String, String>) -> Self {
        self.gene_map = Some(gene_map);
        self
    }

    fn display_name<'a>(&self, variant: &'a str) -> std::borrow::Cow<'a, str> {
        match self.gene_map.as_ref().and_then(|m| m.get(variant)) {
            Some(gene) => format!("{variant} (gene: {gene})").into(),
            None => variant.into(),
        }
    }

    /// Renders one row. `values` pairs up with `variants`.
    pub fn render(&self, variants: &[String], values: &[u8], label: Option<&str>) -> String {
        let mut parts: Vec<String> = variants
            .iter()
            .zip(values)
            .map(|(v, x)| {
                let name = self.display_name(v);
                match self.style {
                    SerializationStyle::Simple => format!("{name} is {x}."),
                    SerializationStyle::Genotype => {
                        format!("The {name} variant of the person has {x} minor alleles.")
                    }
                }
            })
            .collect();
        if let Some(label) = label {
            parts.push(format!("Answer: {label}"));
        }
        parts.join(" ")
    }
}

/// Renders row `row` restricted to `features` (in that order).
pub fn serialize_example(
    ds: &GenotypeDataset,
    row: usize,
    features: &[String],
    template: &SerializationTemplate,
    include_label: bool,
) -> Result<String, DatasetError> {
    let cols = ds.column_indices(features)?;
    let values: Vec<u8> = cols.iter().map(|&c| ds.values[[row, c]]).collect();
    let label = include_label.then(|| ds.labels[row].as_str());
    Ok(template.render(features, &values, label))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSample {
    pub indices: Vec<usize>,
    pub seed: u64,
}

/// Draws `n` distinct rows: one uniformly chosen row per class first, then the
/// rest uniformly without replacement. Classes with no rows are skipped.
pub fn sample_few_shot(ds: &GenotypeDataset, n: usize, seed: u64) -> Result<FewShotSample, DatasetError> {
    let mut rng = rng_for(seed, &[0x5107]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_set.len()];
    for (i, &c) in ds.label_idx.iter().enumerate() {
        by_class[c].push(i);
    }
    let present = by_class.iter().filter(|v| !v.is_empty()).count();
    if n < present {
        return Err(DatasetError::TooFewShots {
            requested: n,
            needed: present,
        });
    }
    if n > ds.n_samples() {
        return Err(DatasetError::TooManyShots {
            requested: n,
            available: ds.n_samples(),
        });
    }
    let mut taken = vec![false; ds.n_samples()];
    let mut indices = Vec::with_capacity(n);
    for rows in by_class.iter().filter(|v| !v.is_empty()) {
        let &pick = rows.choose(&mut rng).expect("non-empty class");
        taken[pick] = true;
        indices.push(pick);
    }
    let mut rest: Vec<usize> = (0..ds.n_samples()).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    indices.extend(rest.into_iter().take(n - indices.len()));
    Ok(FewShotSample { indices, seed })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvFolds {
    pub folds: Vec<Fold>,
    pub requested_k: usize,
    /// Set when `k` had to be lowered to keep every class in every fold.
    pub warning: Option<String>,
}

impl CvFolds {
    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

/// Stratified k-fold assignment over integer labels. `k` is lowered to the
/// smallest class size when needed; fewer than two members in some class is a
/// [`DatasetError::DegenerateSplit`].
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<CvFolds, DatasetError> {
    if k < 2 {
        return Err(DatasetError::DegenerateSplit(format!("k must be at least 2, got {k}")));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    by_class.retain(|v| !v.is_empty());
    if by_class.len() < 2 {
        return Err(DatasetError::DegenerateSplit("fewer than two classes present".into()));
    }
    let smallest = by_class.iter().map(Vec::len).min().unwrap_or(0);
    if smallest < 2 {
        return Err(DatasetError::DegenerateSplit(format!(
            "a class has {smallest} member(s); even k=2 leaves a training side without it"
        )));
    }
    let k_used = k.min(smallest);
    let warning =
        (k_used < k).then(|| format!("k lowered from {k} to {k_used}: smallest class has {smallest} members"));

    let mut rng = rng_for(seed, &[0xF01D]);
    let mut assignment = vec![0usize; labels.len()];
    let mut offset = 0;
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
        for (j, &r) in rows.iter().enumerate() {
            assignment[r] = (offset + j) % k_used;
        }
        offset = (offset + rows.len()) % k_used;
    }
    let folds = (0..k_used)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, validation }
        })
        .collect();
    Ok(CvFolds {
        folds,
        requested_k: k,
        warning,
    })
}

pub fn stratified_cv_folds(ds: &GenotypeDataset, k: usize, seed: u64) -> Result<CvFolds, DatasetError> {
    stratified_folds(&ds.label_idx, k, seed)
}
