//! Example pool, simulated oracle and labeled/unlabeled bookkeeping.
//!
//! Two on-disk formats are supported:
//!
//! - CSV: a header row, one column per feature, then a final `label` column.
//!   Labels may be arbitrary strings; they are mapped to dense class ids in
//!   sorted order (numeric when every label is an integer).
//! - raw-f32: little-endian `u64` n, d, c, followed by `n*d` `f32` features
//!   (row-major) and `n` `u32` labels.

use std::cell::Cell;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::util::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    RawF32,
}

impl Format {
    /// Guesses the format from the file extension; anything but `.csv` is raw.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::RawF32,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "raw-f32" | "raw" | "f32" => Ok(Format::RawF32),
            other => Err(Error::Config(format!("unknown dataset format '{other}'"))),
        }
    }
}

/// Feature matrix plus hidden ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    true_labels: Vec<usize>,
    num_classes: usize,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let names = (0..num_classes).map(|k| k.to_string()).collect();
        Self::with_class_names(features, labels, names)
    }

    pub fn with_class_names(
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let num_classes = class_names.len();
        if features.rows() == 0 {
            return Err(Error::invalid("dataset has no examples"));
        }
        if features.cols() == 0 {
            return Err(Error::invalid("dataset has no features"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("dataset has no classes"));
        }
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(pos) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature in row {}",
                pos / features.cols()
            )));
        }
        Ok(Dataset {
            features,
            true_labels: labels,
            num_classes,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Ground truth for scoring held-out predictions and pseudo-label quality.
    ///
    /// Never use this to make labeling decisions; those go through [`Oracle`].
    pub fn evaluation_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.true_labels {
            counts[y] += 1;
        }
        counts
    }

    /// Re-expresses the labels against another dataset's class names, e.g. a
    /// test file that happens to lack some classes. Unknown names are an error.
    pub fn align_classes(&self, names: &[String]) -> Result<Self> {
        let map: Vec<usize> = self
            .class_names
            .iter()
            .map(|s| {
                names
                    .iter()
                    .position(|t| t == s)
                    .ok_or_else(|| Error::invalid(format!("class '{s}' is not among the reference classes")))
            })
            .collect::<Result<_>>()?;
        let labels = self.true_labels.iter().map(|&y| map[y]).collect();
        Dataset::with_class_names(self.features.clone(), labels, names.to_vec())
    }

    pub fn load(path: &Path, format: Format) -> Result<Self> {
        match format {
            Format::Csv => load_csv(path),
            Format::RawF32 => load_raw(path),
        }
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        match format {
            Format::Csv => self.write_csv(path),
            Format::RawF32 => self.write_raw(path),
        }
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_csv_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim())
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (row, &y) in self.features.iter_rows().zip(&self.true_labels) {
            for v in row {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", self.class_names[y])?;
        }
        Ok(())
    }

    fn write_raw(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_raw_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_raw_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for v in [self.len(), self.dim(), self.num_classes] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        for &v in self.features.as_slice() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        for &y in &self.true_labels {
            out.write_all(&(y as u32).to_le_bytes())?;
        }
        Ok(())
    }
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(BufReader::new(file))
}

pub fn parse_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        });
    }
    if header.len() < 2 || &header[header.len() - 1] != "label" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected feature columns followed by a final 'label' column".into(),
        });
    }
    let d = header.len() - 1;
    let mut data = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        for field in record.iter().take(d) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature '{field}'"),
                });
            }
            data.push(v);
        }
        raw_labels.push(record[d].to_string());
    }
    if raw_labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    let names = sorted_class_names(raw_labels.to_vec());
    let ids: HashMap<&str, usize> = names.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|l| ids[l.as_str()]).collect();
    let features = Matrix::from_vec(labels.len(), d, data)?;
    Dataset::with_class_names(features, labels, names)
}

/// Distinct class names in canonical order: numerically when every name is
/// an integer, lexicographically otherwise. Files that share class names
/// therefore agree on class ids.
fn sorted_class_names(mut names: Vec<String>) -> Vec<String> {
    names.sort_unstable();
    names.dedup();
    if names.iter().all(|s| s.parse::<i64>().is_ok()) {
        names.sort_by_key(|s| s.parse::<i64>().unwrap());
    }
    names
}

fn load_raw(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_raw(&bytes)
}

pub fn parse_raw(bytes: &[u8]) -> Result<Dataset> {
    let truncated = || Error::Parse {
        line: 0,
        msg: "truncated raw-f32 file".into(),
    };
    if bytes.len() < 24 {
        return Err(truncated());
    }
    let header = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap()) as usize;
    let (n, d, c) = (header(0), header(1), header(2));
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(n.checked_mul(4)?))
        .and_then(|b| b.checked_add(24))
        .ok_or_else(truncated)?;
    if bytes.len() != expected {
        return Err(Error::Parse {
            line: 0,
            msg: format!("raw-f32 file has {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let body = &bytes[24..];
    let features: Vec<f64> = body[..n * d * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let labels: Vec<usize> = body[n * d * 4..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    Dataset::new(Matrix::from_vec(n, d, features)?, labels, c)
}

/// Simulated annotator. Every answered query is counted.
#[derive(Debug)]
pub struct Oracle<'a> {
    dataset: &'a Dataset,
    calls: Cell<usize>,
}

impl<'a> Oracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Oracle {
            dataset,
            calls: Cell::new(0),
        }
    }

    pub fn label(&self, idx: usize) -> Result<usize> {
        let y = *self
            .dataset
            .true_labels
            .get(idx)
            .ok_or(Error::IndexOutOfRange {
                index: idx,
                len: self.dataset.len(),
            })?;
        self.calls.set(self.calls.get() + 1);
        Ok(y)
    }

    pub fn label_all(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices.iter().map(|&i| self.label(i)).collect()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

/// Labeled/unlabeled partition of the pool at a given cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelState {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    labels: Vec<Option<usize>>,
    cycle: usize,
}

impl LabelState {
    /// Builds a state from an initial labeled set and its labels.
    pub fn new(n: usize, labeled: &[usize], answers: &[usize]) -> Result<Self> {
        let mut state = LabelState {
            labeled: Vec::new(),
            unlabeled: (0..n).collect(),
            labels: vec![None; n],
            cycle: 0,
        };
        state.insert(labeled, answers)?;
        Ok(state)
    }

    /// Indices of labeled examples, in acquisition order.
    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    /// Indices of unlabeled examples, ascending.
    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn label_of(&self, idx: usize) -> Option<usize> {
        self.labels.get(idx).copied().flatten()
    }

    pub fn is_labeled(&self, idx: usize) -> bool {
        self.label_of(idx).is_some()
    }

    /// Labels aligned with [`labeled`](Self::labeled).
    pub fn labeled_classes(&self) -> Vec<usize> {
        self.labeled.iter().map(|&i| self.labels[i].unwrap()).collect()
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Moves `batch` from U to L with the oracle's answers and advances the cycle.
    pub fn commit_batch(&mut self, batch: &[usize], answers: &[usize]) -> Result<()> {
        self.insert(batch, answers)?;
        self.cycle += 1;
        Ok(())
    }

    fn insert(&mut self, batch: &[usize], answers: &[usize]) -> Result<()> {
        if batch.len() != answers.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                got: answers.len(),
            });
        }
        let n = self.labels.len();
        let mut seen = vec![false; n];
        for &i in batch {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if self.labels[i].is_some() || seen[i] {
                return Err(Error::AlreadyLabeled(i));
            }
            seen[i] = true;
        }
        for (&i, &y) in batch.iter().zip(answers) {
            self.labels[i] = Some(y);
            self.labeled.push(i);
        }
        self.unlabeled.retain(|&i| !seen[i]);
        Ok(())
    }
}

/// Draws `per_class` examples of every class uniformly at random and labels them.
pub fn init_labels(
    ds: &Dataset,
    oracle: &Oracle<'_>,
    per_class: usize,
    seed: u64,
) -> Result<LabelState> {
    if per_class == 0 {
        return Err(Error::invalid("per_class must be positive"));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &y) in ds.true_labels.iter().enumerate() {
        members[y].push(i);
    }
    let mut rng = rng(seed);
    let mut chosen = Vec::with_capacity(per_class * ds.num_classes());
    for (k, m) in members.iter().enumerate() {
        if m.len() < per_class {
            return Err(Error::NotEnoughExamples {
                class: ds.class_names[k].clone(),
                available: m.len(),
                requested: per_class,
            });
        }
        chosen.extend(sample(&mut rng, m.len(), per_class).into_iter().map(|j| m[j]));
    }
    let answers = oracle.label_all(&chosen)?;
    LabelState::new(ds.len(), &chosen, &answers)
}

/// Draws `count` examples uniformly from the whole pool, ignoring class balance.
pub fn init_labels_unbalanced(
    ds: &Dataset,
    oracle: &Oracle<'_>,
    count: usize,
    seed: u64,
) -> Result<LabelState> {
    if count == 0 || count > ds.len() {
        return Err(Error::invalid(format!(
            "cannot draw {count} initial labels from {} examples",
            ds.len()
        )));
    }
    let mut rng = rng(seed);
    let chosen = sample(&mut rng, ds.len(), count).into_vec();
    let answers = oracle.label_all(&chosen)?;
    LabelState::new(ds.len(), &chosen, &answers)
}
