//! Dataset loading and preprocessing, plus a synthetic biased-data
//! generator.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DflError, Result};
use crate::rng::{stream_rng, Stream};
use crate::stats;

/// A table of individuals `(x, s, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub sensitive: Vec<u8>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<f64>,
        sensitive: Vec<u8>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || sensitive.len() != n {
            return Err(DflError::Dimension(format!(
                "features have {n} rows, labels {}, sensitive {}",
                labels.len(),
                sensitive.len()
            )));
        }
        if n < 2 {
            return Err(DflError::InvalidArgument(format!("dataset needs n >= 2, got {n}")));
        }
        if feature_names.len() != features.ncols() {
            return Err(DflError::Dimension(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if let Some(bad) = sensitive.iter().find(|&&v| v > 1) {
            return Err(DflError::Schema(format!("sensitive value {bad} is not binary")));
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(DflError::InvalidArgument("non-finite value in dataset".into()));
        }
        Ok(Self { features, labels, sensitive, feature_names })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn sensitive_f64(&self) -> Vec<f64> {
        self.sensitive.iter().map(|&v| v as f64).collect()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let p = self.p();
        let features = DMatrix::from_fn(idx.len(), p, |i, j| self.features[(idx[i], j)]);
        Dataset {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            sensitive: idx.iter().map(|&i| self.sensitive[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Appends a constant 1 column named `intercept`.
    pub fn with_intercept(&self) -> Dataset {
        let n = self.n();
        let p = self.p();
        let features = DMatrix::from_fn(n, p + 1, |i, j| if j < p { self.features[(i, j)] } else { 1.0 });
        let mut names = self.feature_names.clone();
        names.push("intercept".into());
        Dataset { features, labels: self.labels.clone(), sensitive: self.sensitive.clone(), feature_names: names }
    }

    /// Population covariance of every feature column with `s`.
    pub fn feature_sensitive_cov(&self) -> Vec<f64> {
        let s = self.sensitive_f64();
        self.features
            .column_iter()
            .map(|c| stats::covariance(c.as_slice(), &s))
            .collect()
    }
}

/// How a raw column is mapped onto {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub enum BinarizeRule {
    /// Column already holds 0/1.
    Binary,
    /// 1 iff the numeric value is strictly greater than the threshold.
    GreaterThan(f64),
    /// 1 iff the trimmed cell equals the string.
    Equals(String),
}

impl BinarizeRule {
    fn apply(&self, cell: &str, column: &str, line: usize) -> Result<u8> {
        match self {
            BinarizeRule::Binary => match cell.parse::<f64>() {
                Ok(0.0) => Ok(0),
                Ok(1.0) => Ok(1),
                _ => Err(DflError::Schema(format!(
                    "column {column} line {line}: value {cell:?} is not 0/1"
                ))),
            },
            BinarizeRule::GreaterThan(t) => cell.parse::<f64>().map(|v| (v > *t) as u8).map_err(|_| {
                DflError::Schema(format!("column {column} line {line}: value {cell:?} is not numeric"))
            }),
            BinarizeRule::Equals(target) => Ok((cell == target) as u8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    Real,
    Binarize(BinarizeRule),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSelection {
    Named(Vec<String>),
    /// Every column except these (label and sensitive columns are always excluded).
    AllExcept(Vec<String>),
}

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub label: String,
    pub label_rule: LabelRule,
    pub sensitive: String,
    pub sensitive_rule: BinarizeRule,
    pub features: FeatureSelection,
    /// Feature columns whose missing fraction exceeds this are dropped before
    /// row-wise cleaning.
    pub max_missing_fraction: Option<f64>,
}

impl Schema {
    /// UCI Communities and Crime: minority iff `racepctblack > 0.5`.
    pub fn community_crime() -> Self {
        Schema {
            label: "ViolentCrimesPerPop".into(),
            label_rule: LabelRule::Binarize(BinarizeRule::GreaterThan(0.5)),
            sensitive: "racepctblack".into(),
            sensitive_rule: BinarizeRule::GreaterThan(0.5),
            features: FeatureSelection::AllExcept(
                ["state", "county", "community", "communityname", "fold"].map(String::from).to_vec(),
            ),
            max_missing_fraction: Some(0.5),
        }
    }

    /// ProPublica COMPAS two-year recidivism, race as the sensitive attribute.
    pub fn compas() -> Self {
        Schema {
            label: "two_year_recid".into(),
            label_rule: LabelRule::Binarize(BinarizeRule::Binary),
            sensitive: "race".into(),
            sensitive_rule: BinarizeRule::Equals("African-American".into()),
            features: FeatureSelection::Named(
                [
                    "age",
                    "juv_fel_count",
                    "juv_misd_count",
                    "juv_other_count",
                    "priors_count",
                    "decile_score",
                    "v_decile_score",
                    "days_b_screening_arrest",
                    "c_days_from_compas",
                ]
                .map(String::from)
                .to_vec(),
            ),
            max_missing_fraction: None,
        }
    }

    /// Default of credit card clients, graduate-school education as `s = 1`.
    pub fn credit() -> Self {
        Schema {
            label: "default.payment.next.month".into(),
            label_rule: LabelRule::Binarize(BinarizeRule::Binary),
            sensitive: "EDUCATION".into(),
            sensitive_rule: BinarizeRule::Equals("1".into()),
            features: FeatureSelection::AllExcept(vec!["ID".into()]),
            max_missing_fraction: None,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "community-crime" | "communities" => Some(Self::community_crime()),
            "compas" => Some(Self::compas()),
            "credit" => Some(Self::credit()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_rows: usize,
    pub dropped_columns: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "?" | "NA" | "na" | "N/A" | "NaN" | "nan" | "null")
}

/// Reads a header-first, comma-separated CSV.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref()).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    let col_of: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();

    let label_col = *col_of
        .get(schema.label.as_str())
        .ok_or_else(|| DflError::Schema(format!("label column {:?} not found", schema.label)))?;
    let sens_col = *col_of
        .get(schema.sensitive.as_str())
        .ok_or_else(|| DflError::Schema(format!("sensitive column {:?} not found", schema.sensitive)))?;

    let mut feature_cols: Vec<usize> = match &schema.features {
        FeatureSelection::Named(names) => names
            .iter()
            .map(|n| {
                col_of
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| DflError::Schema(format!("feature column {n:?} not found")))
            })
            .collect::<Result<_>>()?,
        FeatureSelection::AllExcept(skip) => (0..header.len())
            .filter(|&i| i != label_col && i != sens_col && !skip.iter().any(|s| s == &header[i]))
            .collect(),
    };
    feature_cols.retain(|&i| i != label_col && i != sens_col);

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| DflError::Parse { line, msg: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(DflError::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(|c| c.trim().to_string()).collect()));
    }

    let mut report = LoadReport { rows_read: rows.len(), ..Default::default() };
    if let Some(limit) = schema.max_missing_fraction {
        feature_cols.retain(|&c| {
            let missing = rows.iter().filter(|(_, r)| is_missing(&r[c])).count();
            let keep = rows.is_empty() || (missing as f64 / rows.len() as f64) <= limit;
            if !keep {
                report.dropped_columns.push(header[c].clone());
            }
            keep
        });
    }
    if feature_cols.is_empty() {
        return Err(DflError::Schema("no feature columns selected".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut sensitive = Vec::new();
    for (line, row) in &rows {
        let needed = feature_cols.iter().chain([&label_col, &sens_col]);
        if needed.clone().any(|&c| is_missing(&row[c])) {
            report.dropped_rows += 1;
            continue;
        }
        let mut xs = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = row[c].parse().map_err(|_| DflError::Parse {
                line: *line,
                msg: format!("column {}: {:?} is not numeric", header[c], row[c]),
            })?;
            xs.push(v);
        }
        let y = match &schema.label_rule {
            LabelRule::Real => row[label_col].parse::<f64>().map_err(|_| DflError::Parse {
                line: *line,
                msg: format!("label {:?} is not numeric", row[label_col]),
            })?,
            LabelRule::Binarize(rule) => rule.apply(&row[label_col], &schema.label, *line)? as f64,
        };
        if !y.is_finite() || xs.iter().any(|v| !v.is_finite()) {
            report.dropped_rows += 1;
            continue;
        }
        let s = schema.sensitive_rule.apply(&row[sens_col], &schema.sensitive, *line)?;
        values.extend(xs);
        labels.push(y);
        sensitive.push(s);
    }

    let n = labels.len();
    let p = feature_cols.len();
    let features = DMatrix::from_row_slice(n, p, &values);
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    Ok((Dataset::new(features, labels, sensitive, names)?, report))
}

fn csv_err(e: csv::Error) -> DflError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DflError::Io(io),
        other => DflError::Parse { line, msg: format!("{other:?}") },
    }
}

/// Disjoint train/test indices for one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub trial_id: u64,
}

impl SplitIndices {
    pub fn file_name(&self) -> String {
        format!("trial_{}_seed_{}.idx", self.trial_id, self.seed)
    }

    /// Writes the training indices, one per line. The test set is the
    /// complement in `0..n`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(self.file_name());
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        for i in &self.train {
            writeln!(f, "{i}")?;
        }
        f.flush()?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>, n: usize, seed: u64, trial_id: u64) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut in_train = vec![false; n];
        let mut train = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let idx: usize = line
                .trim()
                .parse()
                .map_err(|_| DflError::Parse { line: i + 1, msg: format!("bad index {line:?}") })?;
            if idx >= n || in_train[idx] {
                return Err(DflError::Parse { line: i + 1, msg: format!("index {idx} out of range or repeated") });
            }
            in_train[idx] = true;
            train.push(idx);
        }
        let test = (0..n).filter(|&i| !in_train[i]).collect();
        Ok(Self { train, test, seed, trial_id })
    }
}

/// Random split with `round(frac * n)` training rows.
pub fn split(n: usize, frac: f64, seed: u64, trial_id: u64) -> Result<SplitIndices> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(DflError::Split(format!("fraction {frac} not in (0, 1)")));
    }
    if frac * (n as f64) < 1.0 || (1.0 - frac) * (n as f64) < 1.0 {
        return Err(DflError::Split(format!("n = {n} too small for fraction {frac}")));
    }
    let n_train = ((frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed, trial_id })
}

/// Per-column affine map fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &DMatrix<f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(DflError::InvalidArgument("standardize needs training rows".into()));
        }
        let mut mean = Vec::with_capacity(features.ncols());
        let mut scale = Vec::with_capacity(features.ncols());
        for c in features.column_iter() {
            let vals: Vec<f64> = rows.iter().map(|&i| c[i]).collect();
            let m = stats::mean(&vals);
            let sd = stats::variance(&vals).sqrt();
            mean.push(m);
            scale.push(if sd > 0.0 { sd } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(features.nrows(), features.ncols(), |i, j| {
            (features[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }
}

/// Standardizes every row of `ds` with statistics from `train` only.
pub fn standardize(ds: &Dataset, train: &[usize]) -> Result<(Dataset, Standardizer)> {
    let st = Standardizer::fit(&ds.features, train)?;
    let mut out = ds.clone();
    out.features = st.apply(&ds.features);
    Ok((out, st))
}

/// Mean shift applied along the bias direction per unit of `bias`.
pub const SYNTH_SHIFT: f64 = 1.5;
const SYNTH_NOISE: f64 = 0.5;

/// Synthetic data where group `s = 1` is shifted by `bias * SYNTH_SHIFT` along
/// the unit direction `u = 1/sqrt(p)`, and the label depends on both `u` and
/// an orthogonal direction, so any accurate classifier inherits the bias.
pub fn synth_biased(n: usize, p: usize, bias: f64, seed: u64) -> Result<Dataset> {
    if n < 10 || p < 1 || !(0.0..=1.0).contains(&bias) {
        return Err(DflError::InvalidArgument(format!("synth_biased(n={n}, p={p}, bias={bias})")));
    }
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let u = vec![1.0 / (p as f64).sqrt(); p];
    // second label direction: e_0 with its u-component removed
    let mut v = vec![0.0; p];
    if p > 1 {
        v[0] = 1.0;
        let proj = u[0];
        for (vj, uj) in v.iter_mut().zip(&u) {
            *vj -= proj * uj;
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
    }
    let beta: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
    let shift = bias * SYNTH_SHIFT;

    let mut values = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    let mut sensitive = Vec::with_capacity(n);
    for _ in 0..n {
        let s: u8 = rng.random_bool(0.5) as u8;
        let mut score = -0.5 * shift;
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = z + shift * s as f64 * u[j];
            score += beta[j] * x;
            values.push(x);
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        score += SYNTH_NOISE * eps;
        labels.push((score > 0.0) as u8 as f64);
        sensitive.push(s);
    }
    if sensitive.iter().all(|&s| s == sensitive[0]) {
        // both groups are required downstream; flip one deterministic row
        sensitive[0] ^= 1;
    }
    let names = (0..p).map(|j| format!("x{j}")).collect();
    Dataset::new(DMatrix::from_row_slice(n, p, &values), labels, sensitive, names)
}
