//! Target/source datasets: CSV loading and writing, synthetic Gaussian
//! clouds, stacking and optional standardization.
//!
//! On disk a dataset is a comma-delimited file with a header row. A column
//! named `label` holds the binary class (0 or 1); every other column is a
//! feature, kept in file order.

use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Labeled data of the task of interest.
    Target,
    /// Unlabeled auxiliary data.
    Source,
    /// Evaluation data; labels optional.
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Option<Vec<u8>>,
    feature_names: Vec<String>,
    role: Role,
}

impl Dataset {
    /// Builds a dataset from feature rows, validating the role contract.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Option<Vec<u8>>, role: Role) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        let names = default_names(dim);
        Self::with_names(rows, labels, role, names)
    }

    /// An empty evaluation set of the given dimensionality.
    pub fn empty_test(dim: usize) -> Self {
        Dataset {
            features: DMatrix::zeros(0, dim),
            labels: None,
            feature_names: default_names(dim),
            role: Role::Test,
        }
    }

    fn with_names(
        rows: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
        role: Role,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let dim = feature_names.len();
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "datasets need at least one feature".into(),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::RaggedRow {
                    line: i + 2,
                    expected: dim,
                    found: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature {
                    line: i + 2,
                    value: v.to_string(),
                });
            }
        }
        let labels = match (role, labels) {
            (Role::Target, None) => return Err(Error::MissingLabelColumn),
            (Role::Source, Some(_)) => None,
            (_, labels) => labels,
        };
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: labels.len(),
                });
            }
            if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
                return Err(Error::LabelOutOfRange {
                    line: i + 2,
                    value: l.to_string(),
                });
            }
        }
        let features = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
        Ok(Dataset {
            features,
            labels,
            feature_names,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&v| v == label).count())
    }

    /// Same features, different role. Labels are dropped for `Source`.
    pub fn with_role(&self, role: Role) -> Result<Self> {
        Self::with_names(
            self.rows(),
            self.labels.clone(),
            role,
            self.feature_names.clone(),
        )
    }

    /// Keeps the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let rows = indices.iter().map(|&i| self.row(i)).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::with_names(rows, labels, self.role, self.feature_names.clone())
    }
}

fn default_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("f{j}")).collect()
}

/// Reads a header-first CSV file.
pub fn load_csv(path: impl AsRef<Path>, role: Role) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, role)
}

pub fn read_csv<R: std::io::Read>(reader: R, role: Role) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    if role == Role::Target && label_col.is_none() {
        return Err(Error::MissingLabelColumn);
    }
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != label_col)
        .map(|(_, h)| h.to_string())
        .collect();

    let keep_labels = label_col.is_some() && role != Role::Source;
    if role == Role::Source && label_col.is_some() {
        log::warn!("ignoring `label` column in source data");
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_col {
                if keep_labels {
                    labels.push(parse_label(cell, line)?);
                }
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                line,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature {
                    line,
                    value: cell.to_string(),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = keep_labels.then_some(labels);
    Dataset::with_names(rows, labels, role, names)
}

fn parse_label(cell: &str, line: usize) -> Result<u8> {
    let bad = || Error::LabelOutOfRange {
        line,
        value: cell.to_string(),
    };
    let v: f64 = cell.parse().map_err(|_| bad())?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(bad())
    }
}

/// Writes the dataset with its feature names and, when present, a trailing
/// `label` column. Values use the shortest round-tripping representation.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let text = to_csv_string(data);
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn to_csv_string(data: &Dataset) -> String {
    let mut out = data.feature_names.join(",");
    if data.labels.is_some() {
        out.push(',');
        out.push_str(LABEL_COLUMN);
    }
    out.push('\n');
    for i in 0..data.len() {
        let cells: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        if let Some(labels) = &data.labels {
            out.push(',');
            out.push_str(&labels[i].to_string());
        }
        out.push('\n');
    }
    out
}

/// Parameters for isotropic Gaussian clouds, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl SynthSpec {
    /// Two clouds sharing one standard deviation.
    pub fn two_clouds(
        negative: [f64; 2],
        positive: [f64; 2],
        sigma: f64,
        counts: [usize; 2],
        seed: u64,
    ) -> Self {
        SynthSpec {
            means: vec![negative.to_vec(), positive.to_vec()],
            sigmas: vec![sigma, sigma],
            counts: counts.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || k > 2 {
            return Err(Error::InvalidConfig("need one or two clouds".into()));
        }
        if self.sigmas.len() != k || self.counts.len() != k {
            return Err(Error::InvalidConfig(
                "means, sigmas and counts must have the same length".into(),
            ));
        }
        let dim = self.means[0].len();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidConfig(
                "cloud means must share a positive dimension".into(),
            ));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("cloud means must be finite".into()));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(
                "standard deviations must be positive".into(),
            ));
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidConfig(
                "cloud counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Samples the clouds in order; cloud `k` carries label `k`. Labels are
/// attached for target and test roles and withheld for source.
pub fn generate_clouds(spec: &SynthSpec, role: Role) -> Result<Dataset> {
    spec.validate()?;
    if role == Role::Target && spec.means.len() != 2 {
        return Err(Error::InvalidConfig(
            "labeled target data needs two clouds".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, ((mean, &sigma), &count)) in spec
        .means
        .iter()
        .zip(&spec.sigmas)
        .zip(&spec.counts)
        .enumerate()
    {
        for _ in 0..count {
            let row = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sigma * z
                })
                .collect();
            rows.push(row);
            labels.push(k as u8);
        }
    }
    Dataset::from_rows(rows, Some(labels), role)
}

/// Target rows followed by source rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Stacked {
    pub features: DMatrix<f64>,
    pub target: Range<usize>,
    pub source: Range<usize>,
}

impl Stacked {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.features.row(i).iter().copied().collect())
            .collect()
    }
}

pub fn stack(target: &Dataset, source: &Dataset) -> Result<Stacked> {
    if target.is_empty() || source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if target.dim() != source.dim() {
        return Err(Error::DimMismatch {
            expected: target.dim(),
            found: source.dim(),
        });
    }
    let nt = target.len();
    let ns = source.len();
    let features = DMatrix::from_fn(nt + ns, target.dim(), |i, j| {
        if i < nt {
            target.features[(i, j)]
        } else {
            source.features[(i - nt, j)]
        }
    });
    Ok(Stacked {
        features,
        target: 0..nt,
        source: nt..nt + ns,
    })
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on all rows of `features`. Constant columns get scale 1.
    pub fn fit(features: &DMatrix<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let (mean, scale) = features
            .column_iter()
            .map(|col| {
                let mu = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                let sd = var.sqrt();
                (mu, if sd > 0.0 { sd } else { 1.0 })
            })
            .unzip();
        Standardizer { mean, scale }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(features.nrows(), features.ncols(), |i, j| {
            (features[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }
}
