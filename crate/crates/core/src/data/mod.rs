//! Dataset ingestion and preprocessing, iteration streams, biased initial
//! pools, exact finite domains and synthetic generators.

pub mod exact;
pub mod stream;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GroupId, Sample};

pub use exact::{make_exact_domain, DomainPoint, ExactDomain, ExactDomainSpec, FamilyKind};
pub use stream::{build_biased_initial, make_stream, SplitMode, Stream};

/// How the label column maps to `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    /// Raw values that mean `1` (compared after trimming).
    #[serde(default)]
    pub positive_values: Vec<String>,
    /// Numeric values strictly above this mean `1`.
    #[serde(default)]
    pub positive_above: Option<f64>,
}

impl LabelRule {
    fn apply(&self, raw: &str) -> Result<bool> {
        let raw = raw.trim();
        if self.positive_values.iter().any(|v| v.trim() == raw) {
            return Ok(true);
        }
        if let Some(th) = self.positive_above {
            let v: f64 = raw.parse().map_err(|_| Error::Data(format!("label value {raw:?} is not numeric")))?;
            return Ok(v > th);
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    /// Numeric feature columns.
    #[serde(default)]
    pub feature_columns: Vec<String>,
    /// Categorical feature columns, one-hot encoded.
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    pub label_column: String,
    pub label_rule: LabelRule,
    pub group_column: String,
    /// Raw group value to group index. Rows with other values are dropped.
    pub group_mapping: BTreeMap<String, usize>,
    #[serde(default)]
    pub split: SplitMode,
    pub iterations: usize,
}

impl DatasetSpec {
    pub fn num_groups(&self) -> usize {
        self.group_mapping.values().map(|g| g + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("dataset.iterations must be at least 1".into()));
        }
        if self.num_groups() < 2 {
            return Err(Error::Config("dataset.group_mapping must name at least 2 groups".into()));
        }
        if self.feature_columns.is_empty() && self.categorical_columns.is_empty() {
            return Err(Error::Config("dataset needs at least one feature column".into()));
        }
        Ok(())
    }
}

/// Per-column z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Fully labeled, z-scored samples.
    pub samples: Vec<Sample>,
    pub scaling: Vec<Scaling>,
    pub num_groups: usize,
}

/// Columnar on-disk layout of a [`Dataset`].
#[derive(Serialize, Deserialize)]
struct ColumnarSnapshot {
    version: u32,
    scaling: Vec<Scaling>,
    num_groups: usize,
    columns: Vec<Vec<f64>>,
    labels: Vec<bool>,
    groups: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from raw labeled samples, z-scoring every feature and
    /// dropping zero-variance ones.
    pub fn from_raw(names: Vec<String>, samples: Vec<Sample>, num_groups: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("no rows left after filtering".into()));
        }
        let columns = to_columns(&samples, names.len())?;
        let (scaling, kept) = fit_scaling(&names, &columns);
        let samples = scale_samples(&samples, &scaling, &kept);
        Ok(Dataset { samples, scaling, num_groups })
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.scaling.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn dim(&self) -> usize {
        self.scaling.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-group row shares.
    pub fn group_shares(&self) -> Vec<f64> {
        let mut c = vec![0usize; self.num_groups];
        for s in &self.samples {
            c[s.group.index()] += 1;
        }
        c.into_iter().map(|v| v as f64 / self.samples.len().max(1) as f64).collect()
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let columns = to_columns(&self.samples, self.dim())?;
        let snap = ColumnarSnapshot {
            version: 1,
            scaling: self.scaling.clone(),
            num_groups: self.num_groups,
            columns,
            labels: self.samples.iter().map(|s| s.label().unwrap_or(false)).collect(),
            groups: self.samples.iter().map(|s| s.group.index()).collect(),
        };
        serde_json::to_writer(BufWriter::new(File::create(path)?), &snap)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let snap: ColumnarSnapshot = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if snap.version != 1 {
            return Err(Error::Data(format!("unsupported snapshot version {}", snap.version)));
        }
        let n = snap.labels.len();
        if snap.groups.len() != n || snap.columns.iter().any(|c| c.len() != n) {
            return Err(Error::Data("snapshot columns have unequal lengths".into()));
        }
        let samples = (0..n)
            .map(|i| {
                Sample::new(snap.columns.iter().map(|c| c[i]).collect(), GroupId(snap.groups[i]))
                    .with_label(snap.labels[i])
            })
            .collect();
        Ok(Dataset { samples, scaling: snap.scaling, num_groups: snap.num_groups })
    }
}

fn to_columns(samples: &[Sample], dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut cols = vec![Vec::with_capacity(samples.len()); dim];
    for s in samples {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
        }
        for (c, v) in cols.iter_mut().zip(&s.features) {
            c.push(*v);
        }
    }
    Ok(cols)
}

fn fit_scaling(names: &[String], columns: &[Vec<f64>]) -> (Vec<Scaling>, Vec<usize>) {
    let mut scaling = Vec::new();
    let mut kept = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 1e-12) {
            warn!("feature {:?} has zero variance; dropped", names[j]);
            continue;
        }
        scaling.push(Scaling { name: names[j].clone(), mean, sd });
        kept.push(j);
    }
    (scaling, kept)
}

fn scale_samples(samples: &[Sample], scaling: &[Scaling], kept: &[usize]) -> Vec<Sample> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            out.features = kept.iter().zip(scaling).map(|(&j, sc)| (s.features[j] - sc.mean) / sc.sd).collect();
            out
        })
        .collect()
}

/// Applies stored scaling parameters to raw feature vectors laid out in the
/// order of `scaling`.
pub fn apply_scaling(features: &[f64], scaling: &[Scaling]) -> Vec<f64> {
    features.iter().zip(scaling).map(|(v, s)| (v - s.mean) / s.sd).collect()
}

/// Reads the CSV named by `spec`, keeps rows whose group value is mapped,
/// parses labels, one-hot encodes categoricals and z-scores every feature.
pub fn load_and_preprocess(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&spec.path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column {name:?} not found in {}", spec.path.display())))
    };
    let numeric: Vec<usize> = spec.feature_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let categorical: Vec<usize> = spec.categorical_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let label_idx = col(&spec.label_column)?;
    let group_idx = col(&spec.group_column)?;

    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let Some(&group) = spec.group_mapping.get(rec.get(group_idx).unwrap_or("")) else {
            continue;
        };
        let label = spec.label_rule.apply(rec.get(label_idx).unwrap_or(""))?;
        let nums = numeric
            .iter()
            .zip(&spec.feature_columns)
            .map(|(&j, name)| {
                let raw = rec.get(j).unwrap_or("");
                raw.parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {}: column {name:?} value {raw:?} is not numeric", line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let cats: Vec<String> = categorical.iter().map(|&j| rec.get(j).unwrap_or("").to_string()).collect();
        rows.push((nums, cats, label, group));
    }
    if rows.is_empty() {
        return Err(Error::Data("no rows left after group filter".into()));
    }

    let levels: Vec<Vec<String>> = (0..categorical.len())
        .map(|k| rows.iter().map(|r| r.1[k].clone()).collect::<BTreeSet<_>>().into_iter().collect())
        .collect();
    let mut names = spec.feature_columns.clone();
    for (k, name) in spec.categorical_columns.iter().enumerate() {
        names.extend(levels[k].iter().map(|l| format!("{name}={l}")));
    }
    let samples = rows
        .into_iter()
        .map(|(mut x, cats, y, g)| {
            for (k, v) in cats.iter().enumerate() {
                x.extend(levels[k].iter().map(|l| if l == v { 1.0 } else { 0.0 }));
            }
            Sample::new(x, GroupId(g)).with_label(y)
        })
        .collect();
    Dataset::from_raw(names, samples, spec.num_groups())
}
