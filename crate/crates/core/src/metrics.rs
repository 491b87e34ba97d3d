//! Utility, revenue, false-discovery rate and group disparity measurements
//! over empirical prediction records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GroupId, UtilityCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predicted: bool,
    pub actual: bool,
    pub group: GroupId,
}

impl PredictionRecord {
    pub fn new(predicted: bool, actual: bool, group: GroupId) -> Self {
        PredictionRecord { predicted, actual, group }
    }
}

/// Confusion-matrix cell counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl CellCounts {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Self {
        let mut c = CellCounts::default();
        for r in records {
            match (r.actual, r.predicted) {
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (true, true) => c.tp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn actual_positives(&self) -> u64 {
        self.tp + self.fn_
    }

    fn weighted_sum(&self, g: &UtilityCoefficients) -> f64 {
        g.g00 * self.tn as f64
            + g.g01 * self.fp as f64
            + g.g10 * self.fn_ as f64
            + g.g11 * self.tp as f64
    }

    pub fn utility(&self, g: &UtilityCoefficients) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyRecords);
        }
        Ok(self.weighted_sum(g) / self.total() as f64)
    }

    pub fn fdr(&self) -> Result<f64> {
        if self.positives() == 0 {
            return Err(Error::UndefinedFdr);
        }
        Ok(self.fp as f64 / self.positives() as f64)
    }
}

/// `Σ γ_ij · Pr[cell ij]` with probabilities taken over `records`.
pub fn utility(records: &[PredictionRecord], gamma: &UtilityCoefficients) -> Result<f64> {
    CellCounts::from_records(records).utility(gamma)
}

/// Utility restricted to records of group `z`.
pub fn group_utility(
    records: &[PredictionRecord],
    gamma: &UtilityCoefficients,
    z: GroupId,
) -> Result<f64> {
    let counts = CellCounts::from_records(records.iter().filter(|r| r.group == z));
    if counts.total() == 0 {
        return Err(Error::GroupAbsent(z));
    }
    counts.utility(gamma)
}

/// `c2 · TP − c1 · FP`, i.e. revenue utility times the number of records.
pub fn revenue(records: &[PredictionRecord], c1: f64, c2: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    UtilityCoefficients::revenue(c1, c2)?;
    let c = CellCounts::from_records(records);
    Ok(c2 * c.tp as f64 - c1 * c.fp as f64)
}

/// `#FP / #predicted positive`; [`Error::UndefinedFdr`] without positives.
pub fn empirical_fdr(records: &[PredictionRecord]) -> Result<f64> {
    CellCounts::from_records(records).fdr()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisparityWarning {
    /// Fewer than two groups could be compared.
    SingleGroup,
    /// At least one present group was left out of the comparison.
    GroupsExcluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub value: f64,
    pub warning: Option<DisparityWarning>,
}

fn max_pairwise_gap(rates: &[f64]) -> f64 {
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    if rates.len() < 2 {
        0.0
    } else {
        max - min
    }
}

fn per_group_counts(records: &[PredictionRecord]) -> BTreeMap<GroupId, CellCounts> {
    let mut out: BTreeMap<GroupId, CellCounts> = BTreeMap::new();
    for r in records {
        let c = out.entry(r.group).or_default();
        match (r.actual, r.predicted) {
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (true, true) => c.tp += 1,
        }
    }
    out
}

/// Per-group acceptance rates `Pr[f=1 | Z=z]` for every present group.
pub fn acceptance_rates(records: &[PredictionRecord]) -> BTreeMap<GroupId, f64> {
    per_group_counts(records)
        .into_iter()
        .map(|(z, c)| (z, c.positives() as f64 / c.total() as f64))
        .collect()
}

/// Per-group TPR; `None` for groups without actual positives.
pub fn group_tprs(records: &[PredictionRecord]) -> BTreeMap<GroupId, Option<f64>> {
    per_group_counts(records)
        .into_iter()
        .map(|(z, c)| {
            let ap = c.actual_positives();
            (z, (ap > 0).then(|| c.tp as f64 / ap as f64))
        })
        .collect()
}

/// Largest absolute acceptance-rate gap over all pairs of present groups.
pub fn statistical_rate_disparity(records: &[PredictionRecord]) -> Disparity {
    let rates: Vec<f64> = acceptance_rates(records).into_values().collect();
    Disparity {
        value: max_pairwise_gap(&rates),
        warning: (rates.len() < 2).then_some(DisparityWarning::SingleGroup),
    }
}

/// Largest absolute TPR gap over pairs of groups that have actual positives.
pub fn tpr_disparity(records: &[PredictionRecord]) -> Disparity {
    let tprs = group_tprs(records);
    let present = tprs.len();
    let rates: Vec<f64> = tprs.into_values().flatten().collect();
    let warning = if rates.len() < 2 {
        Some(DisparityWarning::SingleGroup)
    } else if rates.len() < present {
        Some(DisparityWarning::GroupsExcluded)
    } else {
        None
    };
    Disparity { value: max_pairwise_gap(&rates), warning }
}
