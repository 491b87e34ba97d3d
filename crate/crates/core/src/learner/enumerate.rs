//! Exact constrained optimization over an enumerable family of cell subsets.
//!
//! On an exact domain every hypothesis is a set of accepted points, so the
//! program can be solved by aggregating pool mass per point and scanning the
//! family. Ties prefer fewer accepted points, then the smaller mask.

use serde::{Deserialize, Serialize};

use super::{ConstraintCheck, TrainingProblem};
use crate::error::{Error, Result};
use crate::types::LinearClassifier;

/// Largest domain for which all subsets are scanned.
pub const MAX_SUBSET_POINTS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HypothesisFamily {
    /// Every subset of `num_points` points.
    AllSubsets { num_points: usize },
    /// An explicit list of accepted-point masks.
    Masks { num_points: usize, masks: Vec<u64> },
}

impl HypothesisFamily {
    pub fn num_points(&self) -> usize {
        match self {
            HypothesisFamily::AllSubsets { num_points } | HypothesisFamily::Masks { num_points, .. } => {
                *num_points
            }
        }
    }
}

/// Per-point pool mass split by label.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMass {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub group: Vec<usize>,
}

impl CellMass {
    pub fn from_problem(problem: &TrainingProblem, num_points: usize) -> Result<Self> {
        let mut m = CellMass { pos: vec![0.0; num_points], neg: vec![0.0; num_points], group: vec![0; num_points] };
        for e in problem.pool.active() {
            let k = e.sample.key.ok_or_else(|| Error::Data("exact-domain pool entry without key".into()))?;
            if k >= num_points {
                return Err(Error::Data(format!("point key {k} outside domain of {num_points}")));
            }
            if e.sample.group.index() >= problem.num_groups {
                return Err(Error::UnknownGroup(e.sample.group));
            }
            m.group[k] = e.sample.group.index();
            if e.label() {
                m.pos[k] += e.weight;
            } else {
                m.neg[k] += e.weight;
            }
        }
        Ok(m)
    }
}

struct Scan<'a> {
    problem: &'a TrainingProblem,
    mass: &'a CellMass,
    total: f64,
    group_w: Vec<f64>,
    present: Vec<usize>,
    base_util: f64,
    delta: Vec<f64>,
    best: Option<(f64, u32, u64)>,
}

impl<'a> Scan<'a> {
    fn new(problem: &'a TrainingProblem, mass: &'a CellMass) -> Self {
        let g = problem.gamma;
        let total = mass.pos.iter().chain(&mass.neg).sum();
        let mut group_w = vec![0.0; problem.num_groups];
        for c in 0..mass.pos.len() {
            group_w[mass.group[c]] += mass.pos[c] + mass.neg[c];
        }
        let present = (0..problem.num_groups).filter(|&i| group_w[i] > 0.0).collect();
        let base_util = (0..mass.pos.len()).map(|c| mass.pos[c] * g.g10 + mass.neg[c] * g.g00).sum();
        let delta = (0..mass.pos.len())
            .map(|c| mass.pos[c] * (g.g11 - g.g10) + mass.neg[c] * (g.g01 - g.g00))
            .collect();
        Scan { problem, mass, total, group_w, present, base_util, delta, best: None }
    }

    fn offer(&mut self, mask: u64, util: f64, sel: f64, fp: f64, group_sel: &[f64]) {
        let disparity = if self.present.len() > 1 {
            let rates = self.present.iter().map(|&g| group_sel[g] / self.group_w[g]);
            let (lo, hi) = rates.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
            hi - lo
        } else {
            0.0
        };
        let check = ConstraintCheck {
            selection: sel / self.total,
            fdr: if sel > 0.0 { Some(fp / sel) } else { None },
            disparity,
        };
        if !check.satisfies(self.problem) {
            return;
        }
        let u = (self.base_util + util) / self.total;
        let pop = mask.count_ones();
        let better = match self.best {
            None => true,
            Some((bu, bp, bm)) => {
                u > bu + 1e-12 || ((u - bu).abs() <= 1e-12 && (pop < bp || (pop == bp && mask < bm)))
            }
        };
        if better {
            self.best = Some((u, pop, mask));
        }
    }

    fn evaluate(&mut self, mask: u64) {
        let n = self.mass.pos.len();
        let (mut util, mut sel, mut fp) = (0.0, 0.0, 0.0);
        let mut group_sel = vec![0.0; self.problem.num_groups];
        for c in (0..n).filter(|&c| mask >> c & 1 == 1) {
            util += self.delta[c];
            sel += self.mass.pos[c] + self.mass.neg[c];
            fp += self.mass.neg[c];
            group_sel[self.mass.group[c]] += self.mass.pos[c] + self.mass.neg[c];
        }
        self.offer(mask, util, sel, fp, &group_sel);
    }

    /// Depth-first scan of all subsets; sums are accumulated along the path so
    /// every subset's totals are computed by additions only.
    fn descend(&mut self, c: usize, mask: u64, util: f64, sel: f64, fp: f64, group_sel: &mut [f64]) {
        if c == self.mass.pos.len() {
            self.offer(mask, util, sel, fp, group_sel);
            return;
        }
        self.descend(c + 1, mask, util, sel, fp, group_sel);
        let m = self.mass.pos[c] + self.mass.neg[c];
        let g = self.mass.group[c];
        let saved = group_sel[g];
        group_sel[g] += m;
        self.descend(c + 1, mask | 1 << c, util + self.delta[c], sel + m, fp + self.mass.neg[c], group_sel);
        group_sel[g] = saved;
    }
}

/// Solves the constrained program exactly over `family`. Returns the
/// classifier together with its accepted-point mask.
pub fn train_enumerated(problem: &TrainingProblem, family: &HypothesisFamily) -> Result<(LinearClassifier, u64)> {
    problem.validate()?;
    if problem.pool.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    if !problem.pool.has_both_labels() {
        return Err(Error::DegeneratePool);
    }
    let n = family.num_points();
    let mass = CellMass::from_problem(problem, n)?;
    let mut scan = Scan::new(problem, &mass);
    match family {
        HypothesisFamily::AllSubsets { .. } => {
            if n > MAX_SUBSET_POINTS {
                return Err(Error::Config(format!("cannot scan all subsets of {n} points")));
            }
            let mut group_sel = vec![0.0; problem.num_groups];
            scan.descend(0, 0, 0.0, 0.0, 0.0, &mut group_sel);
        }
        HypothesisFamily::Masks { masks, .. } => {
            if n > 64 {
                return Err(Error::Config(format!("masks cover at most 64 points, got {n}")));
            }
            for &m in masks {
                scan.evaluate(m);
            }
        }
    }
    let (_, _, mask) = scan.best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no hypothesis meets selection >= {:.4}, fdr <= {:.4}",
            problem.min_selection(),
            problem.max_fdr()
        ))
    })?;
    Ok((LinearClassifier::from_cell_mask(mask, n), mask))
}
