//! Reweighted training pools and constrained classifier training.
//!
//! The exploit classifier maximizes utility on a reweighted labeled pool
//! subject to a minimum selection rate, a false-discovery-rate cap and an
//! optional statistical-rate cap. Two solvers share that contract:
//! [`logistic`] fits a penalized logistic model and then sweeps its threshold,
//! [`enumerate`] searches an enumerable cell-subset family exactly.

pub mod enumerate;
pub mod logistic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LinearClassifier, Sample, UtilityCoefficients};

pub use enumerate::{train_enumerated, HypothesisFamily};
pub use logistic::{train_constrained, train_f0};

/// A labeled sample together with the iteration it was labeled in and the
/// probability that it was selected for labeling at that iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub sample: Sample,
    pub iteration: usize,
    pub propensity: f64,
}

impl LabeledRecord {
    pub fn new(sample: Sample, iteration: usize, propensity: f64) -> Self {
        debug_assert!(sample.label().is_some(), "labeled record without label");
        LabeledRecord { sample, iteration, propensity }
    }

    pub fn label(&self) -> bool {
        self.sample.label().expect("labeled record carries a label")
    }
}

/// Arrival counts over `S_0 … S_t`. Features of every arriving sample are
/// visible, so these counts estimate how often each exact-domain point occurs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrivalLog {
    total: usize,
    per_key: HashMap<usize, usize>,
}

impl ArrivalLog {
    pub fn record<'a>(&mut self, samples: impl IntoIterator<Item = &'a Sample>) {
        for s in samples {
            self.total += 1;
            if let Some(k) = s.key {
                *self.per_key.entry(k).or_default() += 1;
            }
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count(&self, key: usize) -> usize {
        self.per_key.get(&key).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub sample: Sample,
    pub weight: f64,
}

impl WeightedSample {
    pub fn label(&self) -> bool {
        self.sample.label().expect("pool entries carry labels")
    }
}

/// Labeled samples with importance weights `η_w`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReweightedPool {
    pub entries: Vec<WeightedSample>,
    pub total_weight: f64,
}

impl ReweightedPool {
    pub fn from_entries(entries: Vec<WeightedSample>) -> Self {
        let total_weight = entries.iter().map(|e| e.weight).sum();
        ReweightedPool { entries, total_weight }
    }

    /// Every sample weighted 1.
    pub fn uniform(samples: &[Sample]) -> Self {
        Self::from_entries(
            samples.iter().map(|s| WeightedSample { sample: s.clone(), weight: 1.0 }).collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.total_weight <= 0.0
    }

    /// Entries with positive weight.
    pub fn active(&self) -> impl Iterator<Item = &WeightedSample> {
        self.entries.iter().filter(|e| e.weight > 0.0)
    }

    pub fn has_both_labels(&self) -> bool {
        let mut seen = [false; 2];
        for e in self.active() {
            seen[e.label() as usize] = true;
        }
        seen[0] && seen[1]
    }
}

/// Builds `η_w` over the labeled history, restricted to the exploit region.
///
/// Each labeled copy is weighted by the inverse of its selection propensity.
/// When every record carries an exact-domain key the propensity of point `c`
/// is estimated empirically as `labeled(c) / arrived(c)`, so the pool mass of
/// `c` equals its arrival frequency and its label split is the observed
/// conditional; otherwise the recorded per-sample propensity is used.
pub fn build_eta_weights(
    labeled_history: &[Vec<LabeledRecord>],
    arrivals: &ArrivalLog,
    in_exploit: impl Fn(&Sample) -> bool,
) -> ReweightedPool {
    let records = labeled_history.iter().flatten();
    let discrete = labeled_history.iter().flatten().all(|r| r.sample.key.is_some());
    let mut labeled_per_key: HashMap<usize, usize> = HashMap::new();
    if discrete {
        for r in labeled_history.iter().flatten() {
            *labeled_per_key.entry(r.sample.key.unwrap()).or_default() += 1;
        }
    }
    let entries = records
        .map(|r| {
            let weight = if !in_exploit(&r.sample) {
                0.0
            } else if discrete {
                let k = r.sample.key.unwrap();
                let labeled = labeled_per_key[&k];
                let arrived = arrivals.count(k).max(labeled);
                arrived as f64 / labeled as f64
            } else if r.propensity > 0.0 {
                1.0 / r.propensity
            } else {
                0.0
            };
            WeightedSample { sample: r.sample.clone(), weight }
        })
        .collect();
    ReweightedPool::from_entries(entries)
}

/// Optimizer settings for the logistic solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub shared_weights: bool,
    pub seed: u64,
    pub step: f64,
    pub rounds: usize,
    pub steps_per_round: usize,
    /// Gradient-norm tolerance that ends a penalty round.
    pub tolerance: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub gradient_clip: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            shared_weights: false,
            seed: 0,
            step: 0.1,
            rounds: 5,
            steps_per_round: 500,
            tolerance: 1e-3,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            gradient_clip: 5.0,
        }
    }
}

/// The constrained utility-maximization program over a reweighted pool.
#[derive(Debug, Clone)]
pub struct TrainingProblem {
    pub pool: ReweightedPool,
    pub gamma: UtilityCoefficients,
    pub alpha_exploit: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Cap on the weighted statistical-rate disparity.
    pub fairness_bound: Option<f64>,
    pub num_groups: usize,
    pub options: SolverOptions,
    /// Starting parameters for the logistic solver.
    pub warm_start: Option<LinearClassifier>,
}

impl TrainingProblem {
    pub fn new(pool: ReweightedPool, gamma: UtilityCoefficients, num_groups: usize) -> Self {
        TrainingProblem {
            pool,
            gamma,
            alpha_exploit: 1.0,
            lambda: 0.0,
            epsilon: 0.0,
            fairness_bound: None,
            num_groups,
            options: SolverOptions::default(),
            warm_start: None,
        }
    }

    pub fn min_selection(&self) -> f64 {
        self.lambda - self.epsilon
    }

    pub fn max_fdr(&self) -> f64 {
        self.alpha_exploit + self.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_exploit + self.epsilon > 1.0 + 1e-12 {
            return Err(Error::Config("alpha_exploit + epsilon must not exceed 1".into()));
        }
        if self.lambda - self.epsilon > 1.0 {
            return Err(Error::Config("lambda - epsilon must not exceed 1".into()));
        }
        if self.num_groups == 0 {
            return Err(Error::Config("num_groups must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted selection rate, FDR and statistical-rate gap of a decision rule
/// over pool entries. Used by both solvers to check feasibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub selection: f64,
    pub fdr: Option<f64>,
    pub disparity: f64,
}

impl ConstraintCheck {
    pub fn satisfies(&self, problem: &TrainingProblem) -> bool {
        const SLACK: f64 = 1e-12;
        self.selection + SLACK >= problem.min_selection()
            && self.fdr.is_none_or(|f| f <= problem.max_fdr() + SLACK)
            && problem.fairness_bound.is_none_or(|b| self.disparity <= b + SLACK)
    }
}

/// Either solver behind one interface.
#[derive(Debug, Clone)]
pub enum Learner {
    Logistic,
    Enumerative(HypothesisFamily),
}

impl Learner {
    pub fn train(&self, problem: &TrainingProblem) -> Result<LinearClassifier> {
        match self {
            Learner::Logistic => train_constrained(problem),
            Learner::Enumerative(family) => train_enumerated(problem, family).map(|(c, _)| c),
        }
    }
}
