//! Shared domain vocabulary: samples, batches, classifiers, utility tuples and
//! algorithm configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Protected-group identifier. Stored zero-based; displayed one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId(pub usize);

impl GroupId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + 1)
    }
}

/// A feature vector with its group and (possibly not yet observed) label.
///
/// `key` identifies the point of a finite exact domain; samples drawn from
/// real data carry no key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub group: GroupId,
    label: Option<bool>,
    pub key: Option<usize>,
}

impl Sample {
    pub fn new(features: Vec<f64>, group: GroupId) -> Self {
        Sample { features, group, label: None, key: None }
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_key(mut self, key: usize) -> Self {
        self.key = Some(key);
        self
    }

    pub fn label(&self) -> Option<bool> {
        self.label
    }

    /// Records an observed outcome. Observed labels are immutable.
    pub fn observe(&mut self, label: bool) -> Result<()> {
        match self.label {
            Some(_) => Err(Error::LabelAlreadyObserved),
            None => {
                self.label = Some(label);
                Ok(())
            }
        }
    }

    /// Copy of this sample with the label removed.
    pub fn hidden(&self) -> Sample {
        Sample { label: None, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// The arrival set S_t of one iteration.
///
/// Ground-truth labels are held privately. The engine obtains an outcome only
/// through [`IterationBatch::reveal`], which records every access so the
/// partial-feedback contract can be audited afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationBatch {
    index: usize,
    samples: Vec<Sample>,
    truth: Vec<bool>,
    access_log: Vec<usize>,
}

impl IterationBatch {
    /// Builds a batch from fully labeled samples; labels are hidden from
    /// [`IterationBatch::samples`].
    pub fn from_labeled(index: usize, labeled: Vec<Sample>) -> Result<Self> {
        let mut samples = Vec::with_capacity(labeled.len());
        let mut truth = Vec::with_capacity(labeled.len());
        for s in labeled {
            let y = s
                .label()
                .ok_or_else(|| Error::Data("batch sample without ground truth".into()))?;
            truth.push(y);
            samples.push(s.hidden());
        }
        Ok(IterationBatch { index, samples, truth, access_log: Vec::new() })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reveals the outcome of sample `i` and logs the access.
    pub fn reveal(&mut self, i: usize) -> bool {
        self.access_log.push(i);
        self.truth[i]
    }

    pub fn access_log(&self) -> &[usize] {
        &self.access_log
    }

    /// Full ground truth. Simulation-only: used to score decisions, never to
    /// make them.
    pub fn ground_truth(&self) -> &[bool] {
        &self.truth
    }

    /// Labeled copy of every sample (simulation privilege, used by baselines
    /// that are allowed full visibility).
    pub fn labeled_samples(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .zip(&self.truth)
            .map(|(s, &y)| s.clone().with_label(y))
            .collect()
    }
}

/// Payoff per (outcome, prediction) cell.
///
/// The first index is the outcome `Y`, the second the prediction `f`: `g01` is
/// the payoff of a false positive and `g11` of a true positive. With this
/// indexing the named tuples below read `γ_pos = (0,1,0,1)` = selection rate
/// and `γ_rev = (0,−c1,0,c2)` = TP profit minus FP loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityCoefficients {
    pub g00: f64,
    pub g01: f64,
    pub g10: f64,
    pub g11: f64,
}

impl UtilityCoefficients {
    pub const fn new(g00: f64, g01: f64, g10: f64, g11: f64) -> Self {
        UtilityCoefficients { g00, g01, g10, g11 }
    }

    pub const fn accuracy() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0)
    }

    pub const fn positive_rate() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }

    /// `c1` is the loss magnitude of a false positive, `c2` the profit of a
    /// true positive. Both must be strictly positive.
    pub fn revenue(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) || !c1.is_finite() || !c2.is_finite() {
            return Err(Error::Config(format!(
                "revenue coefficients must be positive magnitudes, got c1={c1}, c2={c2}"
            )));
        }
        Ok(Self::new(0.0, -c1, 0.0, c2))
    }

    /// True-positive rate for a group with base rate `Pr[Y=1 | Z=z]`.
    pub fn tpr(base_rate: f64) -> Result<Self> {
        if !(base_rate > 0.0 && base_rate <= 1.0) {
            return Err(Error::Probability(format!("base rate {base_rate} not in (0,1]")));
        }
        Ok(Self::new(0.0, 0.0, 0.0, 1.0 / base_rate))
    }

    /// Payoff of a single (prediction, outcome) pair.
    pub fn payoff(&self, predicted: bool, actual: bool) -> f64 {
        match (actual, predicted) {
            (false, false) => self.g00,
            (false, true) => self.g01,
            (true, false) => self.g10,
            (true, true) => self.g11,
        }
    }
}

/// Affine parameters of one logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl AffineParams {
    pub fn zeros(dim: usize) -> Self {
        AffineParams { weights: vec![0.0; dim], intercept: 0.0 }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

pub fn logistic(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Logistic score with a decision threshold.
///
/// Holds either one shared parameter vector or one per group (a hypothesis
/// class derived from a per-group base class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    params: Vec<AffineParams>,
    per_group: bool,
    threshold: f64,
}

impl LinearClassifier {
    pub fn shared(params: AffineParams, threshold: f64) -> Self {
        LinearClassifier { params: vec![params], per_group: false, threshold }
    }

    pub fn per_group(params: Vec<AffineParams>, threshold: f64) -> Self {
        assert!(!params.is_empty(), "per-group classifier needs at least one group");
        let dim = params[0].weights.len();
        assert!(params.iter().all(|p| p.weights.len() == dim), "ragged per-group weights");
        LinearClassifier { params, per_group: true, threshold }
    }

    /// Accepts exactly the exact-domain points whose bit is set in `mask`,
    /// assuming one-hot point features of width `num_points`.
    pub fn from_cell_mask(mask: u64, num_points: usize) -> Self {
        let weights = (0..num_points)
            .map(|i| if mask >> i & 1 == 1 { 10.0 } else { -10.0 })
            .collect();
        Self::shared(AffineParams { weights, intercept: 0.0 }, 0.5)
    }

    pub fn dim(&self) -> usize {
        self.params[0].weights.len()
    }

    pub fn is_per_group(&self) -> bool {
        self.per_group
    }

    pub fn params(&self) -> &[AffineParams] {
        &self.params
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    fn params_for(&self, group: GroupId) -> Result<&AffineParams> {
        if self.per_group {
            self.params.get(group.index()).ok_or(Error::UnknownGroup(group))
        } else {
            Ok(&self.params[0])
        }
    }

    pub fn score(&self, sample: &Sample) -> Result<f64> {
        if sample.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: sample.dim() });
        }
        Ok(logistic(self.params_for(sample.group)?.margin(&sample.features)))
    }

    /// Ties at the threshold classify positive.
    pub fn predict(&self, sample: &Sample) -> Result<bool> {
        Ok(self.score(sample)? >= self.threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Uniform,
    Clf,
    Fair,
    Inverse,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Clf => "clf",
            StrategyKind::Fair => "fair",
            StrategyKind::Inverse => "inverse",
        };
        f.write_str(s)
    }
}

/// `α_exploit(t) = scale · t^exponent`, capped at `α − ε` by the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaExploitSchedule {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for AlphaExploitSchedule {
    fn default() -> Self {
        AlphaExploitSchedule { scale: 0.075, exponent: 0.2 }
    }
}

impl AlphaExploitSchedule {
    pub fn constant(value: f64) -> Self {
        AlphaExploitSchedule { scale: value, exponent: 0.0 }
    }
}

/// Which explore-budget formula to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetForm {
    /// `(α − α_exploit − ε) · n_exploit / (1 − α)`.
    #[default]
    WithEpsilon,
    /// `(α − α_exploit) · n_exploit / (1 − α)`.
    WithoutEpsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    pub alpha: f64,
    pub alpha_exploit_schedule: AlphaExploitSchedule,
    pub epsilon: f64,
    pub lambda: f64,
    pub tau: f64,
    pub beta: f64,
    pub exploration_strategy: StrategyKind,
    /// Statistical-rate bound applied when training the exploit classifier.
    pub exploit_fairness: Option<f64>,
    pub budget_form: BudgetForm,
    /// One weight vector for all groups instead of one per group.
    pub shared_weights: bool,
    pub seed: u64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            alpha: 0.15,
            alpha_exploit_schedule: AlphaExploitSchedule::default(),
            epsilon: 1e-3,
            lambda: 0.0,
            tau: 0.5,
            beta: 0.0,
            exploration_strategy: StrategyKind::Clf,
            exploit_fairness: None,
            budget_form: BudgetForm::WithEpsilon,
            shared_weights: false,
            seed: 0,
        }
    }
}

impl AlgorithmConfig {
    /// `min(scale · t^exponent, α − ε)` for iteration `t ≥ 1`.
    pub fn alpha_exploit(&self, t: usize) -> f64 {
        let s = self.alpha_exploit_schedule;
        let raw = s.scale * (t.max(1) as f64).powf(s.exponent);
        raw.min(self.alpha - self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0,1], got {}", self.alpha));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < self.alpha) {
            return bad(format!("epsilon must lie in [0, alpha), got {}", self.epsilon));
        }
        if !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda must lie in [0,1], got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0,1], got {}", self.tau));
        }
        if !(self.beta >= 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in [0,1], got {}", self.beta));
        }
        if !(self.alpha_exploit_schedule.scale > 0.0) {
            return bad("alpha_exploit_schedule.scale must be positive".into());
        }
        if let Some(b) = self.exploit_fairness {
            if !(0.0..=1.0).contains(&b) {
                return bad(format!("exploit_fairness must lie in [0,1], got {b}"));
            }
        }
        if self.alpha_exploit(1) <= 0.0 {
            return bad("alpha_exploit(1) must be positive".into());
        }
        Ok(())
    }
}
