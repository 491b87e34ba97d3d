//! The iterative learn / exploit / explore / observe loop.
//!
//! Each iteration trains `f_t` on the reweighted labeled history restricted to
//! the current exploit region, labels the exploit-region samples it accepts,
//! spends the explore budget on a `g`-weighted draw from the explore region,
//! and finally folds `g_t` into the region state.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploration::{
    explore_budget_with, group_proportions, inclusion_probability, sample_explore, ExplorationStrategy,
    GroupProportions,
};
use crate::learner::{build_eta_weights, ArrivalLog, LabeledRecord, Learner, ReweightedPool, SolverOptions, TrainingProblem};
use crate::metrics::{self, CellCounts, PredictionRecord};
use crate::regions::{RegionState, StrategySnapshot};
use crate::types::{AlgorithmConfig, GroupId, IterationBatch, LinearClassifier, Sample, UtilityCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    /// Exploit and explore regions with an FDR-bounded explore budget.
    #[default]
    Explore,
    /// Every sample treated as exploit; nothing is explored.
    ExploitOnly,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub algorithm: AlgorithmConfig,
    pub gamma: UtilityCoefficients,
    pub num_groups: usize,
    pub learner: Learner,
    pub solver: SolverOptions,
    pub mode: EngineMode,
}

impl EngineConfig {
    pub fn new(algorithm: AlgorithmConfig, gamma: UtilityCoefficients, num_groups: usize) -> Self {
        let solver = SolverOptions { shared_weights: algorithm.shared_weights, ..SolverOptions::default() };
        EngineConfig { algorithm, gamma, num_groups, learner: Learner::Logistic, solver, mode: EngineMode::Explore }
    }

    pub fn strategy(&self) -> ExplorationStrategy {
        ExplorationStrategy::new(self.algorithm.exploration_strategy, self.algorithm.beta)
    }

    pub fn validate(&self) -> Result<()> {
        self.algorithm.validate()?;
        if self.num_groups == 0 {
            return Err(Error::Config("num_groups must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration measurements of the decisions actually made, against the
/// batch's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub t: usize,
    /// Summed `γ` payoff over the batch; with revenue coefficients this is
    /// TP profit minus FP loss.
    pub revenue: f64,
    /// `revenue / |S_t|`.
    pub utility: f64,
    pub counts: CellCounts,
    /// `None` when nothing was classified positively.
    pub fdr: Option<f64>,
    pub stat_rate: f64,
    pub tpr_disparity: f64,
    /// Indexed by group; `None` for groups without actual positives.
    pub tpr_per_group: Vec<Option<f64>>,
    pub exploit_set: usize,
    pub explore_set: usize,
    /// Exploit-region samples accepted by `f_t`.
    pub n_exploit: usize,
    /// Explore-region samples drawn and labeled.
    pub n_explore: usize,
    /// Uncapped budget (`usize::MAX` when unbounded).
    pub budget: usize,
    pub alpha_exploit: f64,
    /// Training failed and `f_{t−1}` was reused.
    pub infeasible_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub report: IterationReport,
    /// Samples labeled this iteration (`L_t`).
    pub labeled: Vec<LabeledRecord>,
    /// `f_t`.
    pub classifier: LinearClassifier,
    /// The pool `f_t` was trained on (empty at `t = 1`).
    pub pool: ReweightedPool,
    /// Indices of the batch classified positively.
    pub accepted: Vec<usize>,
}

/// Mutable state carried across iterations of one run.
#[derive(Debug, Clone)]
pub struct EngineState {
    t: usize,
    classifier: LinearClassifier,
    regions: RegionState,
    history: Vec<Vec<LabeledRecord>>,
    arrivals: ArrivalLog,
}

impl EngineState {
    /// `f0` is the initial classifier, `initial_labeled` the historical
    /// labeled set `L_0` with its selection propensities, `initial_pool` all
    /// of `S_0` (labeled and unlabeled features).
    pub fn new(
        f0: LinearClassifier,
        initial_labeled: Vec<LabeledRecord>,
        initial_pool: &[Sample],
        regions: RegionState,
    ) -> Self {
        let mut arrivals = ArrivalLog::default();
        arrivals.record(initial_pool);
        EngineState { t: 0, classifier: f0, regions, history: vec![initial_labeled], arrivals }
    }

    /// Last completed iteration.
    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn classifier(&self) -> &LinearClassifier {
        &self.classifier
    }

    pub fn regions(&self) -> &RegionState {
        &self.regions
    }

    /// `L_0, L_1, …, L_t`.
    pub fn history(&self) -> &[Vec<LabeledRecord>] {
        &self.history
    }

    pub fn arrivals(&self) -> &ArrivalLog {
        &self.arrivals
    }

    /// `η_w` over the current history and exploit region.
    pub fn current_pool(&self, mode: EngineMode) -> ReweightedPool {
        match mode {
            EngineMode::Explore => build_eta_weights(&self.history, &self.arrivals, |s| self.regions.in_exploit(s)),
            EngineMode::ExploitOnly => build_eta_weights(&self.history, &self.arrivals, |_| true),
        }
    }

    fn train(&self, config: &EngineConfig, t: usize, seed: u64) -> Result<(LinearClassifier, ReweightedPool, bool)> {
        let pool = self.current_pool(config.mode);
        let problem = TrainingProblem {
            pool: pool.clone(),
            gamma: config.gamma,
            alpha_exploit: config.algorithm.alpha_exploit(t),
            lambda: config.algorithm.lambda,
            epsilon: config.algorithm.epsilon,
            fairness_bound: config.algorithm.exploit_fairness,
            num_groups: config.num_groups,
            options: SolverOptions { seed, ..config.solver.clone() },
            warm_start: Some(self.classifier.clone()),
        };
        match config.learner.train(&problem) {
            Ok(f) => Ok((f, pool, false)),
            Err(e) if e.is_training_signal() => {
                warn!("iteration {t}: {e}; reusing previous classifier");
                Ok((self.classifier.clone(), pool, true))
            }
            Err(e) => Err(e),
        }
    }

    /// Runs iteration `t = iteration() + 1` on `batch`, revealing labels only
    /// for samples classified positively.
    pub fn run_iteration<R: Rng + ?Sized>(
        &mut self,
        config: &EngineConfig,
        batch: &mut IterationBatch,
        rng: &mut R,
    ) -> Result<IterationOutcome> {
        let t = self.t + 1;
        if batch.index() != t {
            return Err(Error::Sequence(format!("batch {} presented at iteration {t}", batch.index())));
        }
        self.arrivals.record(batch.samples());
        let split_seed: u64 = rng.gen();

        let (classifier, pool, fallback) = if t == 1 {
            (self.classifier.clone(), ReweightedPool::default(), false)
        } else {
            self.train(config, t, split_seed)?
        };

        let (exploit, explore) = match config.mode {
            EngineMode::Explore => self.regions.partition(batch),
            EngineMode::ExploitOnly => ((0..batch.len()).collect(), Vec::new()),
        };

        let mut accepted = Vec::new();
        for &i in &exploit {
            if classifier.predict(&batch.samples()[i])? {
                accepted.push(i);
            }
        }
        let n_exploit = accepted.len();
        let mut labeled: Vec<LabeledRecord> = accepted
            .iter()
            .map(|&i| {
                let y = batch.reveal(i);
                LabeledRecord::new(batch.samples()[i].clone().with_label(y), t, 1.0)
            })
            .collect();

        let alpha_exploit = config.algorithm.alpha_exploit(t);
        let strategy = config.strategy();
        let explore_samples: Vec<&Sample> = explore.iter().map(|&i| &batch.samples()[i]).collect();
        let props: GroupProportions = match strategy.kind {
            crate::types::StrategyKind::Inverse => group_proportions(batch.samples(), config.num_groups),
            _ => group_proportions(explore_samples.iter().copied(), config.num_groups),
        };

        let (budget, n_explore) = if config.mode == EngineMode::Explore {
            let a = &config.algorithm;
            let budget = explore_budget_with(n_exploit, a.alpha, alpha_exploit, a.epsilon, a.budget_form);
            let n = budget.count.min(explore.len());
            if n > 0 {
                let g: Vec<f64> = explore_samples
                    .iter()
                    .map(|s| strategy.evaluate_sample(&classifier, s, &props))
                    .collect::<Result<_>>()?;
                let g_total: f64 = g.iter().sum();
                let drawn = sample_explore(&g, n, rng)?;
                for &j in &drawn {
                    let i = explore[j];
                    let y = batch.reveal(i);
                    let propensity = inclusion_probability(g[j] / g_total, n, explore.len());
                    labeled.push(LabeledRecord::new(batch.samples()[i].clone().with_label(y), t, propensity));
                    accepted.push(i);
                }
            }
            (budget.count, n)
        } else {
            (0, 0)
        };
        accepted.sort_unstable();

        if config.mode == EngineMode::Explore {
            self.regions.advance(t, classifier.clone(), StrategySnapshot { strategy, group_props: props })?;
        }

        let report = measure(config, batch, t, &accepted, &exploit, &explore, n_exploit, n_explore, budget, alpha_exploit, fallback);
        debug!(
            "t={t} exploit={} explore={} n_exploit={n_exploit} n_explore={n_explore} fdr={:?}",
            exploit.len(),
            explore.len(),
            report.fdr
        );

        self.history.push(labeled.clone());
        self.classifier = classifier.clone();
        self.t = t;
        Ok(IterationOutcome { report, labeled, classifier, pool, accepted })
    }
}

#[allow(clippy::too_many_arguments)]
fn measure(
    config: &EngineConfig,
    batch: &IterationBatch,
    t: usize,
    accepted: &[usize],
    exploit: &[usize],
    explore: &[usize],
    n_exploit: usize,
    n_explore: usize,
    budget: usize,
    alpha_exploit: f64,
    infeasible_fallback: bool,
) -> IterationReport {
    let mut decided = vec![false; batch.len()];
    for &i in accepted {
        decided[i] = true;
    }
    let truth = batch.ground_truth();
    let records: Vec<PredictionRecord> = batch
        .samples()
        .iter()
        .zip(truth)
        .zip(&decided)
        .map(|((s, &y), &p)| PredictionRecord::new(p, y, s.group))
        .collect();
    let counts = CellCounts::from_records(&records);
    let revenue: f64 = records.iter().map(|r| config.gamma.payoff(r.predicted, r.actual)).sum();
    let tprs = metrics::group_tprs(&records);
    let tpr_per_group = (0..config.num_groups).map(|z| tprs.get(&GroupId(z)).copied().flatten()).collect();
    IterationReport {
        t,
        revenue,
        utility: if records.is_empty() { 0.0 } else { revenue / records.len() as f64 },
        counts,
        fdr: counts.fdr().ok(),
        stat_rate: metrics::statistical_rate_disparity(&records).value,
        tpr_disparity: metrics::tpr_disparity(&records).value,
        tpr_per_group,
        exploit_set: exploit.len(),
        explore_set: explore.len(),
        n_exploit,
        n_explore,
        budget,
        alpha_exploit,
        infeasible_fallback,
    }
}

/// Report for fixed decisions on `batch` made outside the loop (no region
/// bookkeeping): `accepted` are the indices classified positively.
pub fn decision_report(config: &EngineConfig, batch: &IterationBatch, accepted: &[usize]) -> IterationReport {
    let all: Vec<usize> = (0..batch.len()).collect();
    measure(config, batch, batch.index(), accepted, &all, &[], accepted.len(), 0, 0, 0.0, false)
}

/// Everything one repetition needs: the initial classifier and pools, the
/// stream of future batches and a fresh region state.
#[derive(Debug, Clone)]
pub struct RepetitionSetup {
    pub f0: LinearClassifier,
    pub initial_labeled: Vec<LabeledRecord>,
    pub initial_pool: Vec<Sample>,
    pub batches: Vec<IterationBatch>,
    pub regions: RegionState,
}

/// Deterministic per-repetition generator: one seed, one stream per repetition.
pub fn repetition_rng(seed: u64, repetition: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition as u64);
    rng
}

/// Runs every batch of `setup` in order.
pub fn run_repetition<R: Rng + ?Sized>(
    config: &EngineConfig,
    setup: RepetitionSetup,
    rng: &mut R,
) -> Result<Vec<IterationReport>> {
    let RepetitionSetup { f0, initial_labeled, initial_pool, batches, regions } = setup;
    let mut state = EngineState::new(f0, initial_labeled, &initial_pool, regions);
    batches
        .into_iter()
        .map(|mut b| state.run_iteration(config, &mut b, rng).map(|o| o.report))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Reports of each repetition, in repetition order.
    pub runs: Vec<Vec<IterationReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: usize,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    /// Repetitions where the metric was defined.
    pub n: usize,
}

/// Named scalar metrics of a report; `None` where undefined.
pub fn report_metrics(r: &IterationReport) -> Vec<(String, Option<f64>)> {
    let mut v = vec![
        ("revenue".to_string(), Some(r.revenue)),
        ("utility".to_string(), Some(r.utility)),
        ("fdr".to_string(), r.fdr),
        ("stat_rate".to_string(), Some(r.stat_rate)),
        ("tpr_disparity".to_string(), Some(r.tpr_disparity)),
    ];
    for (z, tpr) in r.tpr_per_group.iter().enumerate() {
        v.push((format!("tpr_group_{}", z + 1), *tpr));
    }
    v
}

/// Mean and standard error of a set of values.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl ExperimentResult {
    /// Mean and standard error per iteration and metric across repetitions.
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let horizon = self.runs.iter().map(Vec::len).max().unwrap_or(0);
        let mut rows = Vec::new();
        for ti in 0..horizon {
            let reports: Vec<&IterationReport> = self.runs.iter().filter_map(|r| r.get(ti)).collect();
            let names: Vec<String> = report_metrics(reports[0]).into_iter().map(|(n, _)| n).collect();
            for (mi, name) in names.into_iter().enumerate() {
                let values: Vec<f64> = reports.iter().filter_map(|r| report_metrics(r)[mi].1).collect();
                let (mean, se) = mean_se(&values);
                rows.push(SummaryRow { t: reports[0].t, metric: name, mean, se, n: values.len() });
            }
        }
        rows
    }

    /// Per-repetition values of one metric at the last iteration.
    pub fn final_values(&self, metric: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.last())
            .filter_map(|r| report_metrics(r).into_iter().find(|(n, _)| n == metric).and_then(|(_, v)| v))
            .collect()
    }
}

/// Runs `repetitions` independent repetitions in parallel. `make` builds the
/// data of one repetition from its own generator; results are returned in
/// repetition order and do not depend on the number of worker threads.
pub fn run_experiment<F>(config: &EngineConfig, repetitions: usize, seed: u64, make: F) -> Result<ExperimentResult>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<RepetitionSetup> + Sync,
{
    config.validate()?;
    let runs = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = repetition_rng(seed, rep);
            let setup = make(rep, &mut rng)?;
            run_repetition(config, setup, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AffineParams, StrategyKind};

    fn batch(t: usize, xs: &[(f64, bool)]) -> IterationBatch {
        IterationBatch::from_labeled(t, xs.iter().map(|&(x, y)| Sample::new(vec![x], GroupId(0)).with_label(y)).collect())
            .unwrap()
    }

    fn threshold_clf() -> LinearClassifier {
        LinearClassifier::shared(AffineParams { weights: vec![4.0], intercept: 0.0 }, 0.5)
    }

    fn config(kind: StrategyKind) -> EngineConfig {
        let mut a = AlgorithmConfig { exploration_strategy: kind, ..AlgorithmConfig::default() };
        a.alpha_exploit_schedule = crate::types::AlphaExploitSchedule::constant(0.05);
        EngineConfig::new(a, UtilityCoefficients::accuracy(), 1)
    }

    #[test]
    fn first_iteration_uses_f0_and_explores_nothing() {
        let mut st = EngineState::new(threshold_clf(), vec![], &[], RegionState::new(0.5));
        let mut b = batch(1, &[(1.0, true), (-1.0, false), (2.0, true)]);
        let mut rng = repetition_rng(1, 0);
        let out = st.run_iteration(&config(StrategyKind::Uniform), &mut b, &mut rng).unwrap();
        assert_eq!(out.classifier, threshold_clf());
        assert_eq!(out.report.exploit_set, 0);
        assert_eq!(out.report.n_exploit, 0);
        assert_eq!(out.report.n_explore, 0);
        assert!(b.access_log().is_empty());
    }

    #[test]
    fn out_of_order_batch_is_rejected() {
        let mut st = EngineState::new(threshold_clf(), vec![], &[], RegionState::new(0.5));
        let mut b = batch(2, &[(1.0, true)]);
        assert!(matches!(
            st.run_iteration(&config(StrategyKind::Uniform), &mut b, &mut repetition_rng(0, 0)),
            Err(Error::Sequence(_))
        ));
    }

    #[test]
    fn labels_revealed_only_for_positive_decisions() {
        let mut st = EngineState::new(threshold_clf(), vec![], &[], RegionState::new(0.5));
        let cfg = config(StrategyKind::Clf);
        let mut rng = repetition_rng(3, 0);
        for t in 1..=4 {
            let xs: Vec<(f64, bool)> = (0..40).map(|i| ((i as f64 - 20.0) / 10.0, i % 3 != 0)).collect();
            let mut b = batch(t, &xs);
            let out = st.run_iteration(&cfg, &mut b, &mut rng).unwrap();
            let mut log = b.access_log().to_vec();
            log.sort_unstable();
            assert_eq!(log, out.accepted);
            assert_eq!(out.labeled.len(), out.accepted.len());
            assert_eq!(out.report.counts.positives() as usize, out.accepted.len());
        }
    }

    #[test]
    fn explore_count_stays_within_budget() {
        let mut st = EngineState::new(threshold_clf(), vec![], &[], RegionState::new(0.5));
        let cfg = config(StrategyKind::Clf);
        let mut rng = repetition_rng(5, 0);
        for t in 1..=5 {
            let xs: Vec<(f64, bool)> = (0..200).map(|i| ((i as f64 - 100.0) / 40.0, i % 4 != 0)).collect();
            let mut b = batch(t, &xs);
            let r = st.run_iteration(&cfg, &mut b, &mut rng).unwrap().report;
            let a = &cfg.algorithm;
            let bound = (a.alpha - r.alpha_exploit - a.epsilon) * r.n_exploit as f64 / (1.0 - a.alpha);
            assert!(r.n_explore as f64 <= bound.floor() + 1e-9);
            assert!(r.n_explore <= r.explore_set);
        }
    }

    #[test]
    fn exploit_only_never_explores() {
        let mut cfg = config(StrategyKind::Uniform);
        cfg.mode = EngineMode::ExploitOnly;
        let mut st = EngineState::new(threshold_clf(), vec![], &[], RegionState::new(0.5));
        let mut b = batch(1, &[(1.0, true), (-1.0, false)]);
        let r = st.run_iteration(&cfg, &mut b, &mut repetition_rng(0, 0)).unwrap().report;
        assert_eq!(r.exploit_set, 2);
        assert_eq!(r.n_exploit, 1);
        assert_eq!(r.n_explore, 0);
    }

    #[test]
    fn degenerate_pool_falls_back_to_previous_classifier() {
        // every labeled outcome is positive, so the pool holds one class
        let cfg = config(StrategyKind::Uniform);
        let mut st = EngineState::new(threshold_clf(), vec![], &[], RegionState::new(0.5));
        let mut rng = repetition_rng(0, 0);
        for t in 1..=3 {
            let mut b = batch(t, &[(1.0, true), (2.0, true), (-1.0, false)]);
            let out = st.run_iteration(&cfg, &mut b, &mut rng).unwrap();
            if t > 1 {
                assert!(out.report.infeasible_fallback);
                assert_eq!(out.classifier, threshold_clf());
            }
        }
    }

    #[test]
    fn mean_se_matches_hand_computation() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (((1.5f64).powi(2) * 2.0 + (0.5f64).powi(2) * 2.0) / 3.0).sqrt();
        assert!((se - sd / 2.0).abs() < 1e-12);
        assert_eq!(mean_se(&[7.0]), (7.0, 0.0));
    }
}
