//! Brute-force verification of the loop's guarantees on exact finite domains.
//!
//! Every trial draws a historical pool and a stream of batches from a known
//! distribution, runs the engine with the exact enumerative learner, and then
//! scores the produced classifiers against closed-form utilities and FDRs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ExactDomain;
use crate::engine::{repetition_rng, EngineConfig, EngineState, IterationReport};
use crate::error::{Error, Result};
use crate::exploration::{self, ExplorationStrategy};
use crate::learner::{LabeledRecord, Learner, ReweightedPool};
use crate::regions::RegionState;
use crate::types::{AlgorithmConfig, AlphaExploitSchedule, GroupId, IterationBatch, LinearClassifier, Sample, StrategyKind, UtilityCoefficients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationConfig {
    pub trials: usize,
    /// Allowed failure probability.
    pub delta: f64,
    pub tolerance: f64,
    /// Batch size per iteration.
    pub n: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig { trials: 50, delta: 0.05, tolerance: 0.05, n: 2000, iterations: 12, seed: 0 }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 20 {
            return Err(Error::Config(format!("verification needs at least 20 trials, got {}", self.trials)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("delta must lie in (0,1], got {}", self.delta)));
        }
        if self.iterations == 0 || self.n == 0 {
            return Err(Error::Config("verification needs n >= 1 and iterations >= 1".into()));
        }
        Ok(())
    }
}

/// An exact domain together with the historical policy that produced `L_0`.
///
/// The historical lender labeled every applicant its classifier `f0_mask`
/// accepted and, independently, a `history_rate` share of the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub name: String,
    pub domain: ExactDomain,
    pub algorithm: AlgorithmConfig,
    pub gamma: UtilityCoefficients,
    pub f0_mask: u64,
    pub history_rate: f64,
    pub initial_size: usize,
}

/// Utility-maximizing mask under the `α`-FDR constraint on exact `μ`.
/// Masks accepting no mass satisfy the constraint vacuously; ties prefer
/// fewer points, then the smaller mask.
pub fn brute_force_fopt(domain: &ExactDomain, gamma: &UtilityCoefficients, alpha: f64) -> (u64, LinearClassifier, f64) {
    let mut best: Option<(f64, u32, u64)> = None;
    for m in domain.masks() {
        if domain.fdr(m).is_some_and(|f| f > alpha + 1e-12) {
            continue;
        }
        let u = domain.utility(m, gamma);
        let pop = m.count_ones();
        let better = match best {
            None => true,
            Some((bu, bp, bm)) => u > bu + 1e-12 || ((u - bu).abs() <= 1e-12 && (pop, m) < (bp, bm)),
        };
        if better {
            best = Some((u, pop, m));
        }
    }
    let (u, _, m) = best.expect("the empty mask is always feasible");
    (m, LinearClassifier::from_cell_mask(m, domain.num_points()), u)
}

/// Everything one trial produced, indexed by iteration `t = 1..=T`.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub reports: Vec<IterationReport>,
    /// `f_0, f_1, …, f_T` as masks.
    pub masks: Vec<u64>,
    /// Points of `Exploit_t` for `t = 1..=T`.
    pub exploit_masks: Vec<u64>,
    /// Pools used to train `f_1 … f_T`.
    pub pools: Vec<ReweightedPool>,
}

impl OracleFixture {
    pub fn engine_config(&self) -> EngineConfig {
        let mut c = EngineConfig::new(self.algorithm.clone(), self.gamma, self.domain.num_groups);
        c.learner = Learner::Enumerative(self.domain.family.clone());
        c
    }

    /// Historical pool: returns `(S_0, L_0 records)`.
    fn history<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (Vec<Sample>, Vec<LabeledRecord>) {
        let s0 = self.domain.draw(self.initial_size, rng);
        let mut l0 = Vec::new();
        for s in &s0 {
            let k = s.key.expect("domain samples carry keys");
            let p = if self.f0_mask >> k & 1 == 1 { 1.0 } else { self.history_rate };
            if rng.gen_bool(p) {
                l0.push(LabeledRecord::new(s.clone(), 0, p));
            }
        }
        (s0.iter().map(Sample::hidden).collect(), l0)
    }

    pub fn run_trial(&self, config: &EngineConfig, v: &VerificationConfig, trial: usize) -> Result<TrialTrace> {
        let mut rng = repetition_rng(v.seed, trial);
        let (s0, l0) = self.history(&mut rng);
        let points = self.domain.point_samples();
        let f0 = LinearClassifier::from_cell_mask(self.f0_mask, self.domain.num_points());
        let mut state = EngineState::new(f0, l0, &s0, RegionState::discrete(self.algorithm.tau, &points));
        let mut trace = TrialTrace { reports: Vec::new(), masks: vec![self.f0_mask], exploit_masks: Vec::new(), pools: Vec::new() };
        for t in 1..=v.iterations {
            let exploit = points
                .iter()
                .filter(|p| state.regions().in_exploit(p))
                .fold(0u64, |m, p| m | 1 << p.key.unwrap());
            let mut batch = IterationBatch::from_labeled(t, self.domain.draw(v.n, &mut rng))?;
            let out = state.run_iteration(config, &mut batch, &mut rng)?;
            trace.masks.push(self.domain.mask_of(&out.classifier)?);
            trace.exploit_masks.push(exploit);
            trace.pools.push(out.pool);
            trace.reports.push(out.report);
        }
        Ok(trace)
    }

    /// Every trial of `v`, in order.
    pub fn run_trials(&self, config: &EngineConfig, v: &VerificationConfig) -> Result<Vec<TrialTrace>> {
        v.validate()?;
        (0..v.trials).into_par_iter().map(|i| self.run_trial(config, v, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub fixture: String,
    pub trials: usize,
    pub n: usize,
    pub iterations: usize,
    pub defined_iterations: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Violating iterations that explored.
    pub violations_with_exploration: usize,
    /// Iterations breaking the explore-budget inequality.
    pub budget_breaches: usize,
    /// Iterations whose worst-case FP count exceeded `α · positives` although
    /// the exploited FDR met its target.
    pub worst_case_breaches: usize,
    pub max_fdr: f64,
    pub passed: bool,
}

/// Whether a report satisfies `n_explore ≤ ⌊(α − α_exploit − ε)·n_exploit/(1 − α)⌋`.
pub fn budget_holds(a: &AlgorithmConfig, r: &IterationReport) -> bool {
    if a.alpha >= 1.0 || r.n_explore == 0 {
        return true;
    }
    let bound = ((a.alpha - r.alpha_exploit - a.epsilon) * r.n_exploit as f64 / (1.0 - a.alpha)).floor();
    r.n_explore as f64 <= bound
}

/// Counting identity behind the budget: `(α_exploit + ε)·n_exploit + n_explore ≤ α·(n_exploit + n_explore)`.
pub fn worst_case_holds(a: &AlgorithmConfig, r: &IterationReport) -> bool {
    let lhs = (r.alpha_exploit + a.epsilon) * r.n_exploit as f64 + r.n_explore as f64;
    lhs <= a.alpha * (r.n_exploit + r.n_explore) as f64 + 1e-9
}

pub fn verify_feasibility(fixture: &OracleFixture, v: &VerificationConfig) -> Result<FeasibilityReport> {
    let a = &fixture.algorithm;
    let d = &fixture.domain;
    let f0_fdr = d.fdr(fixture.f0_mask);
    if f0_fdr.is_some_and(|f| f > a.alpha) || d.selection_rate(fixture.f0_mask) < a.lambda {
        return Err(Error::Config(format!(
            "f_0 of fixture {} is not ({}, {})-feasible: fdr {:?}, selection {}",
            fixture.name,
            a.alpha,
            a.lambda,
            f0_fdr,
            d.selection_rate(fixture.f0_mask)
        )));
    }
    let traces = fixture.run_trials(&fixture.engine_config(), v)?;
    let mut rep = FeasibilityReport {
        fixture: fixture.name.clone(),
        trials: v.trials,
        n: v.n,
        iterations: v.iterations,
        defined_iterations: 0,
        violations: 0,
        violation_fraction: 0.0,
        violations_with_exploration: 0,
        budget_breaches: 0,
        worst_case_breaches: 0,
        max_fdr: 0.0,
        passed: false,
    };
    for r in traces.iter().flat_map(|t| &t.reports) {
        if !budget_holds(a, r) {
            rep.budget_breaches += 1;
        }
        if a.alpha < 1.0 && !worst_case_holds(a, r) {
            rep.worst_case_breaches += 1;
        }
        if let Some(f) = r.fdr {
            rep.defined_iterations += 1;
            rep.max_fdr = rep.max_fdr.max(f);
            if f > a.alpha + v.tolerance {
                rep.violations += 1;
                if r.n_explore > 0 {
                    rep.violations_with_exploration += 1;
                }
            }
        }
    }
    rep.violation_fraction =
        if rep.defined_iterations == 0 { 0.0 } else { rep.violations as f64 / rep.defined_iterations as f64 };
    rep.passed = rep.violation_fraction <= v.delta && rep.budget_breaches == 0;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: GroupId,
    /// First iteration the inequality is required at.
    pub from_t: usize,
    pub passing_trials: usize,
    pub fraction: f64,
    /// Largest shortfall below the reference seen in any checked iteration.
    pub worst_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub fixture: String,
    pub check: String,
    pub trials: usize,
    pub n: usize,
    pub groups: Vec<GroupCheck>,
    pub passed: bool,
}

/// Convergence of each group's utility to that of the offline optimum once
/// `t ≥ ⌈1/σ(z)⌉`. Runs with `α_exploit = α − ε` and requires the uniform
/// strategy.
pub fn verify_convergence(fixture: &OracleFixture, v: &VerificationConfig) -> Result<GroupReport> {
    let a = &fixture.algorithm;
    if a.exploration_strategy != StrategyKind::Uniform {
        return Err(Error::Config("convergence check requires the uniform strategy".into()));
    }
    let mut pinned = fixture.clone();
    pinned.algorithm.alpha_exploit_schedule = AlphaExploitSchedule::constant(a.alpha - a.epsilon);
    let d = &fixture.domain;
    let points = d.point_samples();
    let f0 = LinearClassifier::from_cell_mask(fixture.f0_mask, d.num_points());
    let sig = exploration::sigma(&ExplorationStrategy::uniform(), &points, &f0, &Default::default())?;
    let (opt, _, _) = brute_force_fopt(d, &fixture.gamma, a.alpha);
    let traces = pinned.run_trials(&pinned.engine_config(), v)?;

    let mut groups = Vec::new();
    for (&z, &s) in &sig.per_group {
        if !(s > 0.0) {
            return Err(Error::Config(format!("sigma of group {z} is zero")));
        }
        let from_t = (1.0 / s - 1e-9).ceil() as usize;
        let reference = d.group_utility(opt, &fixture.gamma, z).unwrap_or(0.0);
        let mut passing = 0;
        let mut worst_gap: f64 = 0.0;
        for tr in &traces {
            let mut ok = true;
            for t in from_t..=v.iterations {
                let u = d.group_utility(tr.masks[t], &fixture.gamma, z).unwrap_or(0.0);
                worst_gap = worst_gap.max(reference - u);
                ok &= u >= reference - v.tolerance;
            }
            passing += ok as usize;
        }
        groups.push(GroupCheck { group: z, from_t, passing_trials: passing, fraction: passing as f64 / v.trials as f64, worst_gap });
    }
    let passed = groups.iter().all(|g| g.fraction >= 1.0 - v.delta);
    Ok(GroupReport { fixture: fixture.name.clone(), check: "convergence".into(), trials: v.trials, n: v.n, groups, passed })
}

/// Each group's utility on the current exploit region is at least that of
/// every earlier classifier on the same region, up to the tolerance.
pub fn verify_monotonicity(fixture: &OracleFixture, v: &VerificationConfig) -> Result<GroupReport> {
    let d = &fixture.domain;
    let traces = fixture.run_trials(&fixture.engine_config(), v)?;
    let mut groups = Vec::new();
    for z in (0..d.num_groups).map(GroupId) {
        let mut passing = 0;
        let mut worst_gap: f64 = 0.0;
        for tr in &traces {
            let mut ok = true;
            for t in 1..=v.iterations {
                let region = tr.exploit_masks[t - 1];
                let util = |m: u64| d.utility_where(m, &fixture.gamma, |p| p.group == z && region >> p.key & 1 == 1);
                let Some(current) = util(tr.masks[t]) else { continue };
                let best_past = (0..t).filter_map(|i| util(tr.masks[i])).fold(f64::NEG_INFINITY, f64::max);
                worst_gap = worst_gap.max(best_past - current);
                ok &= current >= best_past - v.tolerance;
            }
            passing += ok as usize;
        }
        groups.push(GroupCheck { group: z, from_t: 1, passing_trials: passing, fraction: passing as f64 / v.trials as f64, worst_gap });
    }
    let passed = groups.iter().all(|g| g.fraction >= 1.0 - v.delta);
    Ok(GroupReport { fixture: fixture.name.clone(), check: "monotonicity".into(), trials: v.trials, n: v.n, groups, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightingReport {
    pub fixture: String,
    pub trials: usize,
    pub n: usize,
    /// Mean TV distance across trials at each iteration `t ≥ 2`.
    pub mean_tv: Vec<f64>,
    pub final_mean_tv: f64,
    pub final_max_tv: f64,
    /// Same pools with every positive weight replaced by 1.
    pub final_mean_unweighted_tv: f64,
    pub excluded_points: Vec<usize>,
    pub passing_trials: usize,
    pub passed: bool,
}

/// Total-variation distance between a normalized pool and `μ` restricted to
/// `region`, ignoring points flagged in `excluded`. `None` when either side
/// carries no mass.
pub fn pool_tv(domain: &ExactDomain, pool: &ReweightedPool, region: u64, excluded: &[bool], unweighted: bool) -> Option<f64> {
    let n = domain.num_points();
    let keep = |k: usize| region >> k & 1 == 1 && !excluded[k];
    let mut emp = vec![[0.0f64; 2]; n];
    for e in pool.active() {
        let k = e.sample.key?;
        if keep(k) {
            emp[k][e.label() as usize] += if unweighted { 1.0 } else { e.weight };
        }
    }
    let emp_total: f64 = emp.iter().map(|c| c[0] + c[1]).sum();
    let mu_total: f64 = (0..n).filter(|&k| keep(k)).map(|k| domain.points[k].mass).sum();
    if emp_total <= 0.0 || mu_total <= 0.0 {
        return None;
    }
    let tv = (0..n)
        .filter(|&k| keep(k))
        .map(|k| {
            (0..2)
                .map(|y| (emp[k][y] / emp_total - domain.mu(k, y == 1) / mu_total).abs())
                .sum::<f64>()
        })
        .sum::<f64>();
    Some(tv / 2.0)
}

pub fn verify_reweighting(fixture: &OracleFixture, v: &VerificationConfig) -> Result<ReweightingReport> {
    let d = &fixture.domain;
    let excluded = d.low_mass(fixture.algorithm.epsilon);
    let traces = fixture.run_trials(&fixture.engine_config(), v)?;
    let mut mean_tv = Vec::new();
    for t in 2..=v.iterations {
        let vals: Vec<f64> = traces
            .iter()
            .filter_map(|tr| pool_tv(d, &tr.pools[t - 1], tr.exploit_masks[t - 1], &excluded, false))
            .collect();
        mean_tv.push(if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 });
    }
    let finals = |unweighted: bool| -> Vec<f64> {
        traces
            .iter()
            .map(|tr| {
                let last = tr.pools.len() - 1;
                pool_tv(d, &tr.pools[last], tr.exploit_masks[last], &excluded, unweighted).unwrap_or(1.0)
            })
            .collect()
    };
    let weighted = finals(false);
    let unweighted = finals(true);
    let passing = weighted.iter().filter(|&&x| x <= v.tolerance).count();
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    Ok(ReweightingReport {
        fixture: fixture.name.clone(),
        trials: v.trials,
        n: v.n,
        final_mean_tv: mean(&weighted),
        final_max_tv: weighted.iter().copied().fold(0.0, f64::max),
        final_mean_unweighted_tv: mean(&unweighted),
        mean_tv,
        excluded_points: (0..d.num_points()).filter(|&k| excluded[k]).collect(),
        passing_trials: passing,
        passed: passing as f64 / v.trials as f64 >= 1.0 - v.delta,
    })
}

/// Shipped fixtures.
pub mod fixtures {
    use super::*;
    use crate::data::{make_exact_domain, ExactDomainSpec, FamilyKind};

    fn two_group_domain(probs: [&[f64]; 2], mass: Option<Vec<f64>>) -> ExactDomain {
        let groups: Vec<usize> = probs.iter().enumerate().flat_map(|(g, p)| std::iter::repeat(g).take(p.len())).collect();
        let n = groups.len();
        let label_probs = probs.iter().flat_map(|p| p.iter().copied()).collect();
        let spec = ExactDomainSpec {
            groups,
            label_probs,
            mass: mass.unwrap_or_else(|| vec![1.0 / n as f64; n]),
            family: FamilyKind::AllSubsets,
        };
        make_exact_domain(&spec).expect("fixture domains are valid")
    }

    fn base_algorithm() -> AlgorithmConfig {
        AlgorithmConfig { exploration_strategy: StrategyKind::Uniform, ..AlgorithmConfig::default() }
    }

    /// Sixteen points in two groups with a spread of outcome rates, including
    /// two coin-flip points; the historical lender accepted only the three
    /// safest points.
    pub fn sixteen_point() -> OracleFixture {
        let g0 = [0.98, 0.95, 0.9, 0.85, 0.7, 0.5, 0.3, 0.1];
        let g1 = [0.96, 0.9, 0.8, 0.6, 0.5, 0.4, 0.2, 0.05];
        let mass: Vec<f64> = (0..16).map(|k| if k % 3 == 0 { 0.08 } else { 0.05 }).collect();
        let total: f64 = mass.iter().sum();
        let domain = two_group_domain([&g0, &g1], Some(mass.iter().map(|m| m / total).collect()));
        OracleFixture {
            name: "sixteen_point".into(),
            domain,
            algorithm: AlgorithmConfig { lambda: 0.05, ..base_algorithm() },
            gamma: UtilityCoefficients::accuracy(),
            f0_mask: 0b1_0000_0011,
            history_rate: 0.3,
            initial_size: 2000,
        }
    }

    /// Eight points in two groups of four. Accepting the `0.52` point would
    /// push the FDR over `α = 0.15`, so the constraint binds at the optimum.
    /// Runs with `α_exploit = α − ε` throughout.
    pub fn eight_point() -> OracleFixture {
        let domain = two_group_domain([&[0.97, 0.9, 0.8, 0.15], &[0.92, 0.85, 0.52, 0.1]], None);
        let algorithm = AlgorithmConfig { lambda: 0.05, ..base_algorithm() };
        let pinned = AlphaExploitSchedule::constant(algorithm.alpha - algorithm.epsilon);
        OracleFixture {
            name: "eight_point".into(),
            domain,
            algorithm: AlgorithmConfig { alpha_exploit_schedule: pinned, ..algorithm },
            gamma: UtilityCoefficients::accuracy(),
            f0_mask: 0b0001_0001,
            history_rate: 0.3,
            initial_size: 2000,
        }
    }

    /// All shipped fixtures by name.
    pub fn all() -> Vec<OracleFixture> {
        vec![sixteen_point(), eight_point()]
    }

    pub fn by_name(name: &str) -> Option<OracleFixture> {
        all().into_iter().find(|f| f.name == name)
    }
}
