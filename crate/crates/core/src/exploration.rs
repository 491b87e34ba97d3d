//! Exploration strategies `g`, the explore budget, the weighted
//! without-replacement sampler and the sigma coverage diagnostic.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BudgetForm, GroupId, LinearClassifier, Sample, StrategyKind};

/// Lower bound applied to every strategy value so `g` stays strictly positive.
pub const G_FLOOR: f64 = 1e-6;

/// Share of each group within some reference set (the explore region for
/// `fair`, the whole batch for `inverse`).
pub type GroupProportions = BTreeMap<GroupId, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationStrategy {
    pub kind: StrategyKind,
    pub beta: f64,
}

impl ExplorationStrategy {
    pub fn new(kind: StrategyKind, beta: f64) -> Self {
        ExplorationStrategy { kind, beta }
    }

    pub fn uniform() -> Self {
        Self::new(StrategyKind::Uniform, 0.0)
    }

    /// Whether `evaluate` reads group proportions.
    pub fn needs_proportions(&self) -> bool {
        matches!(self.kind, StrategyKind::Fair | StrategyKind::Inverse)
    }

    /// Raw (unnormalized) strategy value for a sample with classifier score
    /// `score` and group `group`, floored at [`G_FLOOR`].
    pub fn evaluate(&self, score: f64, group: GroupId, props: &GroupProportions) -> Result<f64> {
        let clf = self.beta + (1.0 - self.beta) * score;
        let share = || props.get(&group).copied().ok_or(Error::MissingGroupProportion(group));
        let raw = match self.kind {
            StrategyKind::Uniform => 1.0,
            StrategyKind::Clf => clf,
            StrategyKind::Fair => clf * share()?,
            StrategyKind::Inverse => {
                let s = share()?;
                if s > 0.0 {
                    1.0 / s
                } else {
                    G_FLOOR
                }
            }
        };
        Ok(if raw.is_finite() { raw.max(G_FLOOR) } else { G_FLOOR })
    }

    pub fn evaluate_sample(
        &self,
        classifier: &LinearClassifier,
        sample: &Sample,
        props: &GroupProportions,
    ) -> Result<f64> {
        let score = match self.kind {
            StrategyKind::Uniform | StrategyKind::Inverse => 0.0,
            StrategyKind::Clf | StrategyKind::Fair => classifier.score(sample)?,
        };
        self.evaluate(score, sample.group, props)
    }
}

/// Group shares among `samples`, with an explicit zero for each of the
/// `num_groups` groups that is absent.
pub fn group_proportions<'a>(
    samples: impl IntoIterator<Item = &'a Sample>,
    num_groups: usize,
) -> GroupProportions {
    let mut counts = vec![0usize; num_groups];
    let mut total = 0usize;
    for s in samples {
        if s.group.index() >= counts.len() {
            counts.resize(s.group.index() + 1, 0);
        }
        counts[s.group.index()] += 1;
        total += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(z, c)| (GroupId(z), if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    /// Number of explore-region samples to classify positively, before
    /// capping at the explore-set size. `usize::MAX` when `α = 1`.
    pub count: usize,
    /// The formula was negative and was clamped to zero.
    pub clamped: bool,
}

fn budget_value(n_exploit: usize, alpha: f64, alpha_exploit: f64, epsilon: f64, form: BudgetForm) -> f64 {
    let slack = match form {
        BudgetForm::WithEpsilon => alpha - alpha_exploit - epsilon,
        BudgetForm::WithoutEpsilon => alpha - alpha_exploit,
    };
    slack * n_exploit as f64 / (1.0 - alpha)
}

/// `floor((α − α_exploit − ε) · n_exploit / (1 − α))`.
pub fn explore_budget(n_exploit: usize, alpha: f64, alpha_exploit: f64, epsilon: f64) -> Budget {
    explore_budget_with(n_exploit, alpha, alpha_exploit, epsilon, BudgetForm::WithEpsilon)
}

pub fn explore_budget_with(
    n_exploit: usize,
    alpha: f64,
    alpha_exploit: f64,
    epsilon: f64,
    form: BudgetForm,
) -> Budget {
    if n_exploit == 0 {
        return Budget { count: 0, clamped: false };
    }
    if alpha >= 1.0 {
        return Budget { count: usize::MAX, clamped: false };
    }
    let v = budget_value(n_exploit, alpha, alpha_exploit, epsilon, form);
    if v < 0.0 {
        warn!("explore budget formula is negative ({v}); exploring nothing");
        return Budget { count: 0, clamped: true };
    }
    Budget { count: v.floor() as usize, clamped: false }
}

/// Draws `min(n, len)` distinct indices without replacement, each draw
/// proportional to `g` among the remaining items.
pub fn sample_explore<R: Rng + ?Sized>(g_values: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if let Some(bad) = g_values.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::Probability(format!("exploration weight {bad} is not positive")));
    }
    if n >= g_values.len() {
        return Ok((0..g_values.len()).collect());
    }
    let picked = rand::seq::index::sample_weighted(rng, g_values.len(), |i| g_values[i], n)
        .map_err(|e| Error::Probability(e.to_string()))?;
    let mut v = picked.into_vec();
    v.sort_unstable();
    Ok(v)
}

/// Approximate inclusion probability of an item with normalized weight `p`
/// under `n` weighted draws without replacement from a set of `len`.
pub fn inclusion_probability(p: f64, n: usize, len: usize) -> f64 {
    if n >= len {
        1.0
    } else {
        1.0 - (1.0 - p).powi(n as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma {
    pub sigma: f64,
    pub per_group: BTreeMap<GroupId, f64>,
}

/// `min g / Σ g` overall and per group from `(group, g)` pairs.
pub fn sigma_from_values(values: &[(GroupId, f64)]) -> Result<Sigma> {
    if values.is_empty() {
        return Err(Error::Empty("domain"));
    }
    let total: f64 = values.iter().map(|(_, g)| g).sum();
    let mut mins: BTreeMap<GroupId, f64> = BTreeMap::new();
    for &(z, g) in values {
        let m = mins.entry(z).or_insert(f64::INFINITY);
        *m = m.min(g);
    }
    let global = mins.values().copied().fold(f64::INFINITY, f64::min);
    Ok(Sigma {
        sigma: global / total,
        per_group: mins.into_iter().map(|(z, m)| (z, m / total)).collect(),
    })
}

/// Sigma of `strategy` over a finite domain or batch under `classifier`.
pub fn sigma(
    strategy: &ExplorationStrategy,
    points: &[Sample],
    classifier: &LinearClassifier,
    props: &GroupProportions,
) -> Result<Sigma> {
    let values = points
        .iter()
        .map(|s| Ok((s.group, strategy.evaluate_sample(classifier, s, props)?)))
        .collect::<Result<Vec<_>>>()?;
    sigma_from_values(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn props(pairs: &[(usize, f64)]) -> GroupProportions {
        pairs.iter().map(|&(z, p)| (GroupId(z), p)).collect()
    }

    #[test]
    fn strategy_values() {
        let none = GroupProportions::new();
        assert_eq!(ExplorationStrategy::uniform().evaluate(0.3, GroupId(0), &none).unwrap(), 1.0);
        let clf = ExplorationStrategy::new(StrategyKind::Clf, 0.0);
        assert_abs_diff_eq!(clf.evaluate(0.88, GroupId(0), &none).unwrap(), 0.88);
        let clf_b = ExplorationStrategy::new(StrategyKind::Clf, 0.5);
        assert_abs_diff_eq!(clf_b.evaluate(0.0, GroupId(0), &none).unwrap(), 0.5);
        // clf value 0.5 times group share 0.3
        let fair = ExplorationStrategy::new(StrategyKind::Fair, 0.0);
        let p = props(&[(0, 0.3), (1, 0.7)]);
        assert_abs_diff_eq!(fair.evaluate(0.5, GroupId(0), &p).unwrap(), 0.15, epsilon = 1e-15);
        let inv = ExplorationStrategy::new(StrategyKind::Inverse, 0.0);
        assert_abs_diff_eq!(inv.evaluate(0.5, GroupId(1), &p).unwrap(), 1.0 / 0.7);
    }

    #[test]
    fn fair_without_proportion_is_an_error() {
        let fair = ExplorationStrategy::new(StrategyKind::Fair, 0.0);
        let p = props(&[(0, 1.0)]);
        assert!(matches!(
            fair.evaluate(0.5, GroupId(1), &p),
            Err(Error::MissingGroupProportion(GroupId(1)))
        ));
    }

    #[test]
    fn underflowing_score_is_floored() {
        let clf = ExplorationStrategy::new(StrategyKind::Clf, 0.0);
        assert_eq!(clf.evaluate(1e-300, GroupId(0), &GroupProportions::new()).unwrap(), G_FLOOR);
    }

    #[test]
    fn budget_cases() {
        // 0.075 * 100 / 0.85 = 8.82...
        assert_eq!(explore_budget(100, 0.15, 0.075, 0.0).count, 8);
        assert_eq!(explore_budget(100, 0.15, 0.1, 0.05).count, 0);
        assert_eq!(explore_budget(0, 0.15, 0.075, 0.0).count, 0);
        let neg = explore_budget(100, 0.15, 0.2, 0.0);
        assert_eq!(neg.count, 0);
        assert!(neg.clamped);
        assert_eq!(explore_budget(10, 1.0, 0.5, 0.0).count, usize::MAX);
        let text = explore_budget_with(100, 0.15, 0.075, 0.01, BudgetForm::WithoutEpsilon);
        assert_eq!(text.count, 8);
        assert_eq!(explore_budget(100, 0.15, 0.075, 0.01).count, 7);
    }

    #[test]
    fn oversized_request_returns_whole_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_explore(&[1.0, 2.0, 3.0], 5, &mut rng).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn equal_weights_are_uniform_chi_square() {
        // 10 items, 3 picks per draw, 10^4 draws; each item expected 3000.
        let g = vec![0.7; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0f64; 10];
        let draws = 10_000;
        for _ in 0..draws {
            for i in sample_explore(&g, 3, &mut rng).unwrap() {
                counts[i] += 1.0;
            }
        }
        let expected = draws as f64 * 3.0 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // chi-square 0.99 quantile with 9 degrees of freedom
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn dominant_weight_is_almost_always_picked() {
        let mut g = vec![G_FLOOR; 50];
        g[17] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hits = (0..1000)
            .filter(|_| sample_explore(&g, 1, &mut rng).unwrap() == vec![17])
            .count();
        assert!(hits as f64 / 1000.0 > 0.99);
    }

    #[test]
    fn nonpositive_weights_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_explore(&[1.0, 0.0], 1, &mut rng).is_err());
    }

    #[test]
    fn inclusion_probability_edges() {
        assert_eq!(inclusion_probability(0.1, 10, 10), 1.0);
        assert_abs_diff_eq!(inclusion_probability(0.25, 1, 4), 0.25);
        assert_abs_diff_eq!(inclusion_probability(0.1, 2, 10), 1.0 - 0.81);
    }

    #[test]
    fn sigma_cases() {
        let uniform: Vec<(GroupId, f64)> = (0..10).map(|_| (GroupId(0), 1.0)).collect();
        assert_abs_diff_eq!(sigma_from_values(&uniform).unwrap().sigma, 0.1);
        let v = vec![(GroupId(0), 1.0), (GroupId(0), 1.0), (GroupId(0), 2.0)];
        assert_abs_diff_eq!(sigma_from_values(&v).unwrap().sigma, 0.25);
        // group masses 3 and 1, per-group minima 1 and 1
        let two = vec![(GroupId(0), 1.0), (GroupId(0), 2.0), (GroupId(1), 1.0)];
        let s = sigma_from_values(&two).unwrap();
        assert_abs_diff_eq!(s.per_group[&GroupId(0)], 0.25);
        assert_abs_diff_eq!(s.per_group[&GroupId(1)], 0.25);
        assert!(sigma_from_values(&[]).is_err());
    }

    #[test]
    fn proportions_include_absent_groups() {
        let s = vec![Sample::new(vec![], GroupId(0)), Sample::new(vec![], GroupId(0))];
        let p = group_proportions(&s, 3);
        assert_eq!(p[&GroupId(0)], 1.0);
        assert_eq!(p[&GroupId(2)], 0.0);
    }

    proptest! {
        #[test]
        fn evaluate_is_always_positive(kind in 0usize..4, beta in 0.0f64..=1.0, score in 0.0f64..=1.0, share in 0.0f64..=1.0) {
            let kind = [StrategyKind::Uniform, StrategyKind::Clf, StrategyKind::Fair, StrategyKind::Inverse][kind];
            let s = ExplorationStrategy::new(kind, beta);
            let v = s.evaluate(score, GroupId(0), &props(&[(0, share)])).unwrap();
            prop_assert!(v >= G_FLOOR && v.is_finite());
        }

        #[test]
        fn sampler_distinct_and_sized(g in prop::collection::vec(1e-3f64..10.0, 1..40), n in 0usize..50, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picked = sample_explore(&g, n, &mut rng).unwrap();
            prop_assert_eq!(picked.len(), n.min(g.len()));
            let mut d = picked.clone();
            d.dedup();
            prop_assert_eq!(d.len(), picked.len());
        }

        #[test]
        fn scaling_invariance(g in prop::collection::vec(1e-3f64..10.0, 1..30), n in 1usize..10, c in 0.01f64..100.0, seed in any::<u64>()) {
            let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
            let a = sample_explore(&g, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = sample_explore(&scaled, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            // exponential keys only depend on weight ratios up to rounding
            let overlap = a.iter().filter(|i| b.contains(i)).count();
            prop_assert!(overlap + 1 >= a.len());
            let va: Vec<(GroupId, f64)> = g.iter().map(|&v| (GroupId(0), v)).collect();
            let vb: Vec<(GroupId, f64)> = scaled.iter().map(|&v| (GroupId(0), v)).collect();
            let (sa, sb) = (sigma_from_values(&va).unwrap().sigma, sigma_from_values(&vb).unwrap().sigma);
            prop_assert!((sa - sb).abs() <= 1e-9 * sa.max(1e-12));
        }

        #[test]
        fn budget_keeps_worst_case_fdr_below_alpha(
            n_exploit in 1usize..5000,
            alpha in 0.01f64..0.99,
            frac in 0.0f64..1.0,
            eps_frac in 0.0f64..1.0,
        ) {
            let alpha_exploit = alpha * frac;
            let epsilon = (alpha - alpha_exploit) * eps_frac;
            let n_explore = explore_budget(n_exploit, alpha, alpha_exploit, epsilon).count;
            // exploited FP at most (α_exploit + ε) n_exploit, every explored sample FP
            let worst_fp = (alpha_exploit + epsilon) * n_exploit as f64 + n_explore as f64;
            let total = (n_exploit + n_explore) as f64;
            prop_assert!(worst_fp / total <= alpha + 1e-9, "fdr {} > {}", worst_fp / total, alpha);
        }
    }
}
