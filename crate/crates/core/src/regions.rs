//! Exploit/explore partition by accumulated exploration mass.
//!
//! A point `(x,z)` belongs to `Exploit_t` once `w_t(x,z) = Σ_{i<t} g_i(x,z) > τ`,
//! where `g_i` is the exploration strategy evaluated with the classifier and
//! group proportions of iteration `i`. The mass only grows, so points never
//! leave the exploit region.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploration::{ExplorationStrategy, GroupProportions};
use crate::types::{IterationBatch, LinearClassifier, Sample};

/// Everything needed to re-evaluate one iteration's `g` for any sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySnapshot {
    pub strategy: ExplorationStrategy,
    pub group_props: GroupProportions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HistoryEntry {
    classifier: LinearClassifier,
    snapshot: StrategySnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionState {
    tau: f64,
    history: Vec<HistoryEntry>,
    /// Discrete mode: accumulated mass per exact-domain point, plus the
    /// representative sample used to update it.
    cache: Option<HashMap<usize, (Sample, f64)>>,
}

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VersionedState {
    version: u32,
    state: RegionState,
}

impl RegionState {
    /// Empty state: `Exploit_1 = ∅`.
    pub fn new(tau: f64) -> Self {
        RegionState { tau, history: Vec::new(), cache: None }
    }

    /// Discrete mode over the points of a finite domain. Weights of keyed
    /// samples are read from a per-point cache.
    pub fn discrete(tau: f64, points: &[Sample]) -> Self {
        let cache = points
            .iter()
            .filter_map(|p| p.key.map(|k| (k, (p.clone(), 0.0))))
            .collect();
        RegionState { tau, history: Vec::new(), cache: Some(cache) }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of completed iterations recorded.
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    fn functional_weight(&self, sample: &Sample) -> f64 {
        self.history
            .iter()
            .map(|h| {
                h.snapshot
                    .strategy
                    .evaluate_sample(&h.classifier, sample, &h.snapshot.group_props)
                    .unwrap_or(crate::exploration::G_FLOOR)
            })
            .sum()
    }

    /// `w(x,z)`: exploration mass accumulated over recorded iterations.
    pub fn weight_of(&self, sample: &Sample) -> f64 {
        if let (Some(cache), Some(k)) = (&self.cache, sample.key) {
            if let Some((_, w)) = cache.get(&k) {
                return *w;
            }
        }
        self.functional_weight(sample)
    }

    pub fn in_exploit(&self, sample: &Sample) -> bool {
        self.weight_of(sample) > self.tau
    }

    /// Indices of `batch` in the exploit region and in the explore region.
    pub fn partition(&self, batch: &IterationBatch) -> (Vec<usize>, Vec<usize>) {
        self.partition_samples(batch.samples())
    }

    pub fn partition_samples(&self, samples: &[Sample]) -> (Vec<usize>, Vec<usize>) {
        (0..samples.len()).partition(|&i| self.in_exploit(&samples[i]))
    }

    /// Records iteration `t`'s classifier and strategy snapshot. Must be
    /// called exactly once per iteration, in order.
    pub fn advance(
        &mut self,
        t: usize,
        classifier: LinearClassifier,
        snapshot: StrategySnapshot,
    ) -> Result<()> {
        if t != self.history.len() + 1 {
            return Err(Error::Sequence(format!(
                "region advance for iteration {t}, expected {}",
                self.history.len() + 1
            )));
        }
        if let Some(cache) = &mut self.cache {
            for (sample, w) in cache.values_mut() {
                *w += snapshot
                    .strategy
                    .evaluate_sample(&classifier, sample, &snapshot.group_props)
                    .unwrap_or(crate::exploration::G_FLOOR);
            }
        }
        self.history.push(HistoryEntry { classifier, snapshot });
        Ok(())
    }

    /// Versioned JSON checkpoint. Floats round-trip exactly.
    pub fn to_snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string(&VersionedState { version: SNAPSHOT_VERSION, state: self.clone() })?)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let v: VersionedState = serde_json::from_str(text)?;
        if v.version != SNAPSHOT_VERSION {
            return Err(Error::Data(format!("unsupported region snapshot version {}", v.version)));
        }
        Ok(v.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AffineParams, GroupId, StrategyKind};
    use proptest::prelude::*;

    fn snap(kind: StrategyKind) -> StrategySnapshot {
        StrategySnapshot { strategy: ExplorationStrategy::new(kind, 0.0), group_props: Default::default() }
    }

    /// Classifier with constant score `s` on 1-D features.
    fn constant_score(s: f64) -> LinearClassifier {
        let m = (s / (1.0 - s)).ln();
        LinearClassifier::shared(AffineParams { weights: vec![0.0], intercept: m }, 0.5)
    }

    fn x(v: f64) -> Sample {
        Sample::new(vec![v], GroupId(0))
    }

    #[test]
    fn empty_history_has_zero_weight() {
        let r = RegionState::new(0.5);
        assert_eq!(r.weight_of(&x(1.0)), 0.0);
        assert!(!r.in_exploit(&x(1.0)));
    }

    #[test]
    fn uniform_enters_after_one_iteration() {
        let mut r = RegionState::new(0.5);
        r.advance(1, constant_score(0.3), snap(StrategyKind::Uniform)).unwrap();
        assert!(r.in_exploit(&x(5.0)));
    }

    #[test]
    fn clf_mass_accumulates_to_tau() {
        let mut r = RegionState::new(0.5);
        let s = x(0.0);
        for t in 1..=3 {
            assert!(!r.in_exploit(&s), "in exploit too early at t={t}");
            r.advance(t, constant_score(0.2), snap(StrategyKind::Clf)).unwrap();
        }
        // w_4 = 0.6 > 0.5 after three iterations; w_3 = 0.4 kept it out at t = 3
        approx::assert_abs_diff_eq!(r.weight_of(&s), 0.6, epsilon = 1e-12);
        assert!(r.in_exploit(&s));
    }

    #[test]
    fn first_iteration_is_all_explore() {
        let r = RegionState::new(0.5);
        let batch = IterationBatch::from_labeled(1, vec![x(0.0).with_label(true), x(1.0).with_label(false)]).unwrap();
        let (exploit, explore) = r.partition(&batch);
        assert!(exploit.is_empty());
        assert_eq!(explore, vec![0, 1]);
    }

    #[test]
    fn tiny_tau_admits_any_mass() {
        let mut r = RegionState::new(f64::MIN_POSITIVE);
        r.advance(1, constant_score(0.5), snap(StrategyKind::Clf)).unwrap();
        assert!(r.in_exploit(&x(3.0)));
    }

    #[test]
    fn two_point_split_matches_hand_computation() {
        // f scores: point a 0.3 every iteration; point b from a feature-driven classifier.
        let c = LinearClassifier::shared(AffineParams { weights: vec![1.0], intercept: 0.0 }, 0.5);
        let mut r = RegionState::new(0.5);
        r.advance(1, c.clone(), snap(StrategyKind::Clf)).unwrap();
        // a: logistic(-1) = 0.2689 ; b: logistic(1) = 0.7311
        let a = x(-1.0);
        let b = x(1.0);
        let batch = IterationBatch::from_labeled(2, vec![a.clone().with_label(true), b.clone().with_label(true)]).unwrap();
        assert_eq!(r.partition(&batch), (vec![1], vec![0]));
        r.advance(2, c, snap(StrategyKind::Clf)).unwrap();
        // a: 0.5379 > 0.5
        assert_eq!(r.partition(&batch), (vec![0, 1], vec![]));
    }

    #[test]
    fn double_advance_is_rejected() {
        let mut r = RegionState::new(0.5);
        r.advance(1, constant_score(0.5), snap(StrategyKind::Uniform)).unwrap();
        assert!(matches!(
            r.advance(1, constant_score(0.5), snap(StrategyKind::Uniform)),
            Err(Error::Sequence(_))
        ));
    }

    #[test]
    fn uniform_on_eight_points_covers_domain() {
        let points: Vec<Sample> = (0..8)
            .map(|i| {
                let mut f = vec![0.0; 8];
                f[i] = 1.0;
                Sample::new(f, GroupId(i / 4)).with_key(i)
            })
            .collect();
        let mut r = RegionState::discrete(0.5, &points);
        let c = LinearClassifier::from_cell_mask(0b1, 8);
        for t in 1..=12 {
            if t >= 8 {
                assert!(points.iter().all(|p| r.in_exploit(p)), "t={t}");
            }
            r.advance(t, c.clone(), snap(StrategyKind::Uniform)).unwrap();
        }
    }

    #[test]
    fn discrete_cache_matches_functional_weight() {
        let points: Vec<Sample> = (0..4)
            .map(|i| {
                let mut f = vec![0.0; 4];
                f[i] = 1.0;
                Sample::new(f, GroupId(0)).with_key(i)
            })
            .collect();
        let mut r = RegionState::discrete(0.5, &points);
        for t in 1..=5 {
            let c = LinearClassifier::from_cell_mask(t as u64, 4);
            r.advance(t, c, snap(StrategyKind::Clf)).unwrap();
        }
        for p in &points {
            let mut unkeyed = p.clone();
            unkeyed.key = None;
            assert!((r.weight_of(p) - r.weight_of(&unkeyed)).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let mut r = RegionState::new(0.5);
        r.advance(1, constant_score(0.123456789), snap(StrategyKind::Clf)).unwrap();
        let mut props = GroupProportions::new();
        props.insert(GroupId(0), 1.0 / 3.0);
        r.advance(
            2,
            constant_score(0.987654321),
            StrategySnapshot { strategy: ExplorationStrategy::new(StrategyKind::Fair, 0.1), group_props: props },
        )
        .unwrap();
        let text = r.to_snapshot().unwrap();
        let back = RegionState::from_snapshot(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.weight_of(&x(0.7)).to_bits(), r.weight_of(&x(0.7)).to_bits());
    }

    proptest! {
        #[test]
        fn weight_is_monotone_and_increments_by_g(scores in prop::collection::vec(0.001f64..0.999, 1..12), v in -3.0f64..3.0) {
            let mut r = RegionState::new(0.5);
            let s = x(v);
            let mut prev = 0.0;
            let mut was_exploit = false;
            for (i, &sc) in scores.iter().enumerate() {
                let c = constant_score(sc);
                let g = ExplorationStrategy::new(StrategyKind::Clf, 0.0).evaluate_sample(&c, &s, &Default::default()).unwrap();
                r.advance(i + 1, c, snap(StrategyKind::Clf)).unwrap();
                let w = r.weight_of(&s);
                prop_assert!((w - prev - g).abs() < 1e-12);
                prop_assert!(w >= prev);
                if was_exploit { prop_assert!(r.in_exploit(&s)); }
                was_exploit = r.in_exploit(&s);
                prev = w;
            }
        }

        #[test]
        fn partition_is_disjoint_cover(vals in prop::collection::vec(-3.0f64..3.0, 0..30), sc in 0.01f64..0.99) {
            let mut r = RegionState::new(0.5);
            let c = LinearClassifier::shared(AffineParams { weights: vec![1.0], intercept: sc }, 0.5);
            r.advance(1, c, snap(StrategyKind::Clf)).unwrap();
            let samples: Vec<Sample> = vals.iter().map(|&v| x(v)).collect();
            let (a, b) = r.partition_samples(&samples);
            prop_assert_eq!(a.len() + b.len(), samples.len());
            prop_assert!(a.iter().all(|i| !b.contains(i)));
        }

        #[test]
        fn uniform_leaves_no_explore_after_first_iteration(vals in prop::collection::vec(-3.0f64..3.0, 1..30), tau in 0.01f64..0.999) {
            let mut r = RegionState::new(tau);
            r.advance(1, constant_score(0.5), snap(StrategyKind::Uniform)).unwrap();
            let samples: Vec<Sample> = vals.iter().map(|&v| x(v)).collect();
            prop_assert!(r.partition_samples(&samples).1.is_empty());
        }
    }
}
