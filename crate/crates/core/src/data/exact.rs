//! Finite domains with a known distribution, used to check the loop against
//! exhaustive computation.
//!
//! Every point is a one-hot feature vector with its own group and
//! `Pr[Y = 1 | point]`; classifiers are identified with the set (mask) of
//! points they accept.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::HypothesisFamily;
use crate::types::{GroupId, LinearClassifier, Sample, UtilityCoefficients};

/// Largest domain whose full subset family is enumerated.
pub const MAX_SUBSET_DOMAIN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Every subset of points.
    AllSubsets,
    /// Per group, accept the first `j` points of that group in key order.
    GroupThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactDomainSpec {
    /// Group index of each point.
    pub groups: Vec<usize>,
    /// `Pr[Y = 1 | point]`.
    pub label_probs: Vec<f64>,
    /// `μ(point)`; must sum to 1.
    pub mass: Vec<f64>,
    pub family: FamilyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPoint {
    pub key: usize,
    pub group: GroupId,
    pub mass: f64,
    pub p_pos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDomain {
    pub points: Vec<DomainPoint>,
    pub num_groups: usize,
    pub family: HypothesisFamily,
}

pub fn make_exact_domain(spec: &ExactDomainSpec) -> Result<ExactDomain> {
    let n = spec.groups.len();
    if n == 0 {
        return Err(Error::Config("exact domain needs at least one point".into()));
    }
    if spec.label_probs.len() != n || spec.mass.len() != n {
        return Err(Error::Config("groups, label_probs and mass must have equal lengths".into()));
    }
    if let Some(p) = spec.label_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Probability(format!("label probability {p} not in [0,1]")));
    }
    if let Some(m) = spec.mass.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
        return Err(Error::Probability(format!("mass {m} is negative")));
    }
    let total: f64 = spec.mass.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Probability(format!("mass sums to {total}, not 1")));
    }
    let num_groups = spec.groups.iter().max().unwrap() + 1;
    let points: Vec<DomainPoint> = (0..n)
        .map(|k| DomainPoint { key: k, group: GroupId(spec.groups[k]), mass: spec.mass[k], p_pos: spec.label_probs[k] })
        .collect();
    let family = match spec.family {
        FamilyKind::AllSubsets => {
            if n > MAX_SUBSET_DOMAIN {
                return Err(Error::Config(format!("subset family limited to {MAX_SUBSET_DOMAIN} points, got {n}")));
            }
            HypothesisFamily::AllSubsets { num_points: n }
        }
        FamilyKind::GroupThresholds => {
            if n > 64 {
                return Err(Error::Config(format!("threshold family limited to 64 points, got {n}")));
            }
            HypothesisFamily::Masks { num_points: n, masks: group_threshold_masks(&points, num_groups) }
        }
    };
    Ok(ExactDomain { points, num_groups, family })
}

fn group_threshold_masks(points: &[DomainPoint], num_groups: usize) -> Vec<u64> {
    let mut masks = vec![0u64];
    for g in 0..num_groups {
        let keys: Vec<usize> = points.iter().filter(|p| p.group.index() == g).map(|p| p.key).collect();
        let prefixes: Vec<u64> = (0..=keys.len()).map(|j| keys[..j].iter().fold(0, |m, &k| m | 1 << k)).collect();
        masks = masks.iter().flat_map(|&m| prefixes.iter().map(move |&p| m | p)).collect();
    }
    masks.sort_unstable();
    masks
}

impl ExactDomain {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Unlabeled sample for point `key`.
    pub fn sample_of(&self, key: usize) -> Sample {
        let n = self.num_points();
        let x = (0..n).map(|j| if j == key { 1.0 } else { 0.0 }).collect();
        Sample::new(x, self.points[key].group).with_key(key)
    }

    pub fn point_samples(&self) -> Vec<Sample> {
        (0..self.num_points()).map(|k| self.sample_of(k)).collect()
    }

    /// `μ(point, label)`.
    pub fn mu(&self, key: usize, label: bool) -> f64 {
        let p = &self.points[key];
        p.mass * if label { p.p_pos } else { 1.0 - p.p_pos }
    }

    /// `n` i.i.d. labeled draws from `μ`.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Sample> {
        let dist = WeightedIndex::new(self.points.iter().map(|p| p.mass)).expect("mass sums to 1");
        (0..n)
            .map(|_| {
                let k = dist.sample(rng);
                let y = rng.gen_bool(self.points[k].p_pos);
                self.sample_of(k).with_label(y)
            })
            .collect()
    }

    /// Every mask of the hypothesis family.
    pub fn masks(&self) -> Vec<u64> {
        match &self.family {
            HypothesisFamily::AllSubsets { num_points } => (0..1u64 << num_points).collect(),
            HypothesisFamily::Masks { masks, .. } => masks.clone(),
        }
    }

    /// The set of points `classifier` accepts.
    pub fn mask_of(&self, classifier: &LinearClassifier) -> Result<u64> {
        let mut m = 0;
        for k in 0..self.num_points() {
            if classifier.predict(&self.sample_of(k))? {
                m |= 1 << k;
            }
        }
        Ok(m)
    }

    /// `E_μ[γ payoff]` conditional on the points selected by `scope`;
    /// `None` when they carry no mass.
    pub fn utility_where(&self, mask: u64, gamma: &UtilityCoefficients, scope: impl Fn(&DomainPoint) -> bool) -> Option<f64> {
        let (mut total, mut mass) = (0.0, 0.0);
        for p in self.points.iter().filter(|p| scope(p)) {
            let accept = mask >> p.key & 1 == 1;
            total += p.mass * (p.p_pos * gamma.payoff(accept, true) + (1.0 - p.p_pos) * gamma.payoff(accept, false));
            mass += p.mass;
        }
        (mass > 0.0).then(|| total / mass)
    }

    pub fn utility(&self, mask: u64, gamma: &UtilityCoefficients) -> f64 {
        self.utility_where(mask, gamma, |_| true).unwrap_or(0.0)
    }

    pub fn group_utility(&self, mask: u64, gamma: &UtilityCoefficients, group: GroupId) -> Option<f64> {
        self.utility_where(mask, gamma, |p| p.group == group)
    }

    /// `Pr_μ[Y = 0 | f = 1]`; `None` when the accepted set has no mass.
    pub fn fdr(&self, mask: u64) -> Option<f64> {
        let (mut acc, mut neg) = (0.0, 0.0);
        for p in self.points.iter().filter(|p| mask >> p.key & 1 == 1) {
            acc += p.mass;
            neg += p.mass * (1.0 - p.p_pos);
        }
        (acc > 0.0).then(|| neg / acc)
    }

    pub fn selection_rate(&self, mask: u64) -> f64 {
        self.points.iter().filter(|p| mask >> p.key & 1 == 1).map(|p| p.mass).sum()
    }

    /// Points with `μ ≤ ε / |D|`.
    pub fn low_mass(&self, epsilon: f64) -> Vec<bool> {
        let th = epsilon / self.num_points() as f64;
        self.points.iter().map(|p| p.mass <= th).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(groups: Vec<usize>, probs: Vec<f64>, family: FamilyKind) -> ExactDomainSpec {
        let n = groups.len();
        ExactDomainSpec { groups, label_probs: probs, mass: vec![1.0 / n as f64; n], family }
    }

    #[test]
    fn deterministic_domain() {
        let d = make_exact_domain(&spec(vec![0; 4], vec![1.0, 1.0, 0.0, 0.0], FamilyKind::AllSubsets)).unwrap();
        assert_eq!(d.fdr(0b0011), Some(0.0));
        assert_eq!(d.fdr(0b0100), Some(1.0));
        assert_eq!(d.fdr(0), None);
        assert_eq!(d.utility(0b0011, &UtilityCoefficients::accuracy()), 1.0);
        assert_eq!(d.mu(2, true), 0.0);
    }

    #[test]
    fn sixteen_points_enumerate_all_subsets() {
        let d = make_exact_domain(&spec(vec![0; 16], vec![0.5; 16], FamilyKind::AllSubsets)).unwrap();
        assert_eq!(d.masks().len(), 1 << 16);
        assert!(make_exact_domain(&spec(vec![0; 17], vec![0.5; 17], FamilyKind::AllSubsets)).is_err());
    }

    #[test]
    fn threshold_family_is_prefix_product() {
        let d = make_exact_domain(&spec(vec![0, 0, 1, 1, 1], vec![0.5; 5], FamilyKind::GroupThresholds)).unwrap();
        let m = d.masks();
        assert_eq!(m.len(), 3 * 4);
        assert!(m.contains(&0b00_011));
        assert!(m.contains(&0b11_101));
        assert!(!m.contains(&0b00_010));
    }

    #[test]
    fn low_mass_flag() {
        let mut s = spec(vec![0; 4], vec![0.5; 4], FamilyKind::AllSubsets);
        s.mass = vec![0.4999, 0.5, 0.0001, 0.0];
        let d = make_exact_domain(&s).unwrap();
        assert_eq!(d.low_mass(0.001), vec![false, false, true, true]);
    }

    #[test]
    fn invalid_inputs() {
        let mut s = spec(vec![0; 2], vec![0.5, 1.5], FamilyKind::AllSubsets);
        assert!(matches!(make_exact_domain(&s), Err(Error::Probability(_))));
        s.label_probs = vec![0.5, 0.5];
        s.mass = vec![0.5, 0.6];
        assert!(matches!(make_exact_domain(&s), Err(Error::Probability(_))));
    }

    #[test]
    fn draws_follow_mass_and_labels() {
        let mut s = spec(vec![0, 1], vec![0.9, 0.2], FamilyKind::AllSubsets);
        s.mass = vec![0.25, 0.75];
        let d = make_exact_domain(&s).unwrap();
        let xs = d.draw(40_000, &mut ChaCha8Rng::seed_from_u64(3));
        let n1 = xs.iter().filter(|x| x.key == Some(1)).count() as f64 / 40_000.0;
        assert!((n1 - 0.75).abs() < 0.01);
        let pos0 = xs.iter().filter(|x| x.key == Some(0)).map(|x| x.label().unwrap() as u8 as f64).sum::<f64>()
            / xs.iter().filter(|x| x.key == Some(0)).count() as f64;
        assert!((pos0 - 0.9).abs() < 0.02);
    }

    #[test]
    fn mask_of_cell_classifier_round_trips() {
        let d = make_exact_domain(&spec(vec![0; 6], vec![0.5; 6], FamilyKind::AllSubsets)).unwrap();
        for m in [0u64, 0b101101, 0b111111] {
            assert_eq!(d.mask_of(&LinearClassifier::from_cell_mask(m, 6)).unwrap(), m);
        }
    }
}
