use fdr_explore::data::{make_exact_domain, ExactDomainSpec, FamilyKind};
use fdr_explore::learner::{ReweightedPool, WeightedSample};
use fdr_explore::oracle::{brute_force_fopt, fixtures, pool_tv};
use fdr_explore::UtilityCoefficients;

/// Accuracy and FDR of a mask, recomputed from the point table.
fn direct(domain: &fdr_explore::data::ExactDomain, mask: u64) -> (f64, Option<f64>) {
    let (mut acc, mut pos, mut fp) = (0.0, 0.0, 0.0);
    for (k, p) in domain.points.iter().enumerate() {
        if mask >> k & 1 == 1 {
            acc += p.mass * p.p_pos;
            pos += p.mass;
            fp += p.mass * (1.0 - p.p_pos);
        } else {
            acc += p.mass * (1.0 - p.p_pos);
        }
    }
    (acc, (pos > 0.0).then(|| fp / pos))
}

#[test]
fn eight_point_optimum_is_the_constrained_one() {
    let f = fixtures::eight_point();
    let alpha = f.algorithm.alpha;
    let (mask, _, value) = brute_force_fopt(&f.domain, &UtilityCoefficients::accuracy(), alpha);
    // Keys 0..4 are group 0 (0.97, 0.9, 0.8, 0.15), 4..8 group 1 (0.92, 0.85, 0.52, 0.1).
    assert_eq!(mask, 0b0011_0111);
    let (acc, fdr) = direct(&f.domain, mask);
    assert!((acc - value).abs() < 1e-12);
    assert!((fdr.unwrap() - 0.56 / 5.0).abs() < 1e-12);
    // The unconstrained accuracy optimum also takes the 0.52 point and breaks the bound.
    let (acc_free, fdr_free) = direct(&f.domain, mask | 1 << 6);
    assert!(acc_free > acc);
    assert!(fdr_free.unwrap() > alpha);
}

#[test]
fn brute_force_beats_every_feasible_mask() {
    for f in fixtures::all() {
        let alpha = f.algorithm.alpha;
        let (best, _, value) = brute_force_fopt(&f.domain, &UtilityCoefficients::accuracy(), alpha);
        assert!(direct(&f.domain, best).1.map_or(true, |q| q <= alpha + 1e-12));
        let n = f.domain.num_points();
        for mask in 0..1u64 << n {
            let (acc, fdr) = direct(&f.domain, mask);
            if fdr.map_or(true, |q| q <= alpha) {
                assert!(acc <= value + 1e-12, "{}: mask {mask:b} beats the oracle", f.name);
            }
        }
    }
}

#[test]
fn tv_on_a_two_point_domain() {
    let spec = ExactDomainSpec { groups: vec![0, 1], label_probs: vec![0.8, 0.2], mass: vec![0.5, 0.5], family: FamilyKind::AllSubsets };
    let d = make_exact_domain(&spec).unwrap();
    let entry = |k: usize, y: bool, w: f64| WeightedSample { sample: d.sample_of(k).with_label(y), weight: w };
    let none = [false, false];

    let pool = ReweightedPool::from_entries(vec![entry(0, true, 1.0), entry(1, false, 1.0)]);
    // |0.5 − 0.4| + |0 − 0.1| + |0 − 0.1| + |0.5 − 0.4|, halved.
    assert!((pool_tv(&d, &pool, 0b11, &none, false).unwrap() - 0.2).abs() < 1e-12);
    // Restricted to point 0: empirical (1, 0) against (0.8, 0.2).
    assert!((pool_tv(&d, &pool, 0b01, &none, false).unwrap() - 0.2).abs() < 1e-12);

    let skewed = ReweightedPool::from_entries(vec![entry(0, true, 3.0), entry(1, false, 1.0)]);
    assert!((pool_tv(&d, &skewed, 0b11, &none, false).unwrap() - 0.35).abs() < 1e-12);
    assert!((pool_tv(&d, &skewed, 0b11, &none, true).unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(pool_tv(&d, &skewed, 0b11, &[true, true], false), None);
}
