//! The loop may only read the outcome of samples it decided to label.

use fdr_explore::baselines::fair_clf_config;
use fdr_explore::data::synthetic::adult_like;
use fdr_explore::engine::{EngineConfig, EngineState};
use fdr_explore::oracle::{budget_holds, worst_case_holds};
use fdr_explore::protocol::{dataset_setup, ProtocolConfig};
use fdr_explore::{AlgorithmConfig, Error, UtilityCoefficients};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> EngineConfig {
    EngineConfig::new(AlgorithmConfig::default(), UtilityCoefficients::revenue(500.0, 200.0).unwrap(), 2)
}

fn setup(seed: u64) -> fdr_explore::engine::RepetitionSetup {
    let d = adult_like().generate(6_300, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let p = ProtocolConfig { iterations: 20, ..Default::default() };
    dataset_setup(&d, &p, 0.5, &config().solver, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap()
}

#[test]
fn only_labeled_samples_are_revealed() {
    let cfg = config();
    let s = setup(1);
    let mut state = EngineState::new(s.f0, s.initial_labeled, &s.initial_pool, s.regions);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut explored_any = false;
    for mut batch in s.batches {
        let truth = batch.ground_truth().to_vec();
        let out = state.run_iteration(&cfg, &mut batch, &mut rng).unwrap();
        let mut log = batch.access_log().to_vec();
        log.sort_unstable();
        let before = log.len();
        log.dedup();
        assert_eq!(before, log.len(), "a label was read twice");
        assert_eq!(log, out.accepted, "revealed set differs from the labeled set");
        assert_eq!(out.labeled.len(), out.report.n_exploit + out.report.n_explore);
        for r in &out.labeled {
            let i = batch.samples().iter().position(|x| x.features == r.sample.features).unwrap();
            assert_eq!(r.sample.label(), Some(truth[i]));
            assert!(r.propensity > 0.0 && r.propensity <= 1.0);
        }
        assert!(out.labeled.iter().take(out.report.n_exploit).all(|r| r.propensity == 1.0));
        if out.report.t == 1 {
            assert!(log.is_empty(), "nothing is in the exploit region at t = 1");
        }
        assert!(budget_holds(&cfg.algorithm, &out.report));
        assert!(worst_case_holds(&cfg.algorithm, &out.report));
        explored_any |= out.report.n_explore > 0;
    }
    assert!(explored_any);
}

#[test]
fn exploit_only_mode_never_explores() {
    let mut alg = AlgorithmConfig::default();
    alg.exploit_fairness = Some(0.05);
    let cfg = fair_clf_config(&EngineConfig::new(alg, UtilityCoefficients::accuracy(), 2)).unwrap();
    let s = setup(2);
    let mut state = EngineState::new(s.f0, s.initial_labeled, &s.initial_pool, s.regions);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mut batch in s.batches.into_iter().take(6) {
        let out = state.run_iteration(&cfg, &mut batch, &mut rng).unwrap();
        assert_eq!(out.report.n_explore, 0);
        assert_eq!(batch.access_log().len(), out.report.n_exploit);
    }
}

#[test]
fn out_of_order_batch_is_rejected() {
    let cfg = config();
    let s = setup(4);
    let mut state = EngineState::new(s.f0, s.initial_labeled, &s.initial_pool, s.regions);
    let mut batches = s.batches;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = state.run_iteration(&cfg, &mut batches[1], &mut rng).unwrap_err();
    assert!(matches!(e, Error::Sequence(_)));
    assert!(batches[1].access_log().is_empty());
}
