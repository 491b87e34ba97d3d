//! The dataset experiment protocol: split a dataset into `S_0` and the
//! iteration batches, hide most negatives of `S_0` behind a biased historical
//! selection, and fit `f_0` to imitate that selection. Optionally one group's
//! positives are withheld from the history entirely.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_biased_initial, make_stream, Dataset, SplitMode};
use crate::engine::RepetitionSetup;
use crate::error::{Error, Result};
use crate::learner::{train_f0, LabeledRecord, SolverOptions};
use crate::regions::RegionState;
use crate::types::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub iterations: usize,
    pub split: SplitMode,
    /// Share of the label-1 rows of `S_0` that were historically labeled; the
    /// same share of label-0 rows is left unlabeled.
    pub positive_share: f64,
    /// Lower clamp on the `f_0` score used as the historical propensity of a
    /// labeled row of `L_0`.
    pub propensity_floor: f64,
    /// Group whose label-1 rows are all withheld from `L_0`.
    pub hidden_positive_group: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { iterations: 40, split: SplitMode::Partition, positive_share: 0.9, propensity_floor: 0.05, hidden_positive_group: None }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("protocol.iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_share) {
            return Err(Error::Config(format!("protocol.positive_share {} not in [0,1]", self.positive_share)));
        }
        if !(self.propensity_floor > 0.0 && self.propensity_floor <= 1.0) {
            return Err(Error::Config(format!("protocol.propensity_floor {} not in (0,1]", self.propensity_floor)));
        }
        Ok(())
    }
}

/// One repetition's data: fresh stream, biased `L_0`/`U_0`, and `f_0`
/// trained to separate them. `L_0` rows carry `max(f_0 score, floor)` as
/// their historical propensity.
pub fn dataset_setup<R: Rng + ?Sized>(
    dataset: &Dataset,
    protocol: &ProtocolConfig,
    tau: f64,
    options: &SolverOptions,
    rng: &mut R,
) -> Result<RepetitionSetup> {
    protocol.validate()?;
    let stream = make_stream(dataset, protocol.split, protocol.iterations, rng)?;
    let (mut l0, mut u0) = build_biased_initial(&stream.s0, protocol.positive_share, rng)?;
    if let Some(z) = protocol.hidden_positive_group {
        let (hide, keep): (Vec<Sample>, Vec<Sample>) =
            l0.into_iter().partition(|s| s.group.index() == z && s.label() == Some(true));
        l0 = keep;
        u0.extend(hide.iter().map(Sample::hidden));
    }
    let f0 = train_f0(&l0, &u0, &SolverOptions { seed: rng.gen(), ..options.clone() })?;
    let initial_labeled = l0
        .iter()
        .map(|s| Ok(LabeledRecord::new(s.clone(), 0, f0.score(s)?.max(protocol.propensity_floor))))
        .collect::<Result<_>>()?;
    let initial_pool: Vec<Sample> = l0.iter().map(Sample::hidden).chain(u0).collect();
    Ok(RepetitionSetup { f0, initial_labeled, initial_pool, batches: stream.batches, regions: RegionState::new(tau) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::adult_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn setup_shapes() {
        let d = adult_like().generate(4_100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let p = ProtocolConfig { iterations: 40, ..Default::default() };
        let s = dataset_setup(&d, &p, 0.5, &SolverOptions::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(s.batches.len(), 40);
        assert!(s.batches.iter().all(|b| b.len() == 100));
        assert_eq!(s.initial_pool.len(), 100);
        assert!(s.initial_pool.iter().all(|x| x.label().is_none()));
        assert!(s.initial_labeled.iter().all(|r| r.propensity >= 0.05 && r.propensity <= 1.0));
        let pos = s.initial_labeled.iter().filter(|r| r.label()).count();
        assert!(pos * 2 > s.initial_labeled.len());
    }

    #[test]
    fn hidden_group_positives_are_unlabeled() {
        let d = adult_like().generate(4_100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let p = ProtocolConfig { hidden_positive_group: Some(1), ..Default::default() };
        let s = dataset_setup(&d, &p, 0.5, &SolverOptions::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(s.initial_labeled.iter().all(|r| !(r.sample.group.index() == 1 && r.label())));
        assert!(s.initial_labeled.iter().any(|r| r.sample.group.index() == 0 && r.label()));
        assert_eq!(s.initial_pool.len(), 100);
    }

    #[test]
    fn rejects_bad_share() {
        let p = ProtocolConfig { positive_share: 1.5, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
