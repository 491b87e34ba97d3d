//! Splitting a dataset into the initial pool and the iteration batches, and
//! constructing a label-biased historical pool.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::types::{IterationBatch, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitMode {
    /// `T + 1` equal disjoint parts; the remainder rows are dropped.
    #[default]
    Partition,
    /// `S_0` is one `1/(T+1)` share; each batch draws `size` rows with
    /// replacement from the remaining rows.
    Bootstrap { size: usize },
}

#[derive(Debug, Clone)]
pub struct Stream {
    /// Fully labeled initial part (labels are a simulation-side privilege).
    pub s0: Vec<Sample>,
    pub batches: Vec<IterationBatch>,
}

pub fn make_stream<R: Rng + ?Sized>(dataset: &Dataset, mode: SplitMode, iterations: usize, rng: &mut R) -> Result<Stream> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let part = dataset.len() / (iterations + 1);
    if part == 0 {
        return Err(Error::Data(format!(
            "{} rows cannot be split into {} parts",
            dataset.len(),
            iterations + 1
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let s0: Vec<Sample> = order[..part].iter().map(|&i| dataset.samples[i].clone()).collect();
    let batches = match mode {
        SplitMode::Partition => (1..=iterations)
            .map(|t| {
                let rows = order[t * part..(t + 1) * part].iter().map(|&i| dataset.samples[i].clone()).collect();
                IterationBatch::from_labeled(t, rows)
            })
            .collect::<Result<_>>()?,
        SplitMode::Bootstrap { size } => {
            if size == 0 {
                return Err(Error::Config("bootstrap size must be positive".into()));
            }
            let rest = &order[part..];
            (1..=iterations)
                .map(|t| {
                    let rows = (0..size)
                        .map(|_| dataset.samples[rest[rng.gen_range(0..rest.len())]].clone())
                        .collect();
                    IterationBatch::from_labeled(t, rows)
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(Stream { s0, batches })
}

/// Splits a labeled `S_0` into a visible `L_0` holding `positive_share` of
/// the label-1 rows and `1 − positive_share` of the label-0 rows, and the
/// label-hidden rest `U_0`.
pub fn build_biased_initial<R: Rng + ?Sized>(
    s0: &[Sample],
    positive_share: f64,
    rng: &mut R,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(0.0..=1.0).contains(&positive_share) {
        return Err(Error::Probability(format!("positive_share {positive_share} not in [0,1]")));
    }
    let label = |s: &Sample| s.label().ok_or_else(|| Error::Data("initial pool sample without label".into()));
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in s0 {
        if label(s)? {
            pos.push(s.clone());
        } else {
            neg.push(s.clone());
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data("initial pool lacks one label class".into()));
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let k_pos = (positive_share * pos.len() as f64).round() as usize;
    let k_neg = ((1.0 - positive_share) * neg.len() as f64).round() as usize;
    let mut l0: Vec<Sample> = pos[..k_pos].iter().chain(&neg[..k_neg]).cloned().collect();
    let u0: Vec<Sample> = pos[k_pos..].iter().chain(&neg[k_neg..]).map(Sample::hidden).collect();
    l0.shuffle(rng);
    Ok((l0, u0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GroupId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(n: usize) -> Dataset {
        Dataset {
            samples: (0..n).map(|i| Sample::new(vec![i as f64], GroupId(i % 2)).with_label(i % 3 == 0)).collect(),
            scaling: vec![],
            num_groups: 2,
        }
    }

    #[test]
    fn partition_is_disjoint_and_drops_remainder() {
        let d = dataset(251);
        let s = make_stream(&d, SplitMode::Partition, 40, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.s0.len(), 6);
        assert!(s.batches.iter().all(|b| b.len() == 6));
        let mut seen: Vec<f64> = s.s0.iter().chain(s.batches.iter().flat_map(|b| b.samples())).map(|x| x.features[0]).collect();
        let total = seen.len();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), total);
        assert_eq!(total, 41 * 6);
        assert_eq!(s.batches[3].index(), 4);
    }

    #[test]
    fn bootstrap_batches_have_fixed_size() {
        let d = dataset(100);
        let s = make_stream(&d, SplitMode::Bootstrap { size: 500 }, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(s.batches.iter().all(|b| b.len() == 500));
    }

    #[test]
    fn same_seed_same_stream() {
        let d = dataset(90);
        let a = make_stream(&d, SplitMode::Partition, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_stream(&d, SplitMode::Partition, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.s0, b.s0);
        assert_eq!(a.batches, b.batches);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            make_stream(&dataset(3), SplitMode::Partition, 5, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn biased_initial_shares() {
        let s0: Vec<Sample> = (0..300).map(|i| Sample::new(vec![i as f64], GroupId(0)).with_label(i < 100)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l0, u0) = build_biased_initial(&s0, 0.9, &mut rng).unwrap();
        let lp = l0.iter().filter(|s| s.label() == Some(true)).count();
        let ln = l0.len() - lp;
        assert!((lp as i64 - 90).abs() <= 1);
        assert!((ln as i64 - 20).abs() <= 1);
        assert_eq!(l0.len() + u0.len(), 300);
        assert!(u0.iter().all(|s| s.label().is_none()));

        let (l0, u0) = build_biased_initial(&s0, 1.0, &mut rng).unwrap();
        assert_eq!(l0.len(), 100);
        assert_eq!(u0.len(), 200);
    }

    #[test]
    fn biased_initial_needs_both_labels() {
        let s0: Vec<Sample> = (0..5).map(|i| Sample::new(vec![i as f64], GroupId(0)).with_label(true)).collect();
        assert!(build_biased_initial(&s0, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
