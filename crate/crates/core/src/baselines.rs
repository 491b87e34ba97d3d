//! Comparison policies: an offline-optimal classifier trained with full
//! labels, an exploit-only fair classifier retrained on its own feedback, and
//! import of externally produced metric tables.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{decision_report, run_experiment, EngineConfig, EngineMode, ExperimentResult, IterationReport, RepetitionSetup};
use crate::error::{Error, Result};
use crate::learner::{Learner, ReweightedPool, SolverOptions, TrainingProblem};
use crate::types::{IterationBatch, LinearClassifier, Sample, UtilityCoefficients};

/// Maximizes utility under the `α`-FDR constraint on a fully labeled `S_0`
/// with uniform weights. Labels outside `s0` are never read.
pub fn train_opt_offline(
    s0: &[Sample],
    gamma: UtilityCoefficients,
    alpha: f64,
    num_groups: usize,
    learner: &Learner,
    options: SolverOptions,
) -> Result<LinearClassifier> {
    if s0.iter().any(|s| s.label().is_none()) {
        return Err(Error::Data("offline-optimal training needs a fully labeled pool".into()));
    }
    let mut problem = TrainingProblem::new(ReweightedPool::uniform(s0), gamma, num_groups);
    problem.alpha_exploit = alpha;
    problem.options = options;
    learner.train(&problem)
}

/// Applies a fixed classifier to every sample of every batch.
pub fn run_opt_offline(
    config: &EngineConfig,
    classifier: &LinearClassifier,
    batches: &[IterationBatch],
) -> Result<Vec<IterationReport>> {
    batches
        .iter()
        .map(|b| {
            let mut accepted = Vec::new();
            for (i, s) in b.samples().iter().enumerate() {
                if classifier.predict(s)? {
                    accepted.push(i);
                }
            }
            Ok(decision_report(config, b, &accepted))
        })
        .collect()
}

/// The engine with its explore budget forced to zero and every sample
/// treated as exploit, so the labeled pool grows only through its own
/// positive predictions. Requires a fairness bound.
pub fn fair_clf_config(config: &EngineConfig) -> Result<EngineConfig> {
    if config.algorithm.exploit_fairness.is_none() {
        return Err(Error::Config("fair-clf baseline needs algorithm.exploit_fairness".into()));
    }
    Ok(EngineConfig { mode: EngineMode::ExploitOnly, ..config.clone() })
}

pub fn run_fair_clf<F>(config: &EngineConfig, repetitions: usize, seed: u64, make: F) -> Result<ExperimentResult>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<RepetitionSetup> + Sync,
{
    run_experiment(&fair_clf_config(config)?, repetitions, seed, make)
}

/// One row of an externally produced per-iteration metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportedRow {
    pub t: usize,
    pub revenue: f64,
    pub fdr: Option<f64>,
    pub stat_rate: f64,
    pub tpr_disparity: f64,
}

pub const IMPORT_COLUMNS: [&str; 5] = ["t", "revenue", "fdr", "stat_rate", "tpr_disparity"];

/// Reads a CSV with columns `t, revenue, fdr, stat_rate, tpr_disparity`
/// (extra columns ignored). An empty `fdr` cell means undefined.
pub fn read_imported(path: &Path) -> Result<Vec<ImportedRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx: Vec<usize> = IMPORT_COLUMNS
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| Error::Data(format!("{}: missing column {c:?}", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            let raw = cell(k);
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Data(format!("{} row {}: {} = {raw:?} is not a number", path.display(), line + 2, IMPORT_COLUMNS[k]))
            })
        };
        let t = cell(0)
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("{} row {}: t = {:?} is not an iteration", path.display(), line + 2, cell(0))))?;
        let fdr = if cell(2).is_empty() || cell(2).eq_ignore_ascii_case("nan") { None } else { Some(num(2)?) };
        rows.push(ImportedRow { t, revenue: num(1)?, fdr, stat_rate: num(3)?, tpr_disparity: num(4)? });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AlgorithmConfig, GroupId};
    use std::io::Write;

    #[test]
    fn separable_pool_at_alpha_one_is_perfect() {
        let s0: Vec<Sample> = (0..100)
            .map(|i| {
                let x = i as f64 / 50.0 - 1.0;
                Sample::new(vec![x], GroupId(0)).with_label(x > 0.1)
            })
            .collect();
        let f = train_opt_offline(&s0, UtilityCoefficients::accuracy(), 1.0, 1, &Learner::Logistic, SolverOptions::default())
            .unwrap();
        for s in &s0 {
            assert_eq!(f.predict(s).unwrap(), s.label().unwrap());
        }
    }

    #[test]
    fn unlabeled_pool_is_rejected() {
        let s0 = vec![Sample::new(vec![0.0], GroupId(0))];
        assert!(train_opt_offline(&s0, UtilityCoefficients::accuracy(), 0.1, 1, &Learner::Logistic, SolverOptions::default())
            .is_err());
    }

    #[test]
    fn fair_clf_requires_bound() {
        let cfg = EngineConfig::new(AlgorithmConfig::default(), UtilityCoefficients::accuracy(), 2);
        assert!(fair_clf_config(&cfg).is_err());
        let mut a = AlgorithmConfig::default();
        a.exploit_fairness = Some(0.1);
        let cfg = fair_clf_config(&EngineConfig::new(a, UtilityCoefficients::accuracy(), 2)).unwrap();
        assert_eq!(cfg.mode, EngineMode::ExploitOnly);
    }

    #[test]
    fn imported_csv_round_trip_and_validation() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "t,revenue,fdr,stat_rate,tpr_disparity,extra\n1,10.5,0.1,0.02,0.03,x\n2,11,,0.01,0.02,y").unwrap();
        let rows = read_imported(f.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].fdr, None);
        assert_eq!(rows[0].revenue, 10.5);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "t,revenue,stat_rate\n1,2,3").unwrap();
        assert!(read_imported(bad.path()).unwrap_err().to_string().contains("fdr"));

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "t,revenue,fdr,stat_rate,tpr_disparity\n1,abc,0.1,0,0").unwrap();
        assert!(read_imported(bad.path()).is_err());
    }
}
