//! The `run`, `baselines` and `verify` subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use fdr_explore::baselines::{read_imported, run_fair_clf, run_opt_offline, train_opt_offline, ImportedRow};
use fdr_explore::data::{load_and_preprocess, make_stream, Dataset};
use fdr_explore::engine::{mean_se, repetition_rng, run_experiment, EngineConfig, ExperimentResult};
use fdr_explore::learner::{Learner, SolverOptions};
use fdr_explore::oracle::{self, fixtures};
use fdr_explore::protocol::dataset_setup;
use fdr_explore::report::{self, fmt_g, Variant};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, DataSource, ExperimentConfig, LoadedConfig};
use crate::CliError;

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct CommandOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads for repetitions; `None` uses every core.
    pub workers: Option<usize>,
}

struct Prepared {
    loaded: LoadedConfig,
    out: PathBuf,
    seed: u64,
}

fn prepare(opts: &CommandOptions) -> Result<Prepared, CliError> {
    let loaded = config::load(&opts.config)?;
    let out = opts
        .out
        .clone()
        .or_else(|| loaded.config.output_dir.clone())
        .ok_or_else(|| CliError::Config("output_dir: pass --out or set output_dir".into()))?;
    if opts.workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let seed = opts.seed.unwrap_or(loaded.config.algorithm.seed);
    Ok(Prepared { loaded, out, seed })
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Runtime(anyhow::anyhow!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(CliError::Runtime)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>) -> Result<(), CliError> {
    let res = (|| -> anyhow::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    res.with_context(|| format!("writing {}", path.display())).map_err(CliError::Runtime)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    library_version: &'a str,
    schema_version: u32,
    seed: u64,
    config_sha256: String,
    repetitions: usize,
    entries: Vec<String>,
    files: Vec<String>,
}

fn write_manifest(
    out: &Path,
    name: &str,
    command: &str,
    p: &Prepared,
    entries: Vec<String>,
    files: &[&str],
) -> Result<(), CliError> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        library_version: fdr_explore::VERSION,
        schema_version: report::SCHEMA_VERSION,
        seed: p.seed,
        config_sha256: hex::encode(Sha256::digest(&p.loaded.raw)),
        repetitions: p.loaded.config.repetitions,
        entries,
        files: files.iter().map(|s| s.to_string()).collect(),
    };
    write_file(&out.join(name), |w| {
        serde_json::to_writer_pretty(&mut *w, &m)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Loads or generates the dataset named by the configuration.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset, CliError> {
    match cfg.data_source()? {
        DataSource::Csv(spec) => load_and_preprocess(spec).map_err(CliError::from),
        DataSource::Synthetic(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.data_seed.unwrap_or(seed));
            Ok(s.scenario()?.generate(s.rows, &mut rng)?)
        }
    }
}

fn engine_config(cfg: &ExperimentConfig, algorithm: fdr_explore::AlgorithmConfig, num_groups: usize) -> Result<EngineConfig, CliError> {
    Ok(EngineConfig::new(algorithm, cfg.utility.coefficients()?, num_groups))
}

/// Runs every enabled variant on `dataset`. All variants share the
/// per-repetition data split.
pub fn run_variants(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Vec<(String, ExperimentResult)>, CliError> {
    let protocol = cfg.protocol()?;
    let mut out = Vec::new();
    for (name, exploit, explore) in cfg.variants.enabled() {
        let mut algorithm = cfg.variants.apply(&cfg.algorithm, exploit, explore);
        algorithm.seed = seed;
        let engine = engine_config(cfg, algorithm, dataset.num_groups)?;
        info!("variant {name}: {} repetitions", cfg.repetitions);
        let result = run_experiment(&engine, cfg.repetitions, seed, |_, rng| {
            dataset_setup(dataset, &protocol, engine.algorithm.tau, &engine.solver, rng)
        })?;
        out.push((name.to_string(), result));
    }
    Ok(out)
}

fn write_tables(out: &Path, prefix: &str, results: &[(String, ExperimentResult)], num_groups: usize) -> Result<Vec<u8>, CliError> {
    let variants: Vec<Variant> = results.iter().map(|(n, r)| Variant { name: n, result: r }).collect();
    write_file(&out.join(format!("{prefix}iterations.csv")), |w| Ok(report::write_iterations(w, &variants, num_groups)?))?;
    write_file(&out.join(format!("{prefix}summary_by_t.csv")), |w| Ok(report::write_summary_by_t(w, &variants)?))?;
    let mut summary = Vec::new();
    report::write_summary(&mut summary, &variants)?;
    Ok(summary)
}

/// `run`: the enabled algorithm variants, with per-iteration, summary and
/// long-format tables plus a manifest.
pub fn cmd_run(opts: &CommandOptions) -> Result<(), CliError> {
    let p = prepare(opts)?;
    let cfg = &p.loaded.config;
    cfg.protocol()?;
    if cfg.variants.enabled().is_empty() {
        return Err(CliError::Config("variants: every variant is disabled".into()));
    }
    let dataset = load_dataset(cfg, p.seed)?;
    let results = with_workers(opts.workers, || run_variants(cfg, &dataset, p.seed))??;
    create_out(&p.out)?;
    let summary = write_tables(&p.out, "", &results, dataset.num_groups)?;
    write_file(&p.out.join("summary.csv"), |w| Ok(w.write_all(&summary)?))?;
    let names = results.iter().map(|(n, _)| n.clone()).collect();
    write_manifest(&p.out, "manifest.json", "run", &p, names, &["iterations.csv", "summary.csv", "summary_by_t.csv"])?;
    println!("wrote {} variant(s) to {}", results.len(), p.out.display());
    Ok(())
}

/// Mean and standard error over the rows of an imported table, per metric.
pub fn imported_summary(name: &str, rows: &[ImportedRow]) -> Vec<[String; 5]> {
    let metrics: [(&str, Vec<f64>); 4] = [
        ("revenue", rows.iter().map(|r| r.revenue).collect()),
        ("fdr", rows.iter().filter_map(|r| r.fdr).collect()),
        ("stat_rate", rows.iter().map(|r| r.stat_rate).collect()),
        ("tpr_disparity", rows.iter().map(|r| r.tpr_disparity).collect()),
    ];
    metrics
        .into_iter()
        .map(|(m, v)| {
            let (mean, se) = mean_se(&v);
            [name.to_string(), m.to_string(), fmt_g(mean), fmt_g(se), v.len().to_string()]
        })
        .collect()
}

fn opt_offline(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<ExperimentResult, CliError> {
    let protocol = cfg.protocol()?;
    let mut algorithm = cfg.algorithm.clone();
    algorithm.seed = seed;
    let engine = engine_config(cfg, algorithm, dataset.num_groups)?;
    let runs = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = repetition_rng(seed, rep);
            let stream = make_stream(dataset, protocol.split, protocol.iterations, &mut rng)?;
            let options = SolverOptions { seed: rng.gen(), ..engine.solver.clone() };
            let f = train_opt_offline(&stream.s0, engine.gamma, engine.algorithm.alpha, dataset.num_groups, &Learner::Logistic, options)?;
            run_opt_offline(&engine, &f, &stream.batches)
        })
        .collect::<fdr_explore::Result<Vec<_>>>()?;
    Ok(ExperimentResult { runs })
}

fn fair_clf(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<ExperimentResult, CliError> {
    let protocol = cfg.protocol()?;
    let mut algorithm = cfg.variants.apply(&cfg.algorithm, true, false);
    algorithm.seed = seed;
    let engine = engine_config(cfg, algorithm, dataset.num_groups)?;
    Ok(run_fair_clf(&engine, cfg.repetitions, seed, |_, rng| {
        dataset_setup(dataset, &protocol, engine.algorithm.tau, &engine.solver, rng)
    })?)
}

/// `baselines`: opt-offline and fair-clf on the configured data, plus
/// imported external tables merged into the summary.
pub fn cmd_baselines(opts: &CommandOptions) -> Result<(), CliError> {
    let p = prepare(opts)?;
    let cfg = &p.loaded.config;
    let b = &cfg.baselines;
    let mut imports = Vec::new();
    for spec in &b.imports {
        let rows = read_imported(&spec.path).map_err(|e| CliError::Config(format!("baselines.imports {:?}: {e}", spec.name)))?;
        imports.push((spec.name.clone(), rows));
    }
    let dataset = if b.opt_offline || b.fair_clf { Some(load_dataset(cfg, p.seed)?) } else { None };
    let mut results = Vec::new();
    if let Some(d) = &dataset {
        cfg.protocol()?;
        if b.opt_offline {
            results.push(("opt_offline".to_string(), with_workers(opts.workers, || opt_offline(cfg, d, p.seed))??));
        }
        if b.fair_clf {
            results.push(("fair_clf".to_string(), with_workers(opts.workers, || fair_clf(cfg, d, p.seed))??));
        }
    }
    create_out(&p.out)?;
    let num_groups = dataset.as_ref().map(|d| d.num_groups).unwrap_or(2);
    let mut summary = write_tables(&p.out, "baselines_", &results, num_groups)?;
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut summary);
        for (name, rows) in &imports {
            for row in imported_summary(name, rows) {
                w.write_record(&row).map_err(|e| CliError::Runtime(e.into()))?;
            }
        }
        w.flush().map_err(|e| CliError::Runtime(e.into()))?;
    }
    write_file(&p.out.join("baselines_summary.csv"), |w| Ok(w.write_all(&summary)?))?;
    let mut names: Vec<String> = results.iter().map(|(n, _)| n.clone()).collect();
    names.extend(imports.iter().map(|(n, _)| n.clone()));
    write_manifest(
        &p.out,
        "baselines_manifest.json",
        "baselines",
        &p,
        names,
        &["baselines_iterations.csv", "baselines_summary.csv", "baselines_summary_by_t.csv"],
    )?;
    println!("wrote {} baseline(s) and {} import(s) to {}", results.len(), imports.len(), p.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CheckFile<T: Serialize> {
    check: String,
    passed: bool,
    report: T,
}

fn run_check(check: &str, settings: &oracle::VerificationConfig) -> fdr_explore::Result<(bool, serde_json::Value)> {
    let wrap = |passed: bool, report: serde_json::Value| Ok((passed, report));
    match check {
        "feasibility" => {
            let r = oracle::verify_feasibility(&fixtures::sixteen_point(), settings)?;
            wrap(r.passed, serde_json::to_value(&r)?)
        }
        "convergence" => {
            let r = oracle::verify_convergence(&fixtures::eight_point(), settings)?;
            wrap(r.passed, serde_json::to_value(&r)?)
        }
        "monotonicity" => {
            let r = oracle::verify_monotonicity(&fixtures::eight_point(), settings)?;
            wrap(r.passed, serde_json::to_value(&r)?)
        }
        "reweighting" => {
            let r = oracle::verify_reweighting(&fixtures::sixteen_point(), settings)?;
            wrap(r.passed, serde_json::to_value(&r)?)
        }
        other => Err(fdr_explore::Error::Config(format!("unknown check {other:?}"))),
    }
}

/// `verify`: the requested brute-force checks on the shipped fixtures, one
/// JSON report per check. A failed check exits with a runtime failure after
/// every report has been written.
pub fn cmd_verify(opts: &CommandOptions) -> Result<(), CliError> {
    let p = prepare(opts)?;
    let cfg = &p.loaded.config;
    let unknown = cfg.unknown_checks();
    if !unknown.is_empty() {
        return Err(CliError::Config(format!(
            "verify.checks: unknown check(s) {unknown:?}; known: {:?}",
            config::CHECKS
        )));
    }
    if cfg.verify.checks.is_empty() {
        println!("no checks requested");
        return Ok(());
    }
    for check in &cfg.verify.checks {
        cfg.verify.settings(check, p.seed).validate().map_err(|e| CliError::Config(format!("verify: {e}")))?;
    }
    create_out(&p.out)?;
    let mut files = Vec::new();
    let mut failed = Vec::new();
    for check in &cfg.verify.checks {
        let settings = cfg.verify.settings(check, p.seed);
        let (passed, report) = with_workers(opts.workers, || run_check(check, &settings))??;
        let file = format!("verify_{check}.json");
        write_file(&p.out.join(&file), |w| {
            serde_json::to_writer_pretty(&mut *w, &CheckFile { check: check.clone(), passed, report })?;
            writeln!(w)?;
            Ok(())
        })?;
        println!("{} {check}", if passed { "PASS" } else { "FAIL" });
        if !passed {
            failed.push(check.clone());
        }
        files.push(file);
    }
    let refs: Vec<&str> = files.iter().map(String::as_str).collect();
    write_manifest(&p.out, "verify_manifest.json", "verify", &p, cfg.verify.checks.clone(), &refs)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow::anyhow!("failed checks: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imported_summary_rows() {
        let rows = vec![
            ImportedRow { t: 1, revenue: 10.0, fdr: Some(0.1), stat_rate: 0.0, tpr_disparity: 0.2 },
            ImportedRow { t: 2, revenue: 20.0, fdr: None, stat_rate: 0.0, tpr_disparity: 0.4 },
        ];
        let s = imported_summary("ext", &rows);
        assert_eq!(s[0], ["ext", "revenue", "15", "5", "2"].map(String::from));
        assert_eq!(s[1], ["ext", "fdr", "0.1", "0", "1"].map(String::from));
        assert_eq!(s[3][2], "0.3");
    }
}
