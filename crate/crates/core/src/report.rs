//! Result tables: per-iteration rows, per-variant summaries and a long-format
//! per-iteration summary for plotting. Floats are written with six
//! significant digits in `%g` style.

use std::io::Write;

use crate::engine::{mean_se, report_metrics, ExperimentResult, IterationReport};
use crate::error::Result;

/// Version of the column layout written by this module.
pub const SCHEMA_VERSION: u32 = 1;

/// `%g`-style formatting with six significant digits.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

/// A named experiment (one algorithm variant or baseline).
pub struct Variant<'a> {
    pub name: &'a str,
    pub result: &'a ExperimentResult,
}

pub fn iteration_header(num_groups: usize) -> Vec<String> {
    let mut h: Vec<String> = ["variant", "repetition", "t", "revenue", "fdr", "fdr_defined", "stat_rate", "tpr_disparity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=num_groups).map(|z| format!("tpr_group_{z}")));
    h.extend(["n_exploit", "n_explore", "infeasible_fallback"].iter().map(|s| s.to_string()));
    h
}

fn iteration_row(variant: &str, rep: usize, r: &IterationReport, num_groups: usize) -> Vec<String> {
    let mut row = vec![
        variant.to_string(),
        rep.to_string(),
        r.t.to_string(),
        fmt_g(r.revenue),
        opt(r.fdr),
        (r.fdr.is_some() as u8).to_string(),
        fmt_g(r.stat_rate),
        fmt_g(r.tpr_disparity),
    ];
    row.extend((0..num_groups).map(|z| opt(r.tpr_per_group.get(z).copied().flatten())));
    row.push(r.n_exploit.to_string());
    row.push(r.n_explore.to_string());
    row.push((r.infeasible_fallback as u8).to_string());
    row
}

/// One row per variant, repetition and iteration.
pub fn write_iterations<W: Write>(out: W, variants: &[Variant], num_groups: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(iteration_header(num_groups))?;
    for v in variants {
        for (rep, run) in v.result.runs.iter().enumerate() {
            for r in run {
                w.write_record(iteration_row(v.name, rep, r, num_groups))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-repetition averages over iterations for each metric, in metric order.
pub fn run_means(result: &ExperimentResult) -> Vec<(String, Vec<f64>)> {
    let Some(first) = result.runs.iter().find_map(|r| r.first()) else {
        return Vec::new();
    };
    let names: Vec<String> = report_metrics(first).into_iter().map(|(n, _)| n).collect();
    names
        .iter()
        .enumerate()
        .map(|(mi, name)| {
            let per_rep = result
                .runs
                .iter()
                .filter_map(|run| {
                    let vals: Vec<f64> = run.iter().filter_map(|r| report_metrics(r)[mi].1).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            (name.clone(), per_rep)
        })
        .collect()
}

/// Mean and standard error across repetitions of each run-averaged metric.
pub fn write_summary<W: Write>(out: W, variants: &[Variant]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "metric", "mean", "se", "n"])?;
    for v in variants {
        for (name, vals) in run_means(v.result) {
            let (m, se) = mean_se(&vals);
            w.write_record([v.name.to_string(), name, fmt_g(m), fmt_g(se), vals.len().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format: mean and standard error per variant, iteration and metric.
pub fn write_summary_by_t<W: Write>(out: W, variants: &[Variant]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "t", "metric", "mean", "se", "n"])?;
    for v in variants {
        for row in v.result.summarize() {
            w.write_record([v.name.to_string(), row.t.to_string(), row.metric, fmt_g(row.mean), fmt_g(row.se), row.n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::CellCounts;

    #[test]
    fn g_formatting() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.15, "0.15"),
            (74100.0, "74100"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (1.0 / 3.0, "0.333333"),
            (999999.5, "1e+06"),
            (f64::NAN, "nan"),
        ];
        for (x, s) in cases {
            assert_eq!(fmt_g(x), s, "{x}");
        }
    }

    fn report(t: usize, fdr: Option<f64>) -> IterationReport {
        IterationReport {
            t,
            revenue: 1500.0,
            utility: 0.75,
            counts: CellCounts::default(),
            fdr,
            stat_rate: 0.1,
            tpr_disparity: 0.05,
            tpr_per_group: vec![Some(0.8), None],
            exploit_set: 10,
            explore_set: 2,
            n_exploit: 7,
            n_explore: 1,
            budget: 1,
            alpha_exploit: 0.075,
            infeasible_fallback: t == 2,
        }
    }

    #[test]
    fn iterations_golden() {
        let res = ExperimentResult { runs: vec![vec![report(1, Some(0.125)), report(2, None)]] };
        let mut buf = Vec::new();
        write_iterations(&mut buf, &[Variant { name: "both", result: &res }], 2).unwrap();
        let expected = "variant,repetition,t,revenue,fdr,fdr_defined,stat_rate,tpr_disparity,tpr_group_1,tpr_group_2,n_exploit,n_explore,infeasible_fallback\n\
            both,0,1,1500,0.125,1,0.1,0.05,0.8,,7,1,0\n\
            both,0,2,1500,,0,0.1,0.05,0.8,,7,1,1\n";
        assert_eq!(String::from_utf8(buf).unwrap(), expected);
    }

    #[test]
    fn summary_golden() {
        let res = ExperimentResult {
            runs: vec![vec![report(1, Some(0.1)), report(2, Some(0.2))], vec![report(1, Some(0.3)), report(2, None)]],
        };
        let mut buf = Vec::new();
        write_summary(&mut buf, &[Variant { name: "v", result: &res }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "variant,metric,mean,se,n");
        // run means of fdr: 0.15 and 0.3 -> mean 0.225, se 0.075
        assert!(lines.contains(&"v,fdr,0.225,0.075,2"), "{text}");
        assert!(lines.contains(&"v,revenue,1500,0,2"), "{text}");
        assert!(lines.contains(&"v,tpr_group_2,nan,nan,0"), "{text}");
    }
}
