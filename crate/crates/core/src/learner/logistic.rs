//! Penalized logistic training followed by a constrained threshold sweep.
//!
//! Stage one fits a weighted logistic model on one half of the pool with
//! quadratic penalties on smoothed versions of the constraints, raising the
//! penalty weight between rounds. Stage two sweeps the decision threshold
//! over the fitted scores: utility is measured on the held-out half, while
//! the constraints are checked on the whole pool.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConstraintCheck, SolverOptions, TrainingProblem};
use crate::error::{Error, Result};
use crate::types::{logistic, AffineParams, LinearClassifier, Sample};

/// Threshold that rejects every score in `[0, 1]`.
const REJECT_ALL: f64 = 1.5;

#[derive(Debug, Clone)]
struct Row {
    x: Vec<f64>,
    block: usize,
    group: usize,
    y: f64,
    w: f64,
}

#[derive(Debug, Clone, Copy)]
struct SoftConstraints {
    min_selection: f64,
    max_fdr: f64,
    fairness_bound: Option<f64>,
}

struct Objective<'a> {
    rows: &'a [Row],
    dim: usize,
    num_groups: usize,
    constraints: Option<SoftConstraints>,
}

fn softplus(m: f64) -> f64 {
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

impl Objective<'_> {
    fn stride(&self) -> usize {
        self.dim + 1
    }

    fn margin(&self, theta: &[f64], row: &Row) -> f64 {
        let p = &theta[row.block * self.stride()..(row.block + 1) * self.stride()];
        p[self.dim] + p[..self.dim].iter().zip(&row.x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Returns the penalized loss and the total constraint violation, and
    /// writes the gradient into `grad`.
    fn eval(&self, theta: &[f64], rho: f64, grad: &mut [f64]) -> (f64, f64) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let total_w: f64 = self.rows.iter().map(|r| r.w).sum();
        if total_w <= 0.0 {
            return (0.0, 0.0);
        }
        let scores: Vec<f64> = self.rows.iter().map(|r| logistic(self.margin(theta, r))).collect();
        let mut loss = 0.0;
        let (mut sel, mut fp) = (0.0, 0.0);
        let mut group_w = vec![0.0; self.num_groups];
        let mut group_s = vec![0.0; self.num_groups];
        for (r, &s) in self.rows.iter().zip(&scores) {
            let m = self.margin(theta, r);
            loss += r.w * (softplus(m) - r.y * m);
            sel += r.w * s;
            fp += r.w * (1.0 - r.y) * s;
            group_w[r.group] += r.w;
            group_s[r.group] += r.w * s;
        }
        loss /= total_w;

        let (mut v_sel, mut v_fdr, mut v_fair) = (0.0, 0.0, 0.0);
        let (mut hi, mut lo) = (0, 0);
        if let Some(c) = self.constraints {
            v_sel = (c.min_selection - sel / total_w).max(0.0);
            if sel > 0.0 {
                v_fdr = (fp / sel - c.max_fdr).max(0.0);
            }
            if let Some(bound) = c.fairness_bound {
                let present: Vec<usize> = (0..self.num_groups).filter(|&g| group_w[g] > 0.0).collect();
                if present.len() > 1 {
                    let rate = |g: usize| group_s[g] / group_w[g];
                    hi = *present.iter().max_by(|&&a, &&b| rate(a).total_cmp(&rate(b))).unwrap();
                    lo = *present.iter().min_by(|&&a, &&b| rate(a).total_cmp(&rate(b))).unwrap();
                    v_fair = (rate(hi) - rate(lo) - bound).max(0.0);
                }
            }
            loss += rho * (v_sel * v_sel + v_fdr * v_fdr + v_fair * v_fair);
        }

        let stride = self.stride();
        for (r, &s) in self.rows.iter().zip(&scores) {
            let mut k = 0.0;
            if v_sel > 0.0 {
                k += -2.0 * rho * v_sel / total_w;
            }
            if v_fdr > 0.0 {
                k += 2.0 * rho * v_fdr * ((1.0 - r.y) * sel - fp) / (sel * sel);
            }
            if v_fair > 0.0 {
                let mut d = 0.0;
                if r.group == hi {
                    d += 1.0 / group_w[hi];
                }
                if r.group == lo {
                    d -= 1.0 / group_w[lo];
                }
                k += 2.0 * rho * v_fair * d;
            }
            let coef = r.w * (s - r.y) / total_w + s * (1.0 - s) * r.w * k;
            let base = r.block * stride;
            for (g, x) in grad[base..base + self.dim].iter_mut().zip(&r.x) {
                *g += coef * x;
            }
            grad[base + self.dim] += coef;
        }
        (loss, v_sel + v_fdr + v_fair)
    }

    fn minimize(&self, mut theta: Vec<f64>, options: &SolverOptions) -> Vec<f64> {
        let mut grad = vec![0.0; theta.len()];
        let rounds = if self.constraints.is_some() { options.rounds.max(1) } else { 1 };
        for round in 0..rounds {
            let rho = options.initial_penalty * options.penalty_growth.powi(round as i32);
            for _ in 0..options.steps_per_round {
                self.eval(&theta, rho, &mut grad);
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !norm.is_finite() || norm < options.tolerance {
                    break;
                }
                let scale = if norm > options.gradient_clip { options.gradient_clip / norm } else { 1.0 };
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= options.step * scale * g;
                }
            }
            let (_, violation) = self.eval(&theta, rho, &mut grad);
            if violation <= 0.0 {
                break;
            }
        }
        theta
    }
}

fn flatten(blocks: &[AffineParams]) -> Vec<f64> {
    blocks
        .iter()
        .flat_map(|p| p.weights.iter().copied().chain(std::iter::once(p.intercept)))
        .collect()
}

fn unflatten(theta: &[f64], dim: usize) -> Vec<AffineParams> {
    theta
        .chunks(dim + 1)
        .map(|c| AffineParams { weights: c[..dim].to_vec(), intercept: c[dim] })
        .collect()
}

fn to_classifier(theta: &[f64], dim: usize, per_group: bool, threshold: f64) -> LinearClassifier {
    let blocks = unflatten(theta, dim);
    if per_group {
        LinearClassifier::per_group(blocks, threshold)
    } else {
        LinearClassifier::shared(blocks.into_iter().next().unwrap(), threshold)
    }
}

fn make_row(sample: &Sample, y: bool, w: f64, dim: usize, num_groups: usize, per_group: bool) -> Result<Row> {
    if sample.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: sample.dim() });
    }
    let group = sample.group.index();
    if group >= num_groups {
        return Err(Error::UnknownGroup(sample.group));
    }
    Ok(Row {
        x: sample.features.clone(),
        block: if per_group { group } else { 0 },
        group,
        y: if y { 1.0 } else { 0.0 },
        w,
    })
}

fn initial_theta(problem: &TrainingProblem, dim: usize, blocks: usize, per_group: bool) -> Vec<f64> {
    match &problem.warm_start {
        Some(c) if c.dim() == dim && c.is_per_group() == per_group && c.params().len() == blocks => {
            flatten(c.params())
        }
        _ => vec![0.0; blocks * (dim + 1)],
    }
}

/// Solves the constrained program with the penalized logistic model and a
/// threshold sweep.
///
/// Errors with [`Error::Empty`] for a pool without positive weight,
/// [`Error::DegeneratePool`] when only one label carries weight and
/// [`Error::Infeasible`] when no threshold satisfies the constraints.
pub fn train_constrained(problem: &TrainingProblem) -> Result<LinearClassifier> {
    problem.validate()?;
    if problem.pool.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    if !problem.pool.has_both_labels() {
        return Err(Error::DegeneratePool);
    }
    let active: Vec<_> = problem.pool.active().collect();
    let dim = active[0].sample.dim();
    let per_group = !problem.options.shared_weights;
    let num_groups = problem.num_groups;
    let blocks = if per_group { num_groups } else { 1 };
    let rows: Vec<Row> = active
        .iter()
        .map(|e| make_row(&e.sample, e.label(), e.weight, dim, num_groups, per_group))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(problem.options.seed));
    let mut in_second = vec![false; rows.len()];
    if rows.len() >= 2 {
        for (pos, &i) in order.iter().enumerate() {
            in_second[i] = pos % 2 == 1;
        }
    }
    let first: Vec<Row> = rows.iter().zip(&in_second).filter(|(_, &b)| !b).map(|(r, _)| r.clone()).collect();

    let objective = Objective {
        rows: &first,
        dim,
        num_groups,
        constraints: Some(SoftConstraints {
            min_selection: problem.min_selection(),
            max_fdr: problem.max_fdr(),
            fairness_bound: problem.fairness_bound,
        }),
    };
    let theta = objective.minimize(initial_theta(problem, dim, blocks, per_group), &problem.options);

    let scores: Vec<f64> = rows.iter().map(|r| logistic(objective.margin(&theta, r))).collect();
    let eval_rows: Vec<bool> = if rows.len() >= 2 { in_second.clone() } else { vec![true; rows.len()] };
    let threshold = sweep_threshold(problem, &rows, &scores, &eval_rows)?;
    Ok(to_classifier(&theta, dim, per_group, threshold))
}

/// Chooses the threshold with the best held-out utility among those whose
/// full-pool decisions satisfy the constraints. Ties prefer accepting fewer.
fn sweep_threshold(problem: &TrainingProblem, rows: &[Row], scores: &[f64], eval: &[bool]) -> Result<f64> {
    let gamma = problem.gamma;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let total_w: f64 = rows.iter().map(|r| r.w).sum();
    let eval_w: f64 = rows.iter().zip(eval).filter(|(_, &e)| e).map(|(r, _)| r.w).sum();
    let num_groups = problem.num_groups;
    let mut group_w = vec![0.0; num_groups];
    for r in rows {
        group_w[r.group] += r.w;
    }
    let present: Vec<usize> = (0..num_groups).filter(|&g| group_w[g] > 0.0).collect();

    // all rejected
    let mut util: f64 = rows
        .iter()
        .zip(eval)
        .filter(|(_, &e)| e)
        .map(|(r, _)| r.w * if r.y > 0.5 { gamma.g10 } else { gamma.g00 })
        .sum();
    let (mut sel, mut fp) = (0.0, 0.0);
    let mut group_sel = vec![0.0; num_groups];

    let check = |sel: f64, fp: f64, group_sel: &[f64]| {
        let disparity = if present.len() > 1 {
            let rates = present.iter().map(|&g| group_sel[g] / group_w[g]);
            let (lo, hi) = rates.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
            hi - lo
        } else {
            0.0
        };
        ConstraintCheck {
            selection: sel / total_w,
            fdr: if sel > 0.0 { Some(fp / sel) } else { None },
            disparity,
        }
    };

    let mut best: Option<(f64, f64)> = None;
    let mut consider = |threshold: f64, util: f64, c: ConstraintCheck| {
        if !c.satisfies(problem) {
            return;
        }
        let u = if eval_w > 0.0 { util / eval_w } else { 0.0 };
        if best.is_none_or(|(bu, _)| u > bu + 1e-12) {
            best = Some((u, threshold));
        }
    };

    let top = order.first().map(|&i| scores[i]).unwrap_or(0.0);
    consider(if top >= 1.0 { REJECT_ALL } else { (top + 1.0) / 2.0 }, util, check(sel, fp, &group_sel));
    let mut k = 0;
    while k < order.len() {
        let level = scores[order[k]];
        while k < order.len() && scores[order[k]] == level {
            let r = &rows[order[k]];
            sel += r.w;
            if r.y < 0.5 {
                fp += r.w;
            }
            group_sel[r.group] += r.w;
            if eval[order[k]] {
                util += r.w
                    * if r.y > 0.5 { gamma.g11 - gamma.g10 } else { gamma.g01 - gamma.g00 };
            }
            k += 1;
        }
        let threshold = match order.get(k) {
            // Midpoints collapse onto the lower score when scores are adjacent floats.
            Some(&next) => {
                let mid = (level + scores[next]) / 2.0;
                if mid > scores[next] { mid } else { level }
            }
            None => 0.0,
        };
        consider(threshold, util, check(sel, fp, &group_sel));
    }

    best.map(|(_, t)| t).ok_or_else(|| {
        Error::Infeasible(format!(
            "no threshold meets selection >= {:.4}, fdr <= {:.4}{}",
            problem.min_selection(),
            problem.max_fdr(),
            problem.fairness_bound.map(|b| format!(", disparity <= {b:.4}")).unwrap_or_default()
        ))
    })
}

/// Fits the initial classifier as a plain logistic model separating the
/// historically labeled samples (positive) from the unlabeled ones.
pub fn train_f0(labeled: &[Sample], unlabeled: &[Sample], options: &SolverOptions) -> Result<LinearClassifier> {
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::DegeneratePool);
    }
    let dim = labeled[0].dim();
    let num_groups = labeled.iter().chain(unlabeled).map(|s| s.group.index() + 1).max().unwrap();
    let per_group = !options.shared_weights;
    let blocks = if per_group { num_groups } else { 1 };
    let rows: Vec<Row> = labeled
        .iter()
        .map(|s| make_row(s, true, 1.0, dim, num_groups, per_group))
        .chain(unlabeled.iter().map(|s| make_row(s, false, 1.0, dim, num_groups, per_group)))
        .collect::<Result<_>>()?;
    let objective = Objective { rows: &rows, dim, num_groups, constraints: None };
    let theta = objective.minimize(vec![0.0; blocks * (dim + 1)], options);
    Ok(to_classifier(&theta, dim, per_group, 0.5))
}
