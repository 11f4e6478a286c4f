//! Discrimination metrics, the rank-sum test, learning curves and shift reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{subsample_indices, stratified_split_indices, Dataset, Schema};
use crate::error::{EamlError, Result};
use crate::par;
use crate::rules::RuleMatrix;
use crate::sparse_linear::{
    fit_penalized_logistic_from, lambda_max, lambda_grid, linear_margins, FitOptions, LinearRuleModel, Penalty,
};
use crate::stats::{average_ranks, log_loss_margin, mean, normal_sf, sample_sd, tie_sizes};

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

/// Rank-based AUC; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EamlError::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EamlError::data("AUC needs both classes"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Mean of sensitivity and specificity with `score >= threshold` predicted positive.
pub fn balanced_accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EamlError::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EamlError::data("balanced accuracy needs both classes"));
    }
    let mut tp = 0usize;
    let mut tn = 0usize;
    for (&s, &y) in scores.iter().zip(labels) {
        let hit = s >= threshold;
        if y == 1 && hit {
            tp += 1;
        } else if y == 0 && !hit {
            tn += 1;
        }
    }
    Ok(0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Mann-Whitney form: rank sum of `a` minus `|a|(|a|+1)/2`.
    pub w: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

fn rank_sum_u(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let ra: f64 = ranks[..a.len()].iter().sum();
    let na = a.len() as f64;
    (ra - na * (na + 1.0) / 2.0, pooled)
}

/// Number of arrangements giving each value of U for sample sizes `m`, `n`.
fn u_distribution(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u]: arrangements of i a-items and j b-items with statistic u
    let max_u = m * n;
    let mut prev: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
    for row in prev.iter_mut() {
        row[0] = 1.0;
    }
    for _ in 1..=m {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
        cur[0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=max_u {
                // largest item is an a (adds j to U) or a b
                let from_a = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = from_a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Exact two-sided p by enumeration of all rank assignments (assumes no ties).
pub fn wilcoxon_exact_p(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.is_empty() || b.is_empty() {
        return Err(EamlError::invalid("rank-sum test needs two nonempty samples"));
    }
    let (u, _) = rank_sum_u(a, b);
    let dist = u_distribution(a.len(), b.len());
    let total: f64 = dist.iter().sum();
    let (mut lower, mut upper) = (0.0, 0.0);
    for (k, &c) in dist.iter().enumerate() {
        let k = k as f64;
        if k <= u + 1e-9 {
            lower += c;
        }
        if k >= u - 1e-9 {
            upper += c;
        }
    }
    let p = (2.0 * lower.min(upper) / total).min(1.0);
    Ok(WilcoxonResult { w: u, p_value: p, method: WilcoxonMethod::Exact })
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn wilcoxon_normal_p(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.is_empty() || b.is_empty() {
        return Err(EamlError::invalid("rank-sum test needs two nonempty samples"));
    }
    let (u, pooled) = rank_sum_u(a, b);
    let (m, n) = (a.len() as f64, b.len() as f64);
    let big_n = m + n;
    let ties: f64 = tie_sizes(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = m * n / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - m * n / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(WilcoxonResult { w: u, p_value: p, method: WilcoxonMethod::Normal })
}

/// Exact when the pooled size is at most 16 and there are no ties, normal otherwise.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let has_ties = tie_sizes(&pooled).iter().any(|&t| t > 1);
    if pooled.len() <= 16 && !has_ties {
        wilcoxon_exact_p(a, b)
    } else {
        wilcoxon_normal_p(a, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub n: usize,
}

pub fn evaluate_scores(model: &str, dataset: &str, scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
    Ok(EvalReport {
        dataset: dataset.to_string(),
        model: model.to_string(),
        auc: auc(scores, labels)?,
        balanced_accuracy: balanced_accuracy(scores, labels, 0.5)?,
        n: labels.len(),
    })
}

/// Anything that maps a dataset to per-row probabilities.
pub trait Scorer {
    fn schema(&self) -> &Schema;
    fn score(&self, d: &Dataset) -> Result<Vec<f64>>;
}

/// One report per named evaluation set.
pub fn shift_eval(model_tag: &str, model: &dyn Scorer, sets: &[(&str, &Dataset)]) -> Result<Vec<EvalReport>> {
    sets.iter()
        .map(|(tag, d)| {
            if d.schema() != model.schema() {
                return Err(EamlError::data(format!("schema of `{tag}` does not match the model")));
            }
            let scores = model.score(d)?;
            evaluate_scores(model_tag, tag, &scores, d.outcome())
        })
        .collect()
}

/// Long-format report table: model, dataset, metric, value.
pub fn write_reports<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    out.write_record(["model", "dataset", "metric", "value"])?;
    for r in reports {
        out.write_record([&r.model, &r.dataset, "auc", &format!("{:.6}", r.auc)])?;
        out.write_record([&r.model, &r.dataset, "balanced_accuracy", &format!("{:.6}", r.balanced_accuracy)])?;
        out.write_record([&r.model, &r.dataset, "n", &r.n.to_string()])?;
    }
    out.flush().map_err(|e| EamlError::io("<report>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningCurveConfig {
    pub sizes: Vec<usize>,
    /// Stratified subsamples per size.
    pub n_subsamples: usize,
    pub seed: u64,
    pub n_lambdas: usize,
    /// Fraction of each subsample held out to choose lambda.
    pub holdout_fraction: f64,
    pub fit: FitOptions,
}

impl Default for LearningCurveConfig {
    fn default() -> Self {
        LearningCurveConfig {
            sizes: vec![100, 200, 400, 800, 1600, 3200, 6400],
            n_subsamples: 10,
            seed: 0,
            n_lambdas: 20,
            holdout_fraction: 0.25,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean_auc: f64,
    pub sd_auc: f64,
    /// Per-subsample AUCs in subsample order.
    pub aucs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rule_subset: String,
    pub test_set: String,
    pub points: Vec<CurvePoint>,
}

/// Named evaluation matrix with labels, columns aligned with the pool matrix.
pub struct CurveTestSet<'a> {
    pub name: &'a str,
    pub matrix: &'a RuleMatrix,
    pub labels: &'a [u8],
}

/// Named subset of pool columns.
pub struct RuleSubset<'a> {
    pub name: &'a str,
    pub columns: &'a [usize],
}

/// L1 path on a stratified fit part, lambda chosen by holdout log-loss (ties to the larger
/// lambda), then refit on the whole sample at that lambda. A path cut short by
/// non-convergence keeps the points reached so far.
pub fn fit_l1_with_holdout(
    r: &RuleMatrix,
    y: &[u8],
    n_lambdas: usize,
    holdout_fraction: f64,
    seed: u64,
    opts: &FitOptions,
) -> Result<LinearRuleModel> {
    let (fit_rows, hold_rows) = stratified_split_indices(y, 1.0 - holdout_fraction, seed)?;
    let r_fit = r.select_rows(&fit_rows);
    let y_fit: Vec<u8> = fit_rows.iter().map(|&i| y[i]).collect();
    let r_hold = r.select_rows(&hold_rows);
    let y_hold: Vec<u8> = hold_rows.iter().map(|&i| y[i]).collect();
    let weights = vec![1.0; r.n_rules()];

    let lmax = lambda_max(&r_fit, &y_fit, &weights)?;
    let grid = if lmax > 0.0 { lambda_grid(lmax, n_lambdas) } else { vec![0.0] };
    let mut best: Option<(f64, f64, f64, Vec<f64>)> = None; // (loss, lambda, c0, coefs)
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for lambda in grid {
        let init = prev.as_ref().map(|(c0, c)| (*c0, c.as_slice()));
        let m = match fit_penalized_logistic_from(&r_fit, &y_fit, lambda, &weights, Penalty::L1, opts, init) {
            Ok(m) => m,
            Err(EamlError::NonConvergence { .. }) if best.is_some() => break,
            Err(e) => return Err(e),
        };
        let margins = linear_margins(&m, &r_hold)?;
        let loss = margins.iter().zip(&y_hold).map(|(&s, &t)| log_loss_margin(s, t)).sum::<f64>() / y_hold.len().max(1) as f64;
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, lambda, m.intercept, m.coefficients.clone()));
        }
        prev = Some((m.intercept, m.coefficients));
    }
    let (_, lambda, c0, coefs) = best.expect("at least one path point");
    match fit_penalized_logistic_from(r, y, lambda, &weights, Penalty::L1, opts, Some((c0, &coefs))) {
        Ok(m) => Ok(m),
        Err(EamlError::NonConvergence { .. }) => {
            // fall back to the fit-part model at the same lambda
            fit_penalized_logistic_from(&r_fit, &y_fit, lambda, &weights, Penalty::L1, opts, Some((c0, &coefs)))
        }
        Err(e) => Err(e),
    }
}

/// Test AUC of L1 fits on stratified pool subsamples, for every (subset, test set) pair.
/// Subsample `s` of size `n` is shared by all subsets so comparisons are paired.
pub fn learning_curve(
    pool: &RuleMatrix,
    pool_y: &[u8],
    tests: &[CurveTestSet<'_>],
    subsets: &[RuleSubset<'_>],
    cfg: &LearningCurveConfig,
) -> Result<Vec<LearningCurve>> {
    if cfg.n_subsamples < 2 {
        return Err(EamlError::invalid("learning curves need at least two subsamples per size"));
    }
    if cfg.sizes.windows(2).any(|w| w[0] >= w[1]) || cfg.sizes.is_empty() {
        return Err(EamlError::invalid("learning-curve sizes must be strictly increasing"));
    }
    if let Some(&big) = cfg.sizes.last() {
        if big > pool.n_rows {
            return Err(EamlError::invalid(format!("size {big} exceeds the pool of {} rows", pool.n_rows)));
        }
    }
    for t in tests {
        if t.matrix.n_rules() != pool.n_rules() {
            return Err(EamlError::invalid(format!("test set `{}` has misaligned rule columns", t.name)));
        }
    }
    let sub_pool: Vec<RuleMatrix> = subsets.iter().map(|s| pool.select_columns(s.columns)).collect();
    let sub_tests: Vec<Vec<RuleMatrix>> =
        subsets.iter().map(|s| tests.iter().map(|t| t.matrix.select_columns(s.columns)).collect()).collect();

    let jobs: Vec<(usize, usize)> =
        (0..cfg.sizes.len()).flat_map(|z| (0..cfg.n_subsamples).map(move |s| (z, s))).collect();
    // per job: aucs[subset][test]
    let results: Vec<Vec<Vec<f64>>> = par::try_map_range(jobs.len(), |j| {
        let (z, s) = jobs[j];
        let size = cfg.sizes[z];
        let job_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((size as u64) << 16).wrapping_add(s as u64);
        let rows = subsample_indices(pool_y, size, job_seed)?;
        let y: Vec<u8> = rows.iter().map(|&i| pool_y[i]).collect();
        (0..subsets.len())
            .map(|k| {
                let r = sub_pool[k].select_rows(&rows);
                let m = fit_l1_with_holdout(&r, &y, cfg.n_lambdas, cfg.holdout_fraction, job_seed ^ 0x5eed, &cfg.fit)?;
                tests
                    .iter()
                    .enumerate()
                    .map(|(t, test)| auc(&linear_margins(&m, &sub_tests[k][t])?, test.labels))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut curves = Vec::new();
    for (k, subset) in subsets.iter().enumerate() {
        for (t, test) in tests.iter().enumerate() {
            let points = cfg
                .sizes
                .iter()
                .enumerate()
                .map(|(z, &size)| {
                    let aucs: Vec<f64> = (0..cfg.n_subsamples).map(|s| results[z * cfg.n_subsamples + s][k][t]).collect();
                    CurvePoint { size, mean_auc: mean(&aucs), sd_auc: sample_sd(&aucs), aucs }
                })
                .collect();
            curves.push(LearningCurve { rule_subset: subset.name.to_string(), test_set: test.name.to_string(), points });
        }
    }
    Ok(curves)
}

/// Long-format learning-curve table: subset, test set, size, mean, sd.
pub fn write_learning_curves<W: Write>(curves: &[LearningCurve], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    out.write_record(["rule_subset", "test_set", "size", "mean_auc", "sd_auc"])?;
    for c in curves {
        for p in &c.points {
            out.write_record([
                c.rule_subset.as_str(),
                c.test_set.as_str(),
                &p.size.to_string(),
                &format!("{:.6}", p.mean_auc),
                &format!("{:.6}", p.sd_auc),
            ])?;
        }
    }
    out.flush().map_err(|e| EamlError::io("<learning curve>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_basics() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn balanced_accuracy_confusion() {
        // TP=3, FN=1, TN=2, FP=2
        let s = [0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.9, 0.9];
        let y = [1, 1, 1, 1, 0, 0, 0, 0];
        assert!((balanced_accuracy(&s, &y, 0.5).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(balanced_accuracy(&[0.7; 4], &[0, 1, 0, 1], 0.5).unwrap(), 0.5);
    }

    #[test]
    fn exact_small_case() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.w, 0.0);
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_have_no_evidence() {
        let a = [0.7, 0.71, 0.72, 0.73, 0.74, 0.75, 0.76, 0.77, 0.78, 0.79];
        assert!(wilcoxon_rank_sum(&a, &a).unwrap().p_value >= 0.99);
    }

    #[test]
    fn u_distribution_is_symmetric_and_complete() {
        let d = u_distribution(4, 6);
        assert_eq!(d.iter().sum::<f64>(), 210.0);
        for k in 0..d.len() {
            assert_eq!(d[k], d[d.len() - 1 - k]);
        }
    }
}
