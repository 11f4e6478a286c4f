//! Weighted penalized logistic regression over Boolean rule columns.
//!
//! Minimizes `mean logistic loss + lambda * sum_k w_k * pen(c_k)` with `pen = |c|` (L1) or
//! `c^2` (L2) and an unpenalized intercept. The solver is the usual IRLS outer loop around
//! cyclic coordinate descent on the weighted quadratic approximation, with a step-halving
//! guard so the penalized objective never increases between outer iterations.
//! A weight of `f64::INFINITY` pins the coefficient at zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{EamlError, Result};
use crate::evaluation::auc;
use crate::rules::RuleMatrix;
use crate::stats::{log_loss_margin, logit, sigmoid};

const WORKING_WEIGHT_FLOOR: f64 = 1e-5;
const MAX_HALVINGS: usize = 40;
/// Above this many active columns the exact step falls back to coordinate sweeps.
const NEWTON_MAX_ACTIVE: usize = 1500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Convergence threshold on the largest coefficient change.
    pub tol: f64,
    /// Budget of coordinate sweeps across all outer iterations.
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: 1e-7, max_iter: 10_000 }
    }
}

mod weights_serde {
    use super::*;

    pub fn serialize<S: Serializer>(w: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Option<f64>> = w.iter().map(|&x| x.is_finite().then_some(x)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRuleModel {
    pub rule_ids: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub penalty: Penalty,
    pub lambda: f64,
    /// Per-rule penalty weights; infinite weights serialize as `null`.
    #[serde(with = "weights_serde")]
    pub penalty_weights: Vec<f64>,
    /// Penalized objective after each outer iteration.
    pub loss_trace: Vec<f64>,
    /// Coordinate sweeps used.
    pub iterations: usize,
}

impl LinearRuleModel {
    pub fn n_nonzero(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0.0).count()
    }

    /// Rule ids with nonzero coefficients, in column order.
    pub fn selected_rules(&self) -> Vec<String> {
        self.rule_ids
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, &c)| c != 0.0)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

fn check_inputs(r: &RuleMatrix, y: &[u8], lambda: f64, weights: &[f64]) -> Result<()> {
    if r.n_rows == 0 {
        return Err(EamlError::data("cannot fit on an empty rule matrix"));
    }
    if y.len() != r.n_rows {
        return Err(EamlError::invalid(format!("{} labels for {} rows", y.len(), r.n_rows)));
    }
    if weights.len() != r.n_rules() {
        return Err(EamlError::invalid(format!("{} penalty weights for {} rules", weights.len(), r.n_rules())));
    }
    if !(lambda >= 0.0) || lambda.is_infinite() {
        return Err(EamlError::invalid(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(EamlError::invalid(format!("penalty weights must be non-negative, got {w}")));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(EamlError::data("penalized logistic fit needs both outcome classes"));
    }
    Ok(())
}

fn margins(r: &RuleMatrix, intercept: f64, coefs: &[f64]) -> Vec<f64> {
    let mut eta = vec![intercept; r.n_rows];
    for (col, &c) in r.columns.iter().zip(coefs) {
        if c != 0.0 {
            for &i in col {
                eta[i as usize] += c;
            }
        }
    }
    eta
}

fn penalty_value(penalty: Penalty, lambda: f64, weights: &[f64], coefs: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&w, &c) in weights.iter().zip(coefs) {
        if c != 0.0 {
            s += w * match penalty {
                Penalty::L1 => c.abs(),
                Penalty::L2 => c * c,
            };
        }
    }
    lambda * s
}

fn objective_at(r: &RuleMatrix, y: &[u8], penalty: Penalty, lambda: f64, weights: &[f64], c0: f64, coefs: &[f64]) -> f64 {
    let eta = margins(r, c0, coefs);
    let loss: f64 = eta.iter().zip(y).map(|(&m, &t)| log_loss_margin(m, t)).sum::<f64>() / r.n_rows as f64;
    loss + penalty_value(penalty, lambda, weights, coefs)
}

/// Penalized objective of `m` on `(r, y)`.
pub fn objective(r: &RuleMatrix, y: &[u8], m: &LinearRuleModel) -> f64 {
    objective_at(r, y, m.penalty, m.lambda, &m.penalty_weights, m.intercept, &m.coefficients)
}

/// Gradient of the mean logistic loss: `(d/dc0, d/dc_k)`.
pub fn smooth_gradient(r: &RuleMatrix, y: &[u8], intercept: f64, coefs: &[f64]) -> (f64, Vec<f64>) {
    let n = r.n_rows as f64;
    let eta = margins(r, intercept, coefs);
    let g: Vec<f64> = eta.iter().zip(y).map(|(&m, &t)| sigmoid(m) - t as f64).collect();
    let g0 = g.iter().sum::<f64>() / n;
    let gk = r.columns.iter().map(|col| col.iter().map(|&i| g[i as usize]).sum::<f64>() / n).collect();
    (g0, gk)
}

/// Smallest L1 lambda at which every penalized coefficient is zero.
pub fn lambda_max(r: &RuleMatrix, y: &[u8], weights: &[f64]) -> Result<f64> {
    check_inputs(r, y, 0.0, weights)?;
    let n = r.n_rows as f64;
    let ybar = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut best: f64 = 0.0;
    for (col, &w) in r.columns.iter().zip(weights) {
        if w > 0.0 && w.is_finite() {
            let s: f64 = col.iter().map(|&i| y[i as usize] as f64 - ybar).sum();
            best = best.max((s / n).abs() / w);
        }
    }
    Ok(best)
}

struct Solver<'a> {
    r: &'a RuleMatrix,
    y: &'a [u8],
    penalty: Penalty,
    lambda: f64,
    weights: &'a [f64],
    opts: FitOptions,
    sweeps: usize,
    trace: Vec<f64>,
}

impl Solver<'_> {
    fn update_coordinate(&self, k: usize, c_old: f64, w: &[f64], res: &[f64]) -> f64 {
        let pw = self.weights[k];
        if pw.is_infinite() {
            return 0.0;
        }
        let col = &self.r.columns[k];
        if col.is_empty() {
            return 0.0;
        }
        let n = self.r.n_rows as f64;
        let (mut v, mut u) = (0.0, 0.0);
        for &i in col {
            let i = i as usize;
            v += w[i];
            u += w[i] * res[i];
        }
        v /= n;
        u = u / n + v * c_old;
        match self.penalty {
            Penalty::L1 => {
                let t = self.lambda * pw;
                if u > t {
                    (u - t) / v
                } else if u < -t {
                    (u + t) / v
                } else {
                    0.0
                }
            }
            Penalty::L2 => u / (v + 2.0 * self.lambda * pw),
        }
    }

    /// One sweep over `cols` plus the intercept; returns the largest change.
    fn sweep(&mut self, cols: &[usize], c0: &mut f64, coefs: &mut [f64], w: &[f64], res: &mut [f64]) -> Result<f64> {
        self.sweeps += 1;
        if self.sweeps > self.opts.max_iter {
            return Err(EamlError::NonConvergence { sweeps: self.opts.max_iter, loss_trace: self.trace.clone() });
        }
        let mut max_change: f64 = 0.0;
        for &k in cols {
            let new = self.update_coordinate(k, coefs[k], w, res);
            let delta = new - coefs[k];
            if delta != 0.0 {
                for &i in &self.r.columns[k] {
                    res[i as usize] -= delta;
                }
                coefs[k] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        let (mut sw, mut swr) = (0.0, 0.0);
        for (wi, ri) in w.iter().zip(res.iter()) {
            sw += wi;
            swr += wi * ri;
        }
        let delta = swr / sw;
        if delta != 0.0 {
            for ri in res.iter_mut() {
                *ri -= delta;
            }
            *c0 += delta;
            max_change = max_change.max(delta.abs());
        }
        Ok(max_change)
    }

    /// Exact minimizer of the quadratic model over the columns in `active` with their
    /// current signs held fixed (L1) or unconstrained (L2). A coefficient whose sign would
    /// flip is stopped at zero and dropped, and the reduced problem is solved again a few
    /// times before handing back to coordinate sweeps.
    fn newton(&mut self, mut active: Vec<usize>, c0: &mut f64, coefs: &mut [f64], w: &[f64], res: &mut [f64]) -> Result<()> {
        const MAX_RESOLVES: usize = 8;
        let n = self.r.n_rows;
        let eta = margins(self.r, *c0, coefs);
        let z: Vec<f64> = eta.iter().zip(res.iter()).map(|(e, r)| e + r).collect();
        let (gram, rhs) = self.gram(&active, w, &z);
        let full_dim = active.len() + 1;
        // positions into the full system of the columns still active
        let mut keep: Vec<usize> = (1..full_dim).collect();
        for _ in 0..MAX_RESOLVES {
            if active.is_empty() {
                break;
            }
            self.sweeps += 1;
            if self.sweeps > self.opts.max_iter {
                return Err(EamlError::NonConvergence { sweeps: self.opts.max_iter, loss_trace: self.trace.clone() });
            }
            let dim = active.len() + 1;
            let idx = |p: usize| if p == 0 { 0 } else { keep[p - 1] };
            let mut m = DMatrix::<f64>::from_fn(dim, dim, |p, q| gram[idx(p) * full_dim + idx(q)]);
            let mut v = DVector::<f64>::from_fn(dim, |p, _| rhs[idx(p)]);
            for (p, &k) in active.iter().enumerate() {
                let pw = self.weights[k];
                match self.penalty {
                    Penalty::L1 => v[p + 1] -= self.lambda * pw * coefs[k].signum(),
                    Penalty::L2 => m[(p + 1, p + 1)] += 2.0 * self.lambda * pw,
                }
            }
            let Some(x) = solve_spd(m, &v) else {
                break;
            };
            let mut t_min = 1.0;
            if self.penalty == Penalty::L1 {
                for (p, &k) in active.iter().enumerate() {
                    let (cur, new) = (coefs[k], x[p + 1]);
                    if new * cur <= 0.0 {
                        t_min = f64::min(t_min, cur / (cur - new));
                    }
                }
            }
            *c0 += t_min * (x[0] - *c0);
            let mut dropped = false;
            for (p, &k) in active.iter().enumerate() {
                let (cur, new) = (coefs[k], x[p + 1]);
                if self.penalty == Penalty::L1 && new * cur <= 0.0 && cur / (cur - new) <= t_min {
                    coefs[k] = 0.0;
                    dropped = true;
                } else {
                    coefs[k] = cur + t_min * (new - cur);
                }
            }
            if !dropped {
                break;
            }
            let mut p = 0;
            keep.retain(|_| {
                let k = active[p];
                p += 1;
                coefs[k] != 0.0
            });
            active.retain(|&k| coefs[k] != 0.0);
        }
        let eta = margins(self.r, *c0, coefs);
        for i in 0..n {
            res[i] = z[i] - eta[i];
        }
        Ok(())
    }

    /// Weighted Gram matrix `[1, R_A]' W [1, R_A] / n` (row-major, symmetric) and `[1, R_A]' W z / n`.
    fn gram(&self, active: &[usize], w: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.r.n_rows;
        let dim = active.len() + 1;
        // rows -> positions of the active columns covering them
        let mut start = vec![0usize; n + 1];
        for &k in active {
            for &i in &self.r.columns[k] {
                start[i as usize + 1] += 1;
            }
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut cover = vec![0usize; start[n]];
        for (p, &k) in active.iter().enumerate() {
            for &i in &self.r.columns[k] {
                cover[fill[i as usize]] = p + 1;
                fill[i as usize] += 1;
            }
        }
        let mut g = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            let wi = w[i];
            let wz = wi * z[i];
            g[0] += wi;
            rhs[0] += wz;
            let row = &cover[start[i]..start[i + 1]];
            for (x, &p) in row.iter().enumerate() {
                rhs[p] += wz;
                let base = p * dim;
                g[base] += wi;
                for &q in &row[..x] {
                    g[base + q] += wi;
                }
                g[base + p] += wi;
            }
        }
        let nf = n as f64;
        for p in 0..dim {
            for q in 0..=p {
                let v = g[p * dim + q] / nf;
                g[p * dim + q] = v;
                g[q * dim + p] = v;
            }
            rhs[p] /= nf;
        }
        (g, rhs)
    }

    /// Full coordinate sweeps alternating with exact solves on the active set until a full
    /// sweep moves no coefficient by `tol` or more.
    fn inner(&mut self, c0: &mut f64, coefs: &mut [f64], w: &[f64], res: &mut [f64]) -> Result<()> {
        let all: Vec<usize> = (0..coefs.len()).collect();
        loop {
            let change = self.sweep(&all, c0, coefs, w, res)?;
            if change < self.opts.tol {
                return Ok(());
            }
            let active: Vec<usize> = all.iter().copied().filter(|&k| coefs[k] != 0.0).collect();
            if active.len() <= NEWTON_MAX_ACTIVE {
                self.newton(active, c0, coefs, w, res)?;
            } else {
                loop {
                    let change = self.sweep(&active, c0, coefs, w, res)?;
                    if change < self.opts.tol {
                        break;
                    }
                }
            }
        }
    }

    fn run(&mut self, mut c0: f64, mut coefs: Vec<f64>) -> Result<(f64, Vec<f64>)> {
        for (c, w) in coefs.iter_mut().zip(self.weights) {
            if w.is_infinite() {
                *c = 0.0;
            }
        }
        let mut obj = objective_at(self.r, self.y, self.penalty, self.lambda, self.weights, c0, &coefs);
        self.trace.push(obj);
        loop {
            let eta = margins(self.r, c0, &coefs);
            let mut w = Vec::with_capacity(eta.len());
            let mut res = Vec::with_capacity(eta.len());
            for (&m, &t) in eta.iter().zip(self.y) {
                let p = sigmoid(m);
                let wi = (p * (1.0 - p)).max(WORKING_WEIGHT_FLOOR);
                w.push(wi);
                res.push((t as f64 - p) / wi);
            }
            let (mut n0, mut nc) = (c0, coefs.clone());
            self.inner(&mut n0, &mut nc, &w, &mut res)?;

            let mut new_obj = objective_at(self.r, self.y, self.penalty, self.lambda, self.weights, n0, &nc);
            let mut halvings = 0;
            while new_obj > obj && halvings < MAX_HALVINGS {
                n0 = 0.5 * (c0 + n0);
                for (a, b) in nc.iter_mut().zip(&coefs) {
                    *a = 0.5 * (*a + b);
                }
                new_obj = objective_at(self.r, self.y, self.penalty, self.lambda, self.weights, n0, &nc);
                halvings += 1;
            }
            if new_obj > obj {
                // no descent along the proposed direction: already at the optimum to working precision
                return Ok((c0, coefs));
            }
            let change = nc.iter().zip(&coefs).map(|(a, b)| (a - b).abs()).fold((n0 - c0).abs(), f64::max);
            c0 = n0;
            coefs = nc;
            obj = new_obj;
            self.trace.push(obj);
            if change < self.opts.tol {
                return Ok((c0, coefs));
            }
        }
    }
}

/// Cholesky solve, adding a small diagonal jitter when the matrix is numerically singular
/// (duplicate columns).
fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = (0..m.nrows()).map(|i| m[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut mj = m.clone();
        for i in 1..mj.nrows() {
            mj[(i, i)] += jitter * scale;
        }
        if let Some(ch) = mj.cholesky() {
            let x = ch.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
    }
    None
}

/// Fits from the null model (`c0 = logit(ybar)`, all `c_k = 0`).
pub fn fit_penalized_logistic(
    r: &RuleMatrix,
    y: &[u8],
    lambda: f64,
    weights: &[f64],
    penalty: Penalty,
    opts: &FitOptions,
) -> Result<LinearRuleModel> {
    fit_penalized_logistic_from(r, y, lambda, weights, penalty, opts, None)
}

/// As [`fit_penalized_logistic`], optionally warm-started from `init`.
pub fn fit_penalized_logistic_from(
    r: &RuleMatrix,
    y: &[u8],
    lambda: f64,
    weights: &[f64],
    penalty: Penalty,
    opts: &FitOptions,
    init: Option<(f64, &[f64])>,
) -> Result<LinearRuleModel> {
    check_inputs(r, y, lambda, weights)?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(EamlError::invalid("tol must be positive and max_iter at least 1"));
    }
    let (c0, coefs) = match init {
        Some((c0, c)) => {
            if c.len() != r.n_rules() {
                return Err(EamlError::invalid("warm start has the wrong number of coefficients"));
            }
            (c0, c.to_vec())
        }
        None => {
            let ybar = y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
            (logit(ybar), vec![0.0; r.n_rules()])
        }
    };
    let mut solver = Solver { r, y, penalty, lambda, weights, opts: *opts, sweeps: 0, trace: Vec::new() };
    let (intercept, coefficients) = solver.run(c0, coefs)?;
    Ok(LinearRuleModel {
        rule_ids: r.rule_ids.clone(),
        intercept,
        coefficients,
        penalty,
        lambda,
        penalty_weights: weights.to_vec(),
        loss_trace: solver.trace,
        iterations: solver.sweeps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub model: LinearRuleModel,
}

/// Log-spaced lambdas from `lambda_max` down to `lambda_max * 1e-3`.
pub fn lambda_grid(lambda_max: f64, n_lambdas: usize) -> Vec<f64> {
    let lo = (1e-3f64).ln();
    (0..n_lambdas)
        .map(|i| lambda_max * (lo * i as f64 / (n_lambdas - 1) as f64).exp())
        .collect()
}

/// Warm-started regularization path, largest lambda first.
pub fn lambda_path(
    r: &RuleMatrix,
    y: &[u8],
    weights: &[f64],
    penalty: Penalty,
    n_lambdas: usize,
    opts: &FitOptions,
) -> Result<Vec<PathPoint>> {
    if n_lambdas < 2 {
        return Err(EamlError::invalid("a lambda path needs at least two points"));
    }
    let lmax = lambda_max(r, y, weights)?;
    if lmax <= 0.0 {
        return Err(EamlError::data("no penalized rule correlates with the outcome; lambda_max is zero"));
    }
    let mut out: Vec<PathPoint> = Vec::with_capacity(n_lambdas);
    for lambda in lambda_grid(lmax, n_lambdas) {
        let init = out.last().map(|p| (p.model.intercept, p.model.coefficients.as_slice()));
        let model = fit_penalized_logistic_from(r, y, lambda, weights, penalty, opts, init)?;
        out.push(PathPoint { lambda, model });
    }
    Ok(out)
}

pub fn linear_margins(m: &LinearRuleModel, r: &RuleMatrix) -> Result<Vec<f64>> {
    if r.n_rules() != m.coefficients.len() {
        return Err(EamlError::invalid(format!(
            "model has {} coefficients but the matrix has {} columns",
            m.coefficients.len(),
            r.n_rules()
        )));
    }
    Ok(margins(r, m.intercept, &m.coefficients))
}

/// `sigmoid(c0 + R c)` per row.
pub fn predict_linear(m: &LinearRuleModel, r: &RuleMatrix) -> Result<Vec<f64>> {
    Ok(linear_margins(m, r)?.into_iter().map(sigmoid).collect())
}

/// Index of the path point with the best validation AUC (ties go to the larger lambda),
/// together with every point's AUC.
pub fn select_by_validation(path: &[PathPoint], r_val: &RuleMatrix, y_val: &[u8]) -> Result<(usize, Vec<f64>)> {
    if path.is_empty() {
        return Err(EamlError::invalid("empty lambda path"));
    }
    let aucs = path
        .iter()
        .map(|p| auc(&predict_linear(&p.model, r_val)?, y_val))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &a) in aucs.iter().enumerate() {
        if a > aucs[best] {
            best = i;
        }
    }
    Ok((best, aucs))
}

/// Walks the L1 path scoring each point on validation data, stopping once `patience`
/// consecutive points fail to beat the best validation AUC, or when a fit exhausts its sweep
/// budget after at least one point succeeded. Returns the visited path, its validation AUCs
/// and the index of the best point (the larger lambda wins ties).
#[allow(clippy::too_many_arguments)]
pub fn validated_path(
    r: &RuleMatrix,
    y: &[u8],
    weights: &[f64],
    penalty: Penalty,
    n_lambdas: usize,
    opts: &FitOptions,
    r_val: &RuleMatrix,
    y_val: &[u8],
    patience: usize,
) -> Result<(Vec<PathPoint>, Vec<f64>, usize)> {
    if n_lambdas < 2 {
        return Err(EamlError::invalid("a lambda path needs at least two points"));
    }
    let lmax = lambda_max(r, y, weights)?;
    if lmax <= 0.0 {
        return Err(EamlError::data("no penalized rule correlates with the outcome; lambda_max is zero"));
    }
    let mut path: Vec<PathPoint> = Vec::with_capacity(n_lambdas);
    let mut aucs = Vec::with_capacity(n_lambdas);
    let mut best = 0;
    for lambda in lambda_grid(lmax, n_lambdas) {
        let init = path.last().map(|p| (p.model.intercept, p.model.coefficients.as_slice()));
        let model = match fit_penalized_logistic_from(r, y, lambda, weights, penalty, opts, init) {
            Ok(m) => m,
            Err(EamlError::NonConvergence { .. }) if !path.is_empty() => break,
            Err(e) => return Err(e),
        };
        let a = auc(&predict_linear(&model, r_val)?, y_val)?;
        path.push(PathPoint { lambda, model });
        aucs.push(a);
        if a > aucs[best] {
            best = aucs.len() - 1;
        }
        if patience > 0 && aucs.len() - 1 - best >= patience {
            break;
        }
    }
    Ok((path, aucs, best))
}
