#![allow(dead_code)]

use std::sync::Arc;

use eaml::dataset::{Dataset, FeatureSpec, Schema, Value};
use eaml::rules::RuleMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `p` numeric features plus one 4-level categorical, outcome from a logistic model.
pub fn mixed_dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut features: Vec<FeatureSpec> = (0..p).map(|j| FeatureSpec::numeric(format!("x{j}"))).collect();
    features.push(FeatureSpec::categorical("kind", ["a", "b", "c", "d"]));
    let schema = Arc::new(Schema::new(features).unwrap());
    let effects = [0.0, 0.8, -0.6, 0.3];
    let mut values = Vec::with_capacity(n * (p + 1));
    let mut outcome = Vec::with_capacity(n);
    for _ in 0..n {
        let mut eta = -0.5;
        for j in 0..p {
            // coarse grid so numeric ties occur
            let x: f64 = StandardNormal.sample(&mut r);
            let x = (x * 4.0).round() / 4.0;
            if j < 3 {
                eta += [1.0, -0.7, 0.5][j] * x;
            }
            values.push(Value::Num(x));
        }
        let c = r.random_range(0..4u32);
        eta += effects[c as usize];
        values.push(Value::Cat(c));
        outcome.push(u8::from(r.random::<f64>() < 1.0 / (1.0 + (-eta).exp())));
    }
    Dataset::new(schema, values, outcome).unwrap()
}

/// Random Boolean matrix with a logistic outcome driven by the first few columns.
pub fn random_rule_problem(n: usize, k: usize, seed: u64) -> (RuleMatrix, Vec<u8>) {
    let mut r = rng(seed);
    let density: Vec<f64> = (0..k).map(|_| r.random_range(0.05..0.6)).collect();
    let mut columns = vec![Vec::new(); k];
    let mut eta = vec![-0.3; n];
    let beta: Vec<f64> = (0..k).map(|j| if j < 3 { r.random_range(-1.5..1.5) } else { 0.0 }).collect();
    for i in 0..n {
        for j in 0..k {
            if r.random::<f64>() < density[j] {
                columns[j].push(i as u32);
                eta[i] += beta[j];
            }
        }
    }
    let mut y: Vec<u8> = eta.iter().map(|&e| u8::from(r.random::<f64>() < 1.0 / (1.0 + (-e).exp()))).collect();
    // both classes present
    y[0] = 0;
    y[1] = 1;
    let m = RuleMatrix { n_rows: n, rule_ids: (0..k).map(|j| format!("r{j}")).collect(), columns };
    (m, y)
}

pub fn dense(m: &RuleMatrix) -> Vec<Vec<f64>> {
    let mut x = vec![vec![0.0; m.n_rules()]; m.n_rows];
    for (k, col) in m.columns.iter().enumerate() {
        for &i in col {
            x[i as usize][k] = 1.0;
        }
    }
    x
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gradient of the mean logistic loss by a naive dense double loop.
pub fn dense_gradient(x: &[Vec<f64>], y: &[u8], c0: f64, c: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let mut g0 = 0.0;
    let mut g = vec![0.0; c.len()];
    for (row, &t) in x.iter().zip(y) {
        let eta = c0 + row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let e = sigmoid(eta) - t as f64;
        g0 += e;
        for (gk, xk) in g.iter_mut().zip(row) {
            *gk += e * xk;
        }
    }
    (g0 / n, g.into_iter().map(|v| v / n).collect())
}

/// Unregularized logistic MLE by full Newton with an intercept column, dense.
pub fn newton_mle(x: &[Vec<f64>], y: &[u8]) -> (f64, Vec<f64>) {
    let k = x[0].len();
    let d = k + 1;
    let mut b = vec![0.0; d];
    for _ in 0..100 {
        let mut h = nalgebra::DMatrix::<f64>::zeros(d, d);
        let mut g = nalgebra::DVector::<f64>::zeros(d);
        for (row, &t) in x.iter().zip(y) {
            let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
            let eta: f64 = z.iter().zip(&b).map(|(a, c)| a * c).sum();
            let p = sigmoid(eta);
            for a in 0..d {
                g[a] += (t as f64 - p) * z[a];
                for c in 0..d {
                    h[(a, c)] += p * (1.0 - p) * z[a] * z[c];
                }
            }
        }
        let step = h.cholesky().expect("well conditioned").solve(&g);
        for a in 0..d {
            b[a] += step[a];
        }
        if step.amax() < 1e-13 {
            break;
        }
    }
    (b[0], b[1..].to_vec())
}
