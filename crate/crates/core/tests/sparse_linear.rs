mod common;

use common::{dense, dense_gradient, newton_mle, random_rule_problem, rng, sigmoid};
use eaml::rules::RuleMatrix;
use eaml::sparse_linear::*;
use eaml::stats::logit;
use eaml::EamlError;
use rand::Rng;

fn kkt_violation(r: &RuleMatrix, y: &[u8], m: &LinearRuleModel) -> f64 {
    let (g0, g) = smooth_gradient(r, y, m.intercept, &m.coefficients);
    let mut worst = g0.abs();
    for k in 0..g.len() {
        let pw = m.penalty_weights[k];
        if pw.is_infinite() {
            assert_eq!(m.coefficients[k], 0.0);
            continue;
        }
        let c = m.coefficients[k];
        let v = match m.penalty {
            Penalty::L1 if c == 0.0 => (g[k].abs() - m.lambda * pw).max(0.0),
            Penalty::L1 => (g[k] + m.lambda * pw * c.signum()).abs(),
            Penalty::L2 => (g[k] + 2.0 * m.lambda * pw * c).abs(),
        };
        worst = worst.max(v);
    }
    worst
}

#[test]
fn l1_stationarity_on_random_instances() {
    let mut r = rng(77);
    for case in 0..50 {
        let n = r.random_range(60..300);
        let k = r.random_range(3..25);
        let (m, y) = random_rule_problem(n, k, 1000 + case);
        let weights: Vec<f64> = (0..k).map(|_| if r.random::<f64>() < 0.1 { 0.0 } else { r.random_range(0.2..3.0) }).collect();
        let lmax = lambda_max(&m, &y, &weights).unwrap();
        let lambda = lmax * r.random_range(0.01..0.9);
        let fit = fit_penalized_logistic(&m, &y, lambda, &weights, Penalty::L1, &FitOptions::default()).unwrap();
        let v = kkt_violation(&m, &y, &fit);
        assert!(v <= 1e-6, "case {case}: violation {v}");
    }
}

#[test]
fn l2_gradient_vanishes() {
    let mut r = rng(5);
    for case in 0..20 {
        let (m, y) = random_rule_problem(200, 12, 50 + case);
        let weights: Vec<f64> = (0..12).map(|_| r.random_range(0.5..2.0)).collect();
        let lambda = r.random_range(1e-3..0.1);
        let fit = fit_penalized_logistic(&m, &y, lambda, &weights, Penalty::L2, &FitOptions::default()).unwrap();
        assert!(kkt_violation(&m, &y, &fit) <= 1e-6);
    }
}

#[test]
fn objective_never_increases() {
    let (m, y) = random_rule_problem(300, 20, 9);
    for penalty in [Penalty::L1, Penalty::L2] {
        let fit = fit_penalized_logistic(&m, &y, 0.005, &vec![1.0; 20], penalty, &FitOptions::default()).unwrap();
        assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{:?}", fit.loss_trace);
        assert!((objective(&m, &y, &fit) - fit.loss_trace.last().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn null_model_above_lambda_max() {
    let (m, y) = random_rule_problem(150, 8, 3);
    let w = vec![1.0, 2.0, 0.5, 1.0, 1.0, 3.0, 1.0, 1.0];
    let n = y.len() as f64;
    let ybar = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    // threshold recomputed by hand
    let thresh = m
        .columns
        .iter()
        .zip(&w)
        .map(|(col, wk)| (col.iter().map(|&i| y[i as usize] as f64 - ybar).sum::<f64>() / n).abs() / wk)
        .fold(0.0, f64::max);
    assert!((lambda_max(&m, &y, &w).unwrap() - thresh).abs() < 1e-15);
    let fit = fit_penalized_logistic(&m, &y, thresh * 1.0001, &w, Penalty::L1, &FitOptions::default()).unwrap();
    assert_eq!(fit.n_nonzero(), 0);
    assert!((fit.intercept - logit(ybar)).abs() < 1e-9);
}

#[test]
fn unpenalized_fit_matches_newton() {
    let (m, y) = random_rule_problem(50, 5, 21);
    let x = dense(&m);
    let (b0, b) = newton_mle(&x, &y);
    let opts = FitOptions { tol: 1e-10, ..FitOptions::default() };
    for penalty in [Penalty::L1, Penalty::L2] {
        let fit = fit_penalized_logistic(&m, &y, 0.0, &[1.0; 5], penalty, &opts).unwrap();
        let dist = std::iter::once(fit.intercept - b0)
            .chain(fit.coefficients.iter().zip(&b).map(|(a, c)| a - c))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(dist <= 1e-6, "{penalty:?}: distance {dist}");
    }
}

#[test]
fn infinite_weight_excludes() {
    let (m, y) = random_rule_problem(200, 6, 2);
    let mut w = vec![1.0; 6];
    w[0] = f64::INFINITY;
    w[1] = f64::INFINITY;
    for penalty in [Penalty::L1, Penalty::L2] {
        let fit = fit_penalized_logistic(&m, &y, 1e-3, &w, penalty, &FitOptions::default()).unwrap();
        assert_eq!(&fit.coefficients[..2], &[0.0, 0.0]);
        let text = serde_json::to_string(&fit).unwrap();
        let back: LinearRuleModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, fit);
    }
}

#[test]
fn rejects_bad_inputs() {
    let (m, y) = random_rule_problem(40, 3, 1);
    let o = FitOptions::default();
    assert!(matches!(fit_penalized_logistic(&m, &y, -1.0, &[1.0; 3], Penalty::L1, &o), Err(EamlError::InvalidArgument(_))));
    assert!(matches!(fit_penalized_logistic(&m, &y, 0.1, &[1.0, -1.0, 1.0], Penalty::L1, &o), Err(EamlError::InvalidArgument(_))));
    assert!(fit_penalized_logistic(&m, &y, 0.1, &[1.0; 2], Penalty::L1, &o).is_err());
    assert!(fit_penalized_logistic(&m, &[0; 40], 0.1, &[1.0; 3], Penalty::L1, &o).is_err());
}

#[test]
fn sweep_budget_exhaustion_carries_the_trace() {
    let (m, y) = random_rule_problem(200, 15, 4);
    let o = FitOptions { tol: 1e-12, max_iter: 2 };
    match fit_penalized_logistic(&m, &y, 1e-4, &vec![1.0; 15], Penalty::L1, &o) {
        Err(EamlError::NonConvergence { sweeps, loss_trace }) => {
            assert_eq!(sweeps, 2);
            assert!(!loss_trace.is_empty());
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn path_properties_and_warm_start() {
    let (m, y) = random_rule_problem(300, 20, 8);
    let w = vec![1.0; 20];
    let opts = FitOptions::default();
    let path = lambda_path(&m, &y, &w, Penalty::L1, 12, &opts).unwrap();
    assert_eq!(path.len(), 12);
    assert_eq!(path[0].model.n_nonzero(), 0);
    assert!((path[11].lambda / path[0].lambda - 1e-3).abs() < 1e-12);
    assert!(path.last().unwrap().model.n_nonzero() >= path[0].model.n_nonzero());
    for p in &path {
        let cold = fit_penalized_logistic(&m, &y, p.lambda, &w, Penalty::L1, &opts).unwrap();
        assert!((objective(&m, &y, &cold) - objective(&m, &y, &p.model)).abs() <= 1e-7);
    }
    assert!(lambda_path(&m, &y, &w, Penalty::L1, 1, &opts).is_err());
}

#[test]
fn validation_selection_prefers_larger_lambda_on_ties() {
    let (m, y) = random_rule_problem(300, 10, 13);
    let path = lambda_path(&m, &y, &vec![1.0; 10], Penalty::L1, 8, &FitOptions::default()).unwrap();
    let (best, aucs) = select_by_validation(&path, &m, &y).unwrap();
    let top = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, aucs.iter().position(|&a| a == top).unwrap());
}

#[test]
fn early_stopped_path_is_a_prefix() {
    let (m, y) = random_rule_problem(400, 30, 14);
    let (val, yv) = random_rule_problem(400, 30, 15);
    let w = vec![1.0; 30];
    let opts = FitOptions::default();
    let full = lambda_path(&m, &y, &w, Penalty::L1, 15, &opts).unwrap();
    let (path, aucs, best) = validated_path(&m, &y, &w, Penalty::L1, 15, &opts, &val, &yv, 2).unwrap();
    assert!(path.len() <= full.len() && path.len() == aucs.len());
    for (a, b) in path.iter().zip(&full) {
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.model.coefficients, b.model.coefficients);
    }
    assert!(aucs[..best].iter().all(|&a| a < aucs[best]));
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut r = rng(31);
    for case in 0..10 {
        let (m, y) = random_rule_problem(80, 6, 300 + case);
        let c0 = r.random_range(-1.0..1.0);
        let c: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let (g0, g) = smooth_gradient(&m, &y, c0, &c);
        let loss = |c0: f64, c: &[f64]| {
            let zero = LinearRuleModel {
                rule_ids: m.rule_ids.clone(),
                intercept: c0,
                coefficients: c.to_vec(),
                penalty: Penalty::L1,
                lambda: 0.0,
                penalty_weights: vec![1.0; 6],
                loss_trace: vec![],
                iterations: 0,
            };
            objective(&m, &y, &zero)
        };
        let h = 1e-5;
        let fd0 = (loss(c0 + h, &c) - loss(c0 - h, &c)) / (2.0 * h);
        assert!((fd0 - g0).abs() <= 1e-5 * g0.abs().max(1e-3));
        for k in 0..6 {
            let mut up = c.clone();
            up[k] += h;
            let mut dn = c.clone();
            dn[k] -= h;
            let fd = (loss(c0, &up) - loss(c0, &dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3), "k={k}: {fd} vs {}", g[k]);
        }
        let (d0, dg) = dense_gradient(&dense(&m), &y, c0, &c);
        assert!((d0 - g0).abs() < 1e-12);
        assert!(dg.iter().zip(&g).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn prediction_closed_form_and_double_loop() {
    let m = RuleMatrix { n_rows: 3, rule_ids: vec!["a".into()], columns: vec![vec![0, 2]] };
    let model = LinearRuleModel {
        rule_ids: vec!["a".into()],
        intercept: 0.0,
        coefficients: vec![1.0],
        penalty: Penalty::L1,
        lambda: 0.0,
        penalty_weights: vec![1.0],
        loss_trace: vec![],
        iterations: 0,
    };
    let p = predict_linear(&model, &m).unwrap();
    assert!((p[0] - 0.7310585786300049).abs() < 1e-15 && p[1] == 0.5);

    let (r, _) = random_rule_problem(100, 7, 41);
    let mut g = rng(41);
    let model = LinearRuleModel {
        rule_ids: r.rule_ids.clone(),
        intercept: 0.3,
        coefficients: (0..7).map(|_| g.random_range(-2.0..2.0)).collect(),
        penalty_weights: vec![1.0; 7],
        ..model
    };
    let x = dense(&r);
    let p = predict_linear(&model, &r).unwrap();
    for (row, pi) in x.iter().zip(&p) {
        let eta = 0.3 + row.iter().zip(&model.coefficients).map(|(a, b)| a * b).sum::<f64>();
        assert!((sigmoid(eta) - pi).abs() < 1e-14);
    }
    let wrong = RuleMatrix { n_rows: 3, rule_ids: vec![], columns: vec![] };
    assert!(predict_linear(&model, &wrong).is_err());
}
