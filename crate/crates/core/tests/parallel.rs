mod common;

use common::{mixed_dataset, random_rule_problem};
use eaml::eaml::{select_hyperparams, DeltaSource, Grid};
use eaml::elicitation::{AssessmentSummary, DeltaRanking};
use eaml::evaluation::{learning_curve, CurveTestSet, LearningCurveConfig, RuleSubset};
use eaml::gbm::{fit_gbm, GbmConfig};
use eaml::par;
use eaml::rules::{build_rule_matrix, extract_rules, ExtractConfig};
use eaml::sparse_linear::FitOptions;

#[test]
fn pool_and_single_worker_agree() {
    let d = mixed_dataset(700, 5, 1);
    let cfg = GbmConfig { n_trees: 40, ..Default::default() };
    let run = || {
        let m = fit_gbm(&d, &cfg).unwrap();
        let rules = extract_rules(&m, &ExtractConfig::default());
        (m.clone(), build_rule_matrix(&rules, &d).unwrap(), m.margins(&d).unwrap())
    };
    assert_eq!(run(), par::sequentially(run));
}

#[test]
fn grid_and_curves_agree() {
    let (m, y) = random_rule_problem(900, 10, 2);
    let (t, ty) = random_rule_problem(300, 10, 3);
    let deltas: Vec<DeltaRanking> = m
        .rule_ids
        .iter()
        .enumerate()
        .map(|(k, id)| DeltaRanking {
            rule_id: id.clone(),
            empirical_risk: 0.0,
            mean_rating: 0.0,
            rank_e: 0.0,
            rank_p: 0.0,
            delta: k as f64,
            abs_bin: k % 5,
        })
        .collect();
    let summaries: Vec<AssessmentSummary> =
        m.rule_ids.iter().map(|id| AssessmentSummary { rule_id: id.clone(), n_raters: 3, mean_rating: 2.0, stdev: 1.0 }).collect();
    let grid = Grid::Soft { lambdas: vec![1e-3, 1e-2], gammas: vec![0.0, 2.0] };
    let opts = FitOptions::default();
    let select = || select_hyperparams((&m, &y), (&t, &ty), None, &deltas, &summaries, &grid, DeltaSource::Binned, &opts).unwrap();
    assert_eq!(select().table, par::sequentially(select).table);

    let all: Vec<usize> = (0..10).collect();
    let tests = [CurveTestSet { name: "t", matrix: &t, labels: &ty }];
    let subsets = [RuleSubset { name: "all", columns: &all }];
    let cfg = LearningCurveConfig { sizes: vec![200, 400], n_subsamples: 3, n_lambdas: 6, ..Default::default() };
    let curves = || learning_curve(&m, &y, &tests, &subsets, &cfg).unwrap();
    assert_eq!(curves(), par::sequentially(curves));
}
