use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eaml::dataset::{impute_mean, Dataset};
use eaml::eaml::{select_hyperparams, DeltaSource, Grid};
use eaml::elicitation::{AssessmentSummary, DeltaRanking};
use eaml::gbm::{fit_gbm, GbmConfig};
use eaml::par;
use eaml::rules::{build_rule_matrix, extract_rules, ExtractConfig, Rule, RuleMatrix};
use eaml::sparse_linear::FitOptions;
use eaml::synthetic::{generate, SyntheticSpec};

struct Fixture {
    train: Dataset,
    rules: Vec<Rule>,
    matrix: RuleMatrix,
    deltas: Vec<DeltaRanking>,
    summaries: Vec<AssessmentSummary>,
}

fn fixture() -> Fixture {
    let data = generate(&SyntheticSpec { n_train: 4000, n_test: 10, ..Default::default() }).unwrap();
    let (train, _) = impute_mean(&data.train).unwrap();
    let gbm = fit_gbm(&train, &GbmConfig { n_trees: 100, ..Default::default() }).unwrap();
    let rules: Vec<Rule> = extract_rules(&gbm, &ExtractConfig::default()).into_iter().take(60).collect();
    let matrix = build_rule_matrix(&rules, &train).unwrap();
    let deltas = rules
        .iter()
        .enumerate()
        .map(|(k, r)| DeltaRanking {
            rule_id: r.id.clone(),
            empirical_risk: 0.0,
            mean_rating: 0.0,
            rank_e: 0.0,
            rank_p: 0.0,
            delta: (k % 5) as f64,
            abs_bin: k % 5,
        })
        .collect();
    let summaries = rules
        .iter()
        .map(|r| AssessmentSummary { rule_id: r.id.clone(), n_raters: 15, mean_rating: 3.0, stdev: 0.5 })
        .collect();
    Fixture { train, rules, matrix, deltas, summaries }
}

/// Runs `f` on the global pool or on a single worker.
fn both<R: Send>(parallel: bool, f: impl FnOnce() -> R + Send) -> R {
    if parallel {
        f()
    } else {
        par::sequentially(f)
    }
}

fn throughput(c: &mut Criterion) {
    let fx = fixture();
    let y = fx.train.outcome();
    let grid = Grid::Soft { lambdas: vec![1e-3, 1e-2], gammas: vec![0.0, 1.0, 5.0] };
    let opts = FitOptions::default();

    let mut g = c.benchmark_group("throughput");
    g.sample_size(10);
    for (label, parallel) in [("parallel", true), ("sequential", false)] {
        g.bench_with_input(BenchmarkId::new("rule_matrix", label), &parallel, |b, &p| {
            b.iter(|| both(p, || build_rule_matrix(&fx.rules, &fx.train).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("gbm_fit_50_trees", label), &parallel, |b, &p| {
            let cfg = GbmConfig { n_trees: 50, ..Default::default() };
            b.iter(|| both(p, || fit_gbm(&fx.train, &cfg).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("soft_grid_6_points", label), &parallel, |b, &p| {
            b.iter(|| {
                both(p, || {
                    select_hyperparams(
                        (&fx.matrix, y),
                        (&fx.matrix, y),
                        None,
                        &fx.deltas,
                        &fx.summaries,
                        &grid,
                        DeltaSource::Binned,
                        &opts,
                    )
                    .unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, throughput);
criterion_main!(benches);
