use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use eaml::dataset::{impute_mean, save_csv, stratified_split_indices, Dataset};
use eaml::eaml::{fit_eaml, model_auc, select_hyperparams, DeltaSource, EamlConfig, EamlMode, Grid, WeightFunction};
use eaml::elicitation::{
    aggregate_for, compute_delta_ranking, outlier_rules, quintile_calibration, read_assessments, write_assessments,
    write_delta_report, AssessmentSummary, DeltaRanking,
};
use eaml::evaluation::{
    learning_curve as fit_curves, shift_eval, write_learning_curves, write_reports, CurveTestSet, LearningCurveConfig, RuleSubset,
};
use eaml::pipeline::{empirical_risks, fit_rulefit, summarize_fit, RuleFitConfig, RuleFitModel};
use eaml::rules::{build_rule_matrix, write_rule_export, RuleMatrix};
use eaml::sparse_linear::{FitOptions, LinearRuleModel};
use eaml::synthetic::{generate, simulate_experts, SimulatedExpertSpec, SyntheticSpec};
use eaml_service::{router, SessionManager};
use serde::{Deserialize, Serialize};

use crate::io::*;

/// Column name `synth` gives the outcome.
pub const OUTCOME: &str = "outcome";

/// A bad flag combination; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "usage: {}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// Feature schema (JSON).
    #[arg(long)]
    pub schema: PathBuf,
    /// Name of the 0/1 outcome column.
    #[arg(long, default_value = OUTCOME)]
    pub outcome: String,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    /// Generator spec (JSON); built-in defaults when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = a.spec.as_deref().map(read_json).transpose()?.unwrap_or_default();
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.n_train = a.n_train.unwrap_or(spec.n_train);
    spec.n_test = a.n_test.unwrap_or(spec.n_test);
    let data = generate(&spec).context("synth")?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    data.train.schema().save(a.out.join("schema.json"))?;
    write_json(&a.out.join("spec.json"), &spec)?;
    for (name, d) in [
        ("train", &data.train),
        ("test_same", &data.test_same),
        ("test_recoded", &data.test_recoded),
        ("test_temporal", &data.test_temporal),
    ] {
        save_csv(d, a.out.join(format!("{name}.csv")), OUTCOME)?;
        println!("{name}\t{} rows\tprevalence {:.4}", d.n_rows(), d.prevalence());
    }
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct RulefitArgs {
    /// Training CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub io: DataArgs,
    /// Stage config (JSON); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Rule export (JSONL) of the selected rules.
    #[arg(long)]
    pub out_rules: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out CSV to report on; the validation split otherwise.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

pub fn rulefit_fit(a: &RulefitArgs) -> Result<()> {
    let schema = load_schema(&a.io.schema)?;
    let train = load_data(&a.data, &schema, &a.io.outcome)?;
    let mut cfg: RuleFitConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let out = fit_rulefit(&train, &cfg).context("rulefit-fit")?;
    if out.model.rules.is_empty() {
        bail!("rulefit-fit: the selected model keeps no rules");
    }
    write_json(&a.out_model, &out.model)?;
    let mut w = create(&a.out_rules)?;
    write_rule_export(&out.model.rules, &out.imputed, &mut w).context("rulefit-fit: writing rule export")?;
    w.flush()?;

    let (held_name, held) = match &a.test {
        Some(p) => ("test", load_data(p, &schema, &a.io.outcome)?),
        None => ("validation", out.imputed.select(&out.validation_rows)),
    };
    let [train_auc, held_auc, train_ba, held_ba] = summarize_fit(&out.model, &train, &held)?;
    println!("lambda\t{:.6e}", out.model.linear.lambda);
    println!("rules\t{} of {} candidates", out.model.rules.len(), out.candidates.len());
    println!("train_auc\t{train_auc:.4}");
    println!("{held_name}_auc\t{held_auc:.4}");
    println!("train_balanced_accuracy\t{train_ba:.4}");
    println!("{held_name}_balanced_accuracy\t{held_ba:.4}");
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct SimulateArgs {
    /// Rule export (JSONL).
    #[arg(long)]
    pub rules: PathBuf,
    /// Data shown to the raters.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub io: DataArgs,
    /// Generator spec the data came from; supplies the raters' beliefs.
    #[arg(long)]
    pub spec: PathBuf,
    /// Rater settings (JSON); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Assessments output (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_experts: Option<usize>,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let schema = load_schema(&a.io.schema)?;
    let data = load_data(&a.data, &schema, &a.io.outcome)?;
    let rules = read_rules(&a.rules, &schema)?;
    let truth: SyntheticSpec = read_json(&a.spec)?;
    let mut espec: SimulatedExpertSpec = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    espec.seed = a.seed.unwrap_or(espec.seed);
    espec.n_experts = a.n_experts.unwrap_or(espec.n_experts);
    let (shown, _) = impute_mean(&data)?;
    let sim = simulate_experts(&rules, &shown, &truth, &espec).context("simulate-experts")?;
    let mut w = create(&a.out)?;
    write_assessments(&sim.assessments, &mut w)?;
    w.flush()?;
    println!("assessments\t{}", sim.assessments.len());
    println!("skipped\t{}", sim.skipped.len());
    Ok(())
}

/// Delta rankings plus the rating summaries they came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaFile {
    pub bins: usize,
    pub deltas: Vec<DeltaRanking>,
    pub summaries: Vec<AssessmentSummary>,
}

#[derive(Clone, Debug, Args)]
pub struct DeltaArgs {
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub assessments: PathBuf,
    /// Data the empirical risks are computed on.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub io: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub bins: usize,
    /// Central mass excluded from the outlier tails.
    #[arg(long, default_value_t = 0.9)]
    pub ci: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn delta(a: &DeltaArgs) -> Result<()> {
    let schema = load_schema(&a.io.schema)?;
    let data = load_data(&a.data, &schema, &a.io.outcome)?;
    let rules = read_rules(&a.rules, &schema)?;
    let f = File::open(&a.assessments).with_context(|| format!("opening {}", a.assessments.display()))?;
    let assessments = read_assessments(BufReader::new(f)).context("delta: reading assessments")?;
    if assessments.is_empty() {
        bail!("delta: {} holds no assessments", a.assessments.display());
    }
    let known: HashSet<&str> = rules.iter().map(|r| r.id.as_str()).collect();
    if let Some(x) = assessments.iter().find(|x| !known.contains(x.rule_id.as_str())) {
        bail!("delta: rule-id mismatch, {} is rated but absent from {}", x.rule_id, a.rules.display());
    }
    let ids: Vec<String> = rules.iter().map(|r| r.id.clone()).collect();
    let (summaries, unrated) = aggregate_for(&assessments, &ids).context("delta")?;
    if !unrated.is_empty() {
        eprintln!("warning: {} rules have no ratings and are left out", unrated.len());
    }
    let rated: HashSet<&str> = summaries.iter().map(|s| s.rule_id.as_str()).collect();
    let rated_rules: Vec<_> = rules.iter().filter(|r| rated.contains(r.id.as_str())).cloned().collect();
    let (shown, _) = impute_mean(&data)?;
    let matrix = build_rule_matrix(&rated_rules, &shown)?;
    let risks = empirical_risks(&matrix, shown.outcome())?;
    let deltas = compute_delta_ranking(&summaries, &risks, a.bins).context("delta")?;

    let describe: HashMap<&str, String> = rules.iter().map(|r| (r.id.as_str(), r.describe(&schema))).collect();
    let text = |id: &str| describe.get(id).cloned().unwrap_or_default();
    let out = &a.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = create(&out.join("delta_report.tsv"))?;
    write_delta_report(&deltas, text, &mut w)?;
    w.flush()?;

    let max = deltas.iter().fold(0.0f64, |m, d| m.max(d.delta.abs()));
    let mut census = vec![0usize; a.bins];
    for d in &deltas {
        census[d.abs_bin] += 1;
    }
    let mut w = create(&out.join("delta_histogram.tsv"))?;
    writeln!(w, "abs_bin\tlower\tupper\tcount")?;
    for (b, n) in census.iter().enumerate() {
        let width = max / a.bins as f64;
        writeln!(w, "{b}\t{:.4}\t{:.4}\t{n}", b as f64 * width, (b + 1) as f64 * width)?;
    }
    w.flush()?;

    let (low, high) = outlier_rules(&deltas, a.ci)?;
    let mut w = create(&out.join("outliers.tsv"))?;
    writeln!(w, "tail\trule_id\trule\tdelta\tmean_rating\tempirical_risk")?;
    for (tail, list) in [("overrated", &low), ("underrated", &high)] {
        for d in list {
            writeln!(w, "{tail}\t{}\t{}\t{}\t{:.4}\t{:.4}", d.rule_id, text(&d.rule_id), d.delta, d.mean_rating, d.empirical_risk)?;
        }
    }
    w.flush()?;

    if deltas.len() >= 5 {
        let mut w = create(&out.join("calibration.tsv"))?;
        writeln!(w, "quintile\tn_rules\tmean_empirical_risk\thalf_width")?;
        for q in quintile_calibration(&deltas)? {
            writeln!(w, "{}\t{}\t{:.6}\t{:.6}", q.quintile, q.n_rules, q.mean_empirical_risk, q.half_width)?;
        }
        w.flush()?;
    }
    write_json(&out.join("deltas.json"), &DeltaFile { bins: a.bins, deltas: deltas.clone(), summaries })?;

    let low_bins = census.iter().take(2).sum::<usize>();
    println!("rules\t{}", deltas.len());
    println!("bins_0_1\t{low_bins} ({:.1}%)", 100.0 * low_bins as f64 / deltas.len() as f64);
    println!("outliers\t{} overrated, {} underrated", low.len(), high.len());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Hard,
    Soft,
    General,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WeightArg {
    Uniform,
    DeltaOverStdev,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceArg {
    Binned,
    Raw,
}

#[derive(Clone, Debug, Args)]
pub struct EamlFitArgs {
    /// Rule-fit model whose rules are refit.
    #[arg(long)]
    pub model: PathBuf,
    /// Training CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = OUTCOME)]
    pub outcome: String,
    /// `deltas.json` from the delta command.
    #[arg(long)]
    pub deltas: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub max_bin: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "uniform")]
    pub weight: WeightArg,
    #[arg(long, default_value_t = 1)]
    pub norm: u8,
    #[arg(long, value_enum, default_value = "binned")]
    pub delta_source: SourceArg,
    /// Validation CSV; without it a stratified split of the training data is held out.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub validation_fraction: f64,
    /// Seed of the validation split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Hyperparameter grid (JSON); the best point is refit.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Score table path for grid runs; stdout when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Output model (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

/// A rule matrix with its labels.
type Labeled = (RuleMatrix, Vec<u8>);

fn labels(d: &Dataset) -> Vec<u8> {
    d.outcome().to_vec()
}

pub fn eaml_fit(a: &EamlFitArgs) -> Result<()> {
    let base: RuleFitModel = read_json(&a.model)?;
    let deltas: DeltaFile = read_json(&a.deltas)?;
    let train = load_data(&a.data, &base.schema, &a.outcome)?;
    let source = match a.delta_source {
        SourceArg::Binned => DeltaSource::Binned,
        SourceArg::Raw => DeltaSource::Raw,
    };
    let opts = FitOptions::default();
    let r_all = base.matrix(&train)?;
    let y_all = labels(&train);
    let test = a.test.as_deref().map(|p| load_data(p, &base.schema, &a.outcome)).transpose()?;
    let test = test.as_ref().map(|d| Ok::<_, anyhow::Error>((base.matrix(d)?, labels(d)))).transpose()?;

    // (fit, validation) pair; the grid needs one, a single fit only reports it
    let split = |need: bool| -> Result<Option<(Labeled, Labeled)>> {
        if let Some(p) = &a.validation {
            let v = load_data(p, &base.schema, &a.outcome)?;
            return Ok(Some(((r_all.clone(), y_all.clone()), (base.matrix(&v)?, labels(&v)))));
        }
        if !need {
            return Ok(None);
        }
        let (fit, val) = stratified_split_indices(&y_all, 1.0 - a.validation_fraction, a.seed)?;
        let pick = |rows: &[usize]| (r_all.select_rows(rows), rows.iter().map(|&i| y_all[i]).collect::<Vec<u8>>());
        Ok(Some((pick(&fit), pick(&val))))
    };

    let (linear, fit_on, val) = match &a.grid {
        Some(path) => {
            let grid: Grid = read_json(path)?;
            match (&grid, a.mode) {
                (Grid::Hard { .. }, ModeArg::Hard) | (Grid::Soft { .. }, ModeArg::Soft) => {}
                _ => return Err(usage(format!("grid in {} does not match --mode {:?}", path.display(), a.mode))),
            }
            let (fit, val) = split(true)?.expect("split requested");
            let sel = select_hyperparams(
                (&fit.0, &fit.1),
                (&val.0, &val.1),
                test.as_ref().map(|(r, y)| (r, y.as_slice())),
                &deltas.deltas,
                &deltas.summaries,
                &grid,
                source,
                &opts,
            )
            .context("eaml-fit: grid search")?;
            match &a.table {
                Some(p) => {
                    let mut w = create(p)?;
                    eaml::eaml::write_score_table(&sel.table, &mut w)?;
                    w.flush()?;
                }
                None => eaml::eaml::write_score_table(&sel.table, std::io::stdout().lock())?,
            }
            let b = &sel.best;
            let mode = match (b.max_bin, b.gamma) {
                (Some(max_bin), _) => EamlMode::Hard { max_bin, lambda: b.lambda },
                (_, Some(gamma)) => EamlMode::Soft { lambda: b.lambda, gamma },
                _ => unreachable!("grid points carry gamma or max_bin"),
            };
            eprintln!("selected {mode:?} with validation AUC {:.4}", b.validation_auc);
            let cfg = EamlConfig { mode, delta_source: source };
            let m = fit_eaml(&fit.0, &fit.1, &deltas.deltas, &deltas.summaries, &cfg, &opts).context("eaml-fit: refit")?;
            (m, fit, Some(val))
        }
        None => {
            let lambda = a.lambda.ok_or_else(|| usage("--lambda is required without --grid"))?;
            let mode = match a.mode {
                ModeArg::Hard => EamlMode::Hard {
                    max_bin: a.max_bin.ok_or_else(|| usage("--mode hard needs --max-bin"))?,
                    lambda,
                },
                ModeArg::Soft => EamlMode::Soft { lambda, gamma: a.gamma.ok_or_else(|| usage("--mode soft needs --gamma"))? },
                ModeArg::General => EamlMode::General {
                    lambda,
                    weight: match a.weight {
                        WeightArg::Uniform => WeightFunction::Uniform,
                        WeightArg::DeltaOverStdev => WeightFunction::DeltaOverStdev,
                    },
                    norm: a.norm,
                },
            };
            let cfg = EamlConfig { mode, delta_source: source };
            let m = fit_eaml(&r_all, &y_all, &deltas.deltas, &deltas.summaries, &cfg, &opts).context("eaml-fit")?;
            let val = split(false)?.map(|(_, v)| v);
            (m, (r_all.clone(), y_all.clone()), val)
        }
    };

    println!("nonzero\t{} of {}", linear.n_nonzero(), linear.rule_ids.len());
    println!("train_auc\t{:.6}", model_auc(&linear, &fit_on.0, &fit_on.1)?);
    if let Some((r, y)) = &val {
        println!("validation_auc\t{:.6}", model_auc(&linear, r, y)?);
    }
    if let Some((r, y)) = &test {
        println!("test_auc\t{:.6}", model_auc(&linear, r, y)?);
    }
    write_json(&a.out, &with_linear(base, linear))
}

/// The base model restricted to the columns `linear` was fit on.
fn with_linear(base: RuleFitModel, linear: LinearRuleModel) -> RuleFitModel {
    let by_id: HashMap<&str, &eaml::rules::Rule> = base.rules.iter().map(|r| (r.id.as_str(), r)).collect();
    let rules = linear.rule_ids.iter().map(|id| by_id[id.as_str()].clone()).collect();
    RuleFitModel { rules, linear, ..base }
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Model file, optionally `NAME=PATH`; repeatable.
    #[arg(long, required = true, value_parser = tagged_path)]
    pub model: Vec<(String, PathBuf)>,
    /// Labeled CSV, optionally `NAME=PATH`; repeatable.
    #[arg(long, required = true, value_parser = tagged_path)]
    pub data: Vec<(String, PathBuf)>,
    #[arg(long, default_value = OUTCOME)]
    pub outcome: String,
    /// Report (TSV); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut reports = Vec::new();
    for (tag, path) in &a.model {
        let model: RuleFitModel = read_json(path)?;
        let sets = a
            .data
            .iter()
            .map(|(name, p)| Ok((name.as_str(), load_data(p, &model.schema, &a.outcome)?)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<(&str, &Dataset)> = sets.iter().map(|(n, d)| (*n, d)).collect();
        reports.extend(shift_eval(tag, &model, &refs).with_context(|| format!("eval: {tag}"))?);
    }
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            write_reports(&reports, &mut w)?;
            w.flush()?;
        }
        None => write_reports(&reports, std::io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pool the training subsamples are drawn from.
    #[arg(long)]
    pub pool: PathBuf,
    /// Test CSV, optionally `NAME=PATH`; repeatable.
    #[arg(long, required = true, value_parser = tagged_path)]
    pub test: Vec<(String, PathBuf)>,
    #[arg(long, default_value = OUTCOME)]
    pub outcome: String,
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800,1600,3200,6400")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub subsamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub n_lambdas: usize,
    /// With this, a second curve uses only rules with `abs_bin <= --max-bin`.
    #[arg(long)]
    pub deltas: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub max_bin: usize,
    /// Table (TSV); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn learning_curve(a: &CurveArgs) -> Result<()> {
    let model: RuleFitModel = read_json(&a.model)?;
    let pool = load_data(&a.pool, &model.schema, &a.outcome)?;
    let r_pool = model.matrix(&pool)?;
    let tests = a
        .test
        .iter()
        .map(|(name, p)| {
            let d = load_data(p, &model.schema, &a.outcome)?;
            Ok((name.clone(), model.matrix(&d)?, labels(&d)))
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..r_pool.n_rules()).collect();
    let filtered: Option<Vec<usize>> = match &a.deltas {
        Some(p) => {
            let file: DeltaFile = read_json(p)?;
            let bin: HashMap<&str, usize> = file.deltas.iter().map(|d| (d.rule_id.as_str(), d.abs_bin)).collect();
            Some(all.iter().copied().filter(|&k| bin.get(r_pool.rule_ids[k].as_str()).is_some_and(|&b| b <= a.max_bin)).collect())
        }
        None => None,
    };
    let mut subsets = vec![RuleSubset { name: "all", columns: &all }];
    if let Some(cols) = &filtered {
        if cols.is_empty() {
            bail!("learning-curve: no rule has abs_bin <= {}", a.max_bin);
        }
        subsets.push(RuleSubset { name: "filtered", columns: cols });
    }
    let sets: Vec<CurveTestSet> = tests.iter().map(|(n, r, y)| CurveTestSet { name: n, matrix: r, labels: y }).collect();
    let cfg = LearningCurveConfig {
        sizes: a.sizes.clone(),
        n_subsamples: a.subsamples,
        seed: a.seed,
        n_lambdas: a.n_lambdas,
        ..Default::default()
    };
    let curves = fit_curves(&r_pool, pool.outcome(), &sets, &subsets, &cfg).context("learning-curve")?;
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            write_learning_curves(&curves, &mut w)?;
            w.flush()?;
        }
        None => write_learning_curves(&curves, std::io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct ServeArgs {
    /// Rule export (JSONL) to present.
    #[arg(long)]
    pub rules: PathBuf,
    /// Assessment log (JSONL); replayed on start.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with the questionnaire bundle, served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let records = read_records(&a.rules)?;
    let n = records.len();
    let manager = SessionManager::open(records, &a.store).context("serve")?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("serving {n} rules on http://{}", listener.local_addr()?);
        eaml_service::serve(listener, router(Arc::new(manager), a.static_dir.clone())).await?;
        Ok(())
    })
}

pub fn exists(p: &Path) -> Result<()> {
    if !p.exists() {
        bail!("missing input {}", p.display());
    }
    Ok(())
}
