//! Stage drivers: the rule-ensemble fit and the end-to-end confounded study.

use serde::{Deserialize, Serialize};

use crate::dataset::{apply_imputation, impute_mean, stratified_split_indices, Dataset, ImputationReport, Schema};
use crate::eaml::{hard_survivors, model_auc, select_hyperparams, DeltaSource, Grid, Selection};
use crate::elicitation::{
    aggregate_for, compute_delta_ranking, empirical_risk_at, outlier_rules, AssessmentSummary, DeltaRanking, ExpertAssessment,
};
use crate::error::{EamlError, Result};
use crate::evaluation::{auc, balanced_accuracy, Scorer};
use crate::gbm::{fit_gbm, GbmConfig, GbmModel};
use crate::rules::{build_rule_matrix, extract_rules, filter_by_support, ExtractConfig, Rule, RuleMatrix, SupportFilter};
use crate::sparse_linear::{predict_linear, validated_path, FitOptions, LinearRuleModel, Penalty};
use crate::synthetic::{generate, simulate_experts, SimulatedExpertSpec, SyntheticData, SyntheticSpec};

/// Version tag written into every serialized artifact.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleFitConfig {
    pub gbm: GbmConfig,
    pub extract: ExtractConfig,
    pub support: SupportFilter,
    /// Share of the training rows held out to choose lambda.
    pub validation_fraction: f64,
    pub n_lambdas: usize,
    /// Stop the lambda path after this many points without a validation AUC gain; 0 walks it all.
    pub path_patience: usize,
    pub fit: FitOptions,
    pub seed: u64,
}

impl Default for RuleFitConfig {
    fn default() -> Self {
        RuleFitConfig {
            gbm: GbmConfig::default(),
            extract: ExtractConfig::default(),
            support: SupportFilter::default(),
            validation_fraction: 0.3,
            n_lambdas: 30,
            path_patience: 5,
            fit: FitOptions::default(),
            seed: 0,
        }
    }
}

/// Rules with nonzero coefficients and their linear model, plus the training imputation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleFitModel {
    pub version: u32,
    pub schema: Schema,
    pub imputation: ImputationReport,
    pub rules: Vec<Rule>,
    pub linear: LinearRuleModel,
}

impl RuleFitModel {
    /// Matrix of the model's rules on `d`, imputing with the training fills first.
    pub fn matrix(&self, d: &Dataset) -> Result<RuleMatrix> {
        if d.schema() != &self.schema {
            return Err(EamlError::data("dataset schema does not match the model"));
        }
        let d = apply_imputation(d, &self.imputation)?;
        build_rule_matrix(&self.rules, &d)
    }
}

impl Scorer for RuleFitModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn score(&self, d: &Dataset) -> Result<Vec<f64>> {
        predict_linear(&self.linear, &self.matrix(d)?)
    }
}

/// Everything produced by [`fit_rulefit`].
#[derive(Clone, Debug)]
pub struct RuleFitOutput {
    pub model: RuleFitModel,
    pub gbm: GbmModel,
    /// Support-filtered candidate rules.
    pub candidates: Vec<Rule>,
    pub lambdas: Vec<f64>,
    pub validation_aucs: Vec<f64>,
    pub selected_index: usize,
    /// Imputed training data and its fit/validation row split.
    pub imputed: Dataset,
    pub fit_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
}

/// Impute, boost, extract, filter, then an L1 path with lambda chosen by validation AUC.
pub fn fit_rulefit(train: &Dataset, cfg: &RuleFitConfig) -> Result<RuleFitOutput> {
    let (imputed, imputation) = impute_mean(train)?;
    let (fit_rows, validation_rows) = stratified_split_indices(imputed.outcome(), 1.0 - cfg.validation_fraction, cfg.seed)?;
    let fit = imputed.select(&fit_rows);
    let val = imputed.select(&validation_rows);

    let gbm = fit_gbm(&fit, &GbmConfig { seed: cfg.seed, ..cfg.gbm.clone() })?;
    let extracted = extract_rules(&gbm, &cfg.extract);
    let full = build_rule_matrix(&extracted, &fit)?;
    let (candidates, r_fit) = filter_by_support(&extracted, &full, &cfg.support);
    if candidates.is_empty() {
        return Err(EamlError::data("no candidate rule passes the support filter"));
    }
    let r_val = build_rule_matrix(&candidates, &val)?;
    let ones = vec![1.0; candidates.len()];
    let (path, validation_aucs, best) =
        validated_path(&r_fit, fit.outcome(), &ones, Penalty::L1, cfg.n_lambdas, &cfg.fit, &r_val, val.outcome(), cfg.path_patience)?;

    let chosen = &path[best].model;
    let keep: Vec<usize> = (0..candidates.len()).filter(|&k| chosen.coefficients[k] != 0.0).collect();
    let linear = restrict(chosen, &keep);
    let model = RuleFitModel {
        version: FORMAT_VERSION,
        schema: train.schema().clone(),
        imputation,
        rules: keep.iter().map(|&k| candidates[k].clone()).collect(),
        linear,
    };
    Ok(RuleFitOutput {
        model,
        gbm,
        candidates,
        lambdas: path.iter().map(|p| p.lambda).collect(),
        validation_aucs,
        selected_index: best,
        imputed,
        fit_rows,
        validation_rows,
    })
}

/// Keeps only columns `keep` of a fitted model.
pub fn restrict(m: &LinearRuleModel, keep: &[usize]) -> LinearRuleModel {
    LinearRuleModel {
        rule_ids: keep.iter().map(|&k| m.rule_ids[k].clone()).collect(),
        coefficients: keep.iter().map(|&k| m.coefficients[k]).collect(),
        penalty_weights: keep.iter().map(|&k| m.penalty_weights[k]).collect(),
        ..m.clone()
    }
}

/// L1 path on `(r_fit, y_fit)`; returns the point with the best validation AUC.
pub fn l1_path_select(
    r_fit: &RuleMatrix,
    y_fit: &[u8],
    r_val: &RuleMatrix,
    y_val: &[u8],
    n_lambdas: usize,
    patience: usize,
    opts: &FitOptions,
) -> Result<LinearRuleModel> {
    let ones = vec![1.0; r_fit.n_rules()];
    let (path, _, best) = validated_path(r_fit, y_fit, &ones, Penalty::L1, n_lambdas, opts, r_val, y_val, patience)?;
    Ok(path.into_iter().nth(best).expect("index within path").model)
}

/// Empirical risk per column as `(rule_id, risk)`.
pub fn empirical_risks(r: &RuleMatrix, y: &[u8]) -> Result<Vec<(String, f64)>> {
    (0..r.n_rules()).map(|k| Ok((r.rule_ids[k].clone(), empirical_risk_at(r, y, k)?))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub synthetic: SyntheticSpec,
    pub experts: SimulatedExpertSpec,
    pub rulefit: RuleFitConfig,
    pub bins: usize,
    pub ci: f64,
    /// Threshold for the filtered model.
    pub max_bin: usize,
    pub delta_source: DeltaSource,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            synthetic: SyntheticSpec::default(),
            experts: SimulatedExpertSpec::default(),
            rulefit: RuleFitConfig::default(),
            bins: 5,
            ci: 0.9,
            max_bin: 1,
            delta_source: DeltaSource::Binned,
        }
    }
}

impl StudyConfig {
    /// Same configuration with every stage seeded from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synthetic.seed = seed;
        self.experts.seed = seed;
        self.rulefit.seed = seed;
        self
    }
}

/// Imputed evaluation sets and their rated-rule matrices.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub name: String,
    pub data: Dataset,
    pub matrix: RuleMatrix,
}

#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub data: SyntheticData,
    pub rulefit: RuleFitOutput,
    pub assessments: Vec<ExpertAssessment>,
    pub summaries: Vec<AssessmentSummary>,
    pub deltas: Vec<DeltaRanking>,
    pub low_outliers: Vec<DeltaRanking>,
    pub high_outliers: Vec<DeltaRanking>,
    /// Rated-rule matrices on the fit and validation parts of the training data.
    pub r_fit: RuleMatrix,
    pub y_fit: Vec<u8>,
    pub r_val: RuleMatrix,
    pub y_val: Vec<u8>,
    /// Whole imputed training set on the rated rules (learning-curve pool).
    pub r_pool: RuleMatrix,
    /// `same`, `recoded`, `temporal`.
    pub tests: Vec<EvalSet>,
    pub unfiltered: LinearRuleModel,
    pub filtered: LinearRuleModel,
    /// Column indices (into the rated rules) kept by the filter.
    pub filtered_columns: Vec<usize>,
}

impl StudyOutput {
    pub fn test(&self, name: &str) -> &EvalSet {
        self.tests.iter().find(|t| t.name == name).expect("known test set name")
    }

    /// AUC of `m` on the named test set.
    pub fn test_auc(&self, m: &LinearRuleModel, name: &str) -> Result<f64> {
        let t = self.test(name);
        model_auc(m, &t.matrix, t.data.outcome())
    }

    /// Soft-EAML grid selection with the chosen validation set (`None` = in-distribution).
    pub fn select_soft(&self, grid: &Grid, validation: Option<&str>, opts: &FitOptions) -> Result<Selection> {
        let (rv, yv) = match validation {
            None => (&self.r_val, self.y_val.as_slice()),
            Some(name) => {
                let t = self.test(name);
                (&t.matrix, t.data.outcome())
            }
        };
        select_hyperparams(
            (&self.r_fit, &self.y_fit),
            (rv, yv),
            None,
            &self.deltas,
            &self.summaries,
            grid,
            DeltaSource::Binned,
            opts,
        )
    }
}

/// Generate, fit the ensemble, simulate ratings, compute deltas, and fit the unfiltered and
/// hard-filtered models on the rated rules.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    let data = generate(&cfg.synthetic)?;
    let rulefit = fit_rulefit(&data.train, &cfg.rulefit)?;
    let rated = &rulefit.model.rules;
    let imputed = &rulefit.imputed;
    let fit = imputed.select(&rulefit.fit_rows);
    let val = imputed.select(&rulefit.validation_rows);

    let sim = simulate_experts(rated, imputed, &cfg.synthetic, &cfg.experts)?;
    let rule_ids: Vec<String> = rated.iter().map(|r| r.id.clone()).collect();
    let (summaries, unrated) = aggregate_for(&sim.assessments, &rule_ids)?;
    if !unrated.is_empty() {
        return Err(EamlError::data(format!("{} selected rules received no rating", unrated.len())));
    }
    let r_pool = build_rule_matrix(rated, imputed)?;
    let risks = empirical_risks(&r_pool, imputed.outcome())?;
    let deltas = compute_delta_ranking(&summaries, &risks, cfg.bins)?;
    let (low_outliers, high_outliers) = outlier_rules(&deltas, cfg.ci)?;

    let r_fit = build_rule_matrix(rated, &fit)?;
    let r_val = build_rule_matrix(rated, &val)?;
    let y_fit = fit.outcome().to_vec();
    let y_val = val.outcome().to_vec();

    let mut tests = Vec::new();
    for (name, d) in [("same", &data.test_same), ("recoded", &data.test_recoded), ("temporal", &data.test_temporal)] {
        let d = apply_imputation(d, &rulefit.model.imputation)?;
        let matrix = build_rule_matrix(rated, &d)?;
        tests.push(EvalSet { name: name.to_string(), data: d, matrix });
    }

    let n_l = cfg.rulefit.n_lambdas;
    let opts = &cfg.rulefit.fit;
    let pat = cfg.rulefit.path_patience;
    let unfiltered = l1_path_select(&r_fit, &y_fit, &r_val, &y_val, n_l, pat, opts)?;
    let bins: Vec<usize> = deltas.iter().map(|d| d.abs_bin).collect();
    let filtered_columns = hard_survivors(&bins, cfg.max_bin);
    if filtered_columns.is_empty() {
        return Err(EamlError::data(format!("no rated rule survives max_bin {}", cfg.max_bin)));
    }
    let filtered = l1_path_select(
        &r_fit.select_columns(&filtered_columns),
        &y_fit,
        &r_val.select_columns(&filtered_columns),
        &y_val,
        n_l,
        pat,
        opts,
    )?;

    Ok(StudyOutput {
        data,
        rulefit,
        assessments: sim.assessments,
        summaries,
        deltas,
        low_outliers,
        high_outliers,
        r_fit,
        y_fit,
        r_val,
        y_val,
        r_pool,
        tests,
        unfiltered,
        filtered,
        filtered_columns,
    })
}

/// Train and held-out AUC and balanced accuracy of a rule-fit model.
pub fn summarize_fit(model: &RuleFitModel, train: &Dataset, test: &Dataset) -> Result<[f64; 4]> {
    let tr = model.score(train)?;
    let te = model.score(test)?;
    Ok([
        auc(&tr, train.outcome())?,
        auc(&te, test.outcome())?,
        balanced_accuracy(&tr, train.outcome(), 0.5)?,
        balanced_accuracy(&te, test.outcome(), 0.5)?,
    ])
}
