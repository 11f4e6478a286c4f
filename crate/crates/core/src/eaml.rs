//! Expert-augmented refits of the rule ensemble.
//!
//! * hard: drop rules whose binned disagreement exceeds a threshold, refit the L1 model;
//! * soft: ridge with per-rule weights `1 + gamma |dR| / (sd + 4 max sd)`;
//! * general: `lambda sum f(dR, sd) |c|^m` for a chosen weight function and `m` in {1, 2}.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::elicitation::{AssessmentSummary, DeltaRanking};
use crate::error::{EamlError, Result};
use crate::evaluation::auc;
use crate::par;
use crate::rules::RuleMatrix;
use crate::sparse_linear::{fit_penalized_logistic, linear_margins, FitOptions, LinearRuleModel, Penalty};

const STDEV_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaSource {
    /// The binned `|delta|` label.
    #[default]
    Binned,
    /// The raw `|rank_e - rank_p|`.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFunction {
    /// `f = 1`
    Uniform,
    /// `f = |dR| / max(sd, 1e-6)`
    DeltaOverStdev,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EamlMode {
    Hard { max_bin: usize, lambda: f64 },
    Soft { lambda: f64, gamma: f64 },
    General { lambda: f64, weight: WeightFunction, norm: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EamlConfig {
    #[serde(flatten)]
    pub mode: EamlMode,
    #[serde(default)]
    pub delta_source: DeltaSource,
}

/// Per-column disagreement magnitude and rater spread, aligned with `r`'s columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertColumns {
    pub delta: Vec<f64>,
    pub bins: Vec<usize>,
    pub stdev: Vec<f64>,
}

pub fn align(r: &RuleMatrix, deltas: &[DeltaRanking], summaries: &[AssessmentSummary], source: DeltaSource) -> Result<ExpertColumns> {
    let d: HashMap<&str, &DeltaRanking> = deltas.iter().map(|x| (x.rule_id.as_str(), x)).collect();
    let s: HashMap<&str, &AssessmentSummary> = summaries.iter().map(|x| (x.rule_id.as_str(), x)).collect();
    let mut out = ExpertColumns { delta: vec![], bins: vec![], stdev: vec![] };
    for id in &r.rule_ids {
        let dr = d.get(id.as_str()).ok_or_else(|| EamlError::data(format!("no delta ranking for rule {id}")))?;
        let sm = s.get(id.as_str()).ok_or_else(|| EamlError::data(format!("no rating summary for rule {id}")))?;
        out.delta.push(match source {
            DeltaSource::Binned => dr.abs_bin as f64,
            DeltaSource::Raw => dr.delta.abs(),
        });
        out.bins.push(dr.abs_bin);
        out.stdev.push(sm.stdev);
    }
    Ok(out)
}

/// Columns whose bin does not exceed `max_bin`.
pub fn hard_survivors(bins: &[usize], max_bin: usize) -> Vec<usize> {
    (0..bins.len()).filter(|&k| bins[k] <= max_bin).collect()
}

/// Refits the L1 model on the surviving columns; the model's `rule_ids` lists the survivors.
pub fn fit_hard_eaml(r: &RuleMatrix, y: &[u8], deltas: &[DeltaRanking], max_bin: usize, lambda: f64, opts: &FitOptions) -> Result<LinearRuleModel> {
    let by_id: HashMap<&str, usize> = deltas.iter().map(|d| (d.rule_id.as_str(), d.abs_bin)).collect();
    let bins = r
        .rule_ids
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| EamlError::data(format!("no delta ranking for rule {id}"))))
        .collect::<Result<Vec<_>>>()?;
    let keep = hard_survivors(&bins, max_bin);
    if keep.is_empty() {
        return Err(EamlError::data(format!("no rule survives max_bin {max_bin}")));
    }
    let sub = r.select_columns(&keep);
    fit_penalized_logistic(&sub, y, lambda, &vec![1.0; keep.len()], Penalty::L1, opts)
}

/// `w_k = 1 + gamma |dR_k| / (sd_k + 4 M)`, `M = max sd`; with `M = 0`, `w_k = 1 + gamma |dR_k|`.
pub fn soft_penalty_weights(delta: &[f64], stdev: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) {
        return Err(EamlError::invalid(format!("gamma must be non-negative, got {gamma}")));
    }
    if delta.len() != stdev.len() {
        return Err(EamlError::invalid("delta and stdev lengths differ"));
    }
    let m = stdev.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(delta
        .iter()
        .zip(stdev)
        .map(|(&d, &s)| if m == 0.0 { 1.0 + gamma * d.abs() } else { 1.0 + gamma * d.abs() / (s + 4.0 * m) })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn fit_soft_eaml(
    r: &RuleMatrix,
    y: &[u8],
    deltas: &[DeltaRanking],
    summaries: &[AssessmentSummary],
    lambda: f64,
    gamma: f64,
    source: DeltaSource,
    opts: &FitOptions,
) -> Result<LinearRuleModel> {
    let cols = align(r, deltas, summaries, source)?;
    let w = soft_penalty_weights(&cols.delta, &cols.stdev, gamma)?;
    fit_penalized_logistic(r, y, lambda, &w, Penalty::L2, opts)
}

pub fn general_weights(cols: &ExpertColumns, weight: WeightFunction) -> Vec<f64> {
    match weight {
        WeightFunction::Uniform => vec![1.0; cols.delta.len()],
        WeightFunction::DeltaOverStdev => cols.delta.iter().zip(&cols.stdev).map(|(d, s)| d.abs() / s.max(STDEV_FLOOR)).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn fit_general_eaml(
    r: &RuleMatrix,
    y: &[u8],
    deltas: &[DeltaRanking],
    summaries: &[AssessmentSummary],
    lambda: f64,
    weight: WeightFunction,
    norm: u8,
    source: DeltaSource,
    opts: &FitOptions,
) -> Result<LinearRuleModel> {
    let penalty = match norm {
        1 => Penalty::L1,
        2 => Penalty::L2,
        m => return Err(EamlError::invalid(format!("norm must be 1 or 2, got {m}"))),
    };
    let cols = align(r, deltas, summaries, source)?;
    let w = general_weights(&cols, weight);
    if let Some(k) = w.iter().position(|x| !x.is_finite()) {
        return Err(EamlError::data(format!("penalty weight undefined for rule {}", r.rule_ids[k])));
    }
    fit_penalized_logistic(r, y, lambda, &w, penalty, opts)
}

/// Dispatches on `config.mode`.
pub fn fit_eaml(r: &RuleMatrix, y: &[u8], deltas: &[DeltaRanking], summaries: &[AssessmentSummary], config: &EamlConfig, opts: &FitOptions) -> Result<LinearRuleModel> {
    match config.mode {
        EamlMode::Hard { max_bin, lambda } => fit_hard_eaml(r, y, deltas, max_bin, lambda, opts),
        EamlMode::Soft { lambda, gamma } => fit_soft_eaml(r, y, deltas, summaries, lambda, gamma, config.delta_source, opts),
        EamlMode::General { lambda, weight, norm } => {
            fit_general_eaml(r, y, deltas, summaries, lambda, weight, norm, config.delta_source, opts)
        }
    }
}

/// Scores `m` on a matrix whose columns are a superset of the model's rules.
pub fn model_auc(m: &LinearRuleModel, r: &RuleMatrix, y: &[u8]) -> Result<f64> {
    let cols = m
        .rule_ids
        .iter()
        .map(|id| r.column_index(id).ok_or_else(|| EamlError::data(format!("rule {id} missing from evaluation matrix"))))
        .collect::<Result<Vec<_>>>()?;
    auc(&linear_margins(m, &r.select_columns(&cols))?, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Grid {
    Hard { max_bins: Vec<usize>, lambdas: Vec<f64> },
    Soft { lambdas: Vec<f64>, gammas: Vec<f64> },
}

impl Grid {
    fn points(&self) -> Vec<EamlMode> {
        match self {
            Grid::Hard { max_bins, lambdas } => max_bins
                .iter()
                .flat_map(|&b| lambdas.iter().map(move |&l| EamlMode::Hard { max_bin: b, lambda: l }))
                .collect(),
            Grid::Soft { lambdas, gammas } => lambdas
                .iter()
                .flat_map(|&l| gammas.iter().map(move |&g| EamlMode::Soft { lambda: l, gamma: g }))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub max_bin: Option<usize>,
    pub train_auc: f64,
    pub validation_auc: f64,
    pub test_auc: Option<f64>,
    pub n_nonzero: usize,
    /// Set when the fit failed; such points are never selected.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_index: usize,
    pub best: GridScore,
    pub table: Vec<GridScore>,
}

/// Labeled `(matrix, labels)` pair.
pub type Labeled<'a> = (&'a RuleMatrix, &'a [u8]);

/// True when `a` should be preferred over `b` on equal validation AUC.
fn simpler(a: &GridScore, b: &GridScore) -> bool {
    if a.lambda != b.lambda {
        return a.lambda > b.lambda;
    }
    match (a.gamma, b.gamma, a.max_bin, b.max_bin) {
        (Some(ga), Some(gb), _, _) => ga > gb,
        (_, _, Some(ma), Some(mb)) => ma < mb,
        _ => false,
    }
}

/// Fits every grid point on `train`, scores validation AUC, and returns the best point.
/// Ties prefer the larger lambda, then the larger gamma or the smaller max_bin.
#[allow(clippy::too_many_arguments)]
pub fn select_hyperparams(
    train: Labeled<'_>,
    validation: Labeled<'_>,
    test: Option<Labeled<'_>>,
    deltas: &[DeltaRanking],
    summaries: &[AssessmentSummary],
    grid: &Grid,
    source: DeltaSource,
    opts: &FitOptions,
) -> Result<Selection> {
    let points = grid.points();
    if points.is_empty() {
        return Err(EamlError::invalid("empty hyperparameter grid"));
    }
    let table: Vec<GridScore> = par::map_slice(&points, |mode| {
        let (lambda, gamma, max_bin) = match *mode {
            EamlMode::Hard { max_bin, lambda } => (lambda, None, Some(max_bin)),
            EamlMode::Soft { lambda, gamma } => (lambda, Some(gamma), None),
            EamlMode::General { lambda, .. } => (lambda, None, None),
        };
        let cfg = EamlConfig { mode: *mode, delta_source: source };
        let scored = fit_eaml(train.0, train.1, deltas, summaries, &cfg, opts).and_then(|m| {
            let tr = model_auc(&m, train.0, train.1)?;
            let va = model_auc(&m, validation.0, validation.1)?;
            let te = test.map(|t| model_auc(&m, t.0, t.1)).transpose()?;
            Ok((tr, va, te, m.n_nonzero()))
        });
        match scored {
            Ok((train_auc, validation_auc, test_auc, n_nonzero)) => {
                GridScore { lambda, gamma, max_bin, train_auc, validation_auc, test_auc, n_nonzero, error: None }
            }
            Err(e) => GridScore {
                lambda,
                gamma,
                max_bin,
                train_auc: f64::NAN,
                validation_auc: f64::NAN,
                test_auc: None,
                n_nonzero: 0,
                error: Some(e.to_string()),
            },
        }
    });
    let mut best: Option<usize> = None;
    for (i, s) in table.iter().enumerate() {
        if s.error.is_some() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &table[b];
                if s.validation_auc > cur.validation_auc || (s.validation_auc == cur.validation_auc && simpler(s, cur)) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    let best_index = best.ok_or_else(|| {
        EamlError::data(format!("every grid point failed; first error: {}", table[0].error.as_deref().unwrap_or("")))
    })?;
    Ok(Selection { best_index, best: table[best_index].clone(), table })
}

/// Tab-separated score table.
pub fn write_score_table<W: Write>(table: &[GridScore], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    out.write_record(["lambda", "gamma", "max_bin", "train_auc", "validation_auc", "test_auc", "n_nonzero", "error"])?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for s in table {
        out.write_record([
            format!("{}", s.lambda),
            opt(s.gamma.map(|g| g.to_string())),
            opt(s.max_bin.map(|b| b.to_string())),
            format!("{:.6}", s.train_auc),
            format!("{:.6}", s.validation_auc),
            opt(s.test_auc.map(|a| format!("{a:.6}"))),
            s.n_nonzero.to_string(),
            s.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| EamlError::io("<score table>", e))?;
    Ok(())
}
