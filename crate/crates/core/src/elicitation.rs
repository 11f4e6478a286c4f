//! Expert ratings: aggregation, empirical risk, rank deltas, outliers and calibration.
//!
//! `delta = rank_e - rank_p`, where `rank_e` ranks rules by empirical risk and `rank_p` by
//! mean expert rating, both ascending with average ties. Rules the experts overrate come out
//! negative.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{EamlError, Result};
use crate::rules::RuleMatrix;
use crate::stats::{average_ranks, mean, median, population_sd, quantile, sample_sd};

/// Labels of the five-point scale, index 0 is rating 1.
pub const RATING_LABELS: [&str; 5] =
    ["highly decrease", "moderately decrease", "no effect", "moderately increase", "highly increase"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertAssessment {
    pub expert_id: String,
    pub rule_id: String,
    pub rating: u8,
    pub elapsed_ms: u64,
    pub timestamp: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSummary {
    pub rule_id: String,
    pub n_raters: usize,
    pub mean_rating: f64,
    /// Population standard deviation over raters.
    pub stdev: f64,
}

/// Summaries ordered by rule id.
pub fn aggregate(assessments: &[ExpertAssessment]) -> Result<Vec<AssessmentSummary>> {
    let mut seen = HashSet::new();
    let mut by_rule: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for a in assessments {
        if !(1..=5).contains(&a.rating) {
            return Err(EamlError::data(format!(
                "rating {} from `{}` on rule {} is outside 1..5",
                a.rating, a.expert_id, a.rule_id
            )));
        }
        if !seen.insert((a.expert_id.as_str(), a.rule_id.as_str())) {
            return Err(EamlError::data(format!("duplicate rating by `{}` for rule {}", a.expert_id, a.rule_id)));
        }
        by_rule.entry(&a.rule_id).or_default().push(a.rating as f64);
    }
    Ok(by_rule
        .into_iter()
        .map(|(rule_id, ratings)| AssessmentSummary {
            rule_id: rule_id.to_string(),
            n_raters: ratings.len(),
            mean_rating: mean(&ratings),
            stdev: population_sd(&ratings),
        })
        .collect())
}

/// Summaries in the order of `rule_ids`, plus the ids nobody rated.
pub fn aggregate_for(assessments: &[ExpertAssessment], rule_ids: &[String]) -> Result<(Vec<AssessmentSummary>, Vec<String>)> {
    let all = aggregate(assessments)?;
    let mut by_id: BTreeMap<&str, &AssessmentSummary> = all.iter().map(|s| (s.rule_id.as_str(), s)).collect();
    let mut out = Vec::new();
    let mut unrated = Vec::new();
    for id in rule_ids {
        match by_id.remove(id.as_str()) {
            Some(s) => out.push(s.clone()),
            None => unrated.push(id.clone()),
        }
    }
    Ok((out, unrated))
}

/// Event rate among rows covered by column `k`.
pub fn empirical_risk_at(r: &RuleMatrix, y: &[u8], k: usize) -> Result<f64> {
    let col = &r.columns[k];
    if col.is_empty() {
        return Err(EamlError::data(format!("rule {} has zero support", r.rule_ids[k])));
    }
    let events = col.iter().filter(|&&i| y[i as usize] == 1).count();
    Ok(events as f64 / col.len() as f64)
}

pub fn empirical_risk(rule_id: &str, r: &RuleMatrix, y: &[u8]) -> Result<f64> {
    let k = r
        .column_index(rule_id)
        .ok_or_else(|| EamlError::data(format!("rule {rule_id} is not a column of the rule matrix")))?;
    empirical_risk_at(r, y, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRanking {
    pub rule_id: String,
    pub empirical_risk: f64,
    pub mean_rating: f64,
    pub rank_e: f64,
    pub rank_p: f64,
    pub delta: f64,
    pub abs_bin: usize,
}

/// Equal-width bins of `|delta|` over `[0, max |delta|]`; the maximum lands in the top bin.
pub fn abs_bins(deltas: &[f64], bins: usize) -> Vec<usize> {
    let max = deltas.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    deltas
        .iter()
        .map(|d| {
            if max == 0.0 {
                0
            } else {
                ((d.abs() / max * bins as f64).floor() as usize).min(bins - 1)
            }
        })
        .collect()
}

/// `risks` are `(rule_id, empirical_risk)` pairs. Output follows the order of `summaries`.
pub fn compute_delta_ranking(summaries: &[AssessmentSummary], risks: &[(String, f64)], bins: usize) -> Result<Vec<DeltaRanking>> {
    if bins < 2 {
        return Err(EamlError::invalid("delta binning needs at least two bins"));
    }
    let risk_of: BTreeMap<&str, f64> = risks.iter().map(|(id, r)| (id.as_str(), *r)).collect();
    if risk_of.len() != risks.len() || summaries.len() != risks.len() {
        return Err(EamlError::data("rated rules and risk rules differ"));
    }
    let mut emp = Vec::with_capacity(summaries.len());
    for s in summaries {
        match risk_of.get(s.rule_id.as_str()) {
            Some(&r) => emp.push(r),
            None => return Err(EamlError::data(format!("rule {} has a rating but no empirical risk", s.rule_id))),
        }
    }
    let perceived: Vec<f64> = summaries.iter().map(|s| s.mean_rating).collect();
    let rank_e = average_ranks(&emp);
    let rank_p = average_ranks(&perceived);
    let deltas: Vec<f64> = rank_e.iter().zip(&rank_p).map(|(e, p)| e - p).collect();
    let bins_of = abs_bins(&deltas, bins);
    Ok(summaries
        .iter()
        .enumerate()
        .map(|(k, s)| DeltaRanking {
            rule_id: s.rule_id.clone(),
            empirical_risk: emp[k],
            mean_rating: s.mean_rating,
            rank_e: rank_e[k],
            rank_p: rank_p[k],
            delta: deltas[k],
            abs_bin: bins_of[k],
        })
        .collect())
}

/// Rules in the lower and upper `(1 - ci) / 2` tails of the delta distribution.
///
/// A rule is a low outlier when its delta is at or below the lower quantile and strictly
/// below the median (and mirrored for high), so a degenerate distribution flags nothing.
/// Each list is sorted by `|delta|` descending, ties by rule id.
pub fn outlier_rules(deltas: &[DeltaRanking], ci: f64) -> Result<(Vec<DeltaRanking>, Vec<DeltaRanking>)> {
    if !(ci > 0.0 && ci < 1.0) {
        return Err(EamlError::invalid(format!("confidence level {ci} outside (0,1)")));
    }
    if deltas.is_empty() {
        return Ok((vec![], vec![]));
    }
    let d: Vec<f64> = deltas.iter().map(|x| x.delta).collect();
    let lo = quantile(&d, (1.0 - ci) / 2.0);
    let hi = quantile(&d, (1.0 + ci) / 2.0);
    let med = median(&d);
    let order = |v: &mut Vec<DeltaRanking>| {
        v.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()).then_with(|| a.rule_id.cmp(&b.rule_id)))
    };
    let mut low: Vec<DeltaRanking> = deltas.iter().filter(|x| x.delta <= lo && x.delta < med).cloned().collect();
    let mut high: Vec<DeltaRanking> = deltas.iter().filter(|x| x.delta >= hi && x.delta > med).cloned().collect();
    order(&mut low);
    order(&mut high);
    Ok((low, high))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuintileRecord {
    /// 1 = lowest mean rating.
    pub quintile: usize,
    pub n_rules: usize,
    pub mean_empirical_risk: f64,
    /// 1.96 times the standard error of the mean over rules.
    pub half_width: f64,
}

/// Groups rules into five by mean rating (ties by rule id) and summarizes empirical risk.
pub fn quintile_calibration(deltas: &[DeltaRanking]) -> Result<Vec<QuintileRecord>> {
    let k = deltas.len();
    if k < 5 {
        return Err(EamlError::invalid(format!("quintile calibration needs at least 5 rules, got {k}")));
    }
    let mut sorted: Vec<&DeltaRanking> = deltas.iter().collect();
    sorted.sort_by(|a, b| a.mean_rating.total_cmp(&b.mean_rating).then_with(|| a.rule_id.cmp(&b.rule_id)));
    let base = k / 5;
    let extra = k % 5;
    let mut start = 0;
    let mut out = Vec::with_capacity(5);
    for q in 0..5 {
        let size = base + usize::from(q < extra);
        let risks: Vec<f64> = sorted[start..start + size].iter().map(|d| d.empirical_risk).collect();
        start += size;
        let se = if size > 1 { sample_sd(&risks) / (size as f64).sqrt() } else { 0.0 };
        out.push(QuintileRecord { quintile: q + 1, n_rules: size, mean_empirical_risk: mean(&risks), half_width: 1.96 * se });
    }
    Ok(out)
}

pub fn write_assessments<W: Write>(records: &[ExpertAssessment], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| EamlError::io("<assessments>", e))?;
    }
    Ok(())
}

pub fn read_assessments<R: BufRead>(r: R) -> Result<Vec<ExpertAssessment>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| EamlError::io("<assessments>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Tab-separated delta report; `describe` renders a rule id for display.
pub fn write_delta_report<W: Write>(deltas: &[DeltaRanking], describe: impl Fn(&str) -> String, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    out.write_record(["rule_id", "rule", "mean_rating", "empirical_risk", "rank_p", "rank_e", "delta", "abs_bin"])?;
    for d in deltas {
        out.write_record([
            d.rule_id.clone(),
            describe(&d.rule_id),
            format!("{:.4}", d.mean_rating),
            format!("{:.4}", d.empirical_risk),
            format!("{}", d.rank_p),
            format!("{}", d.rank_e),
            format!("{}", d.delta),
            d.abs_bin.to_string(),
        ])?;
    }
    out.flush().map_err(|e| EamlError::io("<delta report>", e))?;
    Ok(())
}
