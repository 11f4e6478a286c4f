mod common;

use chrono::{TimeZone, Utc};
use common::rng;
use eaml::elicitation::*;
use eaml::rules::RuleMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

fn rating(expert: &str, rule: &str, r: u8) -> ExpertAssessment {
    ExpertAssessment {
        expert_id: expert.into(),
        rule_id: rule.into(),
        rating: r,
        elapsed_ms: 1200,
        timestamp: Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap(),
    }
}

fn summary(id: &str, mean_rating: f64) -> AssessmentSummary {
    AssessmentSummary { rule_id: id.into(), n_raters: 15, mean_rating, stdev: 0.5 }
}

fn ranking(summaries: &[AssessmentSummary], risks: &[f64]) -> Vec<DeltaRanking> {
    let pairs: Vec<(String, f64)> = summaries.iter().zip(risks).map(|(s, &r)| (s.rule_id.clone(), r)).collect();
    compute_delta_ranking(summaries, &pairs, 5).unwrap()
}

fn plain(id: &str, delta: f64) -> DeltaRanking {
    DeltaRanking {
        rule_id: id.into(),
        empirical_risk: 0.0,
        mean_rating: 0.0,
        rank_e: 0.0,
        rank_p: 0.0,
        delta,
        abs_bin: 0,
    }
}

#[test]
fn aggregation_mean_and_population_sd() {
    let a = vec![
        rating("e1", "r1", 4),
        rating("e2", "r1", 4),
        rating("e3", "r1", 4),
        rating("e1", "r2", 1),
        rating("e2", "r2", 5),
    ];
    let s = aggregate(&a).unwrap();
    assert_eq!(s[0].rule_id, "r1");
    assert_eq!((s[0].n_raters, s[0].mean_rating, s[0].stdev), (3, 4.0, 0.0));
    assert_eq!((s[1].n_raters, s[1].mean_rating, s[1].stdev), (2, 3.0, 2.0));

    let (ordered, unrated) = aggregate_for(&a, &["r2".into(), "r9".into(), "r1".into()]).unwrap();
    assert_eq!(ordered.iter().map(|x| x.rule_id.as_str()).collect::<Vec<_>>(), ["r2", "r1"]);
    assert_eq!(unrated, ["r9"]);
}

#[test]
fn aggregation_rejects_bad_ratings() {
    assert!(aggregate(&[rating("e1", "r1", 0)]).is_err());
    assert!(aggregate(&[rating("e1", "r1", 6)]).is_err());
    assert!(aggregate(&[rating("e1", "r1", 2), rating("e1", "r1", 3)]).is_err());
}

#[test]
fn empirical_risk_counts_events_in_support() {
    let m = RuleMatrix { n_rows: 6, rule_ids: vec!["a".into(), "b".into()], columns: vec![vec![0, 2, 3, 5], vec![]] };
    let y = [1, 0, 0, 1, 1, 0];
    assert_eq!(empirical_risk("a", &m, &y).unwrap(), 0.5);
    assert!(empirical_risk("b", &m, &y).is_err());
    assert!(empirical_risk("zz", &m, &y).is_err());
}

#[test]
fn identical_orderings_give_zero_deltas() {
    let s: Vec<_> = (0..8).map(|k| summary(&format!("r{k}"), 1.0 + k as f64 * 0.5)).collect();
    let risks: Vec<f64> = (0..8).map(|k| 0.01 * k as f64).collect();
    let d = ranking(&s, &risks);
    assert!(d.iter().all(|x| x.delta == 0.0 && x.abs_bin == 0));
}

#[test]
fn reversed_orderings_on_three_rules() {
    let s = vec![summary("a", 5.0), summary("b", 3.0), summary("c", 1.0)];
    let d = ranking(&s, &[0.1, 0.2, 0.3]);
    assert_eq!(d.iter().map(|x| x.delta).collect::<Vec<_>>(), [-2.0, 0.0, 2.0]);
    assert_eq!(d.iter().map(|x| x.abs_bin).collect::<Vec<_>>(), [4, 0, 4]);
    // overrated rule (experts think it is the riskiest) is negative
    assert_eq!(d[0].rank_p, 3.0);
}

#[test]
fn rank_sums_are_conserved_with_ties() {
    let mut r = rng(3);
    let k = 126;
    let s: Vec<_> = (0..k).map(|j| summary(&format!("r{j:03}"), (r.random_range(15..=75) as f64) / 15.0)).collect();
    let risks: Vec<f64> = (0..k).map(|_| (r.random_range(0..40) as f64) / 40.0).collect();
    let d = ranking(&s, &risks);
    let half = (k * (k + 1) / 2) as f64;
    assert_eq!(d.iter().map(|x| x.rank_e).sum::<f64>(), half);
    assert_eq!(d.iter().map(|x| x.rank_p).sum::<f64>(), half);
    assert_eq!(d.iter().map(|x| x.delta).sum::<f64>(), 0.0);
    assert!(d.iter().all(|x| x.abs_bin < 5));
    assert!(d.iter().filter(|x| x.delta == 0.0).all(|x| x.abs_bin == 0));
}

#[test]
fn swapping_the_rankings_negates_deltas() {
    let mut r = rng(4);
    let k = 30;
    let ratings: Vec<f64> = (0..k).map(|_| r.random_range(1.0..5.0)).collect();
    let risks: Vec<f64> = (0..k).map(|_| r.random_range(0.0..1.0)).collect();
    let s: Vec<_> = (0..k).map(|j| summary(&format!("r{j}"), ratings[j])).collect();
    let swapped: Vec<_> = (0..k).map(|j| summary(&format!("r{j}"), risks[j])).collect();
    let a = ranking(&s, &risks);
    let b = ranking(&swapped, &ratings);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.delta, -y.delta);
        assert_eq!(x.abs_bin, y.abs_bin);
    }
}

#[test]
fn monotone_transform_of_risks_changes_nothing() {
    let mut r = rng(5);
    let k = 40;
    let s: Vec<_> = (0..k).map(|j| summary(&format!("r{j}"), r.random_range(1.0..5.0))).collect();
    let risks: Vec<f64> = (0..k).map(|_| r.random_range(0.01..0.99)).collect();
    let logit: Vec<f64> = risks.iter().map(|p| (p / (1.0 - p)).ln() * 3.0 + 7.0).collect();
    let a = ranking(&s, &risks);
    let b = ranking(&s, &logit);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.rank_e, x.delta, x.abs_bin), (y.rank_e, y.delta, y.abs_bin));
    }
}

#[test]
fn delta_ranking_rejects_mismatched_inputs() {
    let s = vec![summary("a", 1.0), summary("b", 2.0)];
    assert!(compute_delta_ranking(&s, &[("a".into(), 0.1)], 5).is_err());
    assert!(compute_delta_ranking(&s, &[("a".into(), 0.1), ("c".into(), 0.2)], 5).is_err());
    assert!(compute_delta_ranking(&s, &[("a".into(), 0.1), ("b".into(), 0.2)], 1).is_err());
}

#[test]
fn bins_are_equal_width() {
    assert_eq!(abs_bins(&[0.0, -1.0, 2.0, 4.9, -5.0, 10.0], 5), [0, 0, 1, 2, 2, 4]);
    assert_eq!(abs_bins(&[0.0, 0.0], 5), [0, 0]);
}

#[test]
fn symmetric_deltas_flag_the_extremes() {
    let mut d = Vec::new();
    for v in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        for c in 0..20 {
            d.push(plain(&format!("{v}:{c:02}"), v));
        }
    }
    d.shuffle(&mut rng(6));
    let (low, high) = outlier_rules(&d, 0.9).unwrap();
    assert_eq!(low.len(), 20);
    assert_eq!(high.len(), 20);
    assert!(low.iter().all(|x| x.delta == -2.0));
    assert!(high.iter().all(|x| x.delta == 2.0));
    assert!(low.windows(2).all(|w| w[0].rule_id < w[1].rule_id));
}

#[test]
fn outlier_tails_are_about_five_percent() {
    let mut r = rng(7);
    let d: Vec<_> = (0..126).map(|k| plain(&format!("r{k}"), r.random_range(-60.0..60.0))).collect();
    let (low, high) = outlier_rules(&d, 0.9).unwrap();
    assert!((5..=8).contains(&low.len()), "{}", low.len());
    assert!((5..=8).contains(&high.len()), "{}", high.len());
    assert!(low.windows(2).all(|w| w[0].delta.abs() >= w[1].delta.abs()));
    assert!(high.windows(2).all(|w| w[0].delta.abs() >= w[1].delta.abs()));
}

#[test]
fn flat_deltas_flag_nothing() {
    let d: Vec<_> = (0..30).map(|k| plain(&format!("r{k}"), 0.0)).collect();
    assert_eq!(outlier_rules(&d, 0.9).unwrap(), (vec![], vec![]));
    assert!(outlier_rules(&d, 1.0).is_err());
    assert!(outlier_rules(&d, 0.0).is_err());
}

#[test]
fn quintiles() {
    let rated = |risks: &[f64]| -> Vec<DeltaRanking> {
        risks
            .iter()
            .enumerate()
            .map(|(k, &risk)| DeltaRanking { empirical_risk: risk, mean_rating: k as f64, ..plain(&format!("r{k:02}"), 0.0) })
            .collect()
    };
    let q = quintile_calibration(&rated(&(1..=10).map(f64::from).collect::<Vec<_>>())).unwrap();
    assert_eq!(q.iter().map(|x| x.mean_empirical_risk).collect::<Vec<_>>(), [1.5, 3.5, 5.5, 7.5, 9.5]);
    // sample sd of {a, a+1} is 1/sqrt(2); se = 1/2
    assert!(q.iter().all(|x| (x.half_width - 1.96 * 0.5).abs() < 1e-12));

    let q = quintile_calibration(&rated(&[0.2; 12])).unwrap();
    assert_eq!(q.iter().map(|x| x.n_rules).collect::<Vec<_>>(), [3, 3, 2, 2, 2]);
    assert!(q.iter().all(|x| (x.mean_empirical_risk - 0.2).abs() < 1e-15 && x.half_width < 1e-15));

    assert!(quintile_calibration(&rated(&[0.1; 4])).is_err());
}

#[test]
fn assessment_jsonl_round_trip() {
    let a = vec![rating("e1", "r1", 3), rating("e2", "r1", 5)];
    let mut buf = Vec::new();
    write_assessments(&a, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_assessments(&buf[..]).unwrap(), a);
    assert!(read_assessments(&b"{\"nope\": 1}\n"[..]).is_err());
}

#[test]
fn delta_report_has_one_row_per_rule() {
    let s = vec![summary("a", 5.0), summary("b", 3.0), summary("c", 1.0)];
    let d = ranking(&s, &[0.1, 0.2, 0.3]);
    let mut buf = Vec::new();
    write_delta_report(&d, |id| format!("rule {id}"), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("a\trule a\t5.0000\t0.1000\t3\t1\t-2\t4"));
}
