//! Conjunctive rules read off boosted trees, the Boolean rule matrix, and rule cards.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, FeatureKind, Schema, Value};
use crate::error::{EamlError, Result};
use crate::gbm::{GbmModel, Split, TreeNode};
use crate::par;
use crate::stats::median;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Op {
    /// `x <= threshold`
    Le { threshold: f64 },
    /// `x > threshold`
    Gt { threshold: f64 },
    /// category in `levels`
    In { levels: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    #[serde(flatten)]
    pub op: Op,
}

impl Condition {
    pub fn le(feature: usize, threshold: f64) -> Self {
        Condition { feature, op: Op::Le { threshold } }
    }

    pub fn gt(feature: usize, threshold: f64) -> Self {
        Condition { feature, op: Op::Gt { threshold } }
    }

    pub fn one_of(feature: usize, levels: Vec<u32>) -> Self {
        Condition { feature, op: Op::In { levels } }
    }

    /// Missing cells fail every condition.
    pub fn matches(&self, schema: &Schema, v: Value) -> Result<bool> {
        match (&self.op, v) {
            (_, Value::Missing) => Ok(false),
            (Op::Le { threshold }, Value::Num(x)) => Ok(x <= *threshold),
            (Op::Gt { threshold }, Value::Num(x)) => Ok(x > *threshold),
            (Op::In { levels }, Value::Cat(c)) => {
                if c as usize >= schema.features[self.feature].categories.len() {
                    return Err(EamlError::data(format!(
                        "unseen category index {c} for `{}`",
                        schema.features[self.feature].name
                    )));
                }
                Ok(levels.contains(&c))
            }
            _ => Err(EamlError::data(format!(
                "condition kind does not match cell of `{}`",
                schema.features[self.feature].name
            ))),
        }
    }

    pub fn describe(&self, schema: &Schema) -> String {
        let f = &schema.features[self.feature];
        match &self.op {
            Op::Le { threshold } => format!("{} <= {}", f.name, threshold),
            Op::Gt { threshold } => format!("{} > {}", f.name, threshold),
            Op::In { levels } => {
                let names: Vec<&str> = levels.iter().map(|&l| f.categories[l as usize].as_str()).collect();
                format!("{} in {{{}}}", f.name, names.join(", "))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tree: usize,
    /// Leaf index in depth-first (left before right) order within the tree; for
    /// every-node extraction, the preorder index of the node.
    pub leaf: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub conditions: Vec<Condition>,
    pub provenance: Provenance,
}

impl Rule {
    /// Simplifies `conditions` and derives the content id.
    pub fn new(conditions: Vec<Condition>, provenance: Provenance) -> Self {
        let conditions = simplify(conditions);
        let id = rule_id(&conditions);
        Rule { id, conditions, provenance }
    }

    pub fn matches(&self, schema: &Schema, row: &[Value]) -> Result<bool> {
        for c in &self.conditions {
            if !c.matches(schema, row[c.feature])? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn describe(&self, schema: &Schema) -> String {
        self.conditions.iter().map(|c| c.describe(schema)).collect::<Vec<_>>().join(" & ")
    }

    /// Distinct features in condition order.
    pub fn features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for c in &self.conditions {
            if !out.contains(&c.feature) {
                out.push(c.feature);
            }
        }
        out
    }
}

/// A leaf rule together with its leaf value, before deduplication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafRule {
    pub rule: Rule,
    pub value: f64,
}

pub fn evaluate_rule(rule: &Rule, schema: &Schema, row: &[Value]) -> Result<bool> {
    rule.matches(schema, row)
}

/// Merges conditions per feature (tightest bounds, intersected level sets) and orders them
/// by feature, with lower bound before upper bound.
pub fn simplify(conditions: Vec<Condition>) -> Vec<Condition> {
    let mut features: Vec<usize> = conditions.iter().map(|c| c.feature).collect();
    features.sort_unstable();
    features.dedup();
    let mut out = Vec::new();
    for f in features {
        let mut upper: Option<f64> = None;
        let mut lower: Option<f64> = None;
        let mut levels: Option<Vec<u32>> = None;
        for c in conditions.iter().filter(|c| c.feature == f) {
            match &c.op {
                Op::Le { threshold } => upper = Some(upper.map_or(*threshold, |u| u.min(*threshold))),
                Op::Gt { threshold } => lower = Some(lower.map_or(*threshold, |l| l.max(*threshold))),
                Op::In { levels: ls } => {
                    let mut ls = ls.clone();
                    ls.sort_unstable();
                    ls.dedup();
                    levels = Some(match levels {
                        None => ls,
                        Some(prev) => prev.into_iter().filter(|l| ls.contains(l)).collect(),
                    });
                }
            }
        }
        if let Some(l) = lower {
            out.push(Condition::gt(f, l));
        }
        if let Some(u) = upper {
            out.push(Condition::le(f, u));
        }
        if let Some(ls) = levels {
            out.push(Condition::one_of(f, ls));
        }
    }
    out
}

/// First 16 hex digits of SHA-256 over a canonical rendering of simplified conditions.
pub fn rule_id(conditions: &[Condition]) -> String {
    let mut canon = String::new();
    for c in conditions {
        match &c.op {
            Op::Le { threshold } => write!(canon, "{}:le:{:016x};", c.feature, threshold.to_bits()),
            Op::Gt { threshold } => write!(canon, "{}:gt:{:016x};", c.feature, threshold.to_bits()),
            Op::In { levels } => {
                let ls: Vec<String> = levels.iter().map(u32::to_string).collect();
                write!(canon, "{}:in:{};", c.feature, ls.join(","))
            }
        }
        .expect("writing to a String cannot fail");
    }
    let digest = Sha256::digest(canon.as_bytes());
    digest.iter().take(8).fold(String::with_capacity(16), |mut s, b| {
        write!(s, "{b:02x}").expect("writing to a String cannot fail");
        s
    })
}

fn split_conditions(split: &Split, schema: &Schema) -> (Condition, Condition) {
    match split {
        Split::Numeric { feature, threshold } => (Condition::le(*feature, *threshold), Condition::gt(*feature, *threshold)),
        Split::Categorical { feature, left } => {
            let n = schema.features[*feature].categories.len() as u32;
            let right = (0..n).filter(|l| !left.contains(l)).collect();
            (Condition::one_of(*feature, left.clone()), Condition::one_of(*feature, right))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    /// Also emit a rule for every non-root internal node path.
    pub every_node: bool,
}

/// One leaf rule per root-to-leaf path, in tree order then depth-first leaf order.
pub fn leaf_rules(model: &GbmModel) -> Vec<Vec<LeafRule>> {
    model
        .trees
        .iter()
        .enumerate()
        .map(|(t, tree)| {
            let mut out = Vec::new();
            let mut path = Vec::new();
            collect_leaves(tree, &model.schema, t, &mut path, &mut out);
            out
        })
        .collect()
}

fn collect_leaves(node: &TreeNode, schema: &Schema, tree: usize, path: &mut Vec<Condition>, out: &mut Vec<LeafRule>) {
    match node {
        TreeNode::Leaf { value } => {
            let provenance = Provenance { tree, leaf: out.len() };
            out.push(LeafRule { rule: Rule::new(path.clone(), provenance), value: *value });
        }
        TreeNode::Split { split, left, right } => {
            let (l, r) = split_conditions(split, schema);
            path.push(l);
            collect_leaves(left, schema, tree, path, out);
            path.pop();
            path.push(r);
            collect_leaves(right, schema, tree, path, out);
            path.pop();
        }
    }
}

fn collect_nodes(node: &TreeNode, schema: &Schema, tree: usize, path: &mut Vec<Condition>, counter: &mut usize, out: &mut Vec<Rule>) {
    let index = *counter;
    *counter += 1;
    if !path.is_empty() {
        out.push(Rule::new(path.clone(), Provenance { tree, leaf: index }));
    }
    if let TreeNode::Split { split, left, right } = node {
        let (l, r) = split_conditions(split, schema);
        path.push(l);
        collect_nodes(left, schema, tree, path, counter, out);
        path.pop();
        path.push(r);
        collect_nodes(right, schema, tree, path, counter, out);
        path.pop();
    }
}

/// Extracts deduplicated rules. Rules with an empty condition list (single-leaf trees) are dropped.
pub fn extract_rules(model: &GbmModel, config: &ExtractConfig) -> Vec<Rule> {
    let raw: Vec<Rule> = if config.every_node {
        let mut out = Vec::new();
        for (t, tree) in model.trees.iter().enumerate() {
            let mut counter = 0;
            collect_nodes(tree, &model.schema, t, &mut Vec::new(), &mut counter, &mut out);
        }
        out
    } else {
        leaf_rules(model).into_iter().flatten().map(|lr| lr.rule).collect()
    };
    dedup_rules(raw.into_iter().filter(|r| !r.conditions.is_empty()).collect())
}

/// Drops rules whose id was already seen, keeping the first occurrence.
pub fn dedup_rules(rules: Vec<Rule>) -> Vec<Rule> {
    let mut seen = HashSet::new();
    rules.into_iter().filter(|r| seen.insert(r.id.clone())).collect()
}

/// Margins rebuilt from leaf rules: `base + shrinkage * sum_t sum_leaf value * r(x)`.
/// Summation follows tree order, so the result equals tree traversal bit for bit.
pub fn prediction_via_rules(model: &GbmModel, leaf_rules: &[Vec<LeafRule>], d: &Dataset) -> Result<Vec<f64>> {
    let schema = d.schema();
    par::try_map_range(d.n_rows(), |i| {
        let row = d.row(i);
        let mut sum = 0.0;
        for tree in leaf_rules {
            for lr in tree {
                if lr.rule.conditions.is_empty() || lr.rule.matches(schema, row)? {
                    sum += lr.value;
                }
            }
        }
        Ok(model.base_score + model.shrinkage * sum)
    })
}

/// Boolean rule matrix stored column-sparse: for each rule, the sorted rows it covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleMatrix {
    pub n_rows: usize,
    pub rule_ids: Vec<String>,
    pub columns: Vec<Vec<u32>>,
}

impl RuleMatrix {
    pub fn n_rules(&self) -> usize {
        self.columns.len()
    }

    pub fn support(&self, k: usize) -> f64 {
        if self.n_rows == 0 {
            0.0
        } else {
            self.columns[k].len() as f64 / self.n_rows as f64
        }
    }

    pub fn supports(&self) -> Vec<f64> {
        (0..self.n_rules()).map(|k| self.support(k)).collect()
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.columns[k].binary_search(&(i as u32)).is_ok()
    }

    pub fn column_index(&self, rule_id: &str) -> Option<usize> {
        self.rule_ids.iter().position(|r| r == rule_id)
    }

    pub fn select_columns(&self, keep: &[usize]) -> RuleMatrix {
        RuleMatrix {
            n_rows: self.n_rows,
            rule_ids: keep.iter().map(|&k| self.rule_ids[k].clone()).collect(),
            columns: keep.iter().map(|&k| self.columns[k].clone()).collect(),
        }
    }

    /// Restricts to `rows` (new row `j` is old row `rows[j]`).
    pub fn select_rows(&self, rows: &[usize]) -> RuleMatrix {
        let mut new_index = vec![u32::MAX; self.n_rows];
        for (j, &i) in rows.iter().enumerate() {
            new_index[i] = j as u32;
        }
        let columns = self
            .columns
            .iter()
            .map(|col| {
                let mut c: Vec<u32> = col.iter().map(|&i| new_index[i as usize]).filter(|&j| j != u32::MAX).collect();
                c.sort_unstable();
                c
            })
            .collect();
        RuleMatrix { n_rows: rows.len(), rule_ids: self.rule_ids.clone(), columns }
    }
}

pub fn build_rule_matrix(rules: &[Rule], d: &Dataset) -> Result<RuleMatrix> {
    let schema = d.schema();
    let columns = par::try_map_range(rules.len(), |k| {
        let mut col = Vec::new();
        for i in 0..d.n_rows() {
            if rules[k].matches(schema, d.row(i))? {
                col.push(i as u32);
            }
        }
        Ok::<_, EamlError>(col)
    })?;
    Ok(RuleMatrix {
        n_rows: d.n_rows(),
        rule_ids: rules.iter().map(|r| r.id.clone()).collect(),
        columns,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupportFilter {
    pub min_support: f64,
    pub max_support: f64,
}

impl Default for SupportFilter {
    fn default() -> Self {
        SupportFilter { min_support: 0.01, max_support: 0.99 }
    }
}

/// Keeps rules with support in `[min, max]`.
pub fn filter_by_support(rules: &[Rule], matrix: &RuleMatrix, filter: &SupportFilter) -> (Vec<Rule>, RuleMatrix) {
    let keep: Vec<usize> = (0..rules.len())
        .filter(|&k| {
            let s = matrix.support(k);
            s >= filter.min_support && s <= filter.max_support
        })
        .collect();
    (keep.iter().map(|&k| rules[k].clone()).collect(), matrix.select_columns(&keep))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardRow {
    pub feature: String,
    pub subpopulation: String,
    pub population: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCard {
    pub rule_id: String,
    pub rows: Vec<CardRow>,
}

impl RuleCard {
    /// `"feature: subpopulation"` lines.
    pub fn lines(&self) -> Vec<String> {
        self.rows.iter().map(|r| format!("{}: {}", r.feature, r.subpopulation)).collect()
    }

    pub fn population_lines(&self) -> Vec<String> {
        self.rows.iter().map(|r| format!("{}: {}", r.feature, r.population)).collect()
    }
}

fn numeric_summary(xs: &[f64]) -> String {
    if xs.is_empty() {
        return "NA".to_string();
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("{:.2} ({:.2} \u{2013} {:.2})", median(xs), lo, hi)
}

fn categorical_summary(codes: &[u32], labels: &[String]) -> String {
    if codes.is_empty() {
        return "NA".to_string();
    }
    let mut counts = vec![0usize; labels.len()];
    for &c in codes {
        counts[c as usize] += 1;
    }
    // ties go to the earlier level
    let mode = (0..labels.len()).fold(0, |best, l| if counts[l] > counts[best] { l } else { best });
    let observed: Vec<&str> = (0..labels.len()).filter(|&l| counts[l] > 0).map(|l| labels[l].as_str()).collect();
    format!("{} ({})", labels[mode], observed.join(", "))
}

fn summarize(d: &Dataset, j: usize, rows: &[usize]) -> String {
    let f = &d.schema().features[j];
    match f.kind {
        FeatureKind::Numeric => {
            let xs: Vec<f64> = rows.iter().filter_map(|&i| d.value(i, j).as_num()).collect();
            numeric_summary(&xs)
        }
        FeatureKind::Categorical => {
            let codes: Vec<u32> = rows
                .iter()
                .filter_map(|&i| match d.value(i, j) {
                    Value::Cat(c) => Some(c),
                    _ => None,
                })
                .collect();
            categorical_summary(&codes, &f.categories)
        }
    }
}

/// Subpopulation versus population statistics for each feature in the rule, rounded to 2 decimals.
pub fn render_rule_card(rule: &Rule, d: &Dataset) -> Result<RuleCard> {
    let schema = d.schema();
    let mut matched = Vec::new();
    for i in 0..d.n_rows() {
        if rule.matches(schema, d.row(i))? {
            matched.push(i);
        }
    }
    if matched.is_empty() {
        return Err(EamlError::data(format!("rule {} has zero support; no card to render", rule.id)));
    }
    let all: Vec<usize> = (0..d.n_rows()).collect();
    let rows = rule
        .features()
        .into_iter()
        .map(|j| CardRow {
            feature: schema.features[j].name.clone(),
            subpopulation: summarize(d, j, &matched),
            population: summarize(d, j, &all),
        })
        .collect();
    Ok(RuleCard { rule_id: rule.id.clone(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportCondition {
    pub feature: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// One line of the rule export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub id: String,
    pub description: String,
    pub conditions: Vec<ExportCondition>,
    pub support: f64,
    pub card: RuleCard,
}

pub fn rule_record(rule: &Rule, d: &Dataset) -> Result<RuleRecord> {
    let schema = d.schema();
    let conditions = rule
        .conditions
        .iter()
        .map(|c| {
            let f = &schema.features[c.feature];
            match &c.op {
                Op::Le { threshold } => ExportCondition { feature: f.name.clone(), op: "<=".into(), threshold: Some(*threshold), levels: None },
                Op::Gt { threshold } => ExportCondition { feature: f.name.clone(), op: ">".into(), threshold: Some(*threshold), levels: None },
                Op::In { levels } => ExportCondition {
                    feature: f.name.clone(),
                    op: "in".into(),
                    threshold: None,
                    levels: Some(levels.iter().map(|&l| f.categories[l as usize].clone()).collect()),
                },
            }
        })
        .collect();
    let card = render_rule_card(rule, d)?;
    let mut n = 0usize;
    for i in 0..d.n_rows() {
        if rule.matches(schema, d.row(i))? {
            n += 1;
        }
    }
    Ok(RuleRecord {
        id: rule.id.clone(),
        description: rule.describe(schema),
        conditions,
        support: n as f64 / d.n_rows() as f64,
        card,
    })
}

/// Rebuilds a rule from its export record against `schema`. The content id is
/// recomputed and must equal the recorded one.
pub fn rule_from_record(record: &RuleRecord, schema: &Schema) -> Result<Rule> {
    let mut conditions = Vec::with_capacity(record.conditions.len());
    for c in &record.conditions {
        let j = schema
            .index_of(&c.feature)
            .ok_or_else(|| EamlError::data(format!("rule {}: unknown feature `{}`", record.id, c.feature)))?;
        let threshold = || c.threshold.ok_or_else(|| EamlError::data(format!("rule {}: `{}` lacks a threshold", record.id, c.op)));
        conditions.push(match c.op.as_str() {
            "<=" => Condition::le(j, threshold()?),
            ">" => Condition::gt(j, threshold()?),
            "in" => {
                let f = &schema.features[j];
                let levels = c
                    .levels
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .map(|l| f.category_index(l).ok_or_else(|| EamlError::data(format!("rule {}: unknown level `{l}`", record.id))))
                    .collect::<Result<Vec<u32>>>()?;
                Condition::one_of(j, levels)
            }
            other => return Err(EamlError::data(format!("rule {}: unknown operator `{other}`", record.id))),
        });
    }
    let rule = Rule::new(conditions, Provenance { tree: 0, leaf: 0 });
    if rule.id != record.id {
        return Err(EamlError::data(format!("rule id mismatch: record {} rebuilds as {}", record.id, rule.id)));
    }
    Ok(rule)
}

/// Writes one JSON record per rule, newline-delimited.
pub fn write_rule_export<W: Write>(rules: &[Rule], d: &Dataset, mut w: W) -> Result<()> {
    let records = par::try_map_range(rules.len(), |k| rule_record(&rules[k], d))?;
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| EamlError::io("<rule export>", e))?;
    }
    Ok(())
}

pub fn read_rule_export<R: std::io::BufRead>(r: R) -> Result<Vec<RuleRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| EamlError::io("<rule export>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSpec;
    use std::sync::Arc;

    fn schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(vec![
                FeatureSpec::numeric("Age"),
                FeatureSpec::numeric("GCS"),
                FeatureSpec::categorical("renal", ["0", "1"]),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn figure_rule_matches_row() {
        let s = schema();
        let r = Rule::new(vec![Condition::le(0, 73.65), Condition::le(1, 4.0)], Provenance { tree: 0, leaf: 0 });
        assert!(r.matches(&s, &[Value::Num(56.0), Value::Num(2.0), Value::Cat(0)]).unwrap());
        assert!(!r.matches(&s, &[Value::Num(80.0), Value::Num(2.0), Value::Cat(0)]).unwrap());
        assert!(!r.matches(&s, &[Value::Missing, Value::Num(2.0), Value::Cat(0)]).unwrap());
        let cat = Rule::new(vec![Condition::one_of(2, vec![0])], Provenance { tree: 0, leaf: 0 });
        assert!(cat.matches(&s, &[Value::Num(1.0), Value::Num(1.0), Value::Cat(7)]).is_err());
    }

    #[test]
    fn bounds_tighten() {
        let r = Rule::new(
            vec![Condition::le(0, 5.0), Condition::le(0, 2.0), Condition::gt(1, 1.0), Condition::gt(1, 3.0)],
            Provenance { tree: 0, leaf: 0 },
        );
        assert_eq!(r.conditions, vec![Condition::le(0, 2.0), Condition::gt(1, 3.0)]);
        let c = simplify(vec![Condition::one_of(2, vec![0, 1]), Condition::one_of(2, vec![1])]);
        assert_eq!(c, vec![Condition::one_of(2, vec![1])]);
    }

    #[test]
    fn id_depends_on_content_only() {
        let a = Rule::new(vec![Condition::le(0, 5.0), Condition::gt(1, 1.0)], Provenance { tree: 0, leaf: 0 });
        let b = Rule::new(vec![Condition::gt(1, 1.0), Condition::le(0, 5.0)], Provenance { tree: 3, leaf: 2 });
        let c = Rule::new(vec![Condition::le(0, 5.0000001)], Provenance { tree: 0, leaf: 0 });
        assert_eq!(a.id, b.id);
        assert_ne!(a.id, c.id);
        assert_eq!(a.id.len(), 16);
        assert_eq!(dedup_rules(vec![a.clone(), b, c.clone()]), vec![a, c]);
    }

    #[test]
    fn card_formats() {
        let s = Arc::new(Schema::new(vec![FeatureSpec::numeric("Age")]).unwrap());
        let ages = [16.01, 56.17, 73.65, 80.0, 90.0];
        let d = Dataset::new(s, ages.iter().map(|&a| Value::Num(a)).collect(), vec![0, 1, 0, 1, 0]).unwrap();
        let r = Rule::new(vec![Condition::le(0, 73.65)], Provenance { tree: 0, leaf: 0 });
        let card = render_rule_card(&r, &d).unwrap();
        assert_eq!(card.lines(), vec!["Age: 56.17 (16.01 \u{2013} 73.65)".to_string()]);
        assert_eq!(card.rows[0].population, "73.65 (16.01 \u{2013} 90.00)");
        let none = Rule::new(vec![Condition::gt(0, 1000.0)], Provenance { tree: 0, leaf: 0 });
        assert!(render_rule_card(&none, &d).is_err());
    }

    #[test]
    fn categorical_card_single_level() {
        let s = Arc::new(Schema::new(vec![FeatureSpec::categorical("renal", ["0", "1"])]).unwrap());
        let d = Dataset::new(s, vec![Value::Cat(0), Value::Cat(0), Value::Cat(1)], vec![0, 1, 0]).unwrap();
        let r = Rule::new(vec![Condition::one_of(0, vec![0])], Provenance { tree: 0, leaf: 0 });
        let card = render_rule_card(&r, &d).unwrap();
        assert_eq!(card.rows[0].subpopulation, "0 (0)");
        assert_eq!(card.rows[0].population, "0 (0, 1)");
    }

    #[test]
    fn empty_shapes() {
        let s = schema();
        let d = Dataset::new(s, vec![], vec![]).unwrap();
        let r = Rule::new(vec![Condition::le(0, 1.0)], Provenance { tree: 0, leaf: 0 });
        let m = build_rule_matrix(std::slice::from_ref(&r), &d).unwrap();
        assert_eq!((m.n_rows, m.n_rules()), (0, 1));
        let m0 = build_rule_matrix(&[], &d).unwrap();
        assert_eq!(m0.n_rules(), 0);
    }
}
