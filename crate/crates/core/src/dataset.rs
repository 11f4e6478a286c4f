//! Tabular binary-outcome data: schema, CSV ingest, mean imputation and stratified sampling.
//!
//! Cells are kept row-major as [`Value`]s. Missing cells survive loading untouched and are
//! only resolved by an explicit call to [`impute_mean`].

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EamlError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Ordered category labels; empty for numeric features.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default = "default_true")]
    pub missing_allowed: bool,
}

fn default_true() -> bool {
    true
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
            missing_allowed: true,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            missing_allowed: true,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == FeatureKind::Numeric
    }

    pub fn category_index(&self, label: &str) -> Option<u32> {
        self.categories.iter().position(|c| c == label).map(|i| i as u32)
    }
}

/// Ordered feature list; the sidecar file format is this struct as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let schema = Schema { features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(EamlError::data(format!("duplicate feature name `{}`", f.name)));
            }
            match f.kind {
                FeatureKind::Numeric if !f.categories.is_empty() => {
                    return Err(EamlError::data(format!("numeric feature `{}` lists categories", f.name)));
                }
                FeatureKind::Categorical => {
                    if f.categories.is_empty() {
                        return Err(EamlError::data(format!("categorical feature `{}` has no categories", f.name)));
                    }
                    let distinct: HashSet<_> = f.categories.iter().collect();
                    if distinct.len() != f.categories.len() {
                        return Err(EamlError::data(format!("categorical feature `{}` repeats a category", f.name)));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| EamlError::io(path.as_ref(), e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text + "\n").map_err(|e| EamlError::io(path.as_ref(), e))
    }
}

/// One cell. Categorical cells hold the index into the feature's category list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(u32),
    Missing,
}

impl Value {
    pub fn as_num(self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_missing(self) -> bool {
        matches!(self, Value::Missing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    values: Vec<Value>,
    outcome: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset from row-major cells, checking shape and category ranges.
    pub fn new(schema: Arc<Schema>, values: Vec<Value>, outcome: Vec<u8>) -> Result<Self> {
        let p = schema.len();
        if values.len() != p * outcome.len() {
            return Err(EamlError::data(format!(
                "{} cells do not fill {} rows of {} features",
                values.len(),
                outcome.len(),
                p
            )));
        }
        if let Some(bad) = outcome.iter().find(|&&y| y > 1) {
            return Err(EamlError::data(format!("outcome value {bad} outside {{0,1}}")));
        }
        for (idx, v) in values.iter().enumerate() {
            let f = &schema.features[idx % p.max(1)];
            let ok = match (*v, f.kind) {
                (Value::Num(x), FeatureKind::Numeric) => x.is_finite(),
                (Value::Cat(c), FeatureKind::Categorical) => (c as usize) < f.categories.len(),
                (Value::Missing, _) => f.missing_allowed,
                _ => false,
            };
            if !ok {
                return Err(EamlError::data(format!(
                    "row {} feature `{}`: invalid cell {:?}",
                    idx / p,
                    f.name,
                    v
                )));
            }
        }
        Ok(Dataset { schema, values, outcome })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<Schema> {
        Arc::clone(&self.schema)
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[Value] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn value(&self, i: usize, j: usize) -> Value {
        self.values[i * self.n_features() + j]
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn n_positive(&self) -> usize {
        self.outcome.iter().filter(|&&y| y == 1).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.n_positive() as f64 / self.n_rows().max(1) as f64
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.n_positive();
        pos > 0 && pos < self.n_rows()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_missing())
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Value> + '_ {
        (0..self.n_rows()).map(move |i| self.value(i, j))
    }

    /// Rows in the given order (duplicates allowed).
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let p = self.n_features();
        let mut values = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            schema: Arc::clone(&self.schema),
            values,
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }

    /// Replaces one feature's cells via `f`, keeping everything else.
    pub fn map_feature(&self, j: usize, mut f: impl FnMut(Value) -> Value) -> Result<Dataset> {
        let p = self.n_features();
        let mut values = self.values.clone();
        for i in 0..self.n_rows() {
            values[i * p + j] = f(values[i * p + j]);
        }
        Dataset::new(Arc::clone(&self.schema), values, self.outcome.clone())
    }

    pub fn same_schema(&self, other: &Dataset) -> bool {
        Arc::ptr_eq(&self.schema, &other.schema) || *self.schema == *other.schema
    }
}

/// Reads a CSV file whose header holds every schema feature plus the outcome column.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, outcome_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| EamlError::io(path.as_ref(), e))?;
    read_csv(file, schema, outcome_column)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema, outcome_column: &str) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();

    let mut column_of = vec![usize::MAX; schema.len()];
    let mut outcome_idx = None;
    for (c, name) in header.iter().enumerate() {
        if name == outcome_column {
            outcome_idx = Some(c);
        } else if let Some(j) = schema.index_of(name) {
            column_of[j] = c;
        } else {
            return Err(EamlError::data(format!("unknown column `{name}`")));
        }
    }
    let outcome_idx = outcome_idx.ok_or_else(|| EamlError::data(format!("missing outcome column `{outcome_column}`")))?;
    if let Some(j) = column_of.iter().position(|&c| c == usize::MAX) {
        return Err(EamlError::data(format!("missing column `{}`", schema.features[j].name)));
    }

    let mut values = Vec::new();
    let mut outcome = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        for (j, f) in schema.features.iter().enumerate() {
            let raw = record.get(column_of[j]).unwrap_or("").trim();
            let v = if raw.is_empty() {
                Value::Missing
            } else {
                match f.kind {
                    FeatureKind::Numeric => {
                        let x: f64 = raw.parse().map_err(|_| {
                            EamlError::data(format!("line {line}: non-numeric `{raw}` in column `{}`", f.name))
                        })?;
                        if !x.is_finite() {
                            return Err(EamlError::data(format!("line {line}: non-finite `{raw}` in `{}`", f.name)));
                        }
                        Value::Num(x)
                    }
                    FeatureKind::Categorical => Value::Cat(f.category_index(raw).ok_or_else(|| {
                        EamlError::data(format!("line {line}: unknown category `{raw}` in column `{}`", f.name))
                    })?),
                }
            };
            if v.is_missing() && !f.missing_allowed {
                return Err(EamlError::data(format!("line {line}: missing value in `{}`", f.name)));
            }
            values.push(v);
        }
        let y = match record.get(outcome_idx).unwrap_or("").trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(EamlError::data(format!("line {line}: outcome `{other}` outside {{0,1}}"))),
        };
        outcome.push(y);
    }
    Dataset::new(Arc::new(schema.clone()), values, outcome)
}

pub fn write_csv<W: Write>(d: &Dataset, writer: W, outcome_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = d.schema().features.iter().map(|f| f.name.as_str()).collect();
    header.push(outcome_column);
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..d.n_rows() {
        record.clear();
        for (j, v) in d.row(i).iter().enumerate() {
            record.push(match v {
                Value::Num(x) => format!("{x}"),
                Value::Cat(c) => d.schema().features[j].categories[*c as usize].clone(),
                Value::Missing => String::new(),
            });
        }
        record.push(d.outcome()[i].to_string());
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| EamlError::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>, outcome_column: &str) -> Result<()> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| EamlError::io(path.as_ref(), e))?;
    write_csv(d, std::io::BufWriter::new(file), outcome_column)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FillValue {
    Numeric(f64),
    Category(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnImputation {
    pub feature: String,
    pub missing_fraction: f64,
    pub fill: FillValue,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub columns: Vec<ColumnImputation>,
}

/// Replaces numeric gaps with the column mean and categorical gaps with the column mode
/// (ties go to the earlier category). A column with no observed values is an error.
pub fn impute_mean(d: &Dataset) -> Result<(Dataset, ImputationReport)> {
    let n = d.n_rows();
    let mut report = ImputationReport::default();
    for (j, f) in d.schema().features.iter().enumerate() {
        let missing = d.column(j).filter(|v| v.is_missing()).count();
        if n > 0 && missing == n {
            return Err(EamlError::data(format!("column `{}` is entirely missing", f.name)));
        }
        let fill = match f.kind {
            FeatureKind::Numeric => {
                let (sum, cnt) = d
                    .column(j)
                    .filter_map(Value::as_num)
                    .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
                FillValue::Numeric(if cnt == 0 { 0.0 } else { sum / cnt as f64 })
            }
            FeatureKind::Categorical => {
                let mut counts = vec![0usize; f.categories.len()];
                for v in d.column(j) {
                    if let Value::Cat(c) = v {
                        counts[c as usize] += 1;
                    }
                }
                let mut best = 0;
                for (c, &k) in counts.iter().enumerate() {
                    if k > counts[best] {
                        best = c;
                    }
                }
                FillValue::Category(f.categories[best].clone())
            }
        };
        report.columns.push(ColumnImputation {
            feature: f.name.clone(),
            missing_fraction: if n == 0 { 0.0 } else { missing as f64 / n as f64 },
            fill,
        });
    }
    let filled = apply_imputation(d, &report)?;
    Ok((filled, report))
}

/// Fills gaps using previously computed fill values (e.g. training means applied to a test set).
pub fn apply_imputation(d: &Dataset, report: &ImputationReport) -> Result<Dataset> {
    let schema = d.schema();
    let mut fills = Vec::with_capacity(schema.len());
    for f in &schema.features {
        let col = report
            .columns
            .iter()
            .find(|c| c.feature == f.name)
            .ok_or_else(|| EamlError::data(format!("no fill value for `{}`", f.name)))?;
        let v = match (&col.fill, f.kind) {
            (FillValue::Numeric(x), FeatureKind::Numeric) => Value::Num(*x),
            (FillValue::Category(c), FeatureKind::Categorical) => Value::Cat(
                f.category_index(c)
                    .ok_or_else(|| EamlError::data(format!("fill `{c}` is not a category of `{}`", f.name)))?,
            ),
            _ => return Err(EamlError::data(format!("fill kind mismatch for `{}`", f.name))),
        };
        fills.push(v);
    }
    let p = schema.len();
    let values = d
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| if v.is_missing() { fills[idx % p] } else { *v })
        .collect();
    Dataset::new(d.schema_arc(), values, d.outcome.clone())
}

fn class_indices(outcome: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &y) in outcome.iter().enumerate() {
        if y == 1 {
            pos.push(i)
        } else {
            neg.push(i)
        }
    }
    (pos, neg)
}

/// Stratified partition of row indices; each part is returned in ascending row order.
///
/// Per class, `round(fraction * class_size)` rows go to the first part (halves round up,
/// i.e. toward train).
pub fn stratified_split_indices(outcome: &[u8], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EamlError::invalid(format!("train fraction {train_fraction} outside (0,1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg) = class_indices(outcome);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [&mut pos, &mut neg] {
        class.shuffle(&mut rng);
        let k = (train_fraction * class.len() as f64).round() as usize;
        train.extend_from_slice(&class[..k]);
        test.extend_from_slice(&class[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !d.has_both_classes() {
        return Err(EamlError::data("stratified split needs both outcome classes"));
    }
    let (a, b) = stratified_split_indices(d.outcome(), train_fraction, seed)?;
    Ok((d.select(&a), d.select(&b)))
}

/// `n` row indices drawn without replacement, preserving the class ratio to within one case.
pub fn subsample_indices(outcome: &[u8], n: usize, seed: u64) -> Result<Vec<usize>> {
    let total = outcome.len();
    if n > total {
        return Err(EamlError::invalid(format!("subsample of {n} rows from {total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg) = class_indices(outcome);
    let want_pos = if total == 0 {
        0
    } else {
        ((n as f64 * pos.len() as f64 / total as f64).round() as usize)
            .min(pos.len())
            .max(n.saturating_sub(neg.len()))
    };
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out: Vec<usize> = pos[..want_pos].iter().chain(&neg[..n - want_pos]).copied().collect();
    out.sort_unstable();
    Ok(out)
}

pub fn subsample_stratified(d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    Ok(d.select(&subsample_indices(d.outcome(), n, seed)?))
}

/// Category label counts for one categorical feature, in category order.
pub fn category_counts(d: &Dataset, j: usize, rows: impl Iterator<Item = usize>) -> HashMap<u32, usize> {
    let mut counts = HashMap::new();
    for i in rows {
        if let Value::Cat(c) = d.value(i, j) {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    counts
}
