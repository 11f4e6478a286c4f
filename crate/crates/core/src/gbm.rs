//! Stagewise logistic gradient boosting of depth-limited regression trees.
//!
//! Each round fits a least-squares tree to the negative gradient `y - p` on a row
//! (and optionally column) subsample, using exact split search: every midpoint between
//! consecutive distinct numeric values, and sorted-prefix partitions of categorical levels.
//! Leaf values are Newton steps `sum(y - p) / sum(p (1 - p))` over all training rows that
//! reach the leaf, and are added to the margin scaled by the shrinkage.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, Schema, Value};
use crate::error::{EamlError, Result};
use crate::par;
use crate::stats::{logit, mean_log_loss, sigmoid};

const HESSIAN_FLOOR: f64 = 1e-6;
const MIN_GAIN: f64 = 1e-12;
const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub row_subsample: f64,
    pub col_subsample: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_trees: 500,
            max_depth: 3,
            shrinkage: 0.05,
            row_subsample: 0.5,
            col_subsample: 1.0,
            min_leaf: 10,
            seed: 0,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(EamlError::invalid("n_trees must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(EamlError::invalid("max_depth must be at least 1"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(EamlError::invalid(format!("shrinkage {} outside (0,1]", self.shrinkage)));
        }
        for (name, r) in [("row_subsample", self.row_subsample), ("col_subsample", self.col_subsample)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(EamlError::invalid(format!("{name} {r} outside (0,1]")));
            }
        }
        if self.min_leaf == 0 {
            return Err(EamlError::invalid("min_leaf must be at least 1"));
        }
        Ok(())
    }
}

/// Routing test of an internal node; rows satisfying it go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Split {
    /// `x <= threshold` goes left.
    Numeric { feature: usize, threshold: f64 },
    /// `x in left` goes left.
    Categorical { feature: usize, left: Vec<u32> },
}

impl Split {
    pub fn feature(&self) -> usize {
        match self {
            Split::Numeric { feature, .. } | Split::Categorical { feature, .. } => *feature,
        }
    }

    pub fn goes_left(&self, schema: &Schema, row: &[Value]) -> Result<bool> {
        let j = self.feature();
        match (self, row[j]) {
            (Split::Numeric { threshold, .. }, Value::Num(x)) => Ok(x <= *threshold),
            (Split::Categorical { left, .. }, Value::Cat(c)) => {
                if c as usize >= schema.features[j].categories.len() {
                    return Err(EamlError::data(format!(
                        "unseen category index {c} for `{}`",
                        schema.features[j].name
                    )));
                }
                Ok(left.contains(&c))
            }
            (_, Value::Missing) => Err(EamlError::data(format!(
                "missing value for `{}`; impute before predicting",
                schema.features[j].name
            ))),
            _ => Err(EamlError::data(format!("cell kind mismatch for `{}`", schema.features[j].name))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        split: Split,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    /// Leaf value reached by `row`.
    pub fn output(&self, schema: &Schema, row: &[Value]) -> Result<f64> {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return Ok(*value),
                TreeNode::Split { split, left, right } => {
                    node = if split.goes_left(schema, row)? { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub schema: Schema,
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    pub shrinkage: f64,
    pub trees: Vec<TreeNode>,
    /// Mean training log-loss after each round.
    #[serde(default)]
    pub loss_trace: Vec<f64>,
}

impl GbmModel {
    pub fn margin(&self, row: &[Value]) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.output(&self.schema, row)?;
        }
        Ok(self.base_score + self.shrinkage * sum)
    }

    pub fn margins(&self, d: &Dataset) -> Result<Vec<f64>> {
        if d.schema() != &self.schema {
            return Err(EamlError::data("dataset schema does not match the model schema"));
        }
        par::try_map_range(d.n_rows(), |i| self.margin(d.row(i)))
    }
}

/// Probabilities `sigmoid(margin)` for every row.
pub fn predict_gbm(model: &GbmModel, d: &Dataset) -> Result<Vec<f64>> {
    Ok(model.margins(d)?.into_iter().map(sigmoid).collect())
}

enum Column {
    Numeric { values: Vec<f64>, order: Vec<u32> },
    Categorical { codes: Vec<u32>, n_levels: usize },
}

fn extract_columns(d: &Dataset) -> Result<Vec<Column>> {
    let n = d.n_rows();
    d.schema()
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let missing = || EamlError::data(format!("missing value in `{}`; impute before fitting", f.name));
            match f.kind {
                FeatureKind::Numeric => {
                    let values = d.column(j).map(|v| v.as_num().ok_or_else(missing)).collect::<Result<Vec<_>>>()?;
                    let mut order: Vec<u32> = (0..n as u32).collect();
                    order.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
                    Ok(Column::Numeric { values, order })
                }
                FeatureKind::Categorical => {
                    let codes = d
                        .column(j)
                        .map(|v| match v {
                            Value::Cat(c) => Ok(c),
                            _ => Err(missing()),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Column::Categorical { codes, n_levels: f.categories.len() })
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Candidate {
    gain: f64,
    split: Split,
}

enum BuildNode {
    Leaf,
    Split { split: Split, left: usize, right: usize },
}

struct OpenNode {
    id: usize,
    count: usize,
    sum: f64,
}

fn ls_gain(sum_l: f64, n_l: usize, sum: f64, n: usize) -> f64 {
    let sum_r = sum - sum_l;
    let n_r = n - n_l;
    sum_l * sum_l / n_l as f64 + sum_r * sum_r / n_r as f64 - sum * sum / n as f64
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = 0.5 * a + 0.5 * b;
    if t < b && t >= a {
        t
    } else {
        a
    }
}

fn best_numeric_splits(
    feature: usize,
    values: &[f64],
    order: &[u32],
    node_slot: &[u32],
    residual: &[f64],
    open: &[OpenNode],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let mut count = vec![0usize; open.len()];
    let mut sum = vec![0.0f64; open.len()];
    let mut last = vec![f64::NAN; open.len()];
    let mut best: Vec<Option<(f64, f64)>> = vec![None; open.len()];
    for &i in order {
        let i = i as usize;
        let s = node_slot[i];
        if s == NO_NODE {
            continue;
        }
        let s = s as usize;
        let v = values[i];
        let n_l = count[s];
        if n_l >= min_leaf && v > last[s] && open[s].count - n_l >= min_leaf {
            let gain = ls_gain(sum[s], n_l, open[s].sum, open[s].count);
            if best[s].is_none_or(|(g, _)| gain > g) {
                best[s] = Some((gain, midpoint(last[s], v)));
            }
        }
        count[s] += 1;
        sum[s] += residual[i];
        last[s] = v;
    }
    best.into_iter()
        .map(|b| {
            b.map(|(gain, threshold)| Candidate {
                gain,
                split: Split::Numeric { feature, threshold },
            })
        })
        .collect()
}

fn best_categorical_splits(
    feature: usize,
    codes: &[u32],
    n_levels: usize,
    node_slot: &[u32],
    residual: &[f64],
    open: &[OpenNode],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let mut count = vec![vec![0usize; n_levels]; open.len()];
    let mut sum = vec![vec![0.0f64; n_levels]; open.len()];
    for (i, &c) in codes.iter().enumerate() {
        let s = node_slot[i];
        if s != NO_NODE {
            count[s as usize][c as usize] += 1;
            sum[s as usize][c as usize] += residual[i];
        }
    }
    (0..open.len())
        .map(|s| {
            let mut levels: Vec<usize> = (0..n_levels).filter(|&l| count[s][l] > 0).collect();
            levels.sort_by(|&a, &b| {
                let ma = sum[s][a] / count[s][a] as f64;
                let mb = sum[s][b] / count[s][b] as f64;
                ma.total_cmp(&mb).then(a.cmp(&b))
            });
            let mut best: Option<(f64, usize)> = None;
            let (mut n_l, mut s_l) = (0usize, 0.0f64);
            for cut in 1..levels.len() {
                n_l += count[s][levels[cut - 1]];
                s_l += sum[s][levels[cut - 1]];
                if n_l < min_leaf || open[s].count - n_l < min_leaf {
                    continue;
                }
                let gain = ls_gain(s_l, n_l, open[s].sum, open[s].count);
                if best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, cut));
                }
            }
            best.map(|(gain, cut)| {
                let mut left: Vec<u32> = levels[..cut].iter().map(|&l| l as u32).collect();
                left.sort_unstable();
                Candidate {
                    gain,
                    split: Split::Categorical { feature, left },
                }
            })
        })
        .collect()
}

fn goes_left_col(split: &Split, columns: &[Column], i: usize) -> bool {
    match (split, &columns[split.feature()]) {
        (Split::Numeric { threshold, .. }, Column::Numeric { values, .. }) => values[i] <= *threshold,
        (Split::Categorical { left, .. }, Column::Categorical { codes, .. }) => left.contains(&codes[i]),
        _ => unreachable!("split kind follows the column kind"),
    }
}

fn route(arena: &[BuildNode], columns: &[Column], i: usize) -> usize {
    let mut id = 0;
    while let BuildNode::Split { split, left, right } = &arena[id] {
        id = if goes_left_col(split, columns, i) { *left } else { *right };
    }
    id
}

fn to_tree(arena: &[BuildNode], values: &[f64], id: usize) -> TreeNode {
    match &arena[id] {
        BuildNode::Leaf => TreeNode::Leaf { value: values[id] },
        BuildNode::Split { split, left, right } => TreeNode::Split {
            split: split.clone(),
            left: Box::new(to_tree(arena, values, *left)),
            right: Box::new(to_tree(arena, values, *right)),
        },
    }
}

/// Newton step for one leaf: `-sum(g) / max(sum(h), floor)` with `g = p - y`, `h = p (1 - p)`.
pub fn newton_leaf_value(margins: &[f64], y: &[u8], rows: &[usize]) -> f64 {
    let (mut g, mut h) = (0.0, 0.0);
    for &i in rows {
        let p = sigmoid(margins[i]);
        g += p - y[i] as f64;
        h += p * (1.0 - p);
    }
    -g / h.max(HESSIAN_FLOOR)
}

/// Fits the boosted ensemble. Deterministic given the data and `config.seed`.
pub fn fit_gbm(train: &Dataset, config: &GbmConfig) -> Result<GbmModel> {
    config.validate()?;
    if !train.has_both_classes() {
        return Err(EamlError::data("boosting needs both outcome classes in the training set"));
    }
    let n = train.n_rows();
    let y = train.outcome();
    let columns = extract_columns(train)?;
    let p = columns.len();

    let n_bag = if config.row_subsample >= 1.0 {
        n
    } else {
        ((config.row_subsample * n as f64).round() as usize).clamp(1, n)
    };
    if n_bag < 2 * config.min_leaf {
        return Err(EamlError::data(format!(
            "min_leaf {} unreachable: {} rows per tree cannot form two leaves",
            config.min_leaf, n_bag
        )));
    }
    let n_cols = ((config.col_subsample * p as f64).round() as usize).clamp(1, p);

    let base_score = logit(train.prevalence());
    let mut margins = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows: Vec<usize> = (0..n).collect();
    let mut feats: Vec<usize> = (0..p).collect();
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut loss_trace = Vec::with_capacity(config.n_trees);
    let mut residual = vec![0.0; n];
    let mut node_of = vec![NO_NODE; n];
    let mut node_slot = vec![NO_NODE; n];

    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = y[i] as f64 - sigmoid(margins[i]);
        }
        let (bag, _) = rows.partial_shuffle(&mut rng, n_bag);
        let mut tree_features: Vec<usize> = if n_cols < p {
            let (chosen, _) = feats.partial_shuffle(&mut rng, n_cols);
            chosen.to_vec()
        } else {
            (0..p).collect()
        };
        tree_features.sort_unstable();

        node_of.fill(NO_NODE);
        let mut root_sum = 0.0;
        for &i in bag.iter() {
            node_of[i] = 0;
            root_sum += residual[i];
        }
        let mut arena = vec![BuildNode::Leaf];
        let mut open = vec![OpenNode { id: 0, count: n_bag, sum: root_sum }];

        for _depth in 0..config.max_depth {
            if open.is_empty() {
                break;
            }
            // slot of each row's node within `open`
            let mut slot_of_node = vec![NO_NODE; arena.len()];
            for (s, o) in open.iter().enumerate() {
                slot_of_node[o.id] = s as u32;
            }
            for i in 0..n {
                node_slot[i] = if node_of[i] == NO_NODE { NO_NODE } else { slot_of_node[node_of[i] as usize] };
            }
            let per_feature: Vec<Vec<Option<Candidate>>> = par::map_slice(&tree_features, |&f| match &columns[f] {
                Column::Numeric { values, order } => {
                    best_numeric_splits(f, values, order, &node_slot, &residual, &open, config.min_leaf)
                }
                Column::Categorical { codes, n_levels } => {
                    best_categorical_splits(f, codes, *n_levels, &node_slot, &residual, &open, config.min_leaf)
                }
            });
            // strict improvement keeps the lowest feature index on ties
            let mut chosen: Vec<Option<Candidate>> = vec![None; open.len()];
            for cands in per_feature {
                for (s, c) in cands.into_iter().enumerate() {
                    if let Some(c) = c {
                        if c.gain > MIN_GAIN && chosen[s].as_ref().is_none_or(|b| c.gain > b.gain) {
                            chosen[s] = Some(c);
                        }
                    }
                }
            }

            let mut next_open = Vec::new();
            let mut child_of_slot = vec![(0usize, 0usize); open.len()];
            for (s, c) in chosen.iter().enumerate() {
                if let Some(c) = c {
                    let l = arena.len();
                    arena.push(BuildNode::Leaf);
                    arena.push(BuildNode::Leaf);
                    arena[open[s].id] = BuildNode::Split { split: c.split.clone(), left: l, right: l + 1 };
                    child_of_slot[s] = (l, l + 1);
                    next_open.push(OpenNode { id: l, count: 0, sum: 0.0 });
                    next_open.push(OpenNode { id: l + 1, count: 0, sum: 0.0 });
                }
            }
            let mut next_index = vec![NO_NODE; arena.len()];
            for (k, o) in next_open.iter().enumerate() {
                next_index[o.id] = k as u32;
            }
            for &i in bag.iter() {
                let s = node_slot[i];
                if s == NO_NODE {
                    continue;
                }
                let s = s as usize;
                let Some(c) = &chosen[s] else {
                    node_of[i] = NO_NODE;
                    continue;
                };
                let (l, r) = child_of_slot[s];
                let child = if goes_left_col(&c.split, &columns, i) { l } else { r };
                node_of[i] = child as u32;
                let k = next_index[child] as usize;
                next_open[k].count += 1;
                next_open[k].sum += residual[i];
            }
            open = next_open;
        }

        // Newton leaf values over every training row reaching the leaf.
        let mut g = vec![0.0; arena.len()];
        let mut h = vec![0.0; arena.len()];
        let leaf_of: Vec<usize> = (0..n).map(|i| route(&arena, &columns, i)).collect();
        for i in 0..n {
            let pr = sigmoid(margins[i]);
            g[leaf_of[i]] += pr - y[i] as f64;
            h[leaf_of[i]] += pr * (1.0 - pr);
        }
        let values: Vec<f64> = g.iter().zip(&h).map(|(&gs, &hs)| -gs / hs.max(HESSIAN_FLOOR)).collect();
        for i in 0..n {
            margins[i] += config.shrinkage * values[leaf_of[i]];
        }
        trees.push(to_tree(&arena, &values, 0));
        loss_trace.push(mean_log_loss(&margins, y));
    }

    Ok(GbmModel {
        schema: train.schema().clone(),
        base_score,
        shrinkage: config.shrinkage,
        trees,
        loss_trace,
    })
}
