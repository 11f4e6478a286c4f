//! Confounded synthetic cohorts and simulated raters.
//!
//! A hidden binary variable `z` lowers the outcome log-odds and leaves two fingerprints on
//! the observed data: it overwrites one feature with a floor value (a miscoding artifact) and
//! it drives missingness of another feature. Four sets are drawn from one spec: `train`,
//! `test_same` (same process), `test_recoded` (`test_same` with an affine map applied to one
//! feature) and `test_temporal` (fresh draws with a weaker `z` effect).
//!
//! Simulated raters know the true coefficients but not `z`: they score a rule by the mean
//! true-model risk of the rows it matches, computed from the values they are shown.

use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureSpec, Schema, Value};
use crate::elicitation::ExpertAssessment;
use crate::error::{EamlError, Result};
use crate::rules::Rule;
use crate::stats::{average_ranks, mean, sigmoid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub name: String,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub levels: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Additive log-odds effect per level.
    pub effects: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfounderSpec {
    pub prevalence: f64,
    /// Log-odds effect of `z = 1` on the outcome.
    pub outcome_effect: f64,
    /// Feature overwritten with `miscode_value` when `z = 1`.
    pub miscoded_feature: Option<String>,
    pub miscode_value: f64,
    /// Feature whose missingness depends on `z`.
    pub missing_feature: Option<String>,
    pub missing_prob_z0: f64,
    pub missing_prob_z1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecodeSpec {
    /// Defaults to the miscoded feature.
    pub feature: Option<String>,
    pub scale: f64,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub intercept: f64,
    pub numeric: Vec<NumericFeature>,
    pub categorical: Option<CategoricalFeature>,
    pub confounder: ConfounderSpec,
    pub recode: RecodeSpec,
    /// Multiplier on `outcome_effect` for the temporal set.
    pub temporal_effect_scale: f64,
    pub seed: u64,
}

const DEFAULT_BETAS: [(&str, f64); 16] = [
    ("age", 0.6),
    ("gcs", -0.8),
    ("pf_ratio", -0.5),
    ("heart_rate", 0.3),
    ("sys_bp", -0.4),
    ("temperature", -0.1),
    ("bun", 0.5),
    ("wbc", 0.2),
    ("potassium", 0.1),
    ("sodium", -0.1),
    ("bicarbonate", -0.3),
    ("bilirubin", 0.3),
    ("urine_output", -0.4),
    ("resp_rate", 0.2),
    ("platelets", 0.0),
    ("glucose", 0.05),
];

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_train: 10_000,
            n_test: 5_000,
            intercept: -2.0,
            numeric: DEFAULT_BETAS.iter().map(|&(n, b)| NumericFeature { name: n.into(), beta: b }).collect(),
            categorical: Some(CategoricalFeature {
                name: "admission_type".into(),
                levels: vec!["elective".into(), "emergency".into(), "urgent".into()],
                probabilities: vec![0.3, 0.5, 0.2],
                effects: vec![-0.5, 0.3, 0.0],
            }),
            confounder: ConfounderSpec {
                prevalence: 0.3,
                outcome_effect: -1.5,
                miscoded_feature: Some("gcs".into()),
                miscode_value: -3.0,
                missing_feature: Some("pf_ratio".into()),
                missing_prob_z0: 0.7,
                missing_prob_z1: 0.1,
            },
            recode: RecodeSpec { feature: None, scale: 1.0, offset: -2.5 },
            temporal_effect_scale: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The same cohort with no hidden variable and no artifacts.
    pub fn confounder_free(mut self) -> Self {
        self.confounder.prevalence = 0.0;
        self.confounder.outcome_effect = 0.0;
        self.confounder.miscoded_feature = None;
        self.confounder.missing_feature = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.numeric.is_empty() {
            return Err(EamlError::invalid("synthetic spec needs at least one numeric feature"));
        }
        if self.numeric.iter().any(|f| !f.beta.is_finite()) || !self.intercept.is_finite() {
            return Err(EamlError::invalid("coefficients must be finite"));
        }
        if self.numeric.iter().all(|f| f.beta == 0.0) {
            return Err(EamlError::invalid("degenerate spec: every coefficient is zero"));
        }
        let c = &self.confounder;
        if !(0.0..1.0).contains(&c.prevalence) {
            return Err(EamlError::invalid(format!("confounder prevalence {} outside [0,1)", c.prevalence)));
        }
        for p in [c.missing_prob_z0, c.missing_prob_z1] {
            if !(0.0..1.0).contains(&p) {
                return Err(EamlError::invalid(format!("missingness probability {p} outside [0,1)")));
            }
        }
        for name in [&c.miscoded_feature, &c.missing_feature, &self.recode.feature].into_iter().flatten() {
            if self.numeric_index(name).is_none() {
                return Err(EamlError::invalid(format!("`{name}` is not a numeric feature of the spec")));
            }
        }
        if let Some(cat) = &self.categorical {
            let k = cat.levels.len();
            if k < 2 || cat.probabilities.len() != k || cat.effects.len() != k {
                return Err(EamlError::invalid("categorical feature needs matching levels, probabilities and effects"));
            }
            let s: f64 = cat.probabilities.iter().sum();
            if cat.probabilities.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(EamlError::invalid("category probabilities must be non-negative and sum to 1"));
            }
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(EamlError::invalid("set sizes must be positive"));
        }
        Ok(())
    }

    pub fn numeric_index(&self, name: &str) -> Option<usize> {
        self.numeric.iter().position(|f| f.name == name)
    }

    pub fn schema(&self) -> Schema {
        let mut features: Vec<FeatureSpec> = self.numeric.iter().map(|f| FeatureSpec::numeric(&f.name)).collect();
        if let Some(c) = &self.categorical {
            features.push(FeatureSpec::categorical(&c.name, c.levels.iter().cloned()));
        }
        Schema { features }
    }

    /// Log-odds of the artifact-free model on a displayed row (no `z` term).
    pub fn true_logit(&self, row: &[Value]) -> f64 {
        let mut s = self.intercept;
        for (j, f) in self.numeric.iter().enumerate() {
            if let Value::Num(x) = row[j] {
                s += f.beta * x;
            }
        }
        if let (Some(c), Some(Value::Cat(l))) = (&self.categorical, row.get(self.numeric.len())) {
            s += c.effects[*l as usize];
        }
        s
    }

    /// Expected fraction of missing cells in the missingness-driven feature.
    pub fn expected_missing_fraction(&self) -> f64 {
        let c = &self.confounder;
        c.prevalence * c.missing_prob_z1 + (1.0 - c.prevalence) * c.missing_prob_z0
    }

    pub fn recode_feature(&self) -> Option<&str> {
        self.recode.feature.as_deref().or(self.confounder.miscoded_feature.as_deref())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test_same: Dataset,
    pub test_recoded: Dataset,
    pub test_temporal: Dataset,
    /// Hidden `z` per row, per set (`test_recoded` shares `test_same`'s).
    pub z_train: Vec<bool>,
    pub z_same: Vec<bool>,
    pub z_temporal: Vec<bool>,
}

fn draw_set(spec: &SyntheticSpec, schema: &Arc<Schema>, n: usize, stream: u64, z_effect: f64) -> Result<(Dataset, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let p = spec.numeric.len();
    let width = schema.len();
    let c = &spec.confounder;
    let miscoded = c.miscoded_feature.as_deref().and_then(|n| spec.numeric_index(n));
    let missing = c.missing_feature.as_deref().and_then(|n| spec.numeric_index(n));
    let mut values = Vec::with_capacity(n * width);
    let mut outcome = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut x = vec![0.0; p];
    for _ in 0..n {
        for xj in x.iter_mut() {
            *xj = StandardNormal.sample(&mut rng);
        }
        let level = spec.categorical.as_ref().map(|cat| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = cat.probabilities.len() - 1;
            for (l, &pr) in cat.probabilities.iter().enumerate() {
                acc += pr;
                if u < acc {
                    pick = l;
                    break;
                }
            }
            pick
        });
        let z = rng.random::<f64>() < c.prevalence;
        let mut eta = spec.intercept + spec.numeric.iter().zip(&x).map(|(f, xj)| f.beta * xj).sum::<f64>();
        if let (Some(cat), Some(l)) = (&spec.categorical, level) {
            eta += cat.effects[l];
        }
        if z {
            eta += z_effect;
        }
        let y = rng.random::<f64>() < sigmoid(eta);
        let miss_u: f64 = rng.random();
        for (j, &xj) in x.iter().enumerate() {
            let v = if Some(j) == miscoded && z { c.miscode_value } else { xj };
            let drop = Some(j) == missing && miss_u < if z { c.missing_prob_z1 } else { c.missing_prob_z0 };
            values.push(if drop { Value::Missing } else { Value::Num(v) });
        }
        if let Some(l) = level {
            values.push(Value::Cat(l as u32));
        }
        outcome.push(u8::from(y));
        zs.push(z);
    }
    Ok((Dataset::new(schema.clone(), values, outcome)?, zs))
}

/// Draws all four sets. Deterministic given `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let schema = Arc::new(spec.schema());
    let effect = spec.confounder.outcome_effect;
    let (train, z_train) = draw_set(spec, &schema, spec.n_train, 0, effect)?;
    let (test_same, z_same) = draw_set(spec, &schema, spec.n_test, 1, effect)?;
    let (test_temporal, z_temporal) = draw_set(spec, &schema, spec.n_test, 2, effect * spec.temporal_effect_scale)?;
    let test_recoded = match spec.recode_feature().and_then(|n| spec.numeric_index(n)) {
        Some(j) => {
            let (a, b) = (spec.recode.scale, spec.recode.offset);
            test_same.map_feature(j, |v| match v {
                Value::Num(x) => Value::Num(a * x + b),
                other => other,
            })?
        }
        None => test_same.clone(),
    };
    Ok(SyntheticData { train, test_same, test_recoded, test_temporal, z_train, z_same, z_temporal })
}

/// Monte Carlo estimate of the outcome rate implied by the spec.
pub fn expected_prevalence(spec: &SyntheticSpec, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..n {
        let mut eta = spec.intercept;
        for f in &spec.numeric {
            let x: f64 = StandardNormal.sample(&mut rng);
            eta += f.beta * x;
        }
        if let Some(cat) = &spec.categorical {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut l = cat.effects.len() - 1;
            for (k, &p) in cat.probabilities.iter().enumerate() {
                cum += p;
                if u < cum {
                    l = k;
                    break;
                }
            }
            eta += cat.effects[l];
        }
        if rng.random::<f64>() < spec.confounder.prevalence {
            eta += spec.confounder.outcome_effect;
        }
        acc += sigmoid(eta);
    }
    acc / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedExpertSpec {
    pub n_experts: usize,
    /// Standard deviation of per-rating noise on the latent (quantile) scale.
    pub noise_sd: f64,
    /// Latent cut points for ratings 2..5.
    pub thresholds: [f64; 4],
    /// Raters' cut points are offset evenly across `[-spread, +spread]`.
    pub threshold_spread: f64,
    pub seed: u64,
}

impl Default for SimulatedExpertSpec {
    fn default() -> Self {
        SimulatedExpertSpec { n_experts: 15, noise_sd: 0.05, thresholds: [0.1, 0.3, 0.7, 0.9], threshold_spread: 0.15, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSimulation {
    pub assessments: Vec<ExpertAssessment>,
    /// Ids of rules matching no row, which were not rated.
    pub skipped: Vec<String>,
    /// Believed risk per rated rule, in rule order.
    pub believed_risk: Vec<(String, f64)>,
}

/// Rates every rule with support in `displayed`, the data as the raters see it.
pub fn simulate_experts(rules: &[Rule], displayed: &Dataset, truth: &SyntheticSpec, espec: &SimulatedExpertSpec) -> Result<ExpertSimulation> {
    if espec.n_experts == 0 {
        return Err(EamlError::invalid("at least one simulated expert is required"));
    }
    if !(espec.noise_sd >= 0.0) {
        return Err(EamlError::invalid("noise_sd must be non-negative"));
    }
    let schema = displayed.schema();
    let risks: Vec<f64> = (0..displayed.n_rows()).map(|i| sigmoid(truth.true_logit(displayed.row(i)))).collect();
    let mut believed = Vec::new();
    let mut skipped = Vec::new();
    for rule in rules {
        let mut matched = Vec::new();
        for i in 0..displayed.n_rows() {
            if rule.matches(schema, displayed.row(i))? {
                matched.push(risks[i]);
            }
        }
        if matched.is_empty() {
            skipped.push(rule.id.clone());
        } else {
            believed.push((rule.id.clone(), mean(&matched)));
        }
    }
    let k = believed.len();
    let latent: Vec<f64> = average_ranks(&believed.iter().map(|b| b.1).collect::<Vec<_>>())
        .into_iter()
        .map(|r| (r - 0.5) / k as f64)
        .collect();
    let noise = Normal::new(0.0, espec.noise_sd).map_err(|e| EamlError::invalid(e.to_string()))?;
    let start: DateTime<Utc> = DateTime::from_timestamp(1_577_836_800, 0).expect("valid epoch");
    let mut assessments = Vec::with_capacity(k * espec.n_experts);
    for e in 0..espec.n_experts {
        let mut rng = ChaCha8Rng::seed_from_u64(espec.seed);
        rng.set_stream(e as u64);
        let offset = if espec.n_experts > 1 {
            espec.threshold_spread * (2.0 * e as f64 / (espec.n_experts - 1) as f64 - 1.0)
        } else {
            0.0
        };
        let mut clock = start + Duration::hours(e as i64);
        for (idx, (rule_id, _)) in believed.iter().enumerate() {
            let eps: f64 = if espec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let v = latent[idx] + eps;
            let rating = 1 + espec.thresholds.iter().filter(|&&t| t + offset < v).count() as u8;
            let elapsed_ms = rng.random_range(5_000..30_000u64);
            clock += Duration::milliseconds(elapsed_ms as i64);
            assessments.push(ExpertAssessment {
                expert_id: format!("expert-{:02}", e + 1),
                rule_id: rule_id.clone(),
                rating,
                elapsed_ms,
                timestamp: clock,
            });
        }
    }
    Ok(ExpertSimulation { assessments, skipped, believed_risk: believed })
}
