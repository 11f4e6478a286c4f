//! `eaml run`: every stage from one JSON manifest.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! data/            synth output (skipped when `data_dir` is set)
//! model.json       rules.jsonl      assessments.jsonl
//! delta/           report, histogram, outliers, calibration, deltas.json
//! eaml_model.json  scores.tsv       eval.tsv      learning_curve.tsv
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use eaml::eaml::Grid;
use eaml::pipeline::RuleFitConfig;
use eaml::synthetic::{SimulatedExpertSpec, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::commands::*;
use crate::io::write_json;

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// Pipeline manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    /// Relative paths resolve against the manifest's directory.
    pub out_dir: PathBuf,
    /// Existing `synth`-layout directory; the synthetic stage runs when absent.
    pub data_dir: Option<PathBuf>,
    pub outcome: String,
    pub synthetic: SyntheticSpec,
    pub rulefit: RuleFitConfig,
    pub experts: SimulatedExpertSpec,
    pub bins: usize,
    pub ci: f64,
    pub grid: Grid,
    pub validation_fraction: f64,
    pub learning_curve: Option<CurveStage>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            out_dir: "out".into(),
            data_dir: None,
            outcome: OUTCOME.into(),
            synthetic: SyntheticSpec::default(),
            rulefit: RuleFitConfig::default(),
            experts: SimulatedExpertSpec::default(),
            bins: 5,
            ci: 0.9,
            grid: Grid::Soft { lambdas: vec![1e-3, 1e-2, 1e-1], gammas: vec![0.0, 1.0, 5.0] },
            validation_fraction: 0.3,
            learning_curve: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveStage {
    pub sizes: Vec<usize>,
    pub subsamples: usize,
    pub seed: u64,
    pub n_lambdas: usize,
    pub max_bin: usize,
}

impl Default for CurveStage {
    fn default() -> Self {
        CurveStage { sizes: vec![100, 200, 400, 800, 1600, 3200, 6400], subsamples: 10, seed: 0, n_lambdas: 20, max_bin: 1 }
    }
}

pub fn run(a: &RunArgs) -> Result<()> {
    let m: Manifest = crate::io::read_json(&a.manifest)?;
    let root = a.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = root.join(&m.out_dir);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let stage = |name: &str| eprintln!("== {name}");

    let data = match &m.data_dir {
        Some(d) => root.join(d),
        None => {
            stage("synth");
            let spec = out.join("synthetic_spec.json");
            write_json(&spec, &m.synthetic)?;
            let data = out.join("data");
            synth(&SynthArgs { spec: Some(spec), out: data.clone(), seed: None, n_train: None, n_test: None })?;
            data
        }
    };
    let io = DataArgs { schema: data.join("schema.json"), outcome: m.outcome.clone() };
    let train = data.join("train.csv");
    let tests: Vec<(String, PathBuf)> = ["test_same", "test_recoded", "test_temporal"]
        .iter()
        .map(|t| (t.to_string(), data.join(format!("{t}.csv"))))
        .filter(|(_, p)| p.exists())
        .collect();
    for p in [&io.schema, &train] {
        exists(p)?;
    }

    stage("rulefit-fit");
    let config = out.join("rulefit_config.json");
    write_json(&config, &m.rulefit)?;
    let model = out.join("model.json");
    let rules = out.join("rules.jsonl");
    rulefit_fit(&RulefitArgs {
        data: train.clone(),
        io: io.clone(),
        config: Some(config),
        out_model: model.clone(),
        out_rules: rules.clone(),
        seed: None,
        test: tests.first().map(|t| t.1.clone()),
    })?;

    stage("simulate-experts");
    let spec = data.join("spec.json");
    exists(&spec)?;
    let experts = out.join("experts_config.json");
    write_json(&experts, &m.experts)?;
    let assessments = out.join("assessments.jsonl");
    simulate(&SimulateArgs {
        rules: rules.clone(),
        data: train.clone(),
        io: io.clone(),
        spec,
        config: Some(experts),
        out: assessments.clone(),
        seed: None,
        n_experts: None,
    })?;

    stage("delta");
    let delta_dir = out.join("delta");
    delta(&DeltaArgs {
        rules,
        assessments,
        data: train.clone(),
        io: io.clone(),
        bins: m.bins,
        ci: m.ci,
        out: delta_dir.clone(),
    })?;
    let deltas = delta_dir.join("deltas.json");

    stage("eaml-fit");
    let grid = out.join("grid.json");
    write_json(&grid, &m.grid)?;
    let eaml_model = out.join("eaml_model.json");
    eaml_fit(&EamlFitArgs {
        model: model.clone(),
        data: train.clone(),
        outcome: m.outcome.clone(),
        deltas: deltas.clone(),
        mode: match m.grid {
            Grid::Hard { .. } => ModeArg::Hard,
            Grid::Soft { .. } => ModeArg::Soft,
        },
        max_bin: None,
        lambda: None,
        gamma: None,
        weight: WeightArg::Uniform,
        norm: 1,
        delta_source: SourceArg::Binned,
        validation: None,
        validation_fraction: m.validation_fraction,
        seed: m.rulefit.seed,
        test: tests.first().map(|t| t.1.clone()),
        grid: Some(grid),
        table: Some(out.join("scores.tsv")),
        out: eaml_model.clone(),
    })?;

    if !tests.is_empty() {
        stage("eval");
        eval(&EvalArgs {
            model: vec![("rulefit".into(), model.clone()), ("eaml".into(), eaml_model)],
            data: tests.clone(),
            outcome: m.outcome.clone(),
            out: Some(out.join("eval.tsv")),
        })?;
    }

    if let (Some(c), false) = (&m.learning_curve, tests.is_empty()) {
        stage("learning-curve");
        learning_curve(&CurveArgs {
            model,
            pool: train,
            test: tests,
            outcome: m.outcome.clone(),
            sizes: c.sizes.clone(),
            subsamples: c.subsamples,
            seed: c.seed,
            n_lambdas: c.n_lambdas,
            deltas: Some(deltas),
            max_bin: c.max_bin,
            out: Some(out.join("learning_curve.tsv")),
        })?;
    }
    Ok(())
}
