mod commands;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

/// Expert-augmented rule ensembles: data generation, rule fitting, rating
/// collection, delta rankings and expert-weighted refits.
#[derive(Debug, Parser)]
#[command(name = "eaml", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a confounded synthetic cohort with shifted test sets.
    Synth(SynthArgs),
    /// Boost, extract rules and fit the L1 rule model.
    RulefitFit(RulefitArgs),
    /// Rate exported rules with simulated clinicians.
    SimulateExperts(SimulateArgs),
    /// Rank expert/data disagreement per rule.
    Delta(DeltaArgs),
    /// Refit the rule model with expert-derived penalties.
    EamlFit(EamlFitArgs),
    /// Score models on labeled datasets.
    Eval(EvalArgs),
    /// Test AUC against training-set size.
    LearningCurve(CurveArgs),
    /// Serve rules to raters over HTTP.
    Serve(ServeArgs),
    /// Run every stage from a manifest.
    Run(manifest::RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::RulefitFit(a) => rulefit_fit(&a),
        Command::SimulateExperts(a) => simulate(&a),
        Command::Delta(a) => delta(&a),
        Command::EamlFit(a) => eaml_fit(&a),
        Command::Eval(a) => eval(&a),
        Command::LearningCurve(a) => learning_curve(&a),
        Command::Serve(a) => serve(&a),
        Command::Run(a) => manifest::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 usage, 3 data, 4 convergence.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<eaml::EamlError>() {
            return err.exit_code() as u8;
        }
    }
    3
}
