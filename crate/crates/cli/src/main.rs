//! `gaitmind`: dataset generation, training, transfer, evaluation, and
//! report aggregation on the command line.
//!
//! Exit codes: 0 success, 2 configuration error (including usage errors),
//! 3 data error, 4 I/O error. Anything else signals an internal bug.

use clap::{Parser, Subcommand};

mod plot;
mod report;
mod run;

#[derive(Parser)]
#[command(name = "gaitmind", version, about = "Locomotion mode experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic multi-subject gait dataset.
    GenSynth(run::GenSynthArgs),
    /// Train subject-dependent or leave-one-subject-out models.
    Train(run::TrainArgs),
    /// Adapt pretrained fold models to their held-out subjects.
    Transfer(run::TransferArgs),
    /// Score a saved model on a dataset, one report per subject.
    Eval(run::EvalArgs),
    /// Run one protocol across several sensor configurations.
    Ablate(run::AblateArgs),
    /// Aggregate emitted reports into tables and optional charts.
    Report(report::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = run::apply_thread_cap().and_then(|()| match cli.cmd {
        Cmd::GenSynth(a) => run::gen_synth(a),
        Cmd::Train(a) => run::train(a),
        Cmd::Transfer(a) => run::transfer(a),
        Cmd::Eval(a) => run::eval(a),
        Cmd::Ablate(a) => run::ablate(a),
        Cmd::Report(a) => report::report(a),
    });
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
