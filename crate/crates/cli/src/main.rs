use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use zsl_cli::{commands, Overrides, RunConfig};
use zsl_core::eval::EvalMode;

/// Zero-shot learning with a discriminative-embedding autoencoder.
#[derive(Parser)]
#[command(name = "zsl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark dataset.
    Synth(Common),
    /// Train encoder, decoder and regressor on the seen classes.
    Train(Common),
    /// Synthesize features for the unseen classes.
    Generate(Common),
    /// Classify test features and write the report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "zsl")]
        mode: Mode,
    },
    /// Shorthand for `eval --mode gzsl`.
    Gzsl(Common),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_gradients: bool,
    },
    /// Print and re-verify an emitted report.
    Report(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Zsl,
    Gzsl,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    run_name: Option<String>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    feedback_iters: Option<usize>,
    #[arg(long)]
    gen_samples: Option<usize>,
    #[arg(long)]
    gen_noise: Option<f64>,
    /// Override any config field, e.g. `--set train.lr=0.001`.
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig> {
        let ov = Overrides {
            seed: self.seed,
            out: self.out,
            data: self.data,
            run_name: self.run_name,
            margin: self.margin,
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            feedback_iters: self.feedback_iters,
            gen_samples: self.gen_samples,
            gen_noise: self.gen_noise,
            set: self.set,
        };
        RunConfig::resolve(self.config.as_deref(), &ov)
    }
}

fn run(command: Command) -> Result<bool> {
    let summary = match command {
        Command::Synth(c) => commands::synth(&c.resolve()?)?,
        Command::Train(c) => commands::train_cmd(&c.resolve()?)?,
        Command::Generate(c) => commands::generate(&c.resolve()?)?,
        Command::Eval { common, mode } => {
            let mode = match mode {
                Mode::Zsl => EvalMode::Zsl,
                Mode::Gzsl => EvalMode::Gzsl,
            };
            commands::eval(&common.resolve()?, mode)?
        }
        Command::Gzsl(c) => commands::eval(&c.resolve()?, EvalMode::Gzsl)?,
        Command::Report(c) => commands::report(&c.resolve()?)?,
        Command::Gradcheck { corrupt_gradients } => {
            let outcome = commands::gradcheck(corrupt_gradients)?;
            emit(&outcome.table);
            return Ok(outcome.passed());
        }
    };
    emit(&summary);
    Ok(true)
}

/// Writes to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{}", text.trim_end());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
