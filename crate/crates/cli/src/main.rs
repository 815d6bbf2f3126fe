mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Equivariant tensor potential with charge and spin conditioning.
#[derive(Parser, Debug)]
#[command(name = "tensorpot", version, about)]
struct Cli {
    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the toy charge-degeneracy datasets A′, B′ and A′∪B′.
    GenToy(GenToyArgs),
    /// Train a model on an extended-XYZ dataset.
    Train(TrainArgs),
    /// Report energy and force errors of a model on labelled data.
    Eval(EvalArgs),
    /// Write predicted energies and forces as extended XYZ.
    Predict(PredictArgs),
    /// Run the rotation/reflection/translation/permutation suite.
    CheckEquivariance(EquivarianceArgs),
    /// Compare analytic forces with central differences.
    Gradcheck(GradcheckArgs),
    /// Time energy + forces on random systems of growing size.
    BenchScaling(BenchArgs),
}

#[derive(Args, Debug)]
struct OutDir {
    /// Directory receiving every output file.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GenToyArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of molecules.
    #[arg(long, default_value_t = 3)]
    pairs: usize,
    /// Conformers per molecule and charge.
    #[arg(long, default_value_t = 500)]
    frames: usize,
    /// Total charges of A′ and B′.
    #[arg(long, num_args = 2, value_delimiter = ',', default_values_t = [0.0, -1.0], allow_hyphen_values = true)]
    charges: Vec<f64>,
    /// Gaussian displacement per Cartesian coordinate, Å.
    #[arg(long, default_value_t = 0.2)]
    displacement: f64,
    /// Frames with any |F| at or above this (eV/Å) are redrawn.
    #[arg(long, default_value_t = 100.0)]
    max_force: f64,
    /// Oracle parameter overrides, e.g. `gamma=0.8`.
    #[arg(long = "oracle", value_name = "KEY=VALUE")]
    oracle: Vec<String>,
}

#[derive(Args, Debug)]
struct ModelSource {
    /// Model or checkpoint file; random parameters from the config when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Run configuration used for random parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration overrides for random parameters.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    out: OutDir,
    /// Flat key-value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labelled extended-XYZ training data.
    #[arg(long)]
    data: PathBuf,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Configuration overrides applied after the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model or checkpoint file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Restrict to one split of a checkpoint's dataset: train, val or test.
    #[arg(long)]
    split: Option<String>,
    /// Attribute to group metrics by: total_charge or spin.
    #[arg(long, default_value = "total_charge")]
    group_by: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input extended XYZ.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutDir,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "predictions.xyz")]
    output: String,
}

#[derive(Args, Debug)]
struct EquivarianceArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Deliberately break the model (flip-skew-z) to see the suite fail.
    #[arg(long)]
    sabotage: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, default_value_t = 20)]
    systems: usize,
    /// Finite-difference step, Å.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Largest accepted relative force error.
    #[arg(long, default_value_t = 1e-5)]
    rtol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512, 1024])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fail when the median doubling ratio exceeds this.
    #[arg(long)]
    max_ratio: Option<f64>,
}

/// A property check that ran to completion and failed.
#[derive(Debug)]
struct ValidationFailure(String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    use tensorpot::Error as E;
    if err.downcast_ref::<ValidationFailure>().is_some() {
        return EXIT_VALIDATION;
    }
    match err.downcast_ref::<E>() {
        Some(E::NonFinite(_) | E::NonFiniteLoss { .. } | E::NoConvergence { .. } | E::RankDeficient(_)) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TENSORPOT_LOG", "info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("--threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::GenToy(a) => commands::gen_toy(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::CheckEquivariance(a) => commands::check_equivariance(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::BenchScaling(a) => commands::bench_scaling(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
