//! `plsom` command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid input or I/O failure, 2 when a
//! `--check` run completes but its acceptance condition does not hold.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use plsom::lattice::Extents;
use plsom::ThetaVariant;

#[derive(Parser, Debug)]
#[command(name = "plsom", version, about = "Parameter-less self-organizing map laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, env = "PLSOM_OUT_DIR", default_value = "plsom-out")]
    pub out_dir: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one map on a 2-D input distribution and write weights and metrics.
    Train(TrainArgs),
    /// Quality metrics of a trained 2-D map.
    Metrics(MetricsArgs),
    /// Expected-displacement map and integrated field of a frozen map.
    ExpectedField(FieldArgs),
    /// Grid sweep of the 3-node ordering field, or the randomized lemma suites.
    VerifyOrdering(VerifyArgs),
    /// Inverse kinematics with a PLSOM lookup map.
    #[command(subcommand)]
    Ik(IkCommand),
    /// Prototype-based classification with a pruned PLSOM.
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Scripted experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    Plsom,
    Som,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Linear,
    Affine,
    Log,
}

impl From<Variant> for ThetaVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Linear => ThetaVariant::Linear,
            Variant::Affine => ThetaVariant::Affine,
            Variant::Log => ThetaVariant::Log,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionArg {
    Uniform,
    Gaussian,
}

/// 2-D input distribution flags shared by `train` and `expected-field`.
#[derive(Args, Debug, Clone)]
pub struct DistributionOpts {
    #[arg(long, value_enum, default_value_t = DistributionArg::Uniform)]
    pub distribution: DistributionArg,
    /// Lower corner of the support box.
    #[arg(long, value_delimiter = ',', default_value = "0,0")]
    pub lo: Vec<f64>,
    /// Upper corner of the support box.
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    pub hi: Vec<f64>,
    /// Gaussian mean (per axis).
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
    pub mean: Vec<f64>,
    /// Gaussian standard deviation.
    #[arg(long, default_value_t = 0.2)]
    pub sd: f64,
}

/// Trainer parameter flags. Unset values take the trainer defaults.
#[derive(Args, Debug, Clone)]
pub struct TrainerOpts {
    #[arg(long, value_enum, default_value_t = TrainerKind::Plsom)]
    pub trainer: TrainerKind,
    /// PLSOM neighborhood size (default: half the larger grid extent).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub theta_min: Option<f64>,
    #[arg(long, value_enum, default_value_t = Variant::Affine)]
    pub variant: Variant,
    /// SOM initial learning rate.
    #[arg(long, default_value_t = 0.9)]
    pub alpha0: f64,
    /// SOM initial neighborhood size (default: half the larger grid extent).
    #[arg(long)]
    pub beta0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value = "20x20")]
    pub lattice: Extents,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: u64,
    #[command(flatten)]
    pub trainer: TrainerOpts,
    /// Fraction of the run over which SOM rates decay to 1%.
    #[arg(long, default_value_t = 1.0)]
    pub horizon_fraction: f64,
    /// PLSOM: hold the normalizer r fixed at this value.
    #[arg(long)]
    pub forced_r: Option<f64>,
    #[command(flatten)]
    pub dist: DistributionOpts,
    /// Initial weights are uniform in [init-lo, init-hi] per component.
    #[arg(long, default_value_t = 0.4)]
    pub init_lo: f64,
    #[arg(long, default_value_t = 0.6)]
    pub init_hi: f64,
    #[arg(long, default_value_t = plsom::experiment::DEFAULT_METRIC_EVERY)]
    pub metric_every: u64,
    /// Extra weight snapshots at these iterations.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Vec<u64>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Weights CSV (`node_index,w_0,w_1`).
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub lattice: Extents,
    /// Area of the input region for the unused-space metric.
    #[arg(long, default_value_t = 1.0)]
    pub total_area: f64,
    /// Center for the density-vs-radius profile.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
    pub center: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub bin_width: f64,
    /// Exit 2 unless the map has no flipped cells.
    #[arg(long)]
    pub check: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureArg {
    Grid,
    MonteCarlo,
}

#[derive(Args, Debug)]
pub struct FieldArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub lattice: Extents,
    #[command(flatten)]
    pub trainer: TrainerOpts,
    /// Frozen PLSOM normalizer.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Frozen SOM learning rate.
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Frozen SOM neighborhood size (default: the initial size).
    #[arg(long)]
    pub som_beta: Option<f64>,
    #[command(flatten)]
    pub dist: DistributionOpts,
    /// Also write the scalar displacement map of this node.
    #[arg(long)]
    pub node: Option<usize>,
    /// Cells per axis of the scalar map.
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    #[arg(long, value_enum, default_value_t = QuadratureArg::Grid)]
    pub quadrature: QuadratureArg,
    /// Midpoint points per axis for grid quadrature.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    /// Samples for Monte Carlo quadrature.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Grid spacing of the sweep.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Largest admissible field value.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub gradient_bound: Option<f64>,
    /// Attractor as `tx,ty,tz`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub attractor: Option<Vec<f64>>,
    /// Use the full-scale spacing (tens of billions of points).
    #[arg(long, conflicts_with = "spacing")]
    pub paper_scale: bool,
    /// Resume from and periodically write this checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run the randomized lemma suites instead of the sweep.
    #[arg(long)]
    pub lemmas: bool,
    /// Trials per lemma suite.
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    /// Exit 2 if any violation or counterexample is found.
    #[arg(long)]
    pub check: bool,
}

#[derive(Subcommand, Debug)]
pub enum IkCommand {
    /// Train a lookup map for the bundled 3-joint arm.
    Train(IkTrainArgs),
    /// Solve for joint angles that reach a target position.
    Solve(IkSolveArgs),
}

#[derive(Args, Debug)]
pub struct IkTrainArgs {
    #[arg(long, default_value = "20x20x20")]
    pub nodes: Extents,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: u64,
    /// Weights CSV; labels and metadata are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IkSolveArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Target position `x,y,z`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub target: Vec<f64>,
}

#[derive(Subcommand, Debug)]
pub enum ClassifyCommand {
    /// Train, label and prune a map on the training split and save it.
    Train(ClassifyArgs),
    /// Report accuracy on the test split (training first unless `--map` is given).
    Eval(ClassifyArgs),
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Dataset: numeric features followed by a class label per line.
    /// Without it a synthetic 26-class set is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Separate test file; otherwise `--data` is split.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value = "20x20x20")]
    pub grid: Extents,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = Variant::Affine)]
    pub variant: Variant,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Saved labeled map (`eval` only) or output path (`train`).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Exit 2 when accuracy is below this value.
    #[arg(long)]
    pub min_accuracy: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCommand {
    /// Run a TOML spec or a built-in experiment.
    Run(ExperimentRunArgs),
    /// List the built-in experiments.
    List,
}

#[derive(Args, Debug)]
pub struct ExperimentRunArgs {
    #[arg(long, required_unless_present = "builtin", conflicts_with = "builtin")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub builtin: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli, std::env::args().collect()) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            // Core errors already embed their cause in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
