//! `atrisk`: simulate, featurize, train, predict, evaluate and sweep.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use atrisk::augmentation::{Lookback, Weighting};
use atrisk::evaluation::QueryPoints;
use atrisk::features::FeatureSubset;
use atrisk::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "atrisk", version, about = "Dropout early-warning pipeline")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort with ground truth.
    Simulate(SimulateArgs),
    /// Dump labeled pairs and their feature vectors.
    Featurize(FeaturizeArgs),
    /// Fit the pipeline on a student-level training split.
    Train(TrainArgs),
    /// Rank students by dropout probability.
    Predict(PredictArgs),
    /// AUC per horizon and flagging recall of a trained model.
    Evaluate(EvaluateArgs),
    /// Lookback / weighting / feature-subset grid over seeds.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Event log (JSON lines).
    #[arg(long)]
    pub events: PathBuf,
    /// Column schema (JSON).
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ArmArgs {
    /// Pseudo-positive lookback window in days, or `none`.
    #[arg(long, default_value = "7", value_parser = parse_lookback)]
    pub lookback: Lookback,
    #[arg(long, default_value = "convex", value_parser = parse_weighting)]
    pub weighting: Weighting,
    /// Feature blocks joined by `+`, e.g. `in+out+time`.
    #[arg(long, default_value = "in+out+time", value_parser = parse_subset)]
    pub features: FeatureSubset,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub students: usize,
    #[arg(long, default_value_t = 0.1616)]
    pub dropout_rate: f64,
    #[arg(long, default_value_t = 86.0)]
    pub mean_span: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub arm: ArmArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gbdt,
    Logistic,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub arm: ArmArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of students used for training; the rest are held out.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value_t = ModelKind::Gbdt)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 2)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 20.0)]
    pub min_child_weight: f64,
    #[arg(long, default_value_t = 10.0)]
    pub l2_leaf_reg: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// model.json written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Score every student active on this day instead of the ongoing
    /// students at their latest observation.
    #[arg(long)]
    pub day: Option<i64>,
    #[arg(long, default_value_t = 0.3)]
    pub top_fraction: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryArg {
    EveryDay,
    ObservationDays,
}

impl From<QueryArg> for QueryPoints {
    fn from(q: QueryArg) -> Self {
        match q {
            QueryArg::EveryDay => QueryPoints::EveryDay,
            QueryArg::ObservationDays => QueryPoints::ObservationDays,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Horizons in days: `1..14` or `1,7,14`.
    #[arg(long, default_value = "1..14", value_parser = parse_deltas)]
    pub deltas: Deltas,
    #[arg(long, value_enum, default_value_t = QueryArg::EveryDay)]
    pub query_points: QueryArg,
    #[arg(long, default_value_t = 0.3)]
    pub recall_fraction: f64,
    #[arg(long, default_value = "1", value_parser = parse_deltas)]
    pub recall_deltas: Deltas,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Manifest of the training run; its held-out students are evaluated.
    /// Without it every resolved student in the event log is evaluated.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "none,3,7,14", value_parser = parse_lookback)]
    pub lookback: Vec<Lookback>,
    #[arg(long, value_delimiter = ',', default_value = "linear,convex,concave", value_parser = parse_weighting)]
    pub weighting: Vec<Weighting>,
    /// Comma-separated subsets, e.g. `in,out,in+out+time`, or `ablation`
    /// for all seven.
    #[arg(long, default_value = "in+out+time")]
    pub features: String,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deltas(pub Vec<u32>);

fn parse_lookback(s: &str) -> Result<Lookback, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_subset(s: &str) -> Result<FeatureSubset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_deltas(s: &str) -> Result<Deltas, String> {
    let bad = || format!("horizons must look like `1..14` or `1,7,14`, got `{s}`");
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let a: u32 = a.parse().map_err(|_| bad())?;
            let b: u32 = b.trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err("horizons must be positive".into());
    }
    out.sort_unstable();
    out.dedup();
    Ok(Deltas(out))
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Model => 4,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("{}", error_record(&Error::Config("--workers must be positive".into())));
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool configured once");
    }
    match commands::run(cli.command, &argv) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn error_record(e: &Error) -> String {
    let kind = match e.kind() {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Model => "model",
    };
    serde_json::json!({
        "error": {
            "kind": kind,
            "code": exit_code(e.kind()),
            "message": e.to_string(),
        }
    })
    .to_string()
}
