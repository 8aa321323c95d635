use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fuzzydid::{CiMethod, EstimateKind, Schema};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "fuzzydid", version, about = "Fuzzy difference-in-differences estimation")]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Wald-DID, Wald-TC, Wald-CIC and quantile effects.
    Estimate(EstimateArgs),
    /// Bounds for designs whose control group's treatment moves.
    Bounds(BoundsArgs),
    /// Pre-period placebo tests.
    Placebo(PlaceboArgs),
    /// Label groups as increasing, stable or decreasing.
    Classify(ClassifyArgs),
    /// Monte Carlo study on a simulated design.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Estimate(_) => "estimate",
            Self::Bounds(_) => "bounds",
            Self::Placebo(_) => "placebo",
            Self::Classify(_) => "classify",
            Self::Simulate(_) => "simulate",
        }
    }

    pub fn output(&self) -> &OutputArgs {
        match self {
            Self::Estimate(a) => &a.out,
            Self::Bounds(a) => &a.out,
            Self::Placebo(a) => &a.out,
            Self::Classify(a) => &a.out,
            Self::Simulate(a) => &a.out,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Delimited text file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub y: String,
    #[arg(long, default_value = "d")]
    pub d: String,
    #[arg(long, default_value = "g")]
    pub g: String,
    #[arg(long, default_value = "t")]
    pub t: String,
    /// Cluster column; switches the bootstrap to resampling clusters.
    #[arg(long)]
    pub cluster: Option<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

impl DataArgs {
    pub fn schema(&self) -> Schema {
        Schema {
            y: self.y.clone(),
            d: self.d.clone(),
            g: self.g.clone(),
            t: self.t.clone(),
            cluster: self.cluster.clone(),
            delimiter: self.delimiter as u8,
            ..Schema::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CiArg {
    Percentile,
    Normal,
}

impl From<CiArg> for CiMethod {
    fn from(c: CiArg) -> Self {
        match c {
            CiArg::Percentile => CiMethod::Percentile,
            CiArg::Normal => CiMethod::Normal,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferenceArgs {
    /// Bootstrap replicates; 0 uses influence-function standard errors.
    #[arg(long, default_value_t = 499)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CiArg::Percentile)]
    pub ci: CiArg,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    Did,
    Tc,
    Cic,
    All,
}

impl EstimatorArg {
    pub fn kinds(self) -> Vec<EstimateKind> {
        match self {
            Self::Did => vec![EstimateKind::Did],
            Self::Tc => vec![EstimateKind::Tc],
            Self::Cic => vec![EstimateKind::Cic],
            Self::All => vec![EstimateKind::Did, EstimateKind::Tc, EstimateKind::Cic],
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::All)]
    pub estimator: EstimatorArg,
    /// Quantile levels for local quantile effects, e.g. 0.25,0.5,0.75.
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Vec<f64>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Largest control-group share change still treated as stable.
    #[arg(long, default_value_t = 0.0)]
    pub stable_tol: f64,
    /// `auto` to classify groups, or a group,label CSV.
    #[arg(long)]
    pub supergroups: Option<String>,
    #[arg(long, default_value_t = fuzzydid::multigroup::DEFAULT_THRESHOLD)]
    pub pvalue_threshold: f64,
    /// Classify on one half of the rows and estimate on the other.
    #[arg(long)]
    pub split_sample: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsArg {
    Tc,
    Cic,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = BoundsArg::All)]
    pub estimator: BoundsArg,
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Vec<f64>,
    /// Outcome support as lo,hi; defaults to the sample range.
    #[arg(long, value_parser = parse_support, allow_hyphen_values = true)]
    pub support: Option<(f64, f64)>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long, default_value_t = 0.0)]
    pub stable_tol: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Period pair as before,after; defaults to the two periods preceding the last.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub placebo_pair: Option<(i64, i64)>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = fuzzydid::multigroup::DEFAULT_THRESHOLD)]
    pub pvalue_threshold: f64,
    /// Also classify each half of the rows and list disagreements.
    #[arg(long)]
    pub split_sample: bool,
    /// Write the labels as a group,label CSV.
    #[arg(long)]
    pub write_map: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// key = value design file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replications; 0 skips the Monte Carlo study.
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::All)]
    pub estimator: EstimatorArg,
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Vec<f64>,
    /// Bootstrap replicates per replication; 0 uses influence-function SEs.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Overrides the seed in the design file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = CiArg::Percentile)]
    pub ci: CiArg,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Also write one dataset drawn at the design's seed as y,d,g,t CSV.
    #[arg(long)]
    pub write_data: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn two_numbers<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated values, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse `{}`", v.trim()));
    Ok((p(a)?, p(b)?))
}

fn parse_support(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = two_numbers::<f64>(s)?;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(format!("support needs lo < hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn parse_pair(s: &str) -> Result<(i64, i64), String> {
    two_numbers(s)
}
