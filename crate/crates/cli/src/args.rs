//! Command-line grammar.

use std::path::PathBuf;

use anyq::Format;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "anyq", version, about = "Learned lookup-table weight quantization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a toy model over calibration inputs and save per-channel E|x|.
    Calibrate(CalibrateArgs),
    /// Quantize a weight matrix into an ANYQ file.
    Quantize(QuantizeArgs),
    /// Expand an ANYQ file back into a dense tensor file.
    Dequantize(DequantizeArgs),
    /// Compare formats on one weight matrix.
    Eval(EvalArgs),
    /// Time the fused lookup-table GEMM against dense fp32.
    Bench(BenchArgs),
    /// Print an ANYQ file's header and size accounting.
    Inspect(InspectArgs),
}

/// Options shared by the commands that quantize. Every field is optional so
/// a `--config` file can supply it instead.
#[derive(Debug, Args)]
pub struct QuantFlags {
    /// Elements per scale group along a row; 0 means one scale per row.
    #[arg(long, value_name = "N")]
    pub group_size: Option<usize>,
    /// Scale by max |w| instead of the group's min/max range.
    #[arg(long)]
    pub symmetric: bool,
    /// Seed for every random choice the learner makes.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// JSON file of defaults; explicit flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Toy model description (JSON).
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Calibration inputs, one sample per row (ANYT tensor file).
    #[arg(long, value_name = "FILE")]
    pub inputs: PathBuf,
    /// Destination statistics file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Weight matrix, one output channel per row (ANYT tensor file).
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Activation statistics file from `calibrate`.
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    /// Module whose statistics apply; optional when the file holds one.
    #[arg(long, value_name = "NAME")]
    pub module: Option<String>,
    /// Store codes in k-tiled order with this tile width.
    #[arg(long, value_name = "N")]
    pub tile_k: Option<usize>,
    #[command(flatten)]
    pub quant: QuantFlags,
    /// Destination ANYQ file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DequantizeArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Destination ANYT tensor file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Comma-separated formats to compare.
    #[arg(long, value_delimiter = ',', value_parser = parse_format)]
    pub formats: Vec<Format>,
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    pub module: Option<String>,
    /// Evaluation activations (ANYT); synthesized from the statistics when absent.
    #[arg(long, value_name = "FILE")]
    pub inputs: Option<PathBuf>,
    /// Number of synthesized activation samples.
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
    #[arg(long, value_enum)]
    pub emit: Option<Emit>,
    #[command(flatten)]
    pub quant: QuantFlags,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated `MxNxK` problem shapes.
    #[arg(long, value_delimiter = ',', value_name = "MxNxK")]
    pub shapes: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_format)]
    pub formats: Vec<Format>,
    /// Timed runs per measurement.
    #[arg(long, value_name = "N")]
    pub repeats: Option<usize>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Also dump the dequantization table(s) as JSON.
    #[arg(long)]
    pub codebook: bool,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = Format::ALL.iter().map(|f| f.name()).collect();
        format!("unknown format '{s}' (expected one of {})", names.join(", "))
    })
}
