use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gsmoment", version, about = "Gene-set association p-values from exact permutation moments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Moment-based p-values for every gene set.
    Test(RunArgs),
    /// Moment p-values next to a resampling oracle.
    Compare(CompareArgs),
    /// Wall-clock comparison of moment and permutation paths.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StatChoice {
    Linear,
    Quadratic,
    Both,
}

impl StatChoice {
    pub fn linear(self) -> bool {
        matches!(self, StatChoice::Linear | StatChoice::Both)
    }

    pub fn quadratic(self) -> bool {
        matches!(self, StatChoice::Quadratic | StatChoice::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DistChoice {
    Normal,
    Beta,
    Chisq,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Alternative {
    Left,
    Right,
    TwoSided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdjustChoice {
    None,
    Bh,
    Bonferroni,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OracleMode {
    Permutation,
    Rotation,
    Exhaustive,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// Genes × subjects TSV with a header row of subject ids.
    #[arg(long, value_name = "PATH")]
    pub expression: PathBuf,
    /// Two-column TSV: subject id, numeric value.
    #[arg(long, value_name = "PATH")]
    pub phenotype: PathBuf,
    /// Gene sets in GMT format.
    #[arg(long = "gene-sets", value_name = "PATH")]
    pub gene_sets: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub stat: StatChoice,
    #[arg(long, value_enum, default_value = "auto")]
    pub dist: DistChoice,
    /// `equal`, `jg`, or a `gene<TAB>weight` file.
    #[arg(long, default_value = "equal", value_name = "equal|jg|FILE")]
    pub weights: String,
    #[arg(long, value_enum, default_value = "two-sided")]
    pub alternative: Alternative,
    /// Scale each gene to unit variance after centering.
    #[arg(long)]
    pub standardize: bool,
    /// Replace each gene by normal scores of its ranks.
    #[arg(long = "quantile-transform")]
    pub quantile_transform: bool,
    #[arg(long, value_enum, default_value = "none")]
    pub adjust: AdjustChoice,
    /// Output file; standard output when omitted or `-`.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Worker threads for per-set work.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
}

#[derive(Clone, Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "permutation")]
    pub mode: OracleMode,
    /// Resampling draws per set (ignored by exhaustive mode).
    #[arg(long, default_value_t = 9999, value_parser = clap::value_parser!(u64).range(1..))]
    pub permutations: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Permutation counts to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    pub grid: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}
