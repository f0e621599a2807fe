//! Command-line surface. Every flag shows its default in `--help`, and the
//! argument structs double as the replayable run record, so they serialize
//! into run manifests as-is.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "abdiff",
    version,
    about = "Masked diffusion over paired antibody chains: train, sample, guide, evaluate"
)]
pub struct Cli {
    /// Worker threads for branch rollouts and pairwise matrices (0 = all cores).
    /// Any value produces identical outputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the denoiser and length model from a paired FASTA corpus
    TrainDenoiser(TrainDenoiserArgs),
    /// Fit a ridge property oracle from a corpus and an assay table
    TrainOracle(TrainOracleArgs),
    /// Generate sequence pairs unconditionally
    Sample(SampleArgs),
    /// Generate with value guidance from one or more oracles
    Guide(GuideArgs),
    /// Identity ECDF, similarity network, and enrichment reports
    Evaluate(EvaluateArgs),
    /// Summarize an artifact or run manifest
    Report(ReportArgs),
    /// Re-execute a run manifest and verify the outputs
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderArg {
    /// Uniformly random next position
    Random,
    /// Lowest-entropy next position
    #[value(name = "min_entropy", alias = "min-entropy")]
    MinEntropy,
}

impl From<OrderArg> for abdiff_core::sampler::OrderPolicy {
    fn from(value: OrderArg) -> Self {
        match value {
            OrderArg::Random => abdiff_core::sampler::OrderPolicy::Random,
            OrderArg::MinEntropy => abdiff_core::sampler::OrderPolicy::MinEntropy,
        }
    }
}

impl std::fmt::Display for OrderArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OrderArg::Random => "random",
            OrderArg::MinEntropy => "min_entropy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutArg {
    /// Deterministic argmax rollouts
    Greedy,
    /// Tempered stochastic rollouts on derived streams
    Sampled,
}

impl From<RolloutArg> for abdiff_core::guidance::RolloutPolicy {
    fn from(value: RolloutArg) -> Self {
        match value {
            RolloutArg::Greedy => abdiff_core::guidance::RolloutPolicy::Greedy,
            RolloutArg::Sampled => abdiff_core::guidance::RolloutPolicy::Sampled,
        }
    }
}

impl std::fmt::Display for RolloutArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RolloutArg::Greedy => "greedy",
            RolloutArg::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainDenoiserArgs {
    /// Paired FASTA training corpus
    #[arg(long, required_unless_present = "toy", conflicts_with = "toy")]
    pub corpus: Option<PathBuf>,
    /// Use the built-in synthetic corpus instead of --corpus
    #[arg(long)]
    pub toy: bool,
    /// Also write the synthetic corpus as paired FASTA (needs --toy)
    #[arg(long)]
    pub emit_corpus: Option<PathBuf>,
    /// Also write the synthetic assay table as CSV (needs --toy)
    #[arg(long)]
    pub emit_assays: Option<PathBuf>,
    /// Masking corruption draws per record
    #[arg(long, default_value_t = 20)]
    pub masking_draws: u32,
    /// Training seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output denoiser artifact
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a replayable run manifest
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainOracleArgs {
    /// Paired FASTA corpus the assay ids refer to
    #[arg(long)]
    pub corpus: PathBuf,
    /// Assay table (CSV: id column then one column per assay)
    #[arg(long)]
    pub assays: PathBuf,
    /// Assay column to fit
    #[arg(long)]
    pub assay: String,
    /// Ridge regularization strength
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// External per-id feature table (CSV/TSV) instead of k-mer features
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output oracle artifact
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a replayable run manifest
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Trained denoiser artifact
    #[arg(long)]
    pub model: PathBuf,
    /// Number of pairs to generate
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Softmax temperature
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Decoding order policy
    #[arg(long, value_enum, default_value_t = OrderArg::MinEntropy)]
    pub order: OrderArg,
    /// Argmax decoding (temperature ignored)
    #[arg(long, default_value_t = false)]
    pub greedy: bool,
    /// Base seed; record i decodes on the stream derived from (seed, i)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rejection-sampling cap per record
    #[arg(long, default_value_t = 100)]
    pub max_attempts: u32,
    /// Output paired FASTA
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a replayable run manifest
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GuideArgs {
    /// Trained denoiser artifact
    #[arg(long)]
    pub model: PathBuf,
    /// Oracle artifacts, comma separated; one guidance term each
    #[arg(long, value_delimiter = ',', required = true)]
    pub oracles: Vec<PathBuf>,
    /// Per-oracle weights, comma separated (default: equal, 1/K each)
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Candidate branches per step
    #[arg(long, default_value_t = 8)]
    pub branches: usize,
    /// Branch rollout policy
    #[arg(long, value_enum, default_value_t = RolloutArg::Greedy)]
    pub rollout: RolloutArg,
    /// Reference paired FASTA fixing each term's normalization (mean/std)
    #[arg(long)]
    pub reference: PathBuf,
    /// Template paired FASTA for region infilling (needs --regions)
    #[arg(long, requires = "regions")]
    pub template: Option<PathBuf>,
    /// Region TSV: id<TAB>start<TAB>end<TAB>label, half-open spans in
    /// concatenated heavy|light coordinates; only listed ids are infilled
    #[arg(long, requires = "template")]
    pub regions: Option<PathBuf>,
    /// Number of pairs to generate (de novo mode only)
    #[arg(long, default_value_t = 10, conflicts_with = "template")]
    pub n: usize,
    /// Softmax temperature
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Decoding order policy
    #[arg(long, value_enum, default_value_t = OrderArg::MinEntropy)]
    pub order: OrderArg,
    /// Argmax candidate draws (temperature ignored)
    #[arg(long, default_value_t = false)]
    pub greedy: bool,
    /// Base seed; record i decodes on the stream derived from (seed, i)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rejection-sampling cap per record
    #[arg(long, default_value_t = 100)]
    pub max_attempts: u32,
    /// Output paired FASTA
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a replayable run manifest
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Generated paired FASTA (the candidates)
    #[arg(long)]
    pub generated: PathBuf,
    /// Reference paired FASTA (e.g. the training distribution)
    #[arg(long)]
    pub reference: PathBuf,
    /// Clinical paired FASTA (enrichment thresholds come from this set)
    #[arg(long)]
    pub clinical: PathBuf,
    /// Enrichment threshold percentile over clinical predictions
    #[arg(long, default_value_t = 10.0)]
    pub percentile: f64,
    /// Minimum identity for a similarity-network edge
    #[arg(long, default_value_t = 0.9)]
    pub ssn_threshold: f64,
    /// Oracle artifacts for the enrichment report, comma separated
    #[arg(long, value_delimiter = ',')]
    pub oracles: Option<Vec<PathBuf>>,
    /// Subsample cap for within-set pairwise identities
    #[arg(long, default_value_t = 2000)]
    pub pair_cap: usize,
    /// Seed for the pair subsample
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path prefix; writes <prefix>.ecdf.tsv, <prefix>.nodes.tsv,
    /// <prefix>.edges.tsv, and with --oracles <prefix>.enrichment.tsv
    #[arg(long)]
    pub out_prefix: String,
    /// Also write a replayable run manifest
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Artifact to summarize (denoiser, oracle, or run manifest)
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Run manifest to re-execute
    #[arg(long)]
    pub manifest: PathBuf,
}
