//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prefiqs_core::pruning::{Criterion, Granularity};

#[derive(Parser)]
#[command(
    name = "prefiqs",
    version,
    about = "Pruning-induced embedding drift as an image-utility score: \
             synthesize, prune, score, validate, and evaluate embedding models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic identity dataset and train the embedding model
    Synth(SynthArgs),
    /// Prune a model and write the sparsified copy with its mask or plan
    Prune(PruneArgs),
    /// Score samples by embedding drift between two models
    Score(ScoreArgs),
    /// Validate drift against the directional-derivative estimate
    Jvp(JvpArgs),
    /// Build an error-versus-discard curve and its partial area
    Edc(EdcArgs),
    /// Report verification accuracy and FNMR at fixed FMRs
    Verify(VerifyArgs),
    /// Extract embeddings for a dataset
    Embed(EmbedArgs),
    /// Build a balanced genuine/impostor pair list from dataset labels
    Pairs(PairsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    L1,
    Random,
}

impl CriterionArg {
    pub fn as_str(self) -> &'static str {
        match self {
            CriterionArg::L1 => "l1_magnitude",
            CriterionArg::Random => "random",
        }
    }

    pub fn to_core(self) -> Criterion {
        match self {
            CriterionArg::L1 => Criterion::L1Magnitude,
            CriterionArg::Random => Criterion::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Unstructured,
    Structured,
}

impl GranularityArg {
    pub fn to_core(self) -> Granularity {
        match self {
            GranularityArg::Unstructured => Granularity::Unstructured,
            GranularityArg::Structured => Granularity::Structured,
        }
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Job config JSON: dataset plus training parameters
    #[arg(long)]
    pub config: PathBuf,
    /// Override the dataset seed from the config
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for dataset.csv, model.pfqm, manifest.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PruneArgs {
    /// Source model (.pfqm)
    #[arg(long)]
    pub model: PathBuf,
    /// Target sparsity ratio in (0, 1)
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, value_enum)]
    pub criterion: CriterionArg,
    #[arg(long, value_enum)]
    pub granularity: GranularityArg,
    /// Seed for the random criterion
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output model path; the mask (.pfqmask) or plan (.plan.json) sidecar
    /// is written next to it
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Original model (.pfqm)
    #[arg(long)]
    pub model: PathBuf,
    /// Pruned model (.pfqm); its mask/plan sidecar provides provenance
    #[arg(long)]
    pub pruned: PathBuf,
    /// Dataset CSV with the samples to score
    #[arg(long)]
    pub inputs: PathBuf,
    /// Output scores CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Provenance override: sparsity ratio
    #[arg(long)]
    pub rho: Option<f64>,
    /// Provenance override: pruning criterion
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    /// Provenance override: pruning granularity
    #[arg(long, value_enum)]
    pub granularity: Option<GranularityArg>,
}

#[derive(Args)]
pub struct JvpArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sparsity ratio for the magnitude mask under test
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f64,
    #[arg(long)]
    pub inputs: PathBuf,
    /// Relative central-difference step
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Output CSV; the validation report lands next to it (.report.json)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EdcArgs {
    /// Embeddings CSV of the verification model
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Pair list CSV
    #[arg(long)]
    pub pairs: PathBuf,
    /// Scores CSV providing the per-image quality ranking
    #[arg(long)]
    pub scores: PathBuf,
    /// Target false-match rate anchoring the decision threshold
    #[arg(long, default_value_t = 0.01)]
    pub fmr: f64,
    /// Spacing of the discard grid over [0, 0.95]
    #[arg(long = "grid-step", default_value_t = 0.01)]
    pub grid_step: f64,
    /// Partial-area cap
    #[arg(long = "max-discard", default_value_t = 0.3)]
    pub max_discard: f64,
    /// Output CSV; a .summary.json sidecar lands next to it
    #[arg(long)]
    pub out: PathBuf,
    /// Also render the curve as an SVG polyline plot
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// FMR operating points for the FNMR report (repeatable)
    #[arg(long, default_values_t = vec![0.01])]
    pub fmr: Vec<f64>,
    /// Optionally write the report JSON here as well as stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PairsArgs {
    /// Dataset CSV providing ids and identity labels
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for impostor sampling
    #[arg(long, default_value_t = 101)]
    pub seed: u64,
    /// Impostor pairs per genuine pair
    #[arg(long = "impostor-factor", default_value_t = 1.0)]
    pub impostor_factor: f64,
}
