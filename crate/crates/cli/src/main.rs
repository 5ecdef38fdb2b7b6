use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpnorm::cost::{MbConvention, ModelShape};
use gpnorm::datasets::{DEFAULT_SAMPLES, DEFAULT_TRAIN_FRACTION};
use gpnorm::evolve::GpConfig;

mod commands;

/// Evolve per-layer scalar replacements for LayerNorm and cost them.
#[derive(Debug, Parser)]
#[command(name = "gpnorm", version, about)]
struct Cli {
    /// Worker threads for parallel evaluation. Results do not depend on it.
    #[arg(long, global = true, env = "GPNORM_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic mapping files plus a manifest.
    Synth(SynthArgs),
    /// Run the multi-objective search for every layer and seed.
    Evolve(EvolveArgs),
    /// Fit the least-squares tanh(alpha x) baseline per layer.
    FitDyt(FitDytArgs),
    /// Price expressions, LayerNorm or DyT under the FLOP/memory model.
    Cost(CostArgs),
    /// Assemble alignment statistics and the cost trade-off of a run.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    /// Linear early layers, mixed middle layers, S-shaped deep layers.
    Suite,
    Linear,
    SShaped,
    Mixed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub layers: usize,
    #[arg(long, value_enum, default_value_t = ProfileArg::Suite)]
    pub profile: ProfileArg,
    /// Largest outlier amplitude.
    #[arg(long, default_value_t = 2.5)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 768)]
    pub d: usize,
    /// Tokens per layer; the pool holds d * n_tokens points.
    #[arg(long, default_value_t = 72)]
    pub n_tokens: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write CSV instead of SNMAP1.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// Points drawn from each layer's pool.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    /// Seed of the sampling/splitting streams, and first search seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct GpArgs {
    /// Start from the reduced preset (population 200, 30 generations).
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub population_size: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub max_init_depth: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub crossover_rate: Option<f64>,
    #[arg(long)]
    pub mutation_rate: Option<f64>,
    #[arg(long)]
    pub refinement_steps: Option<usize>,
    #[arg(long)]
    pub refinement_step_size: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl GpArgs {
    pub fn config(&self) -> GpConfig {
        let mut c = if self.desk {
            GpConfig::desk()
        } else {
            GpConfig::default()
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        set!(
            population_size,
            generations,
            max_init_depth,
            max_nodes,
            crossover_rate,
            mutation_rate,
            refinement_steps,
            refinement_step_size
        );
        if let Some(g) = self.gamma {
            c.fitness.gamma = g;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    /// Directory with a manifest and mapping files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub gp: GpArgs,
    /// Explicit search seeds; defaults to `seed .. seed + n_seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 5)]
    pub n_seeds: u64,
}

impl EvolveArgs {
    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.n_seeds).map(|i| self.sampling.seed + i).collect(),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitDytArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    #[arg(long, default_value_t = 768)]
    pub d: u64,
    #[arg(long, default_value_t = 197)]
    pub seq_len: u64,
    #[arg(long, default_value_t = 4)]
    pub bytes_per_element: u64,
    /// Report megabytes as 10^6 bytes instead of 2^20.
    #[arg(long)]
    pub decimal_mb: bool,
}

impl ShapeArgs {
    pub fn shape(&self, n_layers: usize) -> ModelShape {
        ModelShape {
            d: self.d,
            seq_len: self.seq_len,
            n_layers,
            bytes_per_element: self.bytes_per_element,
        }
    }

    pub fn mb(&self) -> MbConvention {
        if self.decimal_mb {
            MbConvention::Decimal
        } else {
            MbConvention::Binary
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineMethod {
    Ln,
    Dyt,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// CSV with `layer_id` and `expression` columns, one row per layer.
    #[arg(long, conflicts_with = "method", required_unless_present = "method")]
    pub expressions: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<BaselineMethod>,
    /// Layer count for `--method`.
    #[arg(long, default_value_t = 25)]
    pub n_layers: usize,
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `evolve`.
    #[arg(long)]
    pub run: PathBuf,
    /// Output of `fit-dyt`; defaults to `<run>/dyt.csv`.
    #[arg(long)]
    pub dyt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building worker pool")?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Evolve(a) => commands::evolve(&a),
        Command::FitDyt(a) => commands::fit_dyt(&a),
        Command::Cost(a) => commands::cost(&a),
        Command::Report(a) => commands::report(&a),
    }
}
