mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::io::Format;

#[derive(Debug, Parser)]
#[command(name = "zsclab", version, about = "Label-free coordination toolkit for tabular Dec-POMDPs")]
pub struct Cli {
    /// Master seed; child seeds are derived from it by index.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Evaluate by exhaustive enumeration instead of sampling.
    #[arg(long, global = true)]
    pub exact: bool,
    /// Directory for relative output paths.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Built-in environments.
    Env {
        #[command(subcommand)]
        cmd: EnvCmd,
    },
    /// Automorphisms, isomorphism checks and relabeling.
    Sym {
        #[command(subcommand)]
        cmd: SymCmd,
    },
    /// Other-play values, symmetrizer and equivalence.
    Op {
        #[command(subcommand)]
        cmd: OpCmd,
    },
    /// Train a policy with other-play policy gradient.
    Train(TrainArgs),
    /// Rank policies by tie-breaking value.
    Tiebreak(TiebreakArgs),
    /// Cross-play matrix between policies.
    Xp(XpArgs),
    /// Group policies into mutually compatible classes.
    Cluster(ClusterArgs),
    /// Estimate the payoff of the label-free coordination game.
    Lfc(LfcArgs),
    /// Run the analytic verification suite.
    Verify(VerifyArgs),
    /// Train, tie-break and cross-play a grid of runs and seeds.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Subcommand)]
pub enum EnvCmd {
    List,
    /// Print or write the JSON spec of a built-in environment.
    Show {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SymCmd {
    /// Count and list automorphisms.
    Auts { env: String },
    /// Check that a bijection tuple maps one env onto another.
    Check { env: String, target: String, iso: PathBuf },
    /// Relabel an env with a random labeling drawn from `--seed`.
    Relabel {
        env: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OpCmd {
    /// Other-play value; exact unless `--episodes` is given or the group is too large to list.
    Value {
        env: String,
        policy: String,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Write the symmetrized policy.
    Symmetrize {
        env: String,
        policy: String,
        #[arg(long, default_value = "psi.json")]
        out: PathBuf,
    },
    /// Compare symmetrizer images.
    Equiv {
        env: String,
        p1: String,
        p2: String,
        #[arg(long, default_value_t = zsclab::otherplay::LEARNED_TOLERANCE)]
        tol: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Rmsprop,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShareArg {
    Auto,
    Shared,
    Separate,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// Updates (default: as many as fit in 10^6 env steps).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Episodes per update.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Entropy coefficient.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub share: Option<ShareArg>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub env: String,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long, default_value = "policy.json")]
    pub out: PathBuf,
    /// Training curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TiebreakArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    #[arg(long, default_value_t = 2048)]
    pub samples: usize,
    /// Also hash the relabeled environment tables.
    #[arg(long)]
    pub env_code: bool,
    /// Hash every history field, not just actions and rewards.
    #[arg(long)]
    pub all_fields: bool,
    #[arg(long, default_value = "ranked.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct XpArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long, default_value_t = zsclab::lfc::XP_EPISODES)]
    pub episodes: usize,
    #[arg(long, default_value = "matrix.csv")]
    pub out: PathBuf,
    /// Heatmap SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long, default_value_t = zsclab::lfc::CLUSTER_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = zsclab::lfc::CLUSTER_EPISODES)]
    pub episodes: usize,
    #[arg(long, default_value = "classes.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LfcArgs {
    #[arg(long)]
    pub env: String,
    /// JSON procedure description, see the README.
    #[arg(long)]
    pub procedures: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub outer: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Env JSON replacing the built-in two-stage lever game.
    #[arg(long)]
    pub two_stage: Option<String>,
    #[arg(long, default_value = "verify_report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 8)]
    pub seeds_per_run: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    pub k_list: Vec<usize>,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Number of hash seeds, `0..n`.
    #[arg(long, default_value_t = 20)]
    pub hash_seeds: u64,
    /// Tie-breaking samples when not exact.
    #[arg(long, default_value_t = 2048)]
    pub samples: usize,
    /// Cross-play episodes per cell when not exact.
    #[arg(long, default_value_t = zsclab::lfc::XP_EPISODES)]
    pub episodes: usize,
    #[arg(long, default_value_t = zsclab::lfc::CLUSTER_THRESHOLD)]
    pub threshold: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
