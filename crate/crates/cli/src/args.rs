use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use figpriv_core::risk::{Algorithm, Channel};

use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "figpriv", version, about = "Risk-aware redaction of private objects in images")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Edge list (JSON or CSV). Defaults to the bundled toy graph.
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    /// Category table (JSON). Defaults to the bundled table.
    #[arg(long, global = true)]
    pub categories: Option<PathBuf>,
    /// Agent endpoint config. Defaults to mocks under fixtures/agents.
    #[arg(long, global = true)]
    pub agents: Option<PathBuf>,
    /// pagerank_standard, pagerank_literal or ehits.
    #[arg(long, global = true)]
    pub algorithm: Option<Algorithm>,
    /// frequency or loss.
    #[arg(long, global = true)]
    pub channel: Option<Channel>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Candidate orientation angles in degrees, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub angles: Option<Vec<f64>>,
    /// object, fine_grained, high_risk, a comma list, or all.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub keep_going: bool,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub strict_labeling: Option<bool>,
    /// Record stage timings in manifests (makes them non-reproducible).
    #[arg(long, global = true)]
    pub timings: bool,
    #[arg(long, global = true)]
    pub no_phi_correction: bool,
    #[arg(long, global = true)]
    pub category: Option<String>,
}

impl GlobalArgs {
    pub fn as_config(&self) -> CliConfig {
        CliConfig {
            graph: self.graph.clone(),
            categories: self.categories.clone(),
            agents: self.agents.clone(),
            algorithm: self.algorithm,
            channel: self.channel,
            tau: self.tau,
            angles: self.angles.clone(),
            strategy: self.strategy.clone(),
            jobs: self.jobs,
            out: self.out.clone(),
            keep_going: self.keep_going.then_some(true),
            strict_labeling: self.strict_labeling,
            timings: self.timings.then_some(true),
            category: self.category.clone(),
            phi_correction: self.no_phi_correction.then_some(false),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score the identity-ecosystem graph.
    Risk {
        #[command(subcommand)]
        command: RiskCommand,
    },
    /// Run the masking pipeline on an image or a directory of images.
    Mask { input: PathBuf },
    /// Compare masked percentages across strategies from a manifest directory.
    Compare { dir: PathBuf },
    /// Check graph, category table, agent config and mock fixtures.
    Validate,
    /// Write the synthetic fixture corpus (default directory: fixtures).
    Fixtures,
    /// Recognition and answerability probes on one image.
    Probe {
        image: PathBuf,
        #[arg(long)]
        questions: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RiskCommand {
    /// Print the score export; also written to --out when given.
    Scores,
    /// Print the high-risk PII set of --category at --tau.
    HighSet,
    /// Spearman correlation between --algorithm and another scorer.
    Spearman {
        #[arg(long)]
        against: Algorithm,
    },
}
