//! Effective settings: built-in defaults, then `--config FILE`, then flags.

use std::path::{Path, PathBuf};

use figpriv_core::agents::{AgentSet, AgentsConfig};
use figpriv_core::pipeline::{MaskStrategy, PipelineConfig};
use figpriv_core::risk::{build_graph, load_graph, toy_ecosystem_records, Algorithm, Channel, EcosystemGraph, ScoreConfig};
use figpriv_core::taxonomy::{load_table, CategoryTable};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Mock fixtures used when no agent config is given.
pub const DEFAULT_AGENTS_DIR: &str = "fixtures/agents";

/// Contents of a `--config` file. Every field is optional; relative paths
/// resolve against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub graph: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub agents: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub channel: Option<Channel>,
    pub tau: Option<f64>,
    pub angles: Option<Vec<f64>>,
    pub strategy: Option<String>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub keep_going: Option<bool>,
    pub strict_labeling: Option<bool>,
    pub timings: Option<bool>,
    pub category: Option<String>,
    pub phi_correction: Option<bool>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: CliConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.graph, &mut cfg.categories, &mut cfg.agents, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Fields set in `other` win.
    pub fn overlay(self, other: CliConfig) -> CliConfig {
        CliConfig {
            graph: other.graph.or(self.graph),
            categories: other.categories.or(self.categories),
            agents: other.agents.or(self.agents),
            algorithm: other.algorithm.or(self.algorithm),
            channel: other.channel.or(self.channel),
            tau: other.tau.or(self.tau),
            angles: other.angles.or(self.angles),
            strategy: other.strategy.or(self.strategy),
            jobs: other.jobs.or(self.jobs),
            out: other.out.or(self.out),
            keep_going: other.keep_going.or(self.keep_going),
            strict_labeling: other.strict_labeling.or(self.strict_labeling),
            timings: other.timings.or(self.timings),
            category: other.category.or(self.category),
            phi_correction: other.phi_correction.or(self.phi_correction),
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub graph: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub agents: Option<PathBuf>,
    pub algorithm: Algorithm,
    pub channel: Channel,
    pub tau: Option<f64>,
    pub angles: Vec<f64>,
    pub strategies: Vec<MaskStrategy>,
    pub category: Option<String>,
    pub strict_labeling: bool,
    pub phi_correction: bool,
    pub timings: bool,
    #[serde(skip)]
    pub jobs: usize,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub keep_going: bool,
}

pub fn parse_strategies(raw: &str) -> Result<Vec<MaskStrategy>, CliError> {
    if raw.trim().eq_ignore_ascii_case("all") {
        return Ok(vec![MaskStrategy::Object, MaskStrategy::FineGrained, MaskStrategy::HighRisk]);
    }
    let mut out = Vec::new();
    for part in raw.split(',') {
        let s: MaskStrategy = part.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(cfg: CliConfig) -> Result<Self, CliError> {
        let defaults = PipelineConfig::default();
        let jobs = cfg
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        for (name, path) in [("graph", &cfg.graph), ("categories", &cfg.categories), ("agents", &cfg.agents)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(CliError::Config(format!("{name} file {} does not exist", p.display())));
                }
            }
        }
        let strategies = match &cfg.strategy {
            Some(s) => parse_strategies(s)?,
            None => defaults.strategies.clone(),
        };
        Ok(Settings {
            graph: cfg.graph,
            categories: cfg.categories,
            agents: cfg.agents,
            algorithm: cfg.algorithm.unwrap_or(Algorithm::PagerankStandard),
            channel: cfg.channel.unwrap_or(Channel::Frequency),
            tau: cfg.tau,
            angles: cfg.angles.unwrap_or(defaults.candidate_angles),
            strategies,
            category: cfg.category,
            strict_labeling: cfg.strict_labeling.unwrap_or(defaults.strict_labeling),
            phi_correction: cfg.phi_correction.unwrap_or(defaults.phi_correction),
            timings: cfg.timings.unwrap_or(false),
            jobs,
            out: cfg.out,
            keep_going: cfg.keep_going.unwrap_or(false),
        })
    }

    pub fn out_or(&self, fallback: impl AsRef<Path>) -> PathBuf {
        self.out.clone().unwrap_or_else(|| fallback.as_ref().to_path_buf())
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig::default().with_algorithm(self.algorithm).with_channel(self.channel)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            candidate_angles: self.angles.clone(),
            strategies: self.strategies.clone(),
            risk: self.score_config(),
            tau: self.tau,
            category: self.category.clone(),
            strict_labeling: self.strict_labeling,
            phi_correction: self.phi_correction,
            timings: self.timings,
            ..PipelineConfig::default()
        }
    }

    /// The bundled toy graph when no file is given.
    pub fn graph(&self) -> Result<EcosystemGraph, CliError> {
        Ok(match &self.graph {
            Some(p) => load_graph(p)?,
            None => build_graph(&toy_ecosystem_records())?,
        })
    }

    pub fn table(&self) -> Result<CategoryTable, CliError> {
        Ok(match &self.categories {
            Some(p) => load_table(p)?,
            None => CategoryTable::bundled(),
        })
    }

    pub fn agents_config(&self) -> Result<AgentsConfig, CliError> {
        Ok(match &self.agents {
            Some(p) => AgentsConfig::load(p)?,
            None => AgentsConfig::mock(DEFAULT_AGENTS_DIR),
        })
    }

    /// Fails before any network traffic when a live endpoint lacks its token.
    pub fn agent_set(&self) -> Result<AgentSet, CliError> {
        Ok(AgentSet::from_config(self.agents_config()?)?)
    }
}
