//! PII risk scoring over the identity-ecosystem graph.
//!
//! Three scorers are provided: a weighted PageRank with teleport and
//! dangling-mass redistribution (the default), a literal PageRank without a
//! teleport term whose fixed point is the zero vector, and E-HITS, where the
//! risk of a node is its hub score plus its authority score.

mod ehits;
mod graph;
mod pagerank;
mod spearman;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ehits::{ehits, EhitsScores};
pub use graph::{
    build_graph, load_edge_list, load_graph, normalize_id, parse_edge_list, Channel,
    EcosystemGraph, EdgeRecord, PiiNode, WeightedEdge,
};
pub use pagerank::pagerank;
pub use spearman::{average_ranks, spearman, spearman_slices};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("empty graph")]
    EmptyGraph,
    #[error("invalid edge record at row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },
    #[error("no signal on channel {0}")]
    NoSignal(&'static str),
    #[error("invalid score config: {0}")]
    Config(String),
    #[error("algorithm {0:?} is not handled by this scorer")]
    WrongAlgorithm(Algorithm),
    #[error("score vectors cover different node sets")]
    MismatchedNodes,
    #[error("need at least two nodes to correlate, got {0}")]
    TooFewNodes(usize),
    #[error("undefined correlation: constant ranking")]
    UndefinedCorrelation,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PagerankStandard,
    PagerankLiteral,
    Ehits,
}

impl std::str::FromStr for Algorithm {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_id(s).replace('-', "_").as_str() {
            "pagerank_standard" | "pagerank" => Ok(Algorithm::PagerankStandard),
            "pagerank_literal" => Ok(Algorithm::PagerankLiteral),
            "ehits" | "e_hits" => Ok(Algorithm::Ehits),
            other => Err(RiskError::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// What a [`ScoreVector`] holds. E-HITS produces three vectors per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    PagerankStandard,
    PagerankLiteral,
    EhitsHub,
    EhitsAuthority,
    Ehits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub damping: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub channel: Channel,
    pub algorithm: Algorithm,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            epsilon: 1e-8,
            max_iterations: 1000,
            channel: Channel::Frequency,
            algorithm: Algorithm::PagerankStandard,
        }
    }
}

impl ScoreConfig {
    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn with_channel(mut self, channel: Channel) -> Self {
        self.channel = channel;
        self
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(RiskError::Config(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(RiskError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(RiskError::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Per-node scores from one scorer under one weight channel.
///
/// Serializes to the score export format:
/// `{"algorithm", "channel", "scores", "converged", "iterations"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub algorithm: ScoreKind,
    pub channel: Channel,
    pub scores: BTreeMap<String, f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl ScoreVector {
    pub(crate) fn from_dense(
        graph: &EcosystemGraph,
        values: &[f64],
        algorithm: ScoreKind,
        channel: Channel,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let scores = graph
            .nodes()
            .iter()
            .zip(values)
            .map(|(n, &v)| (n.id.clone(), v))
            .collect();
        Self {
            algorithm,
            channel,
            scores,
            converged,
            iterations,
        }
    }

    /// Score for a node, after id normalization.
    pub fn get(&self, node: &str) -> Option<f64> {
        self.scores.get(&normalize_id(node)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.values().sum()
    }

    pub fn max(&self) -> f64 {
        self.scores.values().copied().fold(0.0, f64::max)
    }

    /// Linear-interpolated percentile (`q` in [0, 100]) of all scores.
    pub fn percentile(&self, q: f64) -> Option<f64> {
        let mut values: Vec<f64> = self.scores.values().copied().collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let rank = (q.clamp(0.0, 100.0) / 100.0) * (values.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        Some(values[lo] + (values[hi] - values[lo]) * frac)
    }

    /// Tag describing the source of these scores, e.g. `pagerank_standard/frequency`.
    pub fn source_tag(&self) -> String {
        let kind = serde_json::to_value(self.algorithm)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        format!("{kind}/{}", self.channel.as_str())
    }
}

const NEWS_STORIES: &str = include_str!("../../data/news_stories.json");
const TOY_ECOSYSTEM: &str = include_str!("../../data/toy_ecosystem.json");

/// Edges seeded from five identity-theft news stories: every source attribute
/// of a story points at every target attribute, frequency 1. Loss amounts are
/// illustrative per-story values.
pub fn news_story_records() -> Vec<EdgeRecord> {
    serde_json::from_str(NEWS_STORIES).expect("bundled news stories parse")
}

/// News-story edges plus one edge from each category synonym node to each
/// PII type it contains (frequency 1, loss 1000).
pub fn toy_ecosystem_records() -> Vec<EdgeRecord> {
    serde_json::from_str(TOY_ECOSYSTEM).expect("bundled toy graph parses")
}

/// Risk scores under `config`: PageRank in either mode, or the E-HITS risk
/// component (hub + authority).
pub fn risk_scores(graph: &EcosystemGraph, config: &ScoreConfig) -> Result<ScoreVector, RiskError> {
    match config.algorithm {
        Algorithm::PagerankStandard | Algorithm::PagerankLiteral => pagerank(graph, config),
        Algorithm::Ehits => Ok(ehits(graph, config)?.risk),
    }
}
