//! Identity-ecosystem graph: PII nodes joined by edges carrying two weight
//! channels (occurrence frequency and monetary loss).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RiskError;

/// Trim, lowercase and collapse internal whitespace.
pub fn normalize_id(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Which edge weight a scorer reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Frequency,
    Loss,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Frequency => "frequency",
            Channel::Loss => "loss",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_id(s).as_str() {
            "frequency" | "freq" => Ok(Channel::Frequency),
            "loss" => Ok(Channel::Loss),
            other => Err(RiskError::Config(format!("unknown weight channel `{other}`"))),
        }
    }
}

/// One row of an edge-list file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub source: String,
    pub target: String,
    pub weight_frequency: f64,
    pub weight_loss: f64,
}

impl EdgeRecord {
    pub fn new(source: &str, target: &str, weight_frequency: f64, weight_loss: f64) -> Self {
        Self {
            source: source.to_string(),
            target: target.to_string(),
            weight_frequency,
            weight_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PiiNode {
    pub id: String,
    pub display_name: String,
}

/// Edge between two node indices. Endpoints index into [`EcosystemGraph::nodes`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedEdge {
    pub source: usize,
    pub target: usize,
    pub weight_frequency: f64,
    pub weight_loss: f64,
}

impl WeightedEdge {
    pub fn weight(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Frequency => self.weight_frequency,
            Channel::Loss => self.weight_loss,
        }
    }
}

/// Immutable weighted digraph. Nodes are kept sorted by id so every scorer
/// walks them in the same order.
#[derive(Debug, Clone)]
pub struct EcosystemGraph {
    nodes: Vec<PiiNode>,
    index: BTreeMap<String, usize>,
    edges: Vec<WeightedEdge>,
    out_adjacency: Vec<Vec<usize>>,
    in_adjacency: Vec<Vec<usize>>,
}

impl EcosystemGraph {
    /// Build a graph from edge records. Duplicate ordered pairs are merged by
    /// summing each channel.
    pub fn build(records: &[EdgeRecord]) -> Result<Self, RiskError> {
        if records.is_empty() {
            return Err(RiskError::EmptyGraph);
        }
        let mut display: BTreeMap<String, String> = BTreeMap::new();
        let mut merged: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
        for (row, rec) in records.iter().enumerate() {
            let source = normalize_id(&rec.source);
            let target = normalize_id(&rec.target);
            if source.is_empty() || target.is_empty() {
                return Err(RiskError::InvalidRecord {
                    row,
                    reason: "empty endpoint name".into(),
                });
            }
            for (name, w) in [("weight_frequency", rec.weight_frequency), ("weight_loss", rec.weight_loss)] {
                if !w.is_finite() || w < 0.0 {
                    return Err(RiskError::InvalidRecord {
                        row,
                        reason: format!("{name} must be a finite non-negative number, got {w}"),
                    });
                }
            }
            display.entry(source.clone()).or_insert_with(|| rec.source.trim().to_string());
            display.entry(target.clone()).or_insert_with(|| rec.target.trim().to_string());
            let slot = merged.entry((source, target)).or_insert((0.0, 0.0));
            slot.0 += rec.weight_frequency;
            slot.1 += rec.weight_loss;
        }

        let nodes: Vec<PiiNode> = display
            .into_iter()
            .map(|(id, display_name)| PiiNode { id, display_name })
            .collect();
        let index: BTreeMap<String, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();

        let mut out_adjacency = vec![Vec::new(); nodes.len()];
        let mut in_adjacency = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::with_capacity(merged.len());
        for ((s, t), (wf, wl)) in merged {
            let (source, target) = (index[&s], index[&t]);
            out_adjacency[source].push(edges.len());
            in_adjacency[target].push(edges.len());
            edges.push(WeightedEdge {
                source,
                target,
                weight_frequency: wf,
                weight_loss: wl,
            });
        }

        Ok(Self {
            nodes,
            index,
            edges,
            out_adjacency,
            in_adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[PiiNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    /// Index of a node, looked up after id normalization.
    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize_id(name)).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.node_index(name).is_some()
    }

    /// Edge indices leaving `node`.
    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_adjacency[node]
    }

    /// Edge indices entering `node`.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_adjacency[node]
    }

    pub fn edge(&self, idx: usize) -> &WeightedEdge {
        &self.edges[idx]
    }

    /// Back to the flat record form, one record per merged edge.
    pub fn to_records(&self) -> Vec<EdgeRecord> {
        self.edges
            .iter()
            .map(|e| EdgeRecord {
                source: self.nodes[e.source].id.clone(),
                target: self.nodes[e.target].id.clone(),
                weight_frequency: e.weight_frequency,
                weight_loss: e.weight_loss,
            })
            .collect()
    }
}

/// Convenience wrapper matching the free-function form used elsewhere.
pub fn build_graph(records: &[EdgeRecord]) -> Result<EcosystemGraph, RiskError> {
    EcosystemGraph::build(records)
}

/// Parse an edge list. JSON arrays and CSV (with header) are accepted; the
/// format is chosen from the extension, falling back to sniffing the first
/// non-blank byte.
pub fn parse_edge_list(text: &str, hint: Option<&str>) -> Result<Vec<EdgeRecord>, RiskError> {
    let looks_json = match hint.map(|h| h.to_ascii_lowercase()) {
        Some(ext) if ext == "json" => true,
        Some(ext) if ext == "csv" => false,
        _ => text.trim_start().starts_with('['),
    };
    if looks_json {
        serde_json::from_str(text).map_err(|e| RiskError::Parse(e.to_string()))
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        reader
            .deserialize()
            .collect::<Result<Vec<EdgeRecord>, _>>()
            .map_err(|e| RiskError::Parse(e.to_string()))
    }
}

pub fn load_edge_list(path: &Path) -> Result<Vec<EdgeRecord>, RiskError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RiskError::Io(format!("{}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str());
    parse_edge_list(&text, ext)
}

pub fn load_graph(path: &Path) -> Result<EcosystemGraph, RiskError> {
    EcosystemGraph::build(&load_edge_list(path)?)
}
