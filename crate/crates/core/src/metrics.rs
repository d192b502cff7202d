//! Masking outcome measures and evaluation probes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentSet, Reply, Role};
use crate::geometry::BinaryMask;
use crate::pipeline::{Manifest, MaskStrategy, MANIFEST_SCHEMA};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask has zero area")]
    ZeroArea,
    #[error("strategy sets differ across images: {0}")]
    MismatchedImages(String),
    #[error("duplicate manifest for image {image} strategy {strategy}")]
    Duplicate { image: String, strategy: MaskStrategy },
    #[error("no manifests to compare")]
    Empty,
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// `100 * popcount / (w * h)`.
pub fn masked_percentage(mask: &BinaryMask) -> Result<f64, MetricsError> {
    if mask.area() == 0 {
        return Err(MetricsError::ZeroArea);
    }
    Ok(100.0 * mask.popcount() as f64 / mask.area() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub image: String,
    pub strategy: MaskStrategy,
    pub masked_percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDelta {
    pub image: String,
    /// Object minus high-risk masked percentage, in points.
    pub preserved_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub images: usize,
    pub rows: Vec<StrategyRow>,
    pub mean_masked_percentage: BTreeMap<MaskStrategy, f64>,
    /// Present when both object and high-risk results exist.
    pub preserved_delta: Option<f64>,
    pub per_image_delta: Vec<ImageDelta>,
}

impl StrategyReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image", "strategy", "masked_percentage"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.image.as_str(), r.strategy.as_str(), &r.masked_percentage.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Per-image and mean masked percentages, plus the object-vs-high-risk delta.
/// Every image must have the same set of strategies; input order does not
/// matter.
pub fn compare_strategies(manifests: &[Manifest]) -> Result<StrategyReport, MetricsError> {
    if manifests.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut by_image: BTreeMap<String, BTreeMap<MaskStrategy, f64>> = BTreeMap::new();
    for m in manifests {
        let slot = by_image.entry(m.input.clone()).or_default();
        if slot.insert(m.strategy, m.masked_percentage).is_some() {
            return Err(MetricsError::Duplicate {
                image: m.input.clone(),
                strategy: m.strategy,
            });
        }
    }
    let reference: BTreeSet<MaskStrategy> = by_image.values().next().expect("non-empty").keys().copied().collect();
    for (image, strategies) in &by_image {
        let have: BTreeSet<MaskStrategy> = strategies.keys().copied().collect();
        if have != reference {
            return Err(MetricsError::MismatchedImages(format!(
                "{image} has {:?}, expected {:?}",
                have.iter().map(MaskStrategy::as_str).collect::<Vec<_>>(),
                reference.iter().map(MaskStrategy::as_str).collect::<Vec<_>>()
            )));
        }
    }
    let n = by_image.len() as f64;
    let mut rows = Vec::new();
    let mut sums: BTreeMap<MaskStrategy, f64> = BTreeMap::new();
    let mut per_image_delta = Vec::new();
    for (image, strategies) in &by_image {
        for (&strategy, &pct) in strategies {
            rows.push(StrategyRow {
                image: image.clone(),
                strategy,
                masked_percentage: pct,
            });
            *sums.entry(strategy).or_default() += pct;
        }
        if let (Some(o), Some(h)) = (strategies.get(&MaskStrategy::Object), strategies.get(&MaskStrategy::HighRisk)) {
            per_image_delta.push(ImageDelta {
                image: image.clone(),
                preserved_delta: o - h,
            });
        }
    }
    let means: BTreeMap<MaskStrategy, f64> = sums.into_iter().map(|(k, v)| (k, v / n)).collect();
    let preserved_delta = match (means.get(&MaskStrategy::Object), means.get(&MaskStrategy::HighRisk)) {
        (Some(o), Some(h)) => Some(o - h),
        _ => None,
    };
    Ok(StrategyReport {
        images: by_image.len(),
        rows,
        mean_masked_percentage: means,
        preserved_delta,
        per_image_delta,
    })
}

/// Every `*.json` manifest directly under `dir`, in file-name order.
/// Other JSON files are skipped.
pub fn load_manifests(dir: &Path) -> Result<Vec<Manifest>, MetricsError> {
    let entries = std::fs::read_dir(dir).map_err(|e| MetricsError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| MetricsError::Parse(format!("{}: {e}", path.display())))?;
        if value.get("schema").and_then(|s| s.as_str()) != Some(MANIFEST_SCHEMA) {
            continue;
        }
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|e| MetricsError::Parse(format!("{}: {e}", path.display())))?;
        if manifest.error.is_none() {
            out.push(manifest);
        }
    }
    Ok(out)
}

/// Probability that a model recognizes the object in the image.
pub fn recognition_probe(agents: &AgentSet, image: &RgbImage, category: &str) -> Result<Reply<f64>, MetricsError> {
    Ok(agents.yes_no(Role::Probe, image, &[("object", category)], category)?)
}

/// Probability that a model reports it can answer `question` from the image.
pub fn answerability_probe(agents: &AgentSet, image: &RgbImage, question: &str) -> Result<Reply<f64>, MetricsError> {
    Ok(agents.yes_no(Role::AnswerProbe, image, &[("question", question), ("object", "")], question)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub category: String,
    pub question: String,
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| MetricsError::Parse(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub category: String,
    pub question: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    pub mean: Option<f64>,
    pub mean_by_category: BTreeMap<String, f64>,
}

/// Answerability for every question whose category matches `category`
/// (all questions when `None`). Reports raw rows and both kinds of mean.
pub fn answerability_batch(
    agents: &AgentSet,
    image: &RgbImage,
    questions: &[Question],
    category: Option<&str>,
) -> Result<ProbeReport, MetricsError> {
    let mut rows = Vec::new();
    for q in questions.iter().filter(|q| category.is_none_or(|c| c == q.category)) {
        let p = answerability_probe(agents, image, &q.question)?;
        rows.push(ProbeRow {
            category: q.category.clone(),
            question: q.question.clone(),
            probability: p.value,
        });
    }
    let mean = (!rows.is_empty()).then(|| rows.iter().map(|r| r.probability).sum::<f64>() / rows.len() as f64);
    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let g = groups.entry(r.category.clone()).or_default();
        g.0 += r.probability;
        g.1 += 1;
    }
    Ok(ProbeReport {
        rows,
        mean,
        mean_by_category: groups.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    })
}
