//! The masking pipeline: detect, crop, segment, orient, read text, map text
//! regions back to the original image, label them, and render a mask.

mod run;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, TextSource};
use crate::geometry::{BBox, GeometryError, Polygon};
use crate::risk::{RiskError, ScoreConfig};
use crate::taxonomy::{TaxonomyError, UnscoredPolicy};

pub use run::{run_pipeline, Pipeline, PipelineFailure, PipelineOutput, Rendered};
pub use stages::{
    assign_risk, build_strategy_mask, estimate_skew, fold_skew, median, recognize_text, refine_detections, select_orientation,
    FrameRegistry, Orientation, Recognition, FRAME_DESKEWED, FRAME_ORIENTED,
};

pub const MANIFEST_SCHEMA: &str = "figpriv-manifest/1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("detection refers to unknown rotation frame `{0}`")]
    UnknownFrame(String),
    #[error("pipeline configuration: {0}")]
    Config(String),
    #[error("both text agents failed: {0}")]
    TextAgents(Box<AgentError>),
}

/// Error classes surfaced as process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Config,
    Data,
    Transport,
}

impl ErrorClass {
    pub fn exit_code(&self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Transport => 4,
        }
    }
}

fn agent_class(e: &AgentError) -> ErrorClass {
    match e {
        AgentError::Transport { .. } => ErrorClass::Transport,
        AgentError::Config(_) | AgentError::MissingAuth { .. } => ErrorClass::Config,
        _ => ErrorClass::Data,
    }
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Agent(e) => agent_class(e),
            PipelineError::TextAgents(e) => agent_class(e),
            PipelineError::Config(_) | PipelineError::Risk(RiskError::Config(_)) => ErrorClass::Config,
            PipelineError::Taxonomy(TaxonomyError::UnknownCategory(_)) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    Object,
    FineGrained,
    HighRisk,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 3] = [MaskStrategy::Object, MaskStrategy::FineGrained, MaskStrategy::HighRisk];

    pub fn as_str(&self) -> &'static str {
        match self {
            MaskStrategy::Object => "object",
            MaskStrategy::FineGrained => "fine_grained",
            MaskStrategy::HighRisk => "high_risk",
        }
    }

    /// File-name suffix for rendered outputs.
    pub fn suffix(&self) -> &'static str {
        match self {
            MaskStrategy::Object => "object",
            MaskStrategy::FineGrained => "fine",
            MaskStrategy::HighRisk => "highrisk",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.suffix() == s)
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskStrategy {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "object" => Ok(MaskStrategy::Object),
            "fine_grained" | "fine" => Ok(MaskStrategy::FineGrained),
            "high_risk" | "highrisk" => Ok(MaskStrategy::HighRisk),
            other => Err(PipelineError::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidate orientation angles in degrees, tried in order.
    pub candidate_angles: Vec<f64>,
    /// Strategies rendered from one run.
    pub strategies: Vec<MaskStrategy>,
    pub risk: ScoreConfig,
    /// High-risk threshold; `None` means the 60th percentile of all scores.
    pub tau: Option<f64>,
    pub unscored: UnscoredPolicy,
    /// Category used when the caller supplies none.
    pub category: Option<String>,
    pub phi_correction: bool,
    /// Skew below this many degrees is left alone.
    pub phi_tolerance_deg: f64,
    /// Labeler failure marks the detection high-risk (otherwise "other").
    pub strict_labeling: bool,
    /// Drop a VLM box whose IoU with an OCR region exceeds this value.
    pub dedup_iou: Option<f64>,
    /// Record wall-clock stage timings in manifests.
    pub timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            candidate_angles: vec![0.0, 90.0, 180.0, 270.0],
            strategies: vec![MaskStrategy::HighRisk],
            risk: ScoreConfig::default(),
            tau: None,
            unscored: UnscoredPolicy::Exclude,
            category: None,
            phi_correction: true,
            phi_tolerance_deg: 0.5,
            strict_labeling: true,
            dedup_iou: None,
            timings: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.candidate_angles.is_empty() {
            return Err(PipelineError::Config("candidate angle list is empty".into()));
        }
        if self.candidate_angles.iter().any(|a| !a.is_finite()) {
            return Err(PipelineError::Config("candidate angles must be finite".into()));
        }
        if self.strategies.is_empty() {
            return Err(PipelineError::Config("no masking strategy selected".into()));
        }
        if let Some(t) = self.tau {
            if !t.is_finite() {
                return Err(PipelineError::Config(format!("tau must be finite, got {t}")));
            }
        }
        if !(self.phi_tolerance_deg >= 0.0 && self.phi_tolerance_deg.is_finite()) {
            return Err(PipelineError::Config("phi tolerance must be non-negative".into()));
        }
        if let Some(t) = self.dedup_iou {
            if !(0.0..=1.0).contains(&t) {
                return Err(PipelineError::Config("dedup IoU must lie in [0, 1]".into()));
            }
        }
        self.risk.validate()?;
        Ok(())
    }

    /// True when any selected strategy needs the text stages.
    pub fn needs_text(&self) -> bool {
        self.strategies.iter().any(|s| *s != MaskStrategy::Object)
    }
}

/// One text region in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub text: String,
    pub source: TextSource,
    /// Rotation frame the agent reported in.
    pub frame: String,
    /// Region in original-image coordinates.
    pub polygon: Polygon,
    pub sub_category: String,
    pub high_risk: bool,
    /// The labeler failed; `high_risk` then reflects the failure policy.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub label_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub bbox: BBox,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationScore {
    pub theta: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighRiskSummary {
    pub members: Vec<String>,
    pub threshold: f64,
    pub score_source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unscored: Vec<String>,
}

/// Full trace of one run for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub input: String,
    pub image_size: [u32; 2],
    pub category: String,
    pub strategy: MaskStrategy,
    /// Detected object box; `None` means the whole image was used.
    pub detection: Option<DetectionSummary>,
    pub crop_origin: [u32; 2],
    pub theta_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orientation_scores: Vec<OrientationScore>,
    pub phi: Option<f64>,
    pub high_risk_set: HighRiskSummary,
    pub detections: Vec<DetectionRecord>,
    pub masked_pixels: usize,
    pub masked_percentage: f64,
    pub output_image: Option<String>,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub agents: BTreeMap<String, String>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Check the record-level invariants.
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=100.0).contains(&self.masked_percentage) {
            return Err(format!("masked percentage {} out of range", self.masked_percentage));
        }
        for d in &self.detections {
            if d.high_risk && !d.label_failed && !self.high_risk_set.members.contains(&d.sub_category) {
                return Err(format!("{:?} flagged high-risk with label {:?}", d.text, d.sub_category));
            }
        }
        Ok(())
    }
}
