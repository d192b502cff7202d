//! Model-backed agents: one wire contract for every role, tolerant parsing of
//! whatever the models send back, and a fixture-backed mock for offline runs.

mod backend;
mod config;
mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    bbox_to_polygon, image_hash, BBox, BinaryMask, GeometryError, Polygon,
};

pub use backend::{backoff_schedule, Backend, MockBackend, RawResponse, RemoteBackend};
pub use config::{AgentEndpointConfig, AgentsConfig};
pub use parse::{
    normalize_label, parse_bbox_json, parse_mask_payload, parse_ocr_payload, probability_from_logprobs,
    strip_code_fences, yes_no_probability, MaskPayload,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{role} endpoint failed after {attempts} attempt(s): {message}")]
    Transport {
        role: Role,
        attempts: u32,
        message: String,
    },
    #[error("no mock fixture for role {role}, key {key}")]
    MissingFixture { role: Role, key: String },
    #[error("environment variable {var} (auth token for {role}) is not set")]
    MissingAuth { role: Role, var: String },
    #[error("agent configuration: {0}")]
    Config(String),
    #[error("{role} response violates its contract: {message}")]
    Protocol { role: Role, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl AgentError {
    pub fn is_transport(&self) -> bool {
        matches!(self, AgentError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Detector,
    Segmenter,
    Orientation,
    Ocr,
    TextVlm,
    Labeler,
    Probe,
    AnswerProbe,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::Detector,
        Role::Segmenter,
        Role::Orientation,
        Role::Ocr,
        Role::TextVlm,
        Role::Labeler,
        Role::Probe,
        Role::AnswerProbe,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Detector => "detector",
            Role::Segmenter => "segmenter",
            Role::Orientation => "orientation",
            Role::Ocr => "ocr",
            Role::TextVlm => "text_vlm",
            Role::Labeler => "labeler",
            Role::Probe => "probe",
            Role::AnswerProbe => "answer_probe",
        }
    }

    /// Placeholders a prompt template for this role may use.
    pub fn placeholders(&self) -> &'static [&'static str] {
        match self {
            Role::Detector | Role::Segmenter | Role::Probe => &["object"],
            Role::Orientation | Role::Ocr | Role::TextVlm => &[],
            Role::Labeler => &["text", "categories", "object"],
            Role::AnswerProbe => &["question", "object"],
        }
    }

    pub fn default_prompt(&self) -> &'static str {
        match self {
            Role::Detector => "Locate {object} in the image and output in JSON format.",
            Role::Segmenter => "{object}",
            Role::Orientation => {
                "Is the text in this document readable (top down, left to right)? Answer yes or no"
            }
            Role::Ocr => "",
            Role::TextVlm => "Locate all text (bbox coordinates). Include all readable and blury text",
            Role::Labeler => {
                "Based on the image, classify this text: {text} using these categories: {categories}. Output only one category."
            }
            Role::Probe => "Is there a {object} in the image? Answer yes or no",
            Role::AnswerProbe => {
                "Given this question: '{question}', based on the image, are you able to answer the question?"
            }
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| AgentError::Config(format!("unknown agent role {s:?}")))
    }
}

/// One call's input: the rendered prompt, the image, and the extra text that
/// distinguishes calls on the same image (used for mock fixture keys).
#[derive(Debug, Clone, Copy)]
pub struct AgentRequest<'a> {
    pub prompt: &'a str,
    pub image: &'a RgbImage,
    pub extra: &'a str,
}

/// Fixture key: the image hash, or a hash of the image hash plus `extra`.
pub fn fixture_key(image: &RgbImage, extra: &str) -> String {
    let base = image_hash(image);
    if extra.is_empty() {
        return base;
    }
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(base.as_bytes());
    h.update(b"|");
    h.update(extra.as_bytes());
    hex::encode(h.finalize())
}

/// A value plus the non-fatal problems met while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Reply<T> {
    pub fn clean(value: T) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub bbox: BBox,
    pub label: String,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Ocr,
    Vlm,
}

impl TextSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            TextSource::Ocr => "ocr",
            TextSource::Vlm => "vlm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Polygon(Polygon),
    Box(BBox),
}

impl Region {
    pub fn to_polygon(&self) -> Polygon {
        match self {
            Region::Polygon(p) => p.clone(),
            Region::Box(b) => bbox_to_polygon(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextDetection {
    pub text: String,
    pub region: Region,
    pub source: TextSource,
    /// Tag of the rotation frame the region coordinates live in.
    pub frame: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub sub_category: String,
}

pub const OTHER_LABEL: &str = "other";

/// The configured agents, each bound to a backend.
#[derive(Clone)]
pub struct AgentSet {
    config: AgentsConfig,
    backends: BTreeMap<Role, Arc<dyn Backend>>,
}

impl fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentSet").field("tags", &self.backend_tags()).finish()
    }
}

impl AgentSet {
    /// Mock backends for `mock://` URLs, remote clients otherwise. Auth
    /// variables are checked here so a missing token fails before any request.
    pub fn from_config(config: AgentsConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let mut mocks: BTreeMap<String, Arc<dyn Backend>> = BTreeMap::new();
        let mut backends: BTreeMap<Role, Arc<dyn Backend>> = BTreeMap::new();
        for (role, endpoint) in config.iter() {
            let backend: Arc<dyn Backend> = match endpoint.mock_dir() {
                Some(dir) => match mocks.get(dir) {
                    Some(b) => b.clone(),
                    None => {
                        let b: Arc<dyn Backend> = Arc::new(MockBackend::load(dir)?);
                        mocks.insert(dir.to_string(), b.clone());
                        b
                    }
                },
                None => Arc::new(RemoteBackend::new(role, endpoint.clone())?),
            };
            backends.insert(role, backend);
        }
        Ok(Self { config, backends })
    }

    /// Use one backend for every role (handy for tests).
    pub fn with_backend(config: AgentsConfig, backend: Arc<dyn Backend>) -> Self {
        let backends = Role::ALL.iter().map(|&r| (r, backend.clone())).collect();
        Self { config, backends }
    }

    pub fn config(&self) -> &AgentsConfig {
        &self.config
    }

    /// Backend tag per role, e.g. `mock:fixtures/agents`.
    pub fn backend_tags(&self) -> BTreeMap<String, String> {
        self.backends
            .iter()
            .map(|(r, b)| (r.as_str().to_string(), b.tag()))
            .collect()
    }

    fn call(&self, role: Role, image: &RgbImage, vars: &[(&str, &str)], extra: &str) -> Result<RawResponse, AgentError> {
        let endpoint = self.config.get(role)?;
        let prompt = endpoint.render(role, vars)?;
        let backend = self
            .backends
            .get(&role)
            .ok_or_else(|| AgentError::Config(format!("no backend for role {role}")))?;
        tracing::debug!(%role, "agent call");
        backend.complete(role, &AgentRequest { prompt: &prompt, image, extra })
    }

    /// First bbox the detector reports, or `None` when it finds nothing.
    pub fn detect_object(&self, image: &RgbImage, category: &str) -> Result<Reply<Option<DetectionResult>>, AgentError> {
        let raw = self.call(Role::Detector, image, &[("object", category)], category)?;
        let text = raw.text_or_payload();
        let found = parse_bbox_json(&text, image.width(), image.height());
        let mut reply = Reply::clean(found.into_iter().next());
        if reply.value.is_none() && !text.trim().is_empty() {
            reply.warnings.push(format!("detector: no bbox in response {:?}", truncate(&text)));
        }
        Ok(reply)
    }

    /// Segmentation mask with the crop's dimensions; empty output falls back
    /// to a full mask.
    pub fn segment_object(&self, crop: &RgbImage, category: &str) -> Result<Reply<BinaryMask>, AgentError> {
        let raw = self.call(Role::Segmenter, crop, &[("object", category)], category)?;
        let (w, h) = crop.dimensions();
        let parsed = match raw.json() {
            Some(v) => parse_mask_payload(&v).map_err(|message| AgentError::Protocol {
                role: Role::Segmenter,
                message,
            })?,
            None => MaskPayload::Empty,
        };
        let mask = match parsed {
            MaskPayload::Empty => None,
            MaskPayload::Runs { width, height, counts } => {
                if (width, height) != (w, h) {
                    return Err(GeometryError::DimensionMismatch {
                        mask_w: width,
                        mask_h: height,
                        image_w: w,
                        image_h: h,
                    }
                    .into());
                }
                Some(BinaryMask::from_runs(w, h, &counts)?)
            }
            MaskPayload::Polygons(polys) => Some(crate::geometry::rasterize(&polys, w, h)),
        };
        match mask {
            Some(m) if m.popcount() > 0 => Ok(Reply::clean(m)),
            _ => Ok(Reply {
                value: BinaryMask::filled(w, h, true),
                warnings: vec!["segmenter returned an empty mask; masking the whole crop".into()],
            }),
        }
    }

    /// Probability that the text in `image` reads upright.
    pub fn judge_orientation(&self, image: &RgbImage) -> Result<Reply<f64>, AgentError> {
        let raw = self.call(Role::Orientation, image, &[], "")?;
        Ok(self.probability(Role::Orientation, &raw))
    }

    /// Yes-probability for an arbitrary yes/no role (probes).
    pub fn yes_no(&self, role: Role, image: &RgbImage, vars: &[(&str, &str)], extra: &str) -> Result<Reply<f64>, AgentError> {
        let raw = self.call(role, image, vars, extra)?;
        Ok(self.probability(role, &raw))
    }

    fn probability(&self, role: Role, raw: &RawResponse) -> Reply<f64> {
        let logprob_mode = self.config.get(role).map(|c| c.logprob_mode).unwrap_or(false);
        let mut warnings = Vec::new();
        if logprob_mode {
            if let Some(p) = raw.top_logprobs.as_ref().and_then(probability_from_logprobs) {
                return Reply::clean(p);
            }
            warnings.push(format!("{role}: no yes/no token likelihoods; using the text answer"));
        }
        let (p, warn) = yes_no_probability(&raw.text);
        warnings.extend(warn.map(|w| format!("{role}: {w}")));
        Reply { value: p, warnings }
    }

    /// OCR polygons in the frame of `image`.
    pub fn ocr_text(&self, image: &RgbImage, frame: &str) -> Result<Reply<Vec<TextDetection>>, AgentError> {
        let raw = self.call(Role::Ocr, image, &[], "")?;
        let Some(v) = raw.json() else {
            return Ok(Reply::clean(Vec::new()));
        };
        let (items, mut warnings) = parse_ocr_payload(&v);
        let mut out = Vec::new();
        for (text, poly) in items {
            if poly.is_degenerate() {
                warnings.push(format!("ocr: dropped zero-area polygon for {text:?}"));
                continue;
            }
            out.push(TextDetection {
                text,
                region: Region::Polygon(poly),
                source: TextSource::Ocr,
                frame: frame.to_string(),
            });
        }
        Ok(Reply { value: out, warnings })
    }

    /// Text-VLM boxes in the frame of `image`.
    pub fn vlm_text(&self, image: &RgbImage, frame: &str) -> Result<Reply<Vec<TextDetection>>, AgentError> {
        let raw = self.call(Role::TextVlm, image, &[], "")?;
        let text = raw.text_or_payload();
        let mut warnings = Vec::new();
        let mut out = Vec::new();
        for d in parse_bbox_json(&text, image.width(), image.height()) {
            if d.bbox.is_degenerate() {
                warnings.push(format!("text_vlm: dropped zero-area box for {:?}", d.label));
                continue;
            }
            out.push(TextDetection {
                text: d.label,
                region: Region::Box(d.bbox),
                source: TextSource::Vlm,
                frame: frame.to_string(),
            });
        }
        Ok(Reply { value: out, warnings })
    }

    /// Sub-category for `text`, restricted to `allowed`; anything else is
    /// reported as [`OTHER_LABEL`].
    pub fn classify_text(
        &self,
        image: &RgbImage,
        text: &str,
        category: &str,
        allowed: &[String],
    ) -> Result<Reply<CategoryLabel>, AgentError> {
        if allowed.is_empty() {
            return Err(AgentError::Config("classify_text needs at least one allowed label".into()));
        }
        let categories = allowed.join(", ");
        let extra = format!("{text}|{category}");
        let raw = self.call(
            Role::Labeler,
            image,
            &[("text", text), ("categories", &categories), ("object", category)],
            &extra,
        )?;
        let label = normalize_label(&raw.text);
        if allowed.iter().any(|a| normalize_label(a) == label) {
            return Ok(Reply::clean(CategoryLabel { sub_category: label }));
        }
        Ok(Reply {
            value: CategoryLabel {
                sub_category: OTHER_LABEL.to_string(),
            },
            warnings: if label == OTHER_LABEL {
                Vec::new()
            } else {
                vec![format!("labeler: {label:?} is not an allowed label; using \"other\"")]
            },
        })
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(80).collect()
}
