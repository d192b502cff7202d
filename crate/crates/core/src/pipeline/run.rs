use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use serde_json::{json, Value};

use super::stages::{
    assign_risk, build_strategy_mask, recognize_text, refine_detections, select_orientation, FRAME_DESKEWED,
};
use super::{
    DetectionRecord, DetectionSummary, HighRiskSummary, Manifest, MaskStrategy, OrientationScore, PipelineConfig,
    PipelineError, StageRecord, StageStatus, MANIFEST_SCHEMA,
};
use crate::agents::{AgentSet, TextSource};
use crate::geometry::{apply_mask, crop, load_rgb, whiteout_outside_mask, BBox, BinaryMask, Crop, Point};
use crate::metrics::masked_percentage;
use crate::risk::{risk_scores, EcosystemGraph, ScoreVector};
use crate::taxonomy::{default_threshold, high_risk_for_category, CategoryTable, HighRiskSet};

/// One rendered strategy.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub strategy: MaskStrategy,
    pub mask: BinaryMask,
    pub image: RgbImage,
    pub manifest: Manifest,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub renders: Vec<Rendered>,
}

impl PipelineOutput {
    pub fn get(&self, strategy: MaskStrategy) -> Option<&Rendered> {
        self.renders.iter().find(|r| r.strategy == strategy)
    }
}

/// A stage-fatal error together with the trace gathered up to that point.
#[derive(Debug)]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub manifest: Box<Manifest>,
}

/// Scores, categories and agents shared by every image of a run.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    agents: AgentSet,
    table: CategoryTable,
    scores: ScoreVector,
    tau: f64,
    echo: Value,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        agents: AgentSet,
        graph: &EcosystemGraph,
        table: CategoryTable,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let scores = risk_scores(graph, &config.risk)?;
        Self::with_scores(config, agents, scores, table)
    }

    pub fn with_scores(
        config: PipelineConfig,
        agents: AgentSet,
        scores: ScoreVector,
        table: CategoryTable,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let tau = config.tau.unwrap_or_else(|| default_threshold(&scores));
        let echo = json!({ "pipeline": config, "tau_effective": tau, "agents": agents.config() });
        Ok(Self {
            config,
            agents,
            table,
            scores,
            tau,
            echo,
        })
    }

    /// Replace the configuration echoed into manifests.
    pub fn with_echo(mut self, echo: Value) -> Self {
        self.echo = echo;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn scores(&self) -> &ScoreVector {
        &self.scores
    }

    pub fn run(&self, path: &Path, category: Option<&str>) -> Result<PipelineOutput, PipelineFailure> {
        let label = path.display().to_string();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        match load_rgb(path) {
            Ok(image) => self.run_image(&image, &label, &stem, category),
            Err(e) => {
                let trace = Trace::new(self, &label, &stem, (0, 0), category.unwrap_or_default());
                Err(trace.fail("load", e.into()))
            }
        }
    }

    /// Run every stage on an in-memory image. `input` is recorded verbatim and
    /// `stem` names the rendered outputs.
    pub fn run_image(
        &self,
        image: &RgbImage,
        input: &str,
        stem: &str,
        category: Option<&str>,
    ) -> Result<PipelineOutput, PipelineFailure> {
        let category = category.or(self.config.category.as_deref()).unwrap_or_default().to_string();
        let mut t = Trace::new(self, input, stem, image.dimensions(), &category);
        if category.is_empty() {
            return Err(t.fail("category", PipelineError::Config("no category given".into())));
        }
        match self.table.require(&category) {
            Ok(c) => t.category = c.name.clone(),
            Err(e) => return Err(t.fail("category", e.into())),
        }
        let category = t.category.clone();
        let high = match high_risk_for_category(&self.table, &self.scores, &category, self.tau, self.config.unscored) {
            Ok(h) => h,
            Err(e) => return Err(t.fail("risk", e.into())),
        };
        t.set_high(&high);

        // detection and crop
        let clock = Instant::now();
        let detection = match self.agents.detect_object(image, &category) {
            Ok(r) => {
                t.warnings.extend(r.warnings);
                r.value
            }
            Err(e) => return Err(t.fail("detect", e.into())),
        };
        t.stage("detect", StageStatus::Ok, detection.is_none().then(|| "no detection; using the whole image".into()), clock);
        let clock = Instant::now();
        let cropped = match &detection {
            Some(d) => match crop(image, &d.bbox) {
                Ok(c) => c,
                Err(e) => return Err(t.fail("crop", e.into())),
            },
            None => Crop {
                image: image.clone(),
                bbox: BBox::full(image.width(), image.height()),
            },
        };
        t.detection = detection.map(|d| DetectionSummary {
            bbox: cropped.bbox,
            label: d.label,
        });
        t.origin = [cropped.bbox.x_top, cropped.bbox.y_top];
        t.stage("crop", StageStatus::Ok, None, clock);

        // segmentation
        let clock = Instant::now();
        let segment = match self.agents.segment_object(&cropped.image, &category) {
            Ok(r) => {
                t.warnings.extend(r.warnings);
                r.value
            }
            Err(e) => return Err(t.fail("segment", e.into())),
        };
        let whited = match whiteout_outside_mask(&cropped.image, &segment) {
            Ok(w) => w,
            Err(e) => return Err(t.fail("segment", e.into())),
        };
        let (w, h) = image.dimensions();
        let segment_full = segment.placed(w, h, cropped.bbox.x_top, cropped.bbox.y_top);
        t.stage("segment", StageStatus::Ok, None, clock);

        let records = if self.config.needs_text() {
            match self.text_stages(&whited, cropped.origin(), &category, &mut t) {
                Ok(r) => r,
                Err((stage, e)) => return Err(t.fail(stage, e)),
            }
        } else {
            for stage in ["orientation", "recognize", "refine", "label"] {
                t.stages.push(StageRecord {
                    stage: stage.into(),
                    status: StageStatus::Skipped,
                    note: Some("object strategy only".into()),
                });
            }
            Vec::new()
        };

        let all: Vec<_> = records.iter().map(|r| r.polygon.clone()).collect();
        let flagged: Vec<_> = records.iter().filter(|r| r.high_risk).map(|r| r.polygon.clone()).collect();
        t.records = records;

        let mut renders = Vec::new();
        for &strategy in &self.config.strategies {
            let clock = Instant::now();
            let mask = build_strategy_mask(strategy, &segment_full, &all, &flagged, (w, h));
            let out = match apply_mask(image, &mask) {
                Ok(o) => o,
                Err(e) => return Err(t.fail("render", e.into())),
            };
            let pct = match masked_percentage(&mask) {
                Ok(p) => p,
                Err(e) => return Err(t.fail("render", PipelineError::Config(e.to_string()))),
            };
            let mut timings = t.timings.clone();
            timings.insert("render".into(), clock.elapsed().as_secs_f64() * 1e3);
            let mut manifest = t.manifest(strategy);
            manifest.masked_pixels = mask.popcount();
            manifest.masked_percentage = pct;
            manifest.output_image = Some(format!("{}.{}.png", t.stem, strategy.suffix()));
            manifest.stages.push(StageRecord {
                stage: "render".into(),
                status: StageStatus::Ok,
                note: None,
            });
            if self.config.timings {
                manifest.timings_ms = Some(timings);
            }
            renders.push(Rendered {
                strategy,
                mask,
                image: out,
                manifest,
            });
        }
        Ok(PipelineOutput { renders })
    }

    fn text_stages(
        &self,
        whited: &RgbImage,
        origin: Point,
        category: &str,
        t: &mut Trace,
    ) -> Result<Vec<DetectionRecord>, (&'static str, PipelineError)> {
        let clock = Instant::now();
        let oriented = select_orientation(whited, &self.config.candidate_angles, |img| {
            self.agents.judge_orientation(img)
        })
        .map_err(|e| ("orientation", e))?;
        t.warnings.extend(oriented.warnings.iter().cloned());
        t.theta_star = Some(oriented.theta_star);
        t.orientation_scores = oriented.scores.clone();
        t.stage("orientation", StageStatus::Ok, None, clock);

        let clock = Instant::now();
        let recognition = recognize_text(
            &oriented.image,
            &[oriented.spec],
            &self.agents,
            self.config.phi_correction,
            self.config.phi_tolerance_deg,
        )
        .map_err(|e| ("recognize", e))?;
        t.warnings.extend(recognition.warnings.iter().cloned());
        t.phi = recognition.phi;
        let note = recognition
            .registry
            .contains_key(FRAME_DESKEWED)
            .then(|| "text VLM ran on the deskewed crop".to_string());
        t.stage("recognize", StageStatus::Ok, note, clock);

        let clock = Instant::now();
        let polygons = refine_detections(&recognition.detections, &recognition.registry, origin)
            .map_err(|e| ("refine", e))?;
        t.stage("refine", StageStatus::Ok, None, clock);

        let clock = Instant::now();
        let deskewed = recognition.vlm_input.as_ref().unwrap_or(&oriented.image);
        let (mut records, _, warnings) = assign_risk(
            &recognition.detections,
            &polygons,
            category,
            &self.scores,
            &self.table,
            self.tau,
            self.config.unscored,
            self.config.strict_labeling,
            |det, allowed| {
                let view = if det.frame == FRAME_DESKEWED { deskewed } else { &oriented.image };
                self.agents.classify_text(view, &det.text, category, allowed)
            },
        )
        .map_err(|e| ("label", e))?;
        t.warnings.extend(warnings);
        t.stage("label", StageStatus::Ok, None, clock);

        sort_records(&mut records);
        if let Some(limit) = self.config.dedup_iou {
            records = dedup(records, limit);
        }
        Ok(records)
    }
}

/// Source first (OCR before VLM), then top-to-bottom, left-to-right.
fn sort_records(records: &mut [DetectionRecord]) {
    records.sort_by(|a, b| {
        let (ay, ax) = a.polygon.reading_key();
        let (by, bx) = b.polygon.reading_key();
        a.source
            .cmp(&b.source)
            .then(ay.total_cmp(&by))
            .then(ax.total_cmp(&bx))
            .then_with(|| a.text.cmp(&b.text))
    });
}

fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let area = |x: &BBox| x.width() as f64 * x.height() as f64;
    let x0 = a.x_top.max(b.x_top);
    let y0 = a.y_top.max(b.y_top);
    let x1 = a.x_bottom.min(b.x_bottom);
    let y1 = a.y_bottom.min(b.y_bottom);
    if x0 > x1 || y0 > y1 {
        return 0.0;
    }
    let inter = (x1 - x0 + 1) as f64 * (y1 - y0 + 1) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Drop VLM regions that overlap an OCR region by more than `limit` IoU.
fn dedup(records: Vec<DetectionRecord>, limit: f64) -> Vec<DetectionRecord> {
    let ocr_boxes: Vec<BBox> = records
        .iter()
        .filter(|r| r.source == TextSource::Ocr)
        .filter_map(|r| BBox::enclosing(r.polygon.vertices()))
        .collect();
    records
        .into_iter()
        .filter(|r| {
            r.source == TextSource::Ocr
                || BBox::enclosing(r.polygon.vertices())
                    .is_none_or(|b| ocr_boxes.iter().all(|o| bbox_iou(o, &b) <= limit))
        })
        .collect()
}

/// Manifest fields gathered while the stages run.
struct Trace {
    input: String,
    stem: String,
    size: [u32; 2],
    category: String,
    detection: Option<DetectionSummary>,
    origin: [u32; 2],
    theta_star: Option<f64>,
    orientation_scores: Vec<OrientationScore>,
    phi: Option<f64>,
    high: HighRiskSummary,
    records: Vec<DetectionRecord>,
    stages: Vec<StageRecord>,
    warnings: Vec<String>,
    timings: BTreeMap<String, f64>,
    agents: BTreeMap<String, String>,
    echo: Value,
    first_strategy: MaskStrategy,
    keep_timings: bool,
}

impl Trace {
    fn new(p: &Pipeline, input: &str, stem: &str, size: (u32, u32), category: &str) -> Self {
        Self {
            input: input.to_string(),
            stem: stem.to_string(),
            size: [size.0, size.1],
            category: category.to_string(),
            detection: None,
            origin: [0, 0],
            theta_star: None,
            orientation_scores: Vec::new(),
            phi: None,
            high: HighRiskSummary {
                members: Vec::new(),
                threshold: p.tau,
                score_source: p.scores.source_tag(),
                unscored: Vec::new(),
            },
            records: Vec::new(),
            stages: Vec::new(),
            warnings: Vec::new(),
            timings: BTreeMap::new(),
            agents: p.agents.backend_tags(),
            echo: p.echo.clone(),
            first_strategy: p.config.strategies.first().copied().unwrap_or(MaskStrategy::HighRisk),
            keep_timings: p.config.timings,
        }
    }

    /// Trace for a failure before any pipeline exists.
    fn detached(input: &str, category: &str, agents: &AgentSet, config: &PipelineConfig) -> Self {
        Self {
            input: input.to_string(),
            stem: String::new(),
            size: [0, 0],
            category: category.to_string(),
            detection: None,
            origin: [0, 0],
            theta_star: None,
            orientation_scores: Vec::new(),
            phi: None,
            high: HighRiskSummary {
                members: Vec::new(),
                threshold: config.tau.unwrap_or(0.0),
                score_source: String::new(),
                unscored: Vec::new(),
            },
            records: Vec::new(),
            stages: Vec::new(),
            warnings: Vec::new(),
            timings: BTreeMap::new(),
            agents: agents.backend_tags(),
            echo: json!({ "pipeline": config }),
            first_strategy: config.strategies.first().copied().unwrap_or(MaskStrategy::HighRisk),
            keep_timings: false,
        }
    }

    fn set_high(&mut self, high: &HighRiskSet) {
        self.high = HighRiskSummary {
            members: high.members.iter().cloned().collect(),
            threshold: high.threshold,
            score_source: high.score_source.clone(),
            unscored: high.unscored.clone(),
        };
    }

    fn stage(&mut self, name: &str, status: StageStatus, note: Option<String>, clock: Instant) {
        self.timings.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1e3);
        self.stages.push(StageRecord {
            stage: name.to_string(),
            status,
            note,
        });
    }

    fn manifest(&self, strategy: MaskStrategy) -> Manifest {
        Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            input: self.input.clone(),
            image_size: self.size,
            category: self.category.clone(),
            strategy,
            detection: self.detection.clone(),
            crop_origin: self.origin,
            theta_star: self.theta_star,
            orientation_scores: self.orientation_scores.clone(),
            phi: self.phi,
            high_risk_set: self.high.clone(),
            detections: self.records.clone(),
            masked_pixels: 0,
            masked_percentage: 0.0,
            output_image: None,
            stages: self.stages.clone(),
            warnings: self.warnings.clone(),
            agents: self.agents.clone(),
            config: self.echo.clone(),
            timings_ms: None,
            error: None,
        }
    }

    fn fail(mut self, stage: &str, error: PipelineError) -> PipelineFailure {
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            status: StageStatus::Failed,
            note: Some(error.to_string()),
        });
        let mut manifest = self.manifest(self.first_strategy);
        manifest.error = Some(error.to_string());
        if self.keep_timings {
            manifest.timings_ms = Some(self.timings.clone());
        }
        PipelineFailure {
            error,
            manifest: Box::new(manifest),
        }
    }
}

/// Convenience wrapper: score the graph, run one image, return the first
/// configured strategy's image and manifest.
pub fn run_pipeline(
    image_path: &Path,
    category: &str,
    config: &PipelineConfig,
    agents: &AgentSet,
    graph: &EcosystemGraph,
    table: &CategoryTable,
) -> Result<(RgbImage, Manifest), PipelineFailure> {
    let pipeline = Pipeline::new(config.clone(), agents.clone(), graph, table.clone()).map_err(|error| {
        Trace::detached(&image_path.display().to_string(), category, agents, config).fail("setup", error)
    })?;
    let mut out = pipeline.run(image_path, Some(category))?;
    let first = out.renders.remove(0);
    Ok((first.image, first.manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;

    fn rec(source: TextSource, x: f64, y: f64, text: &str) -> DetectionRecord {
        DetectionRecord {
            text: text.into(),
            source,
            frame: "oriented".into(),
            polygon: Polygon::from_pairs(&[[x, y], [x + 10.0, y], [x + 10.0, y + 5.0], [x, y + 5.0]]).unwrap(),
            sub_category: "other".into(),
            high_risk: false,
            label_failed: false,
        }
    }

    #[test]
    fn records_sort_by_source_then_reading_order() {
        let mut r = vec![
            rec(TextSource::Vlm, 0.0, 0.0, "a"),
            rec(TextSource::Ocr, 50.0, 20.0, "b"),
            rec(TextSource::Ocr, 0.0, 20.0, "c"),
            rec(TextSource::Ocr, 90.0, 0.0, "d"),
        ];
        sort_records(&mut r);
        let order: Vec<_> = r.iter().map(|x| x.text.as_str()).collect();
        assert_eq!(order, ["d", "c", "b", "a"]);
    }

    #[test]
    fn dedup_removes_overlapping_vlm_boxes_only() {
        let r = vec![
            rec(TextSource::Ocr, 0.0, 0.0, "a"),
            rec(TextSource::Vlm, 0.0, 0.0, "a"),
            rec(TextSource::Vlm, 40.0, 40.0, "z"),
        ];
        let kept = dedup(r, 0.9);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[1].text, "z");
    }

    #[test]
    fn iou_values() {
        let a = BBox::new(0, 0, 9, 9).unwrap();
        assert_eq!(bbox_iou(&a, &a), 1.0);
        assert_eq!(bbox_iou(&a, &BBox::new(20, 20, 25, 25).unwrap()), 0.0);
        assert!((bbox_iou(&a, &BBox::new(5, 0, 14, 9).unwrap()) - 50.0 / 150.0).abs() < 1e-12);
    }
}
