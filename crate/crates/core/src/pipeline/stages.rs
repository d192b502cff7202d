use std::collections::BTreeMap;

use image::RgbImage;

use super::{DetectionRecord, MaskStrategy, OrientationScore, PipelineError};
use crate::agents::{AgentError, AgentSet, CategoryLabel, Reply, TextDetection, OTHER_LABEL};
use crate::geometry::{
    inverse_rotate_polygon, polygon_orientation_angle, rasterize, realign_to_original, rotate_with_spec, BinaryMask,
    Point, Polygon, RotationSpec,
};
use crate::risk::ScoreVector;
use crate::taxonomy::{high_risk_for_category, CategoryTable, HighRiskSet, UnscoredPolicy};

/// Frame of the crop after the orientation search.
pub const FRAME_ORIENTED: &str = "oriented";
/// Frame of the oriented crop after skew correction.
pub const FRAME_DESKEWED: &str = "deskewed";

/// Frame tag → rotations applied to the crop, in order.
pub type FrameRegistry = BTreeMap<String, Vec<RotationSpec>>;

#[derive(Debug, Clone)]
pub struct Orientation {
    pub theta_star: f64,
    pub spec: RotationSpec,
    pub image: RgbImage,
    /// Judge probability per candidate; empty when there was nothing to choose.
    pub scores: Vec<OrientationScore>,
    pub warnings: Vec<String>,
}

/// Rotate by each candidate angle, ask the judge, keep the best. Ties go to
/// the earliest candidate; a single candidate is used without asking.
pub fn select_orientation<F>(crop: &RgbImage, angles: &[f64], mut judge: F) -> Result<Orientation, PipelineError>
where
    F: FnMut(&RgbImage) -> Result<Reply<f64>, AgentError>,
{
    let Some(&first) = angles.first() else {
        return Err(PipelineError::Config("candidate angle list is empty".into()));
    };
    if angles.len() == 1 {
        let (image, spec) = rotate_with_spec(crop, first);
        return Ok(Orientation {
            theta_star: first,
            spec,
            image,
            scores: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let mut best: Option<(f64, RgbImage, RotationSpec, f64)> = None;
    let mut scores = Vec::with_capacity(angles.len());
    let mut warnings = Vec::new();
    for &theta in angles {
        let (image, spec) = rotate_with_spec(crop, theta);
        let reply = judge(&image)?;
        warnings.extend(reply.warnings);
        let p = reply.value;
        scores.push(OrientationScore { theta, probability: p });
        if best.as_ref().is_none_or(|b| p > b.3) {
            best = Some((theta, image, spec, p));
        }
    }
    let (theta_star, image, spec, _) = best.expect("at least one candidate");
    Ok(Orientation {
        theta_star,
        spec,
        image,
        scores,
        warnings,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Residual skew in degrees, folded into `(-45, 45]`: right-angle turns are
/// the orientation search's job, so a tall box counts as level.
pub fn fold_skew(angle: f64) -> f64 {
    let mut f = angle - 90.0 * (angle / 90.0).round();
    if f <= -45.0 {
        f += 90.0;
    }
    if f > 45.0 {
        f -= 90.0;
    }
    f
}

/// Median folded skew over the detections' polygons.
pub fn estimate_skew(detections: &[TextDetection]) -> Option<f64> {
    let angles: Vec<f64> = detections
        .iter()
        .filter_map(|d| polygon_orientation_angle(&d.region.to_polygon()).ok())
        .map(fold_skew)
        .collect();
    median(&angles)
}

#[derive(Debug, Clone)]
pub struct Recognition {
    pub detections: Vec<TextDetection>,
    pub registry: FrameRegistry,
    /// Median skew of the OCR polygons, when measured.
    pub phi: Option<f64>,
    /// The image the VLM pass saw (the oriented crop, or its deskewed copy).
    pub vlm_input: Option<RgbImage>,
    pub warnings: Vec<String>,
}

/// OCR on the oriented crop, then the text VLM on either the same image or,
/// when the OCR polygons show skew, on a copy rotated by minus the median skew.
/// The result is the union of both agents' detections.
pub fn recognize_text(
    oriented: &RgbImage,
    oriented_chain: &[RotationSpec],
    agents: &AgentSet,
    phi_correction: bool,
    phi_tolerance_deg: f64,
) -> Result<Recognition, PipelineError> {
    let mut registry = FrameRegistry::new();
    registry.insert(FRAME_ORIENTED.to_string(), oriented_chain.to_vec());
    let mut warnings = Vec::new();

    let ocr = agents.ocr_text(oriented, FRAME_ORIENTED);
    let mut phi = None;
    if let Ok(reply) = &ocr {
        warnings.extend(reply.warnings.iter().cloned());
        if phi_correction {
            phi = estimate_skew(&reply.value);
        }
    }

    let deskew = phi.filter(|p| p.abs() > phi_tolerance_deg);
    let (vlm_image, frame) = match deskew {
        Some(p) => {
            let (img, spec) = rotate_with_spec(oriented, -p);
            let mut chain = oriented_chain.to_vec();
            chain.push(spec);
            registry.insert(FRAME_DESKEWED.to_string(), chain);
            (img, FRAME_DESKEWED)
        }
        None => (oriented.clone(), FRAME_ORIENTED),
    };
    let vlm = agents.vlm_text(&vlm_image, frame);

    let mut detections = Vec::new();
    match (ocr, vlm) {
        (Err(a), Err(b)) => {
            let pick = if b.is_transport() && !a.is_transport() { b } else { a };
            return Err(PipelineError::TextAgents(Box::new(pick)));
        }
        (ocr, vlm) => {
            for (name, result) in [("ocr", ocr), ("text_vlm", vlm)] {
                match result {
                    Ok(reply) => {
                        if name == "text_vlm" {
                            warnings.extend(reply.warnings);
                        }
                        detections.extend(reply.value);
                    }
                    Err(e) => warnings.push(format!("{name} failed, continuing with the other agent: {e}")),
                }
            }
        }
    }
    Ok(Recognition {
        detections,
        registry,
        phi,
        vlm_input: Some(vlm_image),
        warnings,
    })
}

/// Map every detection back to original-image coordinates: undo its frame's
/// rotations (last first), then shift by the crop origin.
pub fn refine_detections(
    detections: &[TextDetection],
    registry: &FrameRegistry,
    origin: Point,
) -> Result<Vec<Polygon>, PipelineError> {
    detections
        .iter()
        .map(|d| {
            let chain = registry
                .get(&d.frame)
                .ok_or_else(|| PipelineError::UnknownFrame(d.frame.clone()))?;
            let mut poly = d.region.to_polygon();
            for spec in chain.iter().rev() {
                poly = inverse_rotate_polygon(&poly, spec);
            }
            Ok(realign_to_original(&poly, origin))
        })
        .collect()
}

/// Label each detection against the category's PII types (plus "other") and
/// flag it when the label is in the category's high-risk set.
#[allow(clippy::too_many_arguments)]
pub fn assign_risk<L>(
    detections: &[TextDetection],
    polygons: &[Polygon],
    category: &str,
    scores: &ScoreVector,
    table: &CategoryTable,
    tau: f64,
    unscored: UnscoredPolicy,
    strict: bool,
    mut labeler: L,
) -> Result<(Vec<DetectionRecord>, HighRiskSet, Vec<String>), PipelineError>
where
    L: FnMut(&TextDetection, &[String]) -> Result<Reply<CategoryLabel>, AgentError>,
{
    let cat = table.require(category)?;
    let high = high_risk_for_category(table, scores, category, tau, unscored)?;
    let mut allowed: Vec<String> = cat.pii_types.clone();
    allowed.push(OTHER_LABEL.to_string());
    let mut warnings = Vec::new();
    let mut records = Vec::with_capacity(detections.len());
    for (det, poly) in detections.iter().zip(polygons) {
        let (sub_category, high_risk, label_failed) = if cat.pii_types.is_empty() {
            (OTHER_LABEL.to_string(), false, false)
        } else {
            match labeler(det, &allowed) {
                Ok(reply) => {
                    warnings.extend(reply.warnings);
                    let label = reply.value.sub_category;
                    let flagged = high.contains(&label);
                    (label, flagged, false)
                }
                Err(e) => {
                    warnings.push(format!("labeler failed on {:?}: {e}", det.text));
                    (OTHER_LABEL.to_string(), strict && !high.is_empty(), true)
                }
            }
        };
        records.push(DetectionRecord {
            text: det.text.clone(),
            source: det.source,
            frame: det.frame.clone(),
            polygon: poly.clone(),
            sub_category,
            high_risk,
            label_failed,
        });
    }
    Ok((records, high, warnings))
}

/// Pixels to black out for one strategy, in original-image coordinates.
pub fn build_strategy_mask(
    strategy: MaskStrategy,
    segment: &BinaryMask,
    all_polygons: &[Polygon],
    high_risk_polygons: &[Polygon],
    dims: (u32, u32),
) -> BinaryMask {
    match strategy {
        MaskStrategy::Object => segment.clone(),
        MaskStrategy::FineGrained => rasterize(all_polygons, dims.0, dims.1),
        MaskStrategy::HighRisk => rasterize(high_risk_polygons, dims.0, dims.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Region, TextSource};
    use crate::geometry::{bbox_to_polygon, BBox};
    use crate::risk::{Channel, ScoreKind};
    use crate::taxonomy::PrivateCategory;

    fn judge_from(table: &[(f64, f64)]) -> impl FnMut(&RgbImage) -> Result<Reply<f64>, AgentError> + '_ {
        // images of a non-square crop differ in shape per angle; key the mock by call order
        let mut i = 0;
        move |_img| {
            let p = table[i].1;
            i += 1;
            Ok(Reply::clean(p))
        }
    }

    #[test]
    fn argmax_angle() {
        let crop = RgbImage::new(20, 10);
        let scores = [(0.0, 0.2), (90.0, 0.9), (180.0, 0.1), (270.0, 0.3)];
        let o = select_orientation(&crop, &[0.0, 90.0, 180.0, 270.0], judge_from(&scores)).unwrap();
        assert_eq!(o.theta_star, 90.0);
        assert_eq!(o.image.dimensions(), (10, 20));
        assert_eq!(o.scores.len(), 4);
    }

    #[test]
    fn ties_go_to_the_first_angle() {
        let crop = RgbImage::new(20, 10);
        let scores = [(0.0, 0.5), (90.0, 0.5), (180.0, 0.5), (270.0, 0.5)];
        let o = select_orientation(&crop, &[180.0, 0.0, 90.0, 270.0], judge_from(&scores)).unwrap();
        assert_eq!(o.theta_star, 180.0);
    }

    #[test]
    fn single_candidate_skips_the_judge() {
        let crop = RgbImage::new(20, 10);
        let o = select_orientation(&crop, &[0.0], |_| panic!("judge must not be called")).unwrap();
        assert_eq!(o.theta_star, 0.0);
        assert_eq!(o.image, crop);
        assert!(select_orientation(&crop, &[], |_| Ok(Reply::clean(1.0))).is_err());
    }

    #[test]
    fn judge_failure_propagates() {
        let crop = RgbImage::new(4, 4);
        let err = select_orientation(&crop, &[0.0, 90.0], |_| {
            Err(AgentError::Transport {
                role: crate::agents::Role::Orientation,
                attempts: 3,
                message: "down".into(),
            })
        })
        .unwrap_err();
        assert_eq!(err.class().exit_code(), 4);
    }

    #[test]
    fn skew_folding() {
        assert_eq!(fold_skew(10.0), 10.0);
        assert_eq!(fold_skew(90.0), 0.0);
        assert_eq!(fold_skew(-80.0), 10.0);
        assert_eq!(fold_skew(45.0), 45.0);
        assert_eq!(fold_skew(-45.0), 45.0);
        assert!((fold_skew(-12.5) + 12.5).abs() < 1e-12);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    fn det(frame: &str, bbox: [u32; 4]) -> TextDetection {
        TextDetection {
            text: "x".into(),
            region: Region::Box(BBox::new(bbox[0], bbox[1], bbox[2], bbox[3]).unwrap()),
            source: TextSource::Vlm,
            frame: frame.into(),
        }
    }

    #[test]
    fn identity_chain_leaves_polygons_alone() {
        let spec = RotationSpec::for_size(50, 40, 0.0);
        let registry: FrameRegistry = [(FRAME_ORIENTED.to_string(), vec![spec])].into();
        let d = det(FRAME_ORIENTED, [1, 2, 10, 12]);
        let out = refine_detections(&[d.clone()], &registry, Point::ORIGIN).unwrap();
        assert_eq!(out[0], d.region.to_polygon());
    }

    #[test]
    fn quarter_turn_chain_by_hand() {
        // 20x10 crop at origin (100, 50), rotated 90 degrees onto a 10x20 canvas.
        // Canvas box [2, 3, 4, 8] has corners (2,3) (4,3) (4,8) (2,8), which map to
        // (3,7) (3,5) (8,5) (8,7) in the crop, then shift by the origin.
        let spec = RotationSpec::for_size(20, 10, 90.0);
        let registry: FrameRegistry = [(FRAME_ORIENTED.to_string(), vec![spec])].into();
        let out = refine_detections(&[det(FRAME_ORIENTED, [2, 3, 4, 8])], &registry, Point::new(100.0, 50.0)).unwrap();
        assert_eq!(
            out[0].to_pairs(),
            vec![[103.0, 57.0], [103.0, 55.0], [108.0, 55.0], [108.0, 57.0]]
        );
    }

    #[test]
    fn unknown_frame_is_an_error() {
        let registry = FrameRegistry::new();
        let err = refine_detections(&[det("elsewhere", [0, 0, 3, 3])], &registry, Point::ORIGIN).unwrap_err();
        assert!(matches!(err, PipelineError::UnknownFrame(f) if f == "elsewhere"));
    }

    fn table() -> CategoryTable {
        CategoryTable::new(vec![
            PrivateCategory {
                name: "credit or debit card".into(),
                synonym_nodes: vec!["credit card".into()],
                pii_types: vec!["name".into(), "credit card number".into(), "cvv code".into()],
            },
            PrivateCategory {
                name: "pregnancy test box".into(),
                synonym_nodes: vec![],
                pii_types: vec![],
            },
        ])
        .unwrap()
    }

    fn scores() -> ScoreVector {
        ScoreVector {
            algorithm: ScoreKind::PagerankStandard,
            channel: Channel::Frequency,
            scores: [("name", 0.05), ("credit card number", 0.02), ("cvv code", 0.001)]
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            converged: true,
            iterations: 10,
        }
    }

    fn labeled(label: &'static str) -> impl FnMut(&TextDetection, &[String]) -> Result<Reply<CategoryLabel>, AgentError> {
        move |_, _| {
            Ok(Reply::clean(CategoryLabel {
                sub_category: label.into(),
            }))
        }
    }

    #[test]
    fn risk_membership() {
        let d = vec![det(FRAME_ORIENTED, [0, 0, 4, 4])];
        let p = vec![bbox_to_polygon(&BBox::new(0, 0, 4, 4).unwrap())];
        let (r, high, _) = assign_risk(&d, &p, "credit or debit card", &scores(), &table(), 0.01, UnscoredPolicy::Exclude, true, labeled("name")).unwrap();
        assert!(r[0].high_risk);
        assert!(high.contains("credit card number") && !high.contains("cvv code"));
        let (r, ..) = assign_risk(&d, &p, "credit or debit card", &scores(), &table(), 0.01, UnscoredPolicy::Exclude, true, labeled("other")).unwrap();
        assert!(!r[0].high_risk);
        let (r, ..) = assign_risk(&d, &p, "credit or debit card", &scores(), &table(), 0.01, UnscoredPolicy::Exclude, true, labeled("cvv code")).unwrap();
        assert!(!r[0].high_risk);
    }

    #[test]
    fn empty_pii_category_never_flags_or_calls_the_labeler() {
        let d = vec![det(FRAME_ORIENTED, [0, 0, 4, 4])];
        let p = vec![bbox_to_polygon(&BBox::new(0, 0, 4, 4).unwrap())];
        let (r, high, _) = assign_risk(&d, &p, "pregnancy test box", &scores(), &table(), 0.0, UnscoredPolicy::Exclude, true, |_: &TextDetection, _: &[String]| -> Result<Reply<CategoryLabel>, AgentError> {
            panic!("labeler must not be called")
        })
        .unwrap();
        assert!(high.is_empty());
        assert!(!r[0].high_risk);
    }

    #[test]
    fn labeler_failure_modes() {
        let d = vec![det(FRAME_ORIENTED, [0, 0, 4, 4])];
        let p = vec![bbox_to_polygon(&BBox::new(0, 0, 4, 4).unwrap())];
        let failing = |_: &TextDetection, _: &[String]| -> Result<Reply<CategoryLabel>, AgentError> {
            Err(AgentError::Config("boom".into()))
        };
        let (r, ..) = assign_risk(&d, &p, "credit or debit card", &scores(), &table(), 0.01, UnscoredPolicy::Exclude, true, failing).unwrap();
        assert!(r[0].high_risk && r[0].label_failed);
        let (r, ..) = assign_risk(&d, &p, "credit or debit card", &scores(), &table(), 0.01, UnscoredPolicy::Exclude, false, failing).unwrap();
        assert!(!r[0].high_risk && r[0].label_failed);
        assert_eq!(r[0].sub_category, "other");
    }

    #[test]
    fn strategy_masks() {
        let seg = BinaryMask::filled(20, 20, true);
        let a = bbox_to_polygon(&BBox::new(0, 0, 4, 4).unwrap());
        let b = bbox_to_polygon(&BBox::new(10, 10, 14, 14).unwrap());
        let all = vec![a.clone(), b];
        let high = vec![a];
        let fine = build_strategy_mask(MaskStrategy::FineGrained, &seg, &all, &high, (20, 20));
        let hr = build_strategy_mask(MaskStrategy::HighRisk, &seg, &all, &high, (20, 20));
        let obj = build_strategy_mask(MaskStrategy::Object, &seg, &all, &high, (20, 20));
        assert_eq!((fine.popcount(), hr.popcount(), obj.popcount()), (50, 25, 400));
        assert!(hr.is_subset_of(&fine) && fine.is_subset_of(&obj));
        let none = build_strategy_mask(MaskStrategy::HighRisk, &seg, &all, &[], (20, 20));
        assert_eq!(none.popcount(), 0);
    }
}
