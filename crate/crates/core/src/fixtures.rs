//! Synthetic image corpus with matching mock-agent responses.
//!
//! Each scenario is drawn from rectangles, then every agent call the pipeline
//! will make on it is replayed here with the same geometry functions so the
//! fixture keys (hashes of the exact images each agent sees) line up.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::{fixture_key, AgentError, AgentsConfig, MockBackend, RawResponse, Region, Role, TextDetection, TextSource};
use crate::metrics::Question;
use crate::geometry::{
    bbox_to_polygon, crop, forward_map_point, rasterize, rotate_with_spec, save_image, whiteout_outside_mask, BBox,
    BinaryMask, GeometryError, Point, Polygon, RotationSpec, WHITE,
};
use crate::pipeline::{estimate_skew, PipelineConfig, FRAME_ORIENTED};
use crate::risk::toy_ecosystem_records;
use crate::taxonomy::CategoryTable;

/// Threshold used by the corpus: between the toy-graph scores of
/// "bank card expiration date" (about 0.0124) and "credit card number"
/// (about 0.0146).
pub const FIXTURE_TAU: f64 = 0.0135;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture io: {0}")]
    Io(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("fixture `{scenario}`: {message}")]
    Inconsistent { scenario: String, message: String },
}

fn io<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> FixtureError + '_ {
    move |e| FixtureError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone)]
enum Segment {
    Full,
    Mask(BinaryMask),
    /// The segmenter returns nothing; the pipeline falls back to a full mask.
    Empty,
}

#[derive(Debug, Clone)]
enum Judge {
    /// 0.9 for this angle, 0.1 for the rest.
    Upright(f64),
    /// Same answer for every angle.
    Uniform(f64),
}

#[derive(Debug, Clone)]
struct Word {
    text: &'static str,
    /// Box in the oriented frame (after the orientation search).
    bbox: BBox,
    label: &'static str,
    ocr: bool,
    vlm: bool,
    /// OCR polygon is the box grown by this many pixels.
    pad: u32,
}

#[derive(Debug, Clone)]
struct Scenario {
    name: &'static str,
    category: &'static str,
    image: RgbImage,
    detection: Option<BBox>,
    segment: Segment,
    judge: Judge,
    /// Rotation that takes the oriented frame to the stored crop, used to map
    /// word boxes onto skewed OCR polygons.
    skew: Option<RotationSpec>,
    words: Vec<Word>,
    /// The oriented image the design assumes, checked against the real one.
    expect_oriented: Option<RgbImage>,
}

fn word(text: &'static str, b: [u32; 4], label: &'static str) -> Word {
    Word {
        text,
        bbox: BBox::new(b[0], b[1], b[2], b[3]).expect("valid fixture box"),
        label,
        ocr: true,
        vlm: true,
        pad: 1,
    }
}

fn ocr_only(mut w: Word) -> Word {
    w.vlm = false;
    w
}

fn exact(mut w: Word) -> Word {
    w.pad = 0;
    w
}

fn fill(img: &mut RgbImage, b: [u32; 4], color: Rgb<u8>) {
    for y in b[1]..=b[3].min(img.height() - 1) {
        for x in b[0]..=b[2].min(img.width() - 1) {
            img.put_pixel(x, y, color);
        }
    }
}

/// Glyph-like bars inside the box, one per character cell.
fn draw_word(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    if b.height() < 3 || b.width() < 3 {
        fill(img, [b.x_top, b.y_top, b.x_bottom, b.y_bottom], color);
        return;
    }
    let mut x = b.x_top + 1;
    while x + 3 < b.x_bottom {
        fill(img, [x, b.y_top + 1, x + 3, b.y_bottom - 1], color);
        x += 6;
    }
}

fn paste(dst: &mut RgbImage, src: &RgbImage, x0: u32, y0: u32) {
    for (x, y, p) in src.enumerate_pixels() {
        dst.put_pixel(x0 + x, y0 + y, *p);
    }
}

fn credit_card() -> Scenario {
    let mut img = RgbImage::from_pixel(320, 200, Rgb([200, 200, 200]));
    let card = [40, 30, 279, 179];
    let outline = Polygon::from_pairs(&[
        [6.0, 0.0],
        [233.0, 0.0],
        [239.0, 6.0],
        [239.0, 143.0],
        [233.0, 149.0],
        [6.0, 149.0],
        [0.0, 143.0],
        [0.0, 6.0],
    ])
    .expect("octagon");
    let mask = rasterize(&[outline], 240, 150);
    for y in 0..150 {
        for x in 0..240 {
            if mask.get(x, y) {
                img.put_pixel(card[0] + x, card[1] + y, Rgb([30, 80, 160]));
            }
        }
    }
    let words = vec![
        word("VISA", [185, 12, 225, 26], "other"),
        word("4111 1111 1111 1111", [20, 70, 200, 84], "Credit card number"),
        word("JANE Q DOE", [20, 110, 110, 122], "Name."),
        ocr_only(word("12/29", [150, 110, 190, 122], "bank card expiration date")),
    ];
    for w in &words {
        let b = w.bbox;
        draw_word(&mut img, &BBox::new(b.x_top + card[0], b.y_top + card[1], b.x_bottom + card[0], b.y_bottom + card[1]).unwrap(), Rgb([240, 240, 240]));
    }
    Scenario {
        name: "credit_card",
        category: "credit or debit card",
        image: img,
        detection: Some(BBox::new(card[0], card[1], card[2], card[3]).unwrap()),
        segment: Segment::Mask(mask),
        judge: Judge::Upright(0.0),
        skew: None,
        words,
        expect_oriented: None,
    }
}

fn letter() -> Scenario {
    let mut page = RgbImage::from_pixel(100, 140, WHITE);
    let words = vec![
        word("JOHN SMITH", [10, 10, 60, 18], "name"),
        word("42 ELM STREET", [10, 22, 75, 30], "address"),
        ocr_only(word("SPRINGFIELD", [10, 34, 65, 42], "Address")),
        ocr_only(word("555 0100", [10, 46, 50, 54], "phone number")),
        ocr_only(word("DEAR FRIEND", [10, 70, 90, 76], "other")),
        ocr_only(word("THANK YOU", [10, 82, 90, 88], "other")),
        word("J SMITH", [50, 120, 90, 130], "signature"),
    ];
    for w in &words {
        draw_word(&mut page, &w.bbox, Rgb([20, 20, 20]));
    }
    // stored a quarter turn away from upright
    let (stored, _) = rotate_with_spec(&page, 270.0);
    let mut img = RgbImage::from_pixel(260, 220, Rgb([120, 140, 110]));
    paste(&mut img, &stored, 60, 50);
    let (w, h) = stored.dimensions();
    Scenario {
        name: "letter",
        category: "letter with address",
        image: img,
        detection: Some(BBox::new(60, 50, 60 + w - 1, 50 + h - 1).unwrap()),
        segment: Segment::Full,
        judge: Judge::Upright(90.0),
        skew: None,
        words,
        expect_oriented: Some(page),
    }
}

fn pregnancy_box() -> Scenario {
    let mut img = RgbImage::from_pixel(200, 160, Rgb([230, 230, 230]));
    let body = [50, 30, 149, 129];
    fill(&mut img, body, Rgb([220, 120, 160]));
    let words = vec![
        word("PREGNANCY TEST", [10, 20, 90, 32], "other"),
        word("RESULTS IN 3 MIN", [10, 60, 90, 70], "other"),
    ];
    for w in &words {
        let b = w.bbox;
        draw_word(&mut img, &BBox::new(b.x_top + 50, b.y_top + 30, b.x_bottom + 50, b.y_bottom + 30).unwrap(), WHITE);
    }
    Scenario {
        name: "pregnancy_box",
        category: "pregnancy test box",
        image: img,
        detection: Some(BBox::new(body[0], body[1], body[2], body[3]).unwrap()),
        segment: Segment::Full,
        judge: Judge::Upright(0.0),
        skew: None,
        words,
        expect_oriented: None,
    }
}

/// Prescription tilted by 10 degrees, no detection: exercises the
/// whole-image path, the empty-segment fallback and skew correction.
fn skewed_prescription() -> Scenario {
    let mut page = RgbImage::from_pixel(200, 120, WHITE);
    let words = vec![
        word("DR A LEE", [15, 15, 80, 25], "name"),
        word("PATIENT MARY ROE", [15, 40, 130, 50], "name"),
        word("AMOXICILLIN 500MG", [15, 60, 140, 70], "medication prescribed"),
        word("TAKE TWICE DAILY", [15, 80, 120, 90], "other"),
    ];
    for w in &words {
        draw_word(&mut page, &w.bbox, Rgb([30, 30, 90]));
    }
    let (img, spec) = rotate_with_spec(&page, 10.0);
    Scenario {
        name: "skewed_prescription",
        category: "doctor prescription",
        image: img,
        detection: None,
        segment: Segment::Empty,
        judge: Judge::Upright(0.0),
        skew: Some(spec),
        words,
        expect_oriented: None,
    }
}

fn blank() -> Scenario {
    Scenario {
        name: "blank",
        category: "local newspaper",
        image: RgbImage::from_pixel(120, 80, WHITE),
        detection: None,
        segment: Segment::Empty,
        judge: Judge::Uniform(0.5),
        skew: None,
        words: Vec::new(),
        expect_oriented: None,
    }
}

/// 100x100 images with exact areas: `a` masks 50% / 25% / 20% (object /
/// fine / high-risk) and `b` 30% / 14% / 8%, so the means are 40% and 14%.
fn delta(name: &'static str, object: [u32; 4], words: Vec<Word>) -> Scenario {
    let mut img = RgbImage::from_pixel(100, 100, Rgb([250, 250, 240]));
    fill(&mut img, object, Rgb([90, 150, 90]));
    for w in &words {
        draw_word(&mut img, &w.bbox, Rgb([10, 10, 10]));
    }
    Scenario {
        name,
        category: "credit or debit card",
        image: img,
        detection: Some(BBox::new(object[0], object[1], object[2], object[3]).unwrap()),
        segment: Segment::Full,
        judge: Judge::Upright(0.0),
        skew: None,
        words,
        expect_oriented: None,
    }
}

fn delta_a() -> Scenario {
    delta(
        "delta_a",
        [0, 0, 49, 99],
        vec![
            ocr_only(exact(word("JANE DOE", [0, 0, 49, 39], "name"))),
            ocr_only(exact(word("VALID THRU", [0, 50, 49, 59], "other"))),
        ],
    )
}

fn delta_b() -> Scenario {
    delta(
        "delta_b",
        [0, 0, 99, 29],
        vec![
            ocr_only(exact(word("JOHN DOE", [0, 0, 79, 9], "name"))),
            ocr_only(exact(word("CARDHOLDER", [0, 15, 59, 24], "other"))),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub category: String,
    pub detected: bool,
    pub theta_star: f64,
    pub skewed: bool,
    /// Texts expected to be flagged high-risk at [`FIXTURE_TAU`].
    pub high_risk_texts: Vec<String>,
    pub ocr_count: usize,
    pub vlm_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub images: BTreeMap<String, Expectation>,
    pub compare_images: BTreeMap<String, Expectation>,
    pub fixture_files: usize,
}

struct Writer<'a> {
    agents_dir: &'a Path,
    angles: &'a [f64],
    tolerance: f64,
    written: HashMap<(Role, String), RawResponse>,
    scenario: &'static str,
}

impl Writer<'_> {
    fn put(&mut self, role: Role, image: &RgbImage, extra: &str, resp: RawResponse) -> Result<(), FixtureError> {
        let key = fixture_key(image, extra);
        if let Some(prev) = self.written.get(&(role, key.clone())) {
            if *prev != resp {
                return Err(FixtureError::Inconsistent {
                    scenario: self.scenario.into(),
                    message: format!("two different {role} answers for the same input"),
                });
            }
            return Ok(());
        }
        MockBackend::write_fixture(self.agents_dir, role, image, extra, &resp).map_err(io(self.agents_dir))?;
        self.written.insert((role, key), resp);
        Ok(())
    }

    fn scenario(&mut self, s: &Scenario, image_dir: &Path, high_risk_labels: &[&str]) -> Result<Expectation, FixtureError> {
        self.scenario = s.name;
        let path = image_dir.join(format!("{}.png", s.name));
        save_image(&s.image, &path)?;

        // detector
        let det = match s.detection {
            Some(b) => RawResponse::text(format!(
                "```json\n[{{\"bbox_2d\": [{}, {}, {}, {}], \"label\": \"{}\"}}]\n```",
                b.x_top, b.y_top, b.x_bottom, b.y_bottom, s.category
            )),
            None => RawResponse::text("no objects found"),
        };
        self.put(Role::Detector, &s.image, s.category, det)?;
        let cropped = match s.detection {
            Some(b) => crop(&s.image, &b)?.image,
            None => s.image.clone(),
        };
        let (cw, ch) = cropped.dimensions();

        // segmenter
        let (payload, mask) = match &s.segment {
            Segment::Full => {
                let m = BinaryMask::filled(cw, ch, true);
                (json!({"width": cw, "height": ch, "counts": m.to_runs()}), m)
            }
            Segment::Mask(m) => (json!({"width": cw, "height": ch, "counts": m.to_runs()}), m.clone()),
            Segment::Empty => (json!({"polygons": []}), BinaryMask::filled(cw, ch, true)),
        };
        self.put(Role::Segmenter, &cropped, s.category, RawResponse::payload(payload))?;
        let whited = whiteout_outside_mask(&cropped, &mask)?;

        // orientation judge
        let theta_star = match s.judge {
            Judge::Upright(t) => t,
            Judge::Uniform(_) => self.angles[0],
        };
        if self.angles.len() > 1 {
            for &theta in self.angles {
                let (rot, _) = rotate_with_spec(&whited, theta);
                let p = match s.judge {
                    Judge::Upright(t) if t == theta => 0.9,
                    Judge::Upright(_) => 0.1,
                    Judge::Uniform(p) => p,
                };
                let resp = RawResponse {
                    text: if p >= 0.5 { "Yes".into() } else { "No".into() },
                    top_logprobs: Some([("Yes".to_string(), p), ("No".to_string(), 1.0 - p)].into()),
                    payload: None,
                };
                self.put(Role::Orientation, &rot, "", resp)?;
            }
        }
        let (oriented, _) = rotate_with_spec(&whited, theta_star);
        if let Some(expected) = &s.expect_oriented {
            if *expected != oriented {
                return Err(FixtureError::Inconsistent {
                    scenario: s.name.into(),
                    message: "oriented crop differs from the designed page".into(),
                });
            }
        }

        // OCR in the oriented frame
        let to_oriented = |p: Point| match &s.skew {
            Some(spec) => forward_map_point(p, spec),
            None => p,
        };
        let mut ocr_dets = Vec::new();
        for w in s.words.iter().filter(|w| w.ocr) {
            let grown = BBox::new(
                w.bbox.x_top.saturating_sub(w.pad),
                w.bbox.y_top.saturating_sub(w.pad),
                w.bbox.x_bottom + w.pad,
                w.bbox.y_bottom + w.pad,
            )?;
            let corners: Vec<Point> = bbox_to_polygon(&grown).vertices().iter().map(|&p| to_oriented(p)).collect();
            ocr_dets.push(TextDetection {
                text: w.text.into(),
                region: Region::Polygon(Polygon::new(corners)?),
                source: TextSource::Ocr,
                frame: FRAME_ORIENTED.into(),
            });
        }
        let ocr_json: Vec<Value> = ocr_dets
            .iter()
            .map(|d| json!({"text": d.text, "polygon": d.region.to_polygon().to_pairs()}))
            .collect();
        self.put(Role::Ocr, &oriented, "", RawResponse::payload(json!({ "detections": ocr_json })))?;

        // text VLM, possibly on the deskewed copy
        let phi = estimate_skew(&ocr_dets).filter(|p| p.abs() > self.tolerance);
        let (vlm_image, deskew) = match phi {
            Some(p) => {
                let (img, spec) = rotate_with_spec(&oriented, -p);
                (img, Some(spec))
            }
            None => (oriented.clone(), None),
        };
        let mut vlm_items = Vec::new();
        for w in s.words.iter().filter(|w| w.vlm) {
            let grown = BBox::new(w.bbox.x_top.saturating_sub(2), w.bbox.y_top.saturating_sub(2), w.bbox.x_bottom + 2, w.bbox.y_bottom + 2)?;
            let pts: Vec<Point> = bbox_to_polygon(&grown)
                .vertices()
                .iter()
                .map(|&p| {
                    let q = to_oriented(p);
                    match &deskew {
                        Some(spec) => forward_map_point(q, spec),
                        None => q,
                    }
                })
                .collect();
            let b = BBox::enclosing(&pts).and_then(|b| b.clamp_to(vlm_image.width(), vlm_image.height())).ok_or_else(|| {
                FixtureError::Inconsistent {
                    scenario: s.name.into(),
                    message: format!("VLM box for {:?} leaves the image", w.text),
                }
            })?;
            vlm_items.push(json!({"bbox_2d": [b.x_top, b.y_top, b.x_bottom, b.y_bottom], "text_content": w.text}));
        }
        self.put(Role::TextVlm, &vlm_image, "", RawResponse::text(Value::Array(vlm_items).to_string()))?;

        // labeler, per view
        for w in &s.words {
            let extra = format!("{}|{}", w.text, s.category);
            if w.ocr {
                self.put(Role::Labeler, &oriented, &extra, RawResponse::text(w.label))?;
            }
            if w.vlm {
                self.put(Role::Labeler, &vlm_image, &extra, RawResponse::text(w.label))?;
            }
        }

        // recognition probe on the original
        let probe = RawResponse {
            text: "Yes".into(),
            top_logprobs: Some([("Yes".to_string(), 0.8), ("No".to_string(), 0.2)].into()),
            payload: None,
        };
        self.put(Role::Probe, &s.image, s.category, probe)?;

        let normalized = |l: &str| crate::agents::normalize_label(l);
        Ok(Expectation {
            category: s.category.into(),
            detected: s.detection.is_some(),
            theta_star,
            skewed: phi.is_some(),
            high_risk_texts: s
                .words
                .iter()
                .filter(|w| high_risk_labels.contains(&normalized(w.label).as_str()))
                .map(|w| w.text.to_string())
                .collect(),
            ocr_count: s.words.iter().filter(|w| w.ocr).count(),
            vlm_count: s.words.iter().filter(|w| w.vlm).count(),
        })
    }
}

/// Sub-categories at or above [`FIXTURE_TAU`] on the toy graph (standard
/// PageRank, frequency channel), per scenario category.
fn high_risk_labels(category: &str) -> &'static [&'static str] {
    match category {
        "credit or debit card" => &["credit card number", "name"],
        "letter with address" => &["address", "name", "signature"],
        "doctor prescription" => &["name"],
        _ => &[],
    }
}

fn questions() -> Vec<Question> {
    vec![
        Question {
            category: "credit or debit card".into(),
            question: "What is the card number?".into(),
        },
        Question {
            category: "credit or debit card".into(),
            question: "When does the card expire?".into(),
        },
        Question {
            category: "letter with address".into(),
            question: "Who is the letter addressed to?".into(),
        },
    ]
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), FixtureError> {
    let text = serde_json::to_string_pretty(value).map_err(io(path))? + "\n";
    std::fs::write(path, text).map_err(io(path))
}

/// Write the whole corpus under `root`:
///
/// ```text
/// images/*.png, images/images.json      main corpus and image -> category map
/// compare_set/*.png, compare_set/images.json
/// agents/<role>/<key>.json, agents.json mock fixtures and their config
/// graph.json, categories.json          toy graph and category table
/// pipeline.json, figpriv.json          pipeline and CLI configs
/// questions.json, expected.json
/// ```
pub fn build_corpus(root: &Path) -> Result<CorpusSummary, FixtureError> {
    let images_dir = root.join("images");
    let compare_dir = root.join("compare_set");
    let agents_dir = root.join("agents");
    for d in [&images_dir, &compare_dir] {
        std::fs::create_dir_all(d).map_err(io(d))?;
    }
    if agents_dir.exists() {
        std::fs::remove_dir_all(&agents_dir).map_err(io(&agents_dir))?;
    }
    std::fs::create_dir_all(&agents_dir).map_err(io(&agents_dir))?;

    let config = PipelineConfig {
        tau: Some(FIXTURE_TAU),
        ..PipelineConfig::default()
    };
    let mut writer = Writer {
        agents_dir: &agents_dir,
        angles: &config.candidate_angles,
        tolerance: config.phi_tolerance_deg,
        written: HashMap::new(),
        scenario: "",
    };
    let mut summary = CorpusSummary::default();
    for s in [credit_card(), letter(), pregnancy_box(), skewed_prescription(), blank()] {
        let e = writer.scenario(&s, &images_dir, high_risk_labels(s.category))?;
        summary.images.insert(format!("{}.png", s.name), e);
    }
    for s in [delta_a(), delta_b()] {
        let e = writer.scenario(&s, &compare_dir, high_risk_labels(s.category))?;
        summary.compare_images.insert(format!("{}.png", s.name), e);
    }

    // answerability fixtures on the originals
    let qs = questions();
    for s in [credit_card(), letter()] {
        writer.scenario = s.name;
        for q in qs.iter().filter(|q| q.category == s.category) {
            let p = if q.question.contains("expire") { 0.4 } else { 0.7 };
            let resp = RawResponse {
                text: if p >= 0.5 { "Yes".into() } else { "No".into() },
                top_logprobs: Some([("Yes".to_string(), p), ("No".to_string(), 1.0 - p)].into()),
                payload: None,
            };
            writer.put(Role::AnswerProbe, &s.image, &q.question, resp)?;
        }
    }
    summary.fixture_files = writer.written.len();

    let map = |m: &BTreeMap<String, Expectation>| -> BTreeMap<String, String> {
        m.iter().map(|(k, v)| (k.clone(), v.category.clone())).collect()
    };
    write_json(&images_dir.join("images.json"), &map(&summary.images))?;
    write_json(&compare_dir.join("images.json"), &map(&summary.compare_images))?;
    write_json(&root.join("agents.json"), &AgentsConfig::mock("agents"))?;
    write_json(&root.join("graph.json"), &toy_ecosystem_records())?;
    std::fs::write(root.join("categories.json"), CategoryTable::bundled().to_json()).map_err(io(root))?;
    write_json(&root.join("pipeline.json"), &config)?;
    write_json(
        &root.join("figpriv.json"),
        &json!({
            "graph": "graph.json",
            "categories": "categories.json",
            "agents": "agents.json",
            "tau": FIXTURE_TAU,
            "algorithm": "pagerank_standard",
            "channel": "frequency",
        }),
    )?;
    write_json(&root.join("questions.json"), &qs)?;
    write_json(&root.join("expected.json"), &summary)?;
    Ok(summary)
}

/// Paths of the corpus parts, relative to its root.
pub fn corpus_paths(root: &Path) -> BTreeMap<&'static str, PathBuf> {
    [
        ("images", root.join("images")),
        ("compare_set", root.join("compare_set")),
        ("agents", root.join("agents.json")),
        ("graph", root.join("graph.json")),
        ("categories", root.join("categories.json")),
        ("pipeline", root.join("pipeline.json")),
        ("config", root.join("figpriv.json")),
        ("questions", root.join("questions.json")),
        ("expected", root.join("expected.json")),
    ]
    .into()
}
