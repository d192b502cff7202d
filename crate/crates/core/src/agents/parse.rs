use std::collections::BTreeMap;

use serde_json::Value;

use super::DetectionResult;
use crate::geometry::{BBox, Point, Polygon};

/// Remove a surrounding markdown code fence (with or without a language tag).
pub fn strip_code_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Best-effort JSON extraction from free-form model output.
pub(crate) fn extract_json(raw: &str) -> Option<Value> {
    let t = strip_code_fences(raw);
    if t.is_empty() {
        return None;
    }
    if let Ok(v) = serde_json::from_str(t) {
        return Some(v);
    }
    for (open, close) in [('[', ']'), ('{', '}')] {
        if let (Some(s), Some(e)) = (t.find(open), t.rfind(close)) {
            if s < e {
                if let Ok(v) = serde_json::from_str(&t[s..=e]) {
                    return Some(v);
                }
            }
        }
    }
    None
}

fn as_coords(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

fn to_bbox(c: &[f64], width: u32, height: u32) -> Option<BBox> {
    if c.len() != 4 || c.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let (x0, x1) = (c[0].min(c[2]), c[0].max(c[2]));
    let (y0, y1) = (c[1].min(c[3]), c[1].max(c[3]));
    if x1 < 0.0 || y1 < 0.0 {
        return None;
    }
    let u = |v: f64| v.max(0.0).round().min(u32::MAX as f64) as u32;
    BBox::new(u(x0), u(y0), u(x1), u(y1)).ok()?.clamp_to(width, height)
}

fn label_of(obj: &serde_json::Map<String, Value>) -> String {
    ["label", "text_content", "text"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .unwrap_or_default()
        .to_string()
}

/// Boxes from a detector or text-VLM reply. Accepts a fenced or bare JSON
/// array of objects, or a single object, with the box under `bbox_2d` or
/// `bbox` as `[x1, y1, x2, y2]`. Boxes are clamped to the image; anything
/// unparseable yields an empty list.
pub fn parse_bbox_json(raw: &str, width: u32, height: u32) -> Vec<DetectionResult> {
    let Some(value) = extract_json(raw) else {
        return Vec::new();
    };
    let items: Vec<&Value> = match &value {
        Value::Array(a) => a.iter().collect(),
        v @ Value::Object(_) => vec![v],
        _ => Vec::new(),
    };
    items
        .into_iter()
        .filter_map(|item| {
            let obj = item.as_object()?;
            let coords = obj.get("bbox_2d").or_else(|| obj.get("bbox")).and_then(as_coords)?;
            let bbox = to_bbox(&coords, width, height)?;
            Some(DetectionResult {
                bbox,
                label: label_of(obj),
                raw: item.to_string(),
            })
        })
        .collect()
}

fn first_word(text: &str) -> String {
    normalize_label(text)
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())
        .unwrap_or_default()
        .to_string()
}

/// yes → 1, no → 0, anything else → 0.5 with a warning.
pub fn yes_no_probability(text: &str) -> (f64, Option<String>) {
    match first_word(text).as_str() {
        "yes" => (1.0, None),
        "no" => (0.0, None),
        _ => (0.5, Some(format!("unclear yes/no answer {:?}; using 0.5", text.trim()))),
    }
}

/// `P(yes) / (P(yes) + P(no))` from answer-token probabilities. Tokens are
/// normalized (" Yes", "yes." count as yes). `None` when neither appears.
pub fn probability_from_logprobs(tokens: &BTreeMap<String, f64>) -> Option<f64> {
    let (mut yes, mut no) = (0.0, 0.0);
    for (tok, &p) in tokens {
        match first_word(tok).as_str() {
            "yes" => yes += p,
            "no" => no += p,
            _ => {}
        }
    }
    (yes + no > 0.0).then(|| yes / (yes + no))
}

/// Lowercase, trim surrounding quotes and punctuation, collapse whitespace.
pub fn normalize_label(raw: &str) -> String {
    let trimmed = raw.trim().trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '.' | ',' | '!' | ':' | ';' | '"' | '\'' | '`' | '*')
    });
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Segmenter output before it is checked against the crop size.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskPayload {
    Empty,
    Runs { width: u32, height: u32, counts: Vec<u64> },
    Polygons(Vec<Polygon>),
}

fn polygon_from(v: &Value) -> Option<Polygon> {
    let pts: Option<Vec<Point>> = v
        .as_array()?
        .iter()
        .map(|p| as_coords(p).filter(|c| c.len() == 2).map(|c| Point::new(c[0], c[1])))
        .collect();
    Polygon::new(pts?).ok()
}

/// Accepts `{"width", "height", "counts"}` (run lengths, zeros first),
/// `{"polygons": [...]}`, or a bare polygon list. Null or empty is `Empty`.
pub fn parse_mask_payload(v: &Value) -> Result<MaskPayload, String> {
    match v {
        Value::Null => Ok(MaskPayload::Empty),
        Value::Array(a) if a.is_empty() => Ok(MaskPayload::Empty),
        Value::Array(_) => parse_mask_payload(&serde_json::json!({ "polygons": v })),
        Value::Object(obj) => {
            if let Some(counts) = obj.get("counts") {
                let dim = |k: &str| {
                    obj.get(k)
                        .and_then(Value::as_u64)
                        .map(|d| d as u32)
                        .ok_or_else(|| format!("mask payload missing {k}"))
                };
                let counts: Vec<u64> = counts
                    .as_array()
                    .ok_or("counts must be an array")?
                    .iter()
                    .map(|c| c.as_u64().ok_or("counts must be non-negative integers"))
                    .collect::<Result<_, _>>()?;
                return Ok(MaskPayload::Runs {
                    width: dim("width")?,
                    height: dim("height")?,
                    counts,
                });
            }
            if let Some(polys) = obj.get("polygons") {
                let list = polys.as_array().ok_or("polygons must be an array")?;
                if list.is_empty() {
                    return Ok(MaskPayload::Empty);
                }
                let parsed: Option<Vec<Polygon>> = list.iter().map(polygon_from).collect();
                return parsed
                    .map(MaskPayload::Polygons)
                    .ok_or_else(|| "mask polygon with fewer than 3 valid points".to_string());
            }
            if obj.is_empty() {
                return Ok(MaskPayload::Empty);
            }
            Err("unrecognized mask payload".into())
        }
        _ => Err("unrecognized mask payload".into()),
    }
}

/// OCR detections as `(text, polygon)`. Accepts a list, or `{"detections": [...]}`,
/// where each item is `{"text", "polygon"|"points"}` or the `[points, [text, score]]`
/// pair layout. Items without a valid polygon are dropped with a warning.
pub fn parse_ocr_payload(v: &Value) -> (Vec<(String, Polygon)>, Vec<String>) {
    let empty = Vec::new();
    let items = match v {
        Value::Array(a) => a,
        Value::Object(o) => o.get("detections").and_then(Value::as_array).unwrap_or(&empty),
        _ => &empty,
    };
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for item in items {
        let (text, points) = match item {
            Value::Object(o) => (
                o.get("text").and_then(Value::as_str).unwrap_or_default().to_string(),
                o.get("polygon").or_else(|| o.get("points")),
            ),
            Value::Array(pair) if pair.len() == 2 => {
                let text = match &pair[1] {
                    Value::String(s) => s.clone(),
                    Value::Array(t) => t.first().and_then(Value::as_str).unwrap_or_default().to_string(),
                    _ => String::new(),
                };
                (text, Some(&pair[0]))
            }
            _ => (String::new(), None),
        };
        match points.and_then(polygon_from) {
            Some(p) => out.push((text, p)),
            None => warnings.push(format!("ocr: dropped malformed polygon for {text:?}")),
        }
    }
    (out, warnings)
}
