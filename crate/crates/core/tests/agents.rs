use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use figpriv_core::agents::{
    AgentEndpointConfig, AgentError, AgentSet, AgentsConfig, Backend, MockBackend, RawResponse, RemoteBackend, Role,
    TextSource,
};
use figpriv_core::geometry::{BBox, WHITE};
use image::{Rgb, RgbImage};
use serde_json::json;

fn page(w: u32, h: u32, seed: u8) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([seed, (x % 251) as u8, (y % 241) as u8]))
}

struct Mock {
    _dir: tempfile::TempDir,
    agents: AgentSet,
}

fn mock_with(fixtures: &[(Role, &RgbImage, &str, RawResponse)]) -> Mock {
    let dir = tempfile::tempdir().unwrap();
    for (role, img, extra, resp) in fixtures {
        MockBackend::write_fixture(dir.path(), *role, img, extra, resp).unwrap();
    }
    let agents = AgentSet::from_config(AgentsConfig::mock(dir.path())).unwrap();
    Mock { _dir: dir, agents }
}

#[test]
fn detection_fixture_round_trip_and_absence() {
    let img = page(300, 200, 1);
    let other = page(300, 200, 2);
    let m = mock_with(&[
        (
            Role::Detector,
            &img,
            "document",
            RawResponse::text(r#"[{"bbox_2d":[10,10,200,150],"label":"document"}]"#),
        ),
        (Role::Detector, &other, "document", RawResponse::text("no objects found")),
    ]);
    let found = m.agents.detect_object(&img, "document").unwrap().value.unwrap();
    assert_eq!(found.bbox, BBox::new(10, 10, 200, 150).unwrap());
    assert_eq!(found.label, "document");
    assert!(m.agents.detect_object(&other, "document").unwrap().value.is_none());
    // a different category is a different fixture key
    assert!(matches!(
        m.agents.detect_object(&img, "letter"),
        Err(AgentError::MissingFixture { .. })
    ));
}

#[test]
fn mock_calls_are_repeatable() {
    let img = page(64, 32, 3);
    let m = mock_with(&[(Role::TextVlm, &img, "", RawResponse::text(r#"[{"bbox_2d":[1,1,20,9],"text_content":"JOHN"}]"#))]);
    let a = m.agents.vlm_text(&img, "oriented").unwrap();
    let b = m.agents.vlm_text(&img, "oriented").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.value[0].source, TextSource::Vlm);
    assert_eq!(a.value[0].text, "JOHN");
}

#[test]
fn segmentation_cases() {
    let (w, h) = (40u32, 30u32);
    let full = page(w, h, 4);
    let left = page(w, h, 5);
    let wrong = page(w, h, 6);
    let empty = page(w, h, 7);
    let bits: Vec<bool> = (0..h).flat_map(|_| (0..w).map(|x| x < w / 2)).collect();
    let mask = figpriv_core::geometry::BinaryMask::from_bits(w, h, bits).unwrap();
    let m = mock_with(&[
        (Role::Segmenter, &full, "card", RawResponse::payload(json!({"width": w, "height": h, "counts": [0, w * h]}))),
        (Role::Segmenter, &left, "card", RawResponse::payload(json!({"width": w, "height": h, "counts": mask.to_runs()}))),
        (Role::Segmenter, &wrong, "card", RawResponse::payload(json!({"width": h, "height": w, "counts": [0, w * h]}))),
        (Role::Segmenter, &empty, "card", RawResponse::payload(json!({"polygons": []}))),
    ]);
    assert_eq!(m.agents.segment_object(&full, "card").unwrap().value.popcount(), (w * h) as usize);
    assert_eq!(m.agents.segment_object(&left, "card").unwrap().value.popcount(), (w / 2 * h) as usize);
    assert!(m.agents.segment_object(&wrong, "card").is_err());
    let fallback = m.agents.segment_object(&empty, "card").unwrap();
    assert_eq!(fallback.value.popcount(), (w * h) as usize);
    assert_eq!(fallback.warnings.len(), 1);
}

#[test]
fn orientation_probabilities() {
    let up = page(50, 20, 8);
    let down = image::imageops::rotate180(&up);
    let textual = page(50, 20, 9);
    let unsure = page(50, 20, 10);
    let lp = |y: f64, n: f64| RawResponse {
        text: String::new(),
        top_logprobs: Some([("yes".to_string(), y), ("no".to_string(), n)].into()),
        payload: None,
    };
    let m = mock_with(&[
        (Role::Orientation, &up, "", lp(0.9, 0.1)),
        (Role::Orientation, &down, "", lp(0.1, 0.9)),
        (Role::Orientation, &textual, "", RawResponse::text("Yes.")),
        (Role::Orientation, &unsure, "", RawResponse::text("maybe")),
    ]);
    assert!((m.agents.judge_orientation(&up).unwrap().value - 0.9).abs() < 1e-12);
    assert!((m.agents.judge_orientation(&down).unwrap().value - 0.1).abs() < 1e-12);
    let yes = m.agents.judge_orientation(&textual).unwrap();
    assert_eq!(yes.value, 1.0);
    assert_eq!(yes.warnings.len(), 1); // logprob mode, no token likelihoods
    let maybe = m.agents.judge_orientation(&unsure).unwrap();
    assert_eq!(maybe.value, 0.5);
    assert!(maybe.warnings.iter().any(|w| w.contains("unclear")));
}

#[test]
fn ocr_cases() {
    let blank = RgbImage::from_pixel(80, 40, WHITE);
    let mut words = blank.clone();
    let glyphs = [BBox::new(5, 10, 30, 20).unwrap(), BBox::new(40, 10, 70, 20).unwrap()];
    for g in &glyphs {
        for y in g.y_top..=g.y_bottom {
            for x in g.x_top..=g.x_bottom {
                words.put_pixel(x, y, Rgb([0, 0, 0]));
            }
        }
    }
    let mut malformed = words.clone();
    malformed.put_pixel(0, 0, Rgb([1, 1, 1]));
    let poly = |b: &BBox| {
        json!([[b.x_top - 1, b.y_top - 1], [b.x_bottom + 1, b.y_top - 1], [b.x_bottom + 1, b.y_bottom + 1], [b.x_top - 1, b.y_bottom + 1]])
    };
    let m = mock_with(&[
        (Role::Ocr, &blank, "", RawResponse::payload(json!({"detections": []}))),
        (
            Role::Ocr,
            &words,
            "",
            RawResponse::payload(json!({"detections": [
                {"text": "JANE", "polygon": poly(&glyphs[0])},
                {"text": "DOE", "polygon": poly(&glyphs[1])}
            ]})),
        ),
        (
            Role::Ocr,
            &malformed,
            "",
            RawResponse::payload(json!({"detections": [{"text": "JANE", "polygon": [[0, 0], [3, 3]]}]})),
        ),
    ]);
    assert!(m.agents.ocr_text(&blank, "oriented").unwrap().value.is_empty());
    let found = m.agents.ocr_text(&words, "oriented").unwrap().value;
    assert_eq!(found.len(), 2);
    for (det, g) in found.iter().zip(&glyphs) {
        let raster = figpriv_core::geometry::rasterize(&[det.region.to_polygon()], 80, 40);
        for y in g.y_top..=g.y_bottom {
            for x in g.x_top..=g.x_bottom {
                assert!(raster.get(x, y));
            }
        }
    }
    let dropped = m.agents.ocr_text(&malformed, "oriented").unwrap();
    assert!(dropped.value.is_empty());
    assert_eq!(dropped.warnings.len(), 1);
}

#[test]
fn labeling_cases() {
    let img = page(30, 30, 11);
    let allowed: Vec<String> = ["credit card number", "name", "other"].iter().map(|s| s.to_string()).collect();
    let cat = "credit or debit card";
    let m = mock_with(&[
        (Role::Labeler, &img, &format!("4111 1111 1111 1111|{cat}"), RawResponse::text("Credit card number")),
        (Role::Labeler, &img, &format!("VISA|{cat}"), RawResponse::text("brand logo")),
        (Role::Labeler, &img, &format!("JANE DOE|{cat}"), RawResponse::text("Name.")),
    ]);
    let l = m.agents.classify_text(&img, "4111 1111 1111 1111", cat, &allowed).unwrap();
    assert_eq!(l.value.sub_category, "credit card number");
    let l = m.agents.classify_text(&img, "VISA", cat, &allowed).unwrap();
    assert_eq!(l.value.sub_category, "other");
    assert_eq!(l.warnings.len(), 1);
    let l = m.agents.classify_text(&img, "JANE DOE", cat, &allowed).unwrap();
    assert_eq!(l.value.sub_category, "name");
    assert!(m.agents.classify_text(&img, "JANE DOE", cat, &[]).is_err());
}

#[test]
fn agent_set_is_shareable_across_threads() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<AgentSet>();
    assert_send_sync::<RemoteBackend>();
}

/// Minimal HTTP/1.1 responder: `respond(n)` gives the status and body for
/// the n-th connection (0-based), or `None` to hang until the client gives up.
fn serve(respond: impl Fn(usize) -> Option<(u16, String)> + Send + Sync + 'static) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let respond = Arc::new(respond);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let respond = respond.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                match respond(n) {
                    Some((status, text)) => {
                        let _ = write!(
                            stream,
                            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                            text.len()
                        );
                    }
                    None => std::thread::sleep(Duration::from_secs(5)),
                }
            });
        }
    });
    (format!("http://{addr}"), hits)
}

fn remote(url: &str, timeout: f64) -> RemoteBackend {
    let mut c = AgentEndpointConfig::new(url);
    c.timeout_secs = timeout;
    c.max_retries = 2;
    RemoteBackend::new(Role::Orientation, c).unwrap().with_backoff_base(Duration::from_millis(10))
}

fn request_on(img: &RgbImage) -> figpriv_core::agents::AgentRequest<'_> {
    figpriv_core::agents::AgentRequest {
        prompt: "Is the text readable?",
        image: img,
        extra: "",
    }
}

#[test]
fn timeouts_exhaust_all_attempts() {
    let (url, hits) = serve(|_| None);
    let img = page(8, 8, 12);
    let err = remote(&url, 0.3).complete(Role::Orientation, &request_on(&img)).unwrap_err();
    match err {
        AgentError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn server_errors_are_retried_until_success() {
    let ok = json!({"choices": [{"message": {"content": "yes"}}]}).to_string();
    let (url, hits) = serve(move |n| if n < 2 { Some((503, "{}".into())) } else { Some((200, ok.clone())) });
    let img = page(8, 8, 13);
    let raw = remote(&url, 5.0).complete(Role::Orientation, &request_on(&img)).unwrap();
    assert_eq!(raw.text, "yes");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = serve(|_| Some((401, "{}".into())));
    let img = page(8, 8, 14);
    let err = remote(&url, 5.0).complete(Role::Orientation, &request_on(&img)).unwrap_err();
    assert!(err.is_transport());
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
