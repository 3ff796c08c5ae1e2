//! Documents shaped like the detector, OCR and open-set exporters' output.

use infuse_core::infusion::{build_ocr_sentence, build_od_sentence};
use infuse_core::ingest::{
    detection_file_to_json, load_documents, ocr_file_to_json, parse_detection_file, parse_detection_file_with_warnings,
    parse_ocr_file, parse_ocr_file_with_warnings, parse_openset_file_with_warnings,
};
use infuse_core::openset::{build_openset_prompt, openset_to_detections, TargetList};
use infuse_core::{Region, Thresholds, Tokenizer};

const DETECTIONS: &str = r#"{"image_id": "000001", "image_w": 640, "image_h": 480, "detections": [
  {"label": "person", "box": [128.0, 19.2, 192.0, 96.0], "box_format": "xyxy_px", "confidence": 0.91},
  {"label": "cake", "box": [0.42, 0.32, 0.2, 0.1], "box_format": "cxcywh_norm", "confidence": 0.88},
  {"label": "person", "box": [0.11, 0.43, 0.1, 0.3], "box_format": "cxcywh_norm", "confidence": 0.76},
  {"label": "cup", "box": [0.9, 0.9, 0.05, 0.05], "box_format": "cxcywh_norm", "confidence": 0.12}
]}"#;

const OCR: &str = r#"{"image_id": "000001", "spans": [
  {"text": "Birthday", "region": [[0.31, 0.82], [0.51, 0.82], [0.51, 0.88], [0.31, 0.88]], "confidence": 0.97},
  {"text": "YEARS", "region": [0.11, 0.34, 0.1, 0.04], "confidence": 0.81},
  {"text": "blur", "region": [[0.5, 0.5], [0.6, 0.5], [0.6, 0.6]], "confidence": 0.4}
]}"#;

const OPENSET: &str = r#"{"image_id": "000001", "query": "red backpack . bench .", "image_w": 100, "image_h": 100, "matches": [
  {"phrase": "red backpack", "box": [10, 10, 30, 50], "box_format": "xyxy_px", "box_score": 0.62, "text_score": 0.4},
  {"phrase": "bench", "box": [0.5, 0.8, 0.4, 0.2], "box_format": "cxcywh_norm", "box_score": 0.3, "text_score": 0.9}
]}"#;

#[test]
fn exporter_documents_parse_without_warnings() {
    let (det, w1) = parse_detection_file_with_warnings(DETECTIONS.as_bytes()).unwrap();
    let (ocr, w2) = parse_ocr_file_with_warnings(OCR.as_bytes()).unwrap();
    let (open, w3) = parse_openset_file_with_warnings(OPENSET.as_bytes()).unwrap();
    assert!(w1.is_empty() && w2.is_empty() && w3.is_empty());
    assert_eq!(det.detections.len(), 4);
    assert_eq!(ocr.spans.len(), 3);
    assert!(matches!(ocr.spans[1].region, Region::Box(_)));
    assert_eq!(open.matches.len(), 2);

    let t = Thresholds::default();
    let od = build_od_sentence(&det.detections, &t, &Tokenizer::Approx);
    assert_eq!(
        od.sentence,
        "Here are the central coordinates of certain objects in this image: 2 people:{[0.25, 0.12], [0.11, 0.43]}, 1 cake:{[0.42, 0.32]}."
    );
    let text = build_ocr_sentence(&ocr.spans, &t, &Tokenizer::Approx);
    assert_eq!(
        text.sentence,
        "Here are the central coordinates of certain texts in this image: 'Birthday'[0.41, 0.85], 'YEARS'[0.11, 0.34]."
    );

    let targets = TargetList::new(vec!["red backpack".into(), "bench".into()]).unwrap();
    let query = build_openset_prompt(&targets, &t).unwrap();
    assert_eq!(query.prompt, open.query);
    let kept = openset_to_detections(&open.matches, &query);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].label, "red backpack");
    assert_eq!(kept[0].center(), (0.2, 0.3));
}

#[test]
fn unknown_fields_are_warnings_not_errors() {
    let doc = r#"{"image_id": "a", "adapter": "yolo", "detections": [{"label": "x", "box": [0.5, 0.5, 0.1, 0.1], "box_format": "cxcywh_norm", "confidence": 0.5, "class_id": 3}]}"#;
    let (_, warnings) = parse_detection_file_with_warnings(doc.as_bytes()).unwrap();
    assert_eq!(warnings.len(), 2);
    assert!(warnings.iter().any(|w| w.contains("class_id") && w.contains("detections[0]")));
}

#[test]
fn canonical_round_trip_is_lossless_at_six_decimals() {
    let det = parse_detection_file(DETECTIONS.as_bytes()).unwrap();
    let again = parse_detection_file(detection_file_to_json(&det).as_bytes()).unwrap();
    for (a, b) in det.detections.iter().zip(&again.detections) {
        for (x, y) in a.bbox.to_array().iter().zip(b.bbox.to_array()) {
            assert!((x - y).abs() < 5e-7);
        }
    }
    let ocr = parse_ocr_file(OCR.as_bytes()).unwrap();
    assert_eq!(parse_ocr_file(ocr_file_to_json(&ocr).as_bytes()).unwrap(), ocr);
}

#[test]
fn directory_of_per_image_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.json"), DETECTIONS.replace("000001", "000002")).unwrap();
    std::fs::write(dir.path().join("a.json"), DETECTIONS).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let docs = load_documents(dir.path(), parse_detection_file).unwrap();
    let ids: Vec<_> = docs.iter().map(|d| d.image_id.as_str()).collect();
    assert_eq!(ids, ["000001", "000002"]);
}

#[test]
fn bad_values_name_their_field() {
    let doc = DETECTIONS.replace("0.76", "1.5");
    let err = parse_detection_file(doc.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("detections[2].confidence"), "{err}");
    let doc = OCR.replace("\"Birthday\"", "\"  \"");
    let err = parse_ocr_file(doc.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("spans[0]"), "{err}");
}
