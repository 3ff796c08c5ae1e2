//! Detector, OCR and open-set result files.
//!
//! Each file describes one image. A corpus can also be a newline-delimited
//! stream with one such document per line. Unknown fields are accepted and
//! reported as warnings so newer adapters keep working.
//!
//! ```json
//! {"image_id": "000001", "image_w": 640, "image_h": 480,
//!  "detections": [{"label": "cake", "box": [0.42, 0.32, 0.1, 0.1],
//!                  "box_format": "cxcywh_norm", "confidence": 0.9}]}
//! {"image_id": "000001",
//!  "spans": [{"text": "Birthday", "region": [[0.3, 0.8], [0.5, 0.8], [0.5, 0.9]], "confidence": 0.95}]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{to_norm_box, validate_score, Detection, NormBox, OcrSpan, Region};
use crate::openset::{OpensetFile, OpensetMatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFormat {
    CxcywhNorm,
    XyxyPx,
}

/// Detections for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub image_id: String,
    pub image_w: Option<u32>,
    pub image_h: Option<u32>,
    pub detections: Vec<Detection>,
}

/// OCR spans for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrFile {
    pub image_id: String,
    pub spans: Vec<OcrSpan>,
}

type Extra = BTreeMap<String, Value>;

#[derive(Serialize, Deserialize)]
struct RawDetectionFile {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_h: Option<u32>,
    detections: Vec<RawBoxEntry>,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Serialize, Deserialize)]
struct RawBoxEntry {
    label: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    box_format: BoxFormat,
    confidence: f64,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Serialize, Deserialize)]
struct RawOcrFile {
    image_id: String,
    spans: Vec<RawSpan>,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Serialize, Deserialize)]
struct RawSpan {
    text: String,
    region: RawRegion,
    confidence: f64,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawRegion {
    Polygon(Vec<[f64; 2]>),
    Box([f64; 4]),
}

#[derive(Deserialize)]
struct RawOpensetFile {
    image_id: String,
    #[serde(default)]
    query: String,
    #[serde(default)]
    image_w: Option<u32>,
    #[serde(default)]
    image_h: Option<u32>,
    matches: Vec<RawMatch>,
    #[serde(flatten)]
    extra: Extra,
}

#[derive(Deserialize)]
struct RawMatch {
    phrase: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    box_format: BoxFormat,
    box_score: f64,
    text_score: f64,
    #[serde(flatten)]
    extra: Extra,
}

pub(crate) fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(Error::from_json)
}

fn note_extra(warnings: &mut Vec<String>, at: &str, extra: &Extra) {
    for key in extra.keys() {
        let msg = format!("ignoring unknown field `{key}` at {at}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
}

fn check_image_id(id: &str) -> Result<()> {
    if id.trim().is_empty() {
        return Err(Error::validation("image_id", "must not be empty"));
    }
    Ok(())
}

fn at_field(field: String) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Validation { field: inner, message } => Error::Validation {
            field: format!("{field}.{inner}"),
            message,
        },
        Error::InvalidGeometry(message) => Error::Validation {
            field: field.clone(),
            message,
        },
        other => other,
    }
}

fn to_box(bbox: [f64; 4], format: BoxFormat, size: Option<(u32, u32)>, field: &str) -> Result<NormBox> {
    let res = match format {
        BoxFormat::CxcywhNorm => NormBox::new(bbox[0], bbox[1], bbox[2], bbox[3]),
        BoxFormat::XyxyPx => {
            let (w, h) = size.ok_or_else(|| {
                Error::validation(field, "xyxy_px boxes need image_w and image_h on the document")
            })?;
            to_norm_box(bbox, f64::from(w), f64::from(h))
        }
    };
    res.map_err(at_field(field.to_string()))
}

fn image_size(w: Option<u32>, h: Option<u32>) -> Option<(u32, u32)> {
    w.zip(h)
}

/// Parses one detection document, returning it with any warnings.
pub fn parse_detection_file_with_warnings(bytes: &[u8]) -> Result<(DetectionFile, Vec<String>)> {
    let raw: RawDetectionFile = decode(bytes)?;
    let mut warnings = Vec::new();
    note_extra(&mut warnings, "document", &raw.extra);
    check_image_id(&raw.image_id)?;
    let size = image_size(raw.image_w, raw.image_h);
    let detections = raw
        .detections
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let at = format!("detections[{i}]");
            note_extra(&mut warnings, &at, &e.extra);
            let bbox = to_box(e.bbox, e.box_format, size, &format!("{at}.box"))?;
            Detection::new(e.label, bbox, e.confidence).map_err(at_field(at))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        DetectionFile {
            image_id: raw.image_id,
            image_w: raw.image_w,
            image_h: raw.image_h,
            detections,
        },
        warnings,
    ))
}

pub fn parse_detection_file(bytes: &[u8]) -> Result<DetectionFile> {
    parse_detection_file_with_warnings(bytes).map(|(f, _)| f)
}

/// Serializes in the canonical schema, boxes as `cxcywh_norm`.
pub fn detection_file_to_json(file: &DetectionFile) -> String {
    let raw = RawDetectionFile {
        image_id: file.image_id.clone(),
        image_w: file.image_w,
        image_h: file.image_h,
        detections: file
            .detections
            .iter()
            .map(|d| RawBoxEntry {
                label: d.label.clone(),
                bbox: d.bbox.to_array(),
                box_format: BoxFormat::CxcywhNorm,
                confidence: d.confidence,
                extra: Extra::new(),
            })
            .collect(),
        extra: Extra::new(),
    };
    serde_json::to_string(&raw).expect("detection file serializes")
}

pub fn parse_ocr_file_with_warnings(bytes: &[u8]) -> Result<(OcrFile, Vec<String>)> {
    let raw: RawOcrFile = decode(bytes)?;
    let mut warnings = Vec::new();
    note_extra(&mut warnings, "document", &raw.extra);
    check_image_id(&raw.image_id)?;
    let spans = raw
        .spans
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let at = format!("spans[{i}]");
            note_extra(&mut warnings, &at, &s.extra);
            let region = match s.region {
                RawRegion::Polygon(vs) => Region::polygon(vs),
                RawRegion::Box([cx, cy, w, h]) => NormBox::new(cx, cy, w, h).map(Region::Box),
            }
            .map_err(at_field(format!("{at}.region")))?;
            OcrSpan::new(s.text, region, s.confidence).map_err(at_field(at))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        OcrFile {
            image_id: raw.image_id,
            spans,
        },
        warnings,
    ))
}

pub fn parse_ocr_file(bytes: &[u8]) -> Result<OcrFile> {
    parse_ocr_file_with_warnings(bytes).map(|(f, _)| f)
}

pub fn ocr_file_to_json(file: &OcrFile) -> String {
    let raw = RawOcrFile {
        image_id: file.image_id.clone(),
        spans: file
            .spans
            .iter()
            .map(|s| RawSpan {
                text: s.text.clone(),
                region: match &s.region {
                    Region::Polygon(vs) => RawRegion::Polygon(vs.clone()),
                    Region::Box(b) => RawRegion::Box(b.to_array()),
                },
                confidence: s.confidence,
                extra: Extra::new(),
            })
            .collect(),
        extra: Extra::new(),
    };
    serde_json::to_string(&raw).expect("ocr file serializes")
}

pub fn parse_openset_file_with_warnings(bytes: &[u8]) -> Result<(OpensetFile, Vec<String>)> {
    let raw: RawOpensetFile = decode(bytes)?;
    let mut warnings = Vec::new();
    note_extra(&mut warnings, "document", &raw.extra);
    check_image_id(&raw.image_id)?;
    let size = image_size(raw.image_w, raw.image_h);
    let matches = raw
        .matches
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let at = format!("matches[{i}]");
            note_extra(&mut warnings, &at, &m.extra);
            if m.phrase.trim().is_empty() {
                return Err(Error::validation(format!("{at}.phrase"), "must not be empty"));
            }
            validate_score(&format!("{at}.box_score"), m.box_score)?;
            validate_score(&format!("{at}.text_score"), m.text_score)?;
            Ok(OpensetMatch {
                phrase: m.phrase,
                bbox: to_box(m.bbox, m.box_format, size, &format!("{at}.box"))?,
                box_score: m.box_score,
                text_score: m.text_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        OpensetFile {
            image_id: raw.image_id,
            query: raw.query,
            matches,
        },
        warnings,
    ))
}

pub fn parse_openset_file(bytes: &[u8]) -> Result<OpensetFile> {
    parse_openset_file_with_warnings(bytes).map(|(f, _)| f)
}

/// Parses a newline-delimited stream; blank lines are skipped. Parse errors
/// report the stream line number.
pub fn parse_stream<R, T, F>(reader: R, parse: F) -> impl Iterator<Item = Result<T>>
where
    R: BufRead,
    F: Fn(&[u8]) -> Result<T>,
{
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(parse(line.as_bytes()).map_err(|e| match e {
            Error::Parse {
                column, path, message, ..
            } => Error::Parse {
                line: i + 1,
                column,
                path,
                message,
            },
            Error::Validation { field, message } => Error::Validation {
                field: format!("line {}: {field}", i + 1),
                message,
            },
            other => other,
        }))
    })
}

fn is_stream(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e == "jsonl" || e == "ndjson")
}

/// Loads every document under `path`: a single `.json` file, a
/// `.jsonl`/`.ndjson` stream, or a directory of either (sorted by name).
pub fn load_documents<T, F>(path: &Path, parse: F) -> Result<Vec<T>>
where
    F: Fn(&[u8]) -> Result<T> + Copy,
{
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json") || is_stream(p))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for file in files {
        let with_path = |e: Error| match e {
            Error::Validation { field, message } => Error::Validation {
                field: format!("{}: {field}", file.display()),
                message,
            },
            Error::Parse {
                line,
                column,
                path: p,
                message,
            } => Error::Parse {
                line,
                column,
                path: p,
                message: format!("{}: {message}", file.display()),
            },
            other => other,
        };
        if is_stream(&file) {
            let reader = BufReader::new(fs::File::open(&file)?);
            for doc in parse_stream(reader, parse) {
                out.push(doc.map_err(with_path)?);
            }
        } else {
            out.push(parse(&fs::read(&file)?).map_err(with_path)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn center_form_entry() {
        let f = parse_detection_file(
            br#"{"image_id": "img1", "detections": [{"label": "cake", "box": [0.42, 0.32, 0.1, 0.1], "box_format": "cxcywh_norm", "confidence": 0.9}]}"#,
        )
        .unwrap();
        assert_eq!(f.image_id, "img1");
        assert_eq!(f.detections.len(), 1);
        assert_eq!(f.detections[0].label, "cake");
        assert_eq!(f.detections[0].center(), (0.42, 0.32));
    }

    #[test]
    fn empty_detections() {
        let f = parse_detection_file(br#"{"image_id": "x", "detections": []}"#).unwrap();
        assert!(f.detections.is_empty());
    }

    #[test]
    fn corner_form_entry() {
        let f = parse_detection_file(
            br#"{"image_id": "x", "image_w": 100, "image_h": 100, "detections": [{"label": "dog", "box": [10, 20, 30, 60], "box_format": "xyxy_px", "confidence": 0.5}]}"#,
        )
        .unwrap();
        for (got, want) in f.detections[0].bbox.to_array().iter().zip([0.2, 0.4, 0.2, 0.4]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_form_without_size_is_rejected() {
        let err = parse_detection_file(
            br#"{"image_id": "x", "detections": [{"label": "dog", "box": [10, 20, 30, 60], "box_format": "xyxy_px", "confidence": 0.5}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "detections[0].box"), "{err}");
    }

    #[test]
    fn malformed_document_reports_position() {
        let err = parse_detection_file(b"{\"image_id\": \"x\",\n \"detections\": [{\"label\": 3}]}").unwrap_err();
        match err {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 2);
                assert_eq!(path, "detections[0].label");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(parse_detection_file(b"not json"), Err(Error::Parse { .. })));
    }

    #[test]
    fn validation_names_field() {
        let err = parse_detection_file(
            br#"{"image_id": "x", "detections": [{"label": "a", "box": [0.1, 0.1, 0.1, 0.1], "box_format": "cxcywh_norm", "confidence": 0.5}, {"label": "b", "box": [0.1, 0.1, 0.1, 0.1], "box_format": "cxcywh_norm", "confidence": 1.5}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "detections[1].confidence"), "{err}");

        let err = parse_detection_file(
            br#"{"image_id": "x", "detections": [{"label": "a", "box": [1.3, 0.1, 0.1, 0.1], "box_format": "cxcywh_norm", "confidence": 0.5}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "detections[0].box"), "{err}");

        assert!(matches!(
            parse_detection_file(br#"{"image_id": " ", "detections": []}"#),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn unknown_fields_warn() {
        let (f, warnings) = parse_detection_file_with_warnings(
            br#"{"image_id": "x", "model": "dino", "detections": [{"label": "a", "box": [0.1, 0.1, 0.1, 0.1], "box_format": "cxcywh_norm", "confidence": 0.5, "class_id": 3}]}"#,
        )
        .unwrap();
        assert_eq!(f.detections.len(), 1);
        assert_eq!(warnings.len(), 2);
        assert!(warnings[1].contains("class_id"));
    }

    #[test]
    fn ocr_examples() {
        let f = parse_ocr_file(
            br#"{"image_id": "x", "spans": [{"text": "Birthday", "region": [[0.36, 0.83], [0.46, 0.83], [0.46, 0.87], [0.36, 0.87]], "confidence": 0.95}]}"#,
        )
        .unwrap();
        assert_eq!(f.spans.len(), 1);
        let (cx, cy) = f.spans[0].center();
        assert!((cx - 0.41).abs() < 1e-12 && (cy - 0.85).abs() < 1e-12);

        let f = parse_ocr_file(br#"{"image_id": "x", "spans": [{"text": "ok", "region": [0.5, 0.5, 0.2, 0.1], "confidence": 0.7}]}"#).unwrap();
        assert_eq!(f.spans[0].region, Region::Box(NormBox::new(0.5, 0.5, 0.2, 0.1).unwrap()));

        assert!(parse_ocr_file(br#"{"image_id": "x", "spans": []}"#).unwrap().spans.is_empty());

        let err = parse_ocr_file(
            br#"{"image_id": "x", "spans": [{"text": "   ", "region": [0.5, 0.5, 0.2, 0.1], "confidence": 0.7}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "spans[0].text"), "{err}");

        let err = parse_ocr_file(
            br#"{"image_id": "x", "spans": [{"text": "a", "region": [[0.1, 0.1], [0.2, 0.2]], "confidence": 0.7}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "spans[0].region"), "{err}");
    }

    #[test]
    fn ocr_text_kept_verbatim() {
        let f = parse_ocr_file(
            r#"{"image_id": "x", "spans": [{"text": " Ünïcode 'Mixed' ", "region": [0.5, 0.5, 0.2, 0.1], "confidence": 0.7}]}"#.as_bytes(),
        )
        .unwrap();
        assert_eq!(f.spans[0].text, " Ünïcode 'Mixed' ");
        let again = parse_ocr_file(ocr_file_to_json(&f).as_bytes()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn openset_document() {
        let (f, w) = parse_openset_file_with_warnings(
            br#"{"image_id": "x", "query": "cat .", "image_w": 200, "image_h": 100, "matches": [{"phrase": "Cat", "box": [0, 0, 100, 100], "box_format": "xyxy_px", "box_score": 0.4, "text_score": 0.3}]}"#,
        )
        .unwrap();
        assert!(w.is_empty());
        assert_eq!(f.matches[0].phrase, "Cat");
        assert_eq!(f.matches[0].bbox.cx, 0.25);
        assert!(parse_openset_file(
            br#"{"image_id": "x", "matches": [{"phrase": "cat", "box": [0.1, 0.1, 0.1, 0.1], "box_format": "cxcywh_norm", "box_score": 1.4, "text_score": 0.3}]}"#
        )
        .is_err());
    }

    #[test]
    fn stream_preserves_order_and_line_numbers() {
        let text = "{\"image_id\": \"a\", \"detections\": []}\n\n{\"image_id\": \"b\", \"detections\": []}\n{\"image_id\": 7}\n";
        let got: Vec<_> = parse_stream(text.as_bytes(), parse_detection_file).collect();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].as_ref().unwrap().image_id, "a");
        assert_eq!(got[1].as_ref().unwrap().image_id, "b");
        assert!(matches!(got[2], Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn load_documents_from_dir_and_stream() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.json"), r#"{"image_id": "b", "detections": []}"#).unwrap();
        fs::write(dir.path().join("a.json"), r#"{"image_id": "a", "detections": []}"#).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let docs = load_documents(dir.path(), parse_detection_file).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);

        let stream = dir.path().join("all.jsonl");
        fs::write(&stream, "{\"image_id\": \"z\", \"detections\": []}\n{\"image_id\": \"y\", \"detections\": []}\n").unwrap();
        let docs = load_documents(&stream, parse_detection_file).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.image_id.as_str()).collect();
        assert_eq!(ids, ["z", "y"]);
    }

    fn arb_detection() -> impl Strategy<Value = Detection> {
        ("[a-z]{1,8}( [a-z]{1,6})?", 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0)
            .prop_map(|(l, cx, cy, w, h, c)| Detection::new(l, NormBox::new(cx, cy, w, h).unwrap(), c).unwrap())
    }

    proptest! {
        #[test]
        fn detection_round_trip(dets in prop::collection::vec(arb_detection(), 0..20), id in "[a-z0-9]{1,10}") {
            let file = DetectionFile { image_id: id, image_w: Some(640), image_h: None, detections: dets };
            let again = parse_detection_file(detection_file_to_json(&file).as_bytes()).unwrap();
            prop_assert_eq!(again, file);
        }
    }
}
