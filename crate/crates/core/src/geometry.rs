//! Canonical geometry for detections and OCR spans.
//!
//! Boxes are stored center-form and normalized to the image size, so the
//! first two components of a [`NormBox`] are the object center. Adapters for
//! corner-form pixel boxes go through [`to_norm_box`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates may overshoot the frame by this fraction of the image size
/// and still be accepted (they are clamped). Anything further is rejected.
pub const FRAME_TOLERANCE: f64 = 0.01;

/// Center-form box normalized to the image: `(cx, cy, w, h)`, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    /// Validates and clamps. Components within [`FRAME_TOLERANCE`] of the unit
    /// interval are clamped into it.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Ok(Self {
            cx: clamp_unit("cx", cx)?,
            cy: clamp_unit("cy", cy)?,
            w: clamp_unit("w", w)?,
            h: clamp_unit("h", h)?,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

fn clamp_unit(name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::InvalidGeometry(format!("{name} is not finite")));
    }
    if !(-FRAME_TOLERANCE..=1.0 + FRAME_TOLERANCE).contains(&v) {
        return Err(Error::InvalidGeometry(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Converts a corner-form pixel box `[x1, y1, x2, y2]` to a [`NormBox`].
///
/// Corners that leave the frame, or boxes inverted, by no more than 1% of the
/// image dimension are clamped; larger violations are errors.
pub fn to_norm_box(corners: [f64; 4], image_w: f64, image_h: f64) -> Result<NormBox> {
    if !(image_w.is_finite() && image_h.is_finite() && image_w > 0.0 && image_h > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "image size must be positive, got {image_w}x{image_h}"
        )));
    }
    if corners.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidGeometry("box corner is not finite".into()));
    }
    let [x1, y1, x2, y2] = corners;
    let (x1, x2) = clamp_span("x", x1, x2, image_w)?;
    let (y1, y2) = clamp_span("y", y1, y2, image_h)?;
    Ok(NormBox {
        cx: ((x1 + x2) / (2.0 * image_w)).clamp(0.0, 1.0),
        cy: ((y1 + y2) / (2.0 * image_h)).clamp(0.0, 1.0),
        w: ((x2 - x1) / image_w).clamp(0.0, 1.0),
        h: ((y2 - y1) / image_h).clamp(0.0, 1.0),
    })
}

fn clamp_span(axis: &str, lo: f64, hi: f64, extent: f64) -> Result<(f64, f64)> {
    let tol = FRAME_TOLERANCE * extent;
    if hi < lo - tol {
        return Err(Error::InvalidGeometry(format!(
            "inverted box on {axis}: {axis}2 = {hi} < {axis}1 = {lo}"
        )));
    }
    for v in [lo, hi] {
        if v < -tol || v > extent + tol {
            return Err(Error::InvalidGeometry(format!(
                "{axis} = {v} outside frame [0, {extent}]"
            )));
        }
    }
    let (lo, hi) = if hi < lo {
        let mid = (lo + hi) / 2.0;
        (mid, mid)
    } else {
        (lo, hi)
    };
    Ok((lo.clamp(0.0, extent), hi.clamp(0.0, extent)))
}

/// Where an OCR span sits in the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    /// Ordered vertices in normalized coordinates.
    Polygon(Vec<[f64; 2]>),
    Box(NormBox),
}

impl Region {
    /// Builds a polygon region, checking vertex count and clamping vertices
    /// that overshoot the frame by at most [`FRAME_TOLERANCE`].
    pub fn polygon(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidGeometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let vertices = vertices
            .into_iter()
            .map(|[x, y]| Ok([clamp_unit("x", x)?, clamp_unit("y", y)?]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Region::Polygon(vertices))
    }
}

/// Center of a box (its first two values) or of a polygon (vertex mean),
/// clamped to the unit square.
pub fn center_of(region: &Region) -> Result<(f64, f64)> {
    let (x, y) = match region {
        Region::Box(b) => b.center(),
        Region::Polygon(vs) => {
            if vs.len() < 3 {
                return Err(Error::InvalidGeometry(format!(
                    "polygon needs at least 3 vertices, got {}",
                    vs.len()
                )));
            }
            let n = vs.len() as f64;
            let (sx, sy) = vs.iter().fold((0.0, 0.0), |(sx, sy), [x, y]| (sx + x, sy + y));
            (sx / n, sy / n)
        }
    };
    Ok((x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)))
}

/// One detected object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: NormBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(label: impl Into<String>, bbox: NormBox, confidence: f64) -> Result<Self> {
        let label = label.into();
        validate_label(&label)?;
        validate_score("confidence", confidence)?;
        Ok(Self {
            label,
            bbox,
            confidence,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

/// One recognized text span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrSpan {
    pub text: String,
    pub region: Region,
    pub confidence: f64,
}

impl OcrSpan {
    pub fn new(text: impl Into<String>, region: Region, confidence: f64) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::validation("text", "must not be empty or whitespace"));
        }
        if let Region::Polygon(vs) = &region {
            if vs.len() < 3 {
                return Err(Error::InvalidGeometry(format!(
                    "polygon needs at least 3 vertices, got {}",
                    vs.len()
                )));
            }
            if vs.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidGeometry("polygon vertex outside [0, 1]".into()));
            }
        }
        validate_score("confidence", confidence)?;
        Ok(Self {
            text,
            region,
            confidence,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        // Region invariants are checked in `new`.
        center_of(&self.region).unwrap_or((0.0, 0.0))
    }
}

fn validate_label(label: &str) -> Result<()> {
    if label.trim().is_empty() {
        return Err(Error::validation("label", "must not be empty"));
    }
    if label.chars().any(char::is_control) {
        return Err(Error::validation("label", "must not contain control characters"));
    }
    Ok(())
}

pub(crate) fn validate_score(field: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::validation(field, format!("{v} outside [0, 1]")));
    }
    Ok(())
}

/// Confidence cutoffs. An item passes only if its score is strictly greater
/// than the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Closed-set object detector.
    pub od_conf: f64,
    /// OCR box confidence.
    pub ocr_box: f64,
    /// Open-set detector box score.
    pub openset_box: f64,
    /// Open-set detector text (phrase) score.
    pub openset_text: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            od_conf: 0.3,
            ocr_box: 0.6,
            openset_box: 0.35,
            openset_text: 0.25,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        validate_score("thresholds.od_conf", self.od_conf)?;
        validate_score("thresholds.ocr_box", self.ocr_box)?;
        validate_score("thresholds.openset_box", self.openset_box)?;
        validate_score("thresholds.openset_text", self.openset_text)
    }
}

/// Anything carrying a confidence score.
pub trait Scored {
    fn confidence(&self) -> f64;
}

impl Scored for Detection {
    fn confidence(&self) -> f64 {
        self.confidence
    }
}

impl Scored for OcrSpan {
    fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Keeps the items whose confidence is strictly above `cutoff`, in order.
pub fn filter_by_confidence<T: Scored + Clone>(items: &[T], cutoff: f64) -> Vec<T> {
    items.iter().filter(|it| it.confidence() > cutoff).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(conf: f64) -> Detection {
        Detection::new("person", NormBox::new(0.5, 0.5, 0.1, 0.1).unwrap(), conf).unwrap()
    }

    #[test]
    fn box_center_is_first_two_values() {
        let b = NormBox::new(0.25, 0.12, 0.10, 0.08).unwrap();
        assert_eq!(center_of(&Region::Box(b)).unwrap(), (0.25, 0.12));
    }

    #[test]
    fn corner_box_center() {
        let b = to_norm_box([0.2, 0.1, 0.6, 0.5], 1.0, 1.0).unwrap();
        let (x, y) = center_of(&Region::Box(b)).unwrap();
        assert!((x - 0.4).abs() < 1e-12 && (y - 0.3).abs() < 1e-12);
    }

    #[test]
    fn square_polygon_center() {
        let r = Region::polygon(vec![[0.3, 0.8], [0.5, 0.8], [0.5, 0.9], [0.3, 0.9]]).unwrap();
        let (x, y) = center_of(&r).unwrap();
        // (0.3+0.5+0.5+0.3)/4, (0.8+0.8+0.9+0.9)/4
        assert!((x - 0.4).abs() < 1e-12);
        assert!((y - 0.85).abs() < 1e-12);
    }

    #[test]
    fn short_polygon_rejected() {
        assert!(matches!(
            center_of(&Region::Polygon(vec![[0.1, 0.1], [0.2, 0.2]])),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(Region::polygon(vec![[0.1, 0.1]]).is_err());
    }

    #[test]
    fn to_norm_box_examples() {
        assert_eq!(
            to_norm_box([0.0, 0.0, 100.0, 100.0], 100.0, 100.0).unwrap(),
            NormBox { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 }
        );
        let b = to_norm_box([10.0, 20.0, 30.0, 60.0], 100.0, 100.0).unwrap();
        for (got, want) in b.to_array().iter().zip([0.2, 0.4, 0.2, 0.4]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(
            to_norm_box([50.0, 50.0, 50.0, 50.0], 100.0, 100.0).unwrap(),
            NormBox { cx: 0.5, cy: 0.5, w: 0.0, h: 0.0 }
        );
    }

    #[test]
    fn to_norm_box_tolerance() {
        // 0.5% outside: clamped.
        let b = to_norm_box([-0.5, 0.0, 100.5, 100.0], 100.0, 100.0).unwrap();
        assert_eq!(b.w, 1.0);
        assert_eq!(b.cx, 0.5);
        // Slightly inverted: collapses to a point.
        let b = to_norm_box([40.5, 10.0, 40.0, 20.0], 100.0, 100.0).unwrap();
        assert_eq!(b.w, 0.0);
        // Beyond 1%: rejected.
        assert!(to_norm_box([-2.0, 0.0, 50.0, 50.0], 100.0, 100.0).is_err());
        assert!(to_norm_box([0.0, 0.0, 50.0, 102.0], 100.0, 100.0).is_err());
        assert!(to_norm_box([60.0, 0.0, 40.0, 50.0], 100.0, 100.0).is_err());
        assert!(to_norm_box([0.0, 0.0, 1.0, 1.0], 0.0, 100.0).is_err());
        assert!(to_norm_box([0.0, f64::NAN, 1.0, 1.0], 10.0, 10.0).is_err());
    }

    #[test]
    fn norm_box_validation() {
        assert_eq!(NormBox::new(1.005, 0.5, 0.1, 0.1).unwrap().cx, 1.0);
        assert!(NormBox::new(1.2, 0.5, 0.1, 0.1).is_err());
        assert!(NormBox::new(0.5, f64::INFINITY, 0.1, 0.1).is_err());
    }

    #[test]
    fn detection_and_span_invariants() {
        let b = NormBox::new(0.5, 0.5, 0.1, 0.1).unwrap();
        assert!(Detection::new("", b, 0.5).is_err());
        assert!(Detection::new("dog\n", b, 0.5).is_err());
        assert!(Detection::new("dog", b, 1.5).is_err());
        assert!(OcrSpan::new("  ", Region::Box(b), 0.9).is_err());
        assert!(OcrSpan::new("ok", Region::Polygon(vec![[0.1, 0.1], [1.5, 0.1], [0.1, 0.2]]), 0.9).is_err());
        assert!(OcrSpan::new("ok", Region::Box(b), 0.9).is_ok());
    }

    #[test]
    fn filter_is_strict() {
        let kept = filter_by_confidence(&[det(0.29), det(0.31)], 0.3);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.31);
        assert!(filter_by_confidence(&[det(0.3)], 0.3).is_empty());
        assert!(filter_by_confidence(&[det(1.0), det(0.2)], 1.0).is_empty());
    }

    #[test]
    fn default_thresholds() {
        let t = Thresholds::default();
        assert_eq!((t.od_conf, t.ocr_box, t.openset_box, t.openset_text), (0.3, 0.6, 0.35, 0.25));
        assert!(t.validate().is_ok());
        assert!(Thresholds { od_conf: 1.1, ..t }.validate().is_err());
    }

    proptest! {
        #[test]
        fn filter_matches_brute_force(confs in prop::collection::vec(0.0f64..=1.0, 0..100), cutoff in 0.0f64..=1.0) {
            let items: Vec<_> = confs.iter().map(|&c| det(c)).collect();
            let got = filter_by_confidence(&items, cutoff);
            let mut want = Vec::new();
            for it in &items {
                if it.confidence > cutoff {
                    want.push(it.clone());
                }
            }
            prop_assert_eq!(got, want);
        }

        #[test]
        fn filter_is_monotone(confs in prop::collection::vec(0.0f64..=1.0, 0..60), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let items: Vec<_> = confs.iter().map(|&c| det(c)).collect();
            let low = filter_by_confidence(&items, lo);
            let high = filter_by_confidence(&items, hi);
            prop_assert!(high.iter().all(|h| low.contains(h)));
        }

        #[test]
        fn center_stays_in_unit_square(vs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 3..12)) {
            let r = Region::polygon(vs.into_iter().map(|(x, y)| [x, y]).collect()).unwrap();
            let (x, y) = center_of(&r).unwrap();
            prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        }

        #[test]
        fn corner_conversion_matches_midpoint(
            x1 in 0.0f64..640.0, dx in 0.0f64..640.0, y1 in 0.0f64..480.0, dy in 0.0f64..480.0,
        ) {
            let (w, h) = (1280.0, 960.0);
            let b = to_norm_box([x1, y1, x1 + dx, y1 + dy], w, h).unwrap();
            let (cx, cy) = center_of(&Region::Box(b)).unwrap();
            prop_assert!((cx - (x1 + x1 + dx) / (2.0 * w)).abs() < 1e-12);
            prop_assert!((cy - (y1 + y1 + dy) / (2.0 * h)).abs() < 1e-12);
        }
    }
}
