//! Annotation documents: parsing, validation, filtering and ingestion.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::AnnotationError;
use crate::keypoints::{ConeColor, ConeKeypoints, Point, NUM_KEYPOINTS};

/// Image extent used for bounds checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageBounds {
    pub width: u32,
    pub height: u32,
}

impl ImageBounds {
    pub fn square(size: u32) -> Self {
        Self {
            width: size,
            height: size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeAnnotation {
    pub image_id: String,
    pub keypoints: Vec<Point>,
    pub color: ConeColor,
    pub rejected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

const REQUIRED: [&str; 4] = ["image_id", "keypoints", "color", "rejected"];

impl ConeAnnotation {
    pub fn new(image_id: impl Into<String>, keypoints: ConeKeypoints, color: ConeColor) -> Self {
        Self {
            image_id: image_id.into(),
            keypoints: keypoints.to_vec(),
            color,
            rejected: false,
            labeler: None,
            timestamp: None,
        }
    }

    /// Checks count and bounds. Rejected annotations only need an id.
    pub fn validate(&self, bounds: ImageBounds) -> Result<(), AnnotationError> {
        if self.image_id.trim().is_empty() {
            return Err(AnnotationError::InvalidField {
                field: "image_id".into(),
                detail: "must not be empty".into(),
            });
        }
        if self.rejected {
            return Ok(());
        }
        if self.keypoints.len() != NUM_KEYPOINTS {
            return Err(AnnotationError::KeypointCount {
                found: self.keypoints.len(),
            });
        }
        let (xmax, ymax) = ((bounds.width as f64) - 1.0, (bounds.height as f64) - 1.0);
        for (index, &[x, y]) in self.keypoints.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(AnnotationError::NonFinite { index });
            }
            if x < 0.0 || y < 0.0 || x > xmax || y > ymax {
                return Err(AnnotationError::OutOfBounds {
                    index,
                    x,
                    y,
                    width: bounds.width,
                    height: bounds.height,
                });
            }
        }
        Ok(())
    }

    /// The six keypoints as a fixed array; `None` for rejected or malformed
    /// annotations.
    pub fn keypoint_array(&self) -> Option<ConeKeypoints> {
        if self.rejected {
            return None;
        }
        self.keypoints.clone().try_into().ok()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }
}

/// Decodes without validating bounds or counts.
pub fn parse_unvalidated(document: &str) -> Result<ConeAnnotation, AnnotationError> {
    let value: Value = serde_json::from_str(document).map_err(|e| AnnotationError::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| AnnotationError::Malformed("top level must be an object".into()))?;
    for field in REQUIRED {
        if !obj.contains_key(field) || obj[field].is_null() {
            return Err(AnnotationError::MissingField { field: field.into() });
        }
    }
    if let Some(kps) = obj["keypoints"].as_array() {
        for (i, kp) in kps.iter().enumerate() {
            let ok = kp
                .as_array()
                .is_some_and(|a| a.len() == 2 && a.iter().all(Value::is_number));
            if !ok {
                return Err(AnnotationError::InvalidField {
                    field: format!("keypoints[{i}]"),
                    detail: "expected an [x, y] pair of numbers".into(),
                });
            }
        }
    }
    for field in REQUIRED.into_iter().chain(["labeler", "timestamp"]) {
        if let Some(v) = obj.get(field) {
            let check = match field {
                "image_id" | "labeler" | "timestamp" => serde_json::from_value::<Option<String>>(v.clone()).map(drop),
                "color" => serde_json::from_value::<ConeColor>(v.clone()).map(drop),
                "rejected" => serde_json::from_value::<bool>(v.clone()).map(drop),
                _ => serde_json::from_value::<Vec<Point>>(v.clone()).map(drop),
            };
            check.map_err(|e| AnnotationError::InvalidField {
                field: field.into(),
                detail: e.to_string(),
            })?;
        }
    }
    serde_json::from_value(value).map_err(|e| AnnotationError::Malformed(e.to_string()))
}

pub fn parse_annotation(document: &str, bounds: ImageBounds) -> Result<ConeAnnotation, AnnotationError> {
    let ann = parse_unvalidated(document)?;
    ann.validate(bounds)?;
    Ok(ann)
}

/// Counts of dropped annotations by reason.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropTally {
    pub rejected: usize,
    pub count: usize,
    pub bounds: usize,
    pub malformed: usize,
}

impl DropTally {
    pub fn total(&self) -> usize {
        self.rejected + self.count + self.bounds + self.malformed
    }

    fn record(&mut self, err: &AnnotationError) {
        match err {
            AnnotationError::KeypointCount { .. } => self.count += 1,
            AnnotationError::OutOfBounds { .. } | AnnotationError::NonFinite { .. } => self.bounds += 1,
            _ => self.malformed += 1,
        }
    }
}

/// Keeps valid, non-rejected annotations.
pub fn filter_dataset(items: Vec<(ConeAnnotation, ImageBounds)>) -> (Vec<ConeAnnotation>, DropTally) {
    let mut tally = DropTally::default();
    let mut kept = Vec::with_capacity(items.len());
    for (ann, bounds) in items {
        if ann.rejected {
            tally.rejected += 1;
            continue;
        }
        match ann.validate(bounds) {
            Ok(()) => kept.push(ann),
            Err(e) => tally.record(&e),
        }
    }
    (kept, tally)
}

/// Document-level variant that also tallies undecodable documents.
pub fn filter_documents<'a>(
    docs: impl IntoIterator<Item = (&'a str, ImageBounds)>,
) -> (Vec<ConeAnnotation>, DropTally) {
    let mut tally = DropTally::default();
    let mut decoded = Vec::new();
    for (doc, bounds) in docs {
        match parse_unvalidated(doc) {
            Ok(a) => decoded.push((a, bounds)),
            Err(e) => tally.record(&e),
        }
    }
    let (kept, t) = filter_dataset(decoded);
    tally.rejected += t.rejected;
    tally.count += t.count;
    tally.bounds += t.bounds;
    (kept, tally)
}

/// Reorders keypoints from an external labeling convention:
/// `out[i] = in[perm[i]]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointRemap(pub [usize; NUM_KEYPOINTS]);

impl Default for KeypointRemap {
    fn default() -> Self {
        Self([0, 1, 2, 3, 4, 5])
    }
}

impl KeypointRemap {
    pub fn new(perm: [usize; NUM_KEYPOINTS]) -> Result<Self, AnnotationError> {
        let mut seen = [false; NUM_KEYPOINTS];
        for &p in &perm {
            if p >= NUM_KEYPOINTS || seen[p] {
                return Err(AnnotationError::InvalidField {
                    field: "remap".into(),
                    detail: format!("{perm:?} is not a permutation of 0..6"),
                });
            }
            seen[p] = true;
        }
        Ok(Self(perm))
    }

    pub fn apply(&self, ann: &mut ConeAnnotation) {
        if ann.keypoints.len() == NUM_KEYPOINTS {
            let old = ann.keypoints.clone();
            ann.keypoints = self.0.iter().map(|&j| old[j]).collect();
        }
    }
}
