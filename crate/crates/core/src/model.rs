//! Validated domain values shared by every stage.
//!
//! Everything here is an immutable value once constructed. Constructors are the
//! only way in, so downstream code can rely on the invariants without
//! re-checking them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved catch-all class for irrelevant, nonstandard or misdetected actions.
pub const NG: &str = "NG";

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BoxError {
    #[error("box has zero or negative area (x2 <= x1 or y2 <= y1)")]
    ZeroArea,
    #[error("box coordinate is not finite")]
    NonFinite,
    #[error("box coordinate is negative")]
    NegativeCoordinate,
}

/// Axis-aligned pixel rectangle stored as corner pairs, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        let c = [x1, y1, x2, y2];
        if c.iter().any(|v| !v.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if c.iter().any(|v| *v < 0.0) {
            return Err(BoxError::NegativeCoordinate);
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(BoxError::ZeroArea);
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Multiplies every coordinate by `k`. `k` must be positive and finite.
    pub fn scaled(&self, k: f64) -> Result<Self, BoxError> {
        Self::new(self.x1 * k, self.y1 * k, self.x2 * k, self.y2 * k)
    }
}

/// Validates a raw `(x1, y1, x2, y2)` tuple.
pub fn validate_box(raw: [f64; 4]) -> Result<BoundingBox, BoxError> {
    BoundingBox::new(raw[0], raw[1], raw[2], raw[3])
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = BoxError;

    fn try_from(raw: [f64; 4]) -> Result<Self, Self::Error> {
        validate_box(raw)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CandidateError {
    #[error("invalid box: {0}")]
    Box(#[from] BoxError),
    #[error("{which} score {value} outside [0, 1]")]
    ScoreRange { which: &'static str, value: f64 },
    #[error("frame_id is empty")]
    EmptyFrameId,
}

/// One detector output box.
///
/// `score_secondary` is absent for single-score detectors (confidence only) and
/// present for dual-score detectors (box and text scores).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCandidate {
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub score_primary: f64,
    pub score_secondary: Option<f64>,
}

fn check_score(which: &'static str, value: f64) -> Result<(), CandidateError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(CandidateError::ScoreRange { which, value });
    }
    Ok(())
}

impl DetectionCandidate {
    pub fn new(
        frame_id: impl Into<String>,
        bbox: BoundingBox,
        score_primary: f64,
        score_secondary: Option<f64>,
    ) -> Result<Self, CandidateError> {
        let frame_id = frame_id.into();
        if frame_id.is_empty() {
            return Err(CandidateError::EmptyFrameId);
        }
        check_score("primary", score_primary)?;
        if let Some(s) = score_secondary {
            check_score("secondary", s)?;
        }
        Ok(Self {
            frame_id,
            bbox,
            score_primary,
            score_secondary,
        })
    }

    pub fn is_dual_score(&self) -> bool {
        self.score_secondary.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding {0} is empty")]
    Empty(String),
    #[error("embedding {0} has a non-finite entry")]
    NonFinite(String),
    #[error("embedding {0} has zero norm")]
    ZeroNorm(String),
}

/// Fixed-length feature vector with a nonzero Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    item_id: String,
    vector: Vec<f64>,
    norm_sq: f64,
}

impl Embedding {
    pub fn new(item_id: impl Into<String>, vector: Vec<f64>) -> Result<Self, EmbeddingError> {
        let item_id = item_id.into();
        if vector.is_empty() {
            return Err(EmbeddingError::Empty(item_id));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(item_id));
        }
        let norm_sq = vector.iter().map(|v| v * v).sum::<f64>();
        // Underflowing squares count as zero norm too.
        if norm_sq == 0.0 || !norm_sq.is_finite() {
            return Err(EmbeddingError::ZeroNorm(item_id));
        }
        Ok(Self {
            item_id,
            vector,
            norm_sq,
        })
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn scaled(&self, k: f64) -> Result<Self, EmbeddingError> {
        Self::new(
            self.item_id.clone(),
            self.vector.iter().map(|v| v * k).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub item_id: String,
    pub frame_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("class list must end with {NG}")]
    MissingNg,
    #[error("duplicate class name {0}")]
    DuplicateClass(String),
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("item {item_id} has unknown label {label}")]
    UnknownLabel { item_id: String, label: String },
}

/// A labelled dataset: scenario metadata, ordered class list (with `NG` last)
/// and labelled item boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub scenario_name: String,
    pub class_names: Vec<String>,
    pub frame_count: u64,
    pub items: Vec<ManifestItem>,
}

/// Appends `NG` to an action class list, rejecting lists that already name it
/// anywhere but last.
pub fn with_ng(actions: &[String]) -> Result<Vec<String>, ManifestError> {
    let mut out: Vec<String> = actions.to_vec();
    if out.last().map(String::as_str) != Some(NG) {
        out.push(NG.to_string());
    }
    check_classes(&out)?;
    Ok(out)
}

fn check_classes(classes: &[String]) -> Result<(), ManifestError> {
    if classes.last().map(String::as_str) != Some(NG) {
        return Err(ManifestError::MissingNg);
    }
    let mut seen = HashSet::new();
    for c in classes {
        if !seen.insert(c.as_str()) {
            return Err(ManifestError::DuplicateClass(c.clone()));
        }
    }
    Ok(())
}

impl DatasetManifest {
    pub fn new(
        scenario_name: impl Into<String>,
        class_names: Vec<String>,
        frame_count: u64,
        items: Vec<ManifestItem>,
    ) -> Result<Self, ManifestError> {
        check_classes(&class_names)?;
        let mut ids = HashSet::new();
        for item in &items {
            if !ids.insert(item.item_id.as_str()) {
                return Err(ManifestError::DuplicateItem(item.item_id.clone()));
            }
            if !class_names.contains(&item.label) {
                return Err(ManifestError::UnknownLabel {
                    item_id: item.item_id.clone(),
                    label: item.label.clone(),
                });
            }
        }
        Ok(Self {
            scenario_name: scenario_name.into(),
            class_names,
            frame_count,
            items,
        })
    }

    /// Action classes, i.e. everything except the trailing `NG`.
    pub fn action_classes(&self) -> &[String] {
        &self.class_names[..self.class_names.len() - 1]
    }

    /// Item count per class in class order (zero counts included).
    pub fn class_counts(&self) -> Vec<(String, usize)> {
        self.class_names
            .iter()
            .map(|c| {
                let n = self.items.iter().filter(|i| &i.label == c).count();
                (c.clone(), n)
            })
            .collect()
    }
}

/// Ground-truth boxes keyed by frame. Frames without any action are present
/// with an empty list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    frames: BTreeMap<String, Vec<BoundingBox>>,
}

impl GroundTruthSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds boxes to a frame, creating it if needed. Returns false for an empty frame id.
    pub fn insert(&mut self, frame_id: impl Into<String>, boxes: Vec<BoundingBox>) -> bool {
        let frame_id = frame_id.into();
        if frame_id.is_empty() {
            return false;
        }
        self.frames.entry(frame_id).or_default().extend(boxes);
        true
    }

    pub fn get(&self, frame_id: &str) -> Option<&[BoundingBox]> {
        self.frames.get(frame_id).map(Vec::as_slice)
    }

    pub fn contains(&self, frame_id: &str) -> bool {
        self.frames.contains_key(frame_id)
    }

    pub fn frames(&self) -> impl Iterator<Item = (&str, &[BoundingBox])> {
        self.frames.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn box_count(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }
}

impl FromIterator<(String, Vec<BoundingBox>)> for GroundTruthSet {
    fn from_iter<I: IntoIterator<Item = (String, Vec<BoundingBox>)>>(iter: I) -> Self {
        let mut gts = GroundTruthSet::new();
        for (f, b) in iter {
            gts.insert(f, b);
        }
        gts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validate_box_cases() {
        let b = validate_box([0.0, 0.0, 10.0, 10.0]).unwrap();
        assert_eq!(b.area(), 100.0);
        assert_eq!(validate_box([5.0, 5.0, 5.0, 9.0]), Err(BoxError::ZeroArea));
        assert_eq!(
            validate_box([0.0, 0.0, f64::NAN, 4.0]),
            Err(BoxError::NonFinite)
        );
        assert_eq!(
            validate_box([-1.0, 0.0, 3.0, 4.0]),
            Err(BoxError::NegativeCoordinate)
        );
        assert_eq!(validate_box([0.0, 4.0, 3.0, 2.0]), Err(BoxError::ZeroArea));
    }

    #[test]
    fn box_serializes_as_corner_array() {
        let b = validate_box([1.5, 2.0, 3.25, 4.0]).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[1.5,2.0,3.25,4.0]");
        assert!(serde_json::from_str::<BoundingBox>("[1,1,1,2]").is_err());
    }

    #[test]
    fn candidate_score_range() {
        let b = validate_box([0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(DetectionCandidate::new("f", b, 1.3, None).is_err());
        assert!(DetectionCandidate::new("f", b, 0.3, Some(-0.1)).is_err());
        assert!(DetectionCandidate::new("", b, 0.3, None).is_err());
        assert!(DetectionCandidate::new("f", b, 1.0, Some(0.0))
            .unwrap()
            .is_dual_score());
    }

    #[test]
    fn embedding_rejects_zero_and_nan() {
        assert!(matches!(
            Embedding::new("a", vec![0.0; 4]),
            Err(EmbeddingError::ZeroNorm(_))
        ));
        assert!(matches!(
            Embedding::new("a", vec![1.0, f64::INFINITY]),
            Err(EmbeddingError::NonFinite(_))
        ));
        assert!(matches!(
            Embedding::new("a", vec![]),
            Err(EmbeddingError::Empty(_))
        ));
        let e = Embedding::new("a", vec![3.0, 4.0]).unwrap();
        assert_eq!(e.norm(), 5.0);
    }

    #[test]
    fn manifest_requires_ng_last() {
        let classes = vec!["Act1".to_string(), NG.to_string(), "Act2".to_string()];
        assert_eq!(
            DatasetManifest::new("s", classes, 0, vec![]),
            Err(ManifestError::MissingNg)
        );
        let classes = with_ng(&["Act1".into(), "Act2".into()]).unwrap();
        assert_eq!(classes.last().unwrap(), NG);
        assert!(with_ng(&["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn manifest_rejects_unknown_label_and_duplicates() {
        let b = validate_box([0.0, 0.0, 1.0, 1.0]).unwrap();
        let item = |id: &str, label: &str| ManifestItem {
            item_id: id.into(),
            frame_id: "f".into(),
            bbox: b,
            label: label.into(),
        };
        let classes = with_ng(&["Act1".into()]).unwrap();
        assert!(matches!(
            DatasetManifest::new("s", classes.clone(), 1, vec![item("a", "Act9")]),
            Err(ManifestError::UnknownLabel { .. })
        ));
        assert!(matches!(
            DatasetManifest::new("s", classes, 1, vec![item("a", "Act1"), item("a", NG)]),
            Err(ManifestError::DuplicateItem(_))
        ));
    }

    proptest! {
        #[test]
        fn validate_box_is_idempotent(
            x in 0.0f64..1e4, y in 0.0f64..1e4, w in 1e-6f64..1e3, h in 1e-6f64..1e3
        ) {
            let b = validate_box([x, y, x + w, y + h]).unwrap();
            let again = validate_box(b.corners()).unwrap();
            prop_assert_eq!(b, again);
        }
    }
}
