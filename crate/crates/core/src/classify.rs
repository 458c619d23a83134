//! Template matching of action embeddings.
//!
//! Each action class owns a few labelled template embeddings. An unlabelled
//! item is scored against every class by cosine similarity (the class score is
//! the best-matching template by default), takes the highest-scoring class,
//! and falls through to [`NG`] when that score is below the threshold λ.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Embedding, NG};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("dimension mismatch: expected {expected}, got {got} ({item_id})")]
    DimMismatch {
        item_id: String,
        expected: usize,
        got: usize,
    },
    #[error("template library has no classes")]
    NoClasses,
    #[error("class {0} has no templates")]
    EmptyClass(String),
    #[error("duplicate template class {0}")]
    DuplicateClass(String),
    #[error("{NG} cannot be a template class")]
    NgTemplate,
    #[error("template map references unknown embedding {0}")]
    MissingTemplate(String),
    #[error("lambda {0} is not finite")]
    InvalidLambda(f64),
    #[error("no ground truth for item {0}")]
    MissingTruth(String),
    #[error("label {label} of item {item_id} is not a known class")]
    UnknownLabel { item_id: String, label: String },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("confusion counts must be a {0}x{0} grid")]
    BadShape(usize),
}

/// Cosine of the angle between two embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(q1: &Embedding, q2: &Embedding) -> Result<f64, ClassifyError> {
    if q1.dim() != q2.dim() {
        return Err(ClassifyError::DimMismatch {
            item_id: q2.item_id().to_string(),
            expected: q1.dim(),
            got: q2.dim(),
        });
    }
    let dot: f64 = q1
        .vector()
        .iter()
        .zip(q2.vector())
        .map(|(a, b)| a * b)
        .sum();
    // sqrt(|a|^2 |b|^2) makes identical vectors come out at exactly 1.
    let denom = (q1.norm_sq() * q2.norm_sq()).sqrt();
    let denom = if denom.is_finite() && denom > 0.0 {
        denom
    } else {
        q1.norm() * q2.norm()
    };
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// How a class score is formed from its per-template similarities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Nearest template.
    #[default]
    Max,
    /// Average over the class's templates; penalises classes with diverse templates.
    Mean,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(format!("unknown aggregation {s:?} (max|mean)")),
        }
    }
}

/// One line of the template sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateMapRecord {
    pub class: String,
    pub item_ids: Vec<String>,
}

/// Per-class template embeddings, in class declaration order. `NG` is never a
/// template class.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    class_names: Vec<String>,
    templates: Vec<Vec<Embedding>>,
    dim: usize,
}

impl TemplateLibrary {
    pub fn new(classes: Vec<(String, Vec<Embedding>)>) -> Result<Self, ClassifyError> {
        if classes.is_empty() {
            return Err(ClassifyError::NoClasses);
        }
        let dim = classes
            .iter()
            .find_map(|(_, t)| t.first().map(Embedding::dim))
            .unwrap_or(0);
        let mut class_names = Vec::with_capacity(classes.len());
        let mut templates = Vec::with_capacity(classes.len());
        for (name, temps) in classes {
            if name == NG {
                return Err(ClassifyError::NgTemplate);
            }
            if class_names.contains(&name) {
                return Err(ClassifyError::DuplicateClass(name));
            }
            if temps.is_empty() {
                return Err(ClassifyError::EmptyClass(name));
            }
            if let Some(bad) = temps.iter().find(|t| t.dim() != dim) {
                return Err(ClassifyError::DimMismatch {
                    item_id: bad.item_id().to_string(),
                    expected: dim,
                    got: bad.dim(),
                });
            }
            class_names.push(name);
            templates.push(temps);
        }
        Ok(Self {
            class_names,
            templates,
            dim,
        })
    }

    /// Builds a library from loaded embeddings and sidecar map records. Classes
    /// keep the order in which the map file first names them.
    pub fn from_map(
        embeddings: &IndexMap<String, Embedding>,
        map: &[TemplateMapRecord],
    ) -> Result<Self, ClassifyError> {
        let mut classes: IndexMap<String, Vec<Embedding>> = IndexMap::new();
        for rec in map {
            let entry = classes.entry(rec.class.clone()).or_default();
            for id in &rec.item_ids {
                let e = embeddings
                    .get(id)
                    .ok_or_else(|| ClassifyError::MissingTemplate(id.clone()))?;
                entry.push(e.clone());
            }
        }
        Self::new(classes.into_iter().collect())
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Action classes followed by `NG`.
    pub fn classes_with_ng(&self) -> Vec<String> {
        let mut v = self.class_names.clone();
        v.push(NG.to_string());
        v
    }

    pub fn templates(&self, class_idx: usize) -> &[Embedding] {
        &self.templates[class_idx]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn template_count(&self) -> usize {
        self.templates.iter().map(Vec::len).sum()
    }
}

fn class_scores(
    q: &Embedding,
    lib: &TemplateLibrary,
    agg: Aggregation,
) -> Result<Vec<f64>, ClassifyError> {
    if q.dim() != lib.dim {
        return Err(ClassifyError::DimMismatch {
            item_id: q.item_id().to_string(),
            expected: lib.dim,
            got: q.dim(),
        });
    }
    lib.templates
        .iter()
        .map(|temps| {
            let sims = temps
                .iter()
                .map(|t| cosine_similarity(q, t))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(match agg {
                Aggregation::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
            })
        })
        .collect()
}

/// First index holding the maximum, so ties go to the earlier class.
fn argmax(scores: &[f64]) -> (usize, f64) {
    scores
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, s)| if s > acc.1 { (i, s) } else { acc },
        )
}

/// Score of `q` against every class, in class order.
pub fn class_similarity(
    q: &Embedding,
    lib: &TemplateLibrary,
    agg: Aggregation,
) -> Result<IndexMap<String, f64>, ClassifyError> {
    Ok(lib
        .class_names
        .iter()
        .cloned()
        .zip(class_scores(q, lib, agg)?)
        .collect())
}

/// Proposed label for one item together with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDecision {
    pub item_id: String,
    pub label: String,
    #[serde(rename = "best_sim")]
    pub best_similarity: f64,
    #[serde(rename = "scores")]
    pub per_class_similarity: IndexMap<String, f64>,
}

impl ClassDecision {
    pub fn is_ng(&self) -> bool {
        self.label == NG
    }
}

/// Matching configuration. λ has no sensible universal default and must be
/// chosen per scenario (see [`calibrate`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub lambda: f64,
    pub aggregation: Aggregation,
}

impl MatchConfig {
    pub fn new(lambda: f64) -> Self {
        MatchConfig {
            lambda,
            aggregation: Aggregation::Max,
        }
    }
}

/// Assigns the highest-scoring class when its score reaches λ, otherwise `NG`.
/// Ties go to the class declared first.
pub fn classify(
    q: &Embedding,
    lib: &TemplateLibrary,
    cfg: &MatchConfig,
) -> Result<ClassDecision, ClassifyError> {
    if !cfg.lambda.is_finite() {
        return Err(ClassifyError::InvalidLambda(cfg.lambda));
    }
    let scores = class_scores(q, lib, cfg.aggregation)?;
    let (best_idx, best) = argmax(&scores);
    let label = if best >= cfg.lambda {
        lib.class_names[best_idx].clone()
    } else {
        NG.to_string()
    };
    Ok(ClassDecision {
        item_id: q.item_id().to_string(),
        label,
        best_similarity: best,
        per_class_similarity: lib.class_names.iter().cloned().zip(scores).collect(),
    })
}

/// Classifies each item independently; output order follows input order.
pub fn classify_batch(
    items: &[Embedding],
    lib: &TemplateLibrary,
    cfg: &MatchConfig,
) -> Result<Vec<ClassDecision>, ClassifyError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(|q| classify(q, lib, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(|q| classify(q, lib, cfg)).collect()
    }
}

/// Row = true class, column = predicted class. Classes end with `NG`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, ClassifyError> {
        let n = classes.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(ClassifyError::BadShape(n));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: &str, predicted: &str) -> Option<u64> {
        let r = self.index(truth)?;
        let c = self.index(predicted)?;
        Some(self.counts[r][c])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: &str) -> Option<u64> {
        self.index(class).map(|r| self.counts[r].iter().sum())
    }

    fn index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "true\\pred")?;
        for c in &self.classes {
            write!(f, ",{c}")?;
        }
        writeln!(f)?;
        for (c, row) in self.classes.iter().zip(&self.counts) {
            write!(f, "{c}")?;
            for v in row {
                write!(f, ",{v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Tallies decisions against true labels. `classes` must include `NG`.
pub fn confusion(
    decisions: &[ClassDecision],
    truth: &HashMap<String, String>,
    classes: &[String],
) -> Result<ConfusionMatrix, ClassifyError> {
    let mut m = ConfusionMatrix::zeros(classes.to_vec());
    for d in decisions {
        let t = truth
            .get(&d.item_id)
            .ok_or_else(|| ClassifyError::MissingTruth(d.item_id.clone()))?;
        let unknown = |label: &str| ClassifyError::UnknownLabel {
            item_id: d.item_id.clone(),
            label: label.to_string(),
        };
        let r = m.index(t).ok_or_else(|| unknown(t))?;
        let c = m.index(&d.label).ok_or_else(|| unknown(&d.label))?;
        m.counts[r][c] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationStats {
    pub total: u64,
    /// Diagonal over action classes.
    pub correct: u64,
    /// Predicted as some action class, but not the true one.
    pub incorrect: u64,
    /// Items predicted `NG`, whatever their true class.
    pub ng_routed_count: u64,
    /// Trace over all classes, `NG` included, divided by total.
    pub overall_accuracy: f64,
    /// `correct / (correct + incorrect)`; undefined when everything went to `NG`.
    pub ng_excluded_accuracy: Option<f64>,
    /// Diagonal over row sum per true class; undefined for empty rows.
    pub per_class_accuracy: IndexMap<String, Option<f64>>,
}

pub fn classification_stats(m: &ConfusionMatrix) -> Result<ClassificationStats, ClassifyError> {
    let total = m.total();
    if total == 0 {
        return Err(ClassifyError::EmptyMatrix);
    }
    let ng = m.index(NG);
    let (mut correct, mut incorrect, mut trace, mut routed) = (0, 0, 0, 0);
    for (r, row) in m.counts.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if Some(c) == ng {
                routed += v;
            } else if r == c {
                correct += v;
            } else {
                incorrect += v;
            }
            if r == c {
                trace += v;
            }
        }
    }
    let per_class_accuracy = m
        .classes
        .iter()
        .zip(&m.counts)
        .enumerate()
        .map(|(i, (c, row))| {
            let n: u64 = row.iter().sum();
            (c.clone(), (n > 0).then(|| row[i] as f64 / n as f64))
        })
        .collect();
    Ok(ClassificationStats {
        total,
        correct,
        incorrect,
        ng_routed_count: routed,
        overall_accuracy: trace as f64 / total as f64,
        ng_excluded_accuracy: (correct + incorrect > 0)
            .then(|| correct as f64 / (correct + incorrect) as f64),
        per_class_accuracy,
    })
}

/// Similarity histogram per class over `[-1, 1]`, used to pick λ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub edges: Vec<f64>,
    /// class -> count of items whose class score falls in each bin.
    pub class_counts: IndexMap<String, Vec<u64>>,
    /// class -> count of items whose *best* score falls in each bin and whose
    /// argmax is this class.
    pub argmax_counts: IndexMap<String, Vec<u64>>,
}

fn bin_of(v: f64, bins: usize) -> usize {
    let b = ((v + 1.0) / 2.0 * bins as f64).floor() as isize;
    b.clamp(0, bins as isize - 1) as usize
}

pub fn calibrate(
    items: &[Embedding],
    lib: &TemplateLibrary,
    agg: Aggregation,
    bins: usize,
) -> Result<Calibration, ClassifyError> {
    let bins = bins.max(1);
    let edges = (0..=bins)
        .map(|i| -1.0 + 2.0 * i as f64 / bins as f64)
        .collect();
    let mut class_counts: IndexMap<String, Vec<u64>> = lib
        .class_names
        .iter()
        .map(|c| (c.clone(), vec![0; bins]))
        .collect();
    let mut argmax_counts = class_counts.clone();
    for q in items {
        let scores = class_scores(q, lib, agg)?;
        for (c, s) in lib.class_names.iter().zip(&scores) {
            class_counts[c][bin_of(*s, bins)] += 1;
        }
        let (winner, best) = argmax(&scores);
        argmax_counts[winner][bin_of(best, bins)] += 1;
    }
    Ok(Calibration {
        edges,
        class_counts,
        argmax_counts,
    })
}

impl Calibration {
    /// `class,kind,bin_lo,bin_hi,count` rows; `kind` is `score` or `argmax`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "class,kind,bin_lo,bin_hi,count")?;
        for (kind, table) in [
            ("score", &self.class_counts),
            ("argmax", &self.argmax_counts),
        ] {
            for (class, counts) in table {
                for (i, n) in counts.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        class,
                        kind,
                        self.edges[i],
                        self.edges[i + 1],
                        n
                    )?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(id: &str, v: &[f64]) -> Embedding {
        Embedding::new(id, v.to_vec()).unwrap()
    }

    fn lib2() -> TemplateLibrary {
        TemplateLibrary::new(vec![
            ("Act1".into(), vec![emb("t1", &[1.0, 0.0])]),
            ("Act2".into(), vec![emb("t2", &[0.0, 1.0])]),
        ])
        .unwrap()
    }

    #[test]
    fn cosine_cases() {
        let a = emb("a", &[0.3, -1.7, 2.9]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(
            cosine_similarity(&emb("x", &[1., 0.]), &emb("y", &[0., 1.])).unwrap(),
            0.0
        );
        let s = cosine_similarity(&emb("x", &[1., 1.]), &emb("y", &[1., 0.])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-9);
        assert!(matches!(
            cosine_similarity(&emb("x", &[1., 1.]), &emb("y", &[1., 0., 0.])),
            Err(ClassifyError::DimMismatch { .. })
        ));
    }

    #[test]
    fn class_score_is_max_over_templates() {
        // templates at cosine 0.2 and 0.9 with the query (1, 0)
        let t_lo = emb("lo", &[0.2, (1.0f64 - 0.04).sqrt()]);
        let t_hi = emb("hi", &[0.9, (1.0f64 - 0.81).sqrt()]);
        let lib = TemplateLibrary::new(vec![("Act1".into(), vec![t_lo, t_hi])]).unwrap();
        let q = emb("q", &[1.0, 0.0]);
        let s = class_similarity(&q, &lib, Aggregation::Max).unwrap();
        assert!((s["Act1"] - 0.9).abs() < 1e-12);
        let m = class_similarity(&q, &lib, Aggregation::Mean).unwrap();
        assert!((m["Act1"] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn classify_threshold_and_argmax() {
        // cos = 0.92 with Act1 and 0.85 with Act2
        let t1 = emb("t1", &[0.92, (1.0f64 - 0.92 * 0.92).sqrt(), 0.0]);
        let t2 = emb("t2", &[0.85, 0.0, (1.0f64 - 0.85 * 0.85).sqrt()]);
        let lib = TemplateLibrary::new(vec![("Act1".into(), vec![t1]), ("Act2".into(), vec![t2])])
            .unwrap();
        let q = emb("q", &[1.0, 0.0, 0.0]);
        let d = classify(&q, &lib, &MatchConfig::new(0.9)).unwrap();
        assert_eq!(d.label, "Act1");
        let d = classify(&q, &lib, &MatchConfig::new(0.95)).unwrap();
        assert_eq!(d.label, NG);
        assert!((d.best_similarity - 0.92).abs() < 1e-12);
        assert_eq!(d.per_class_similarity.len(), 2);
    }

    #[test]
    fn classify_tie_prefers_first_class() {
        let lib = TemplateLibrary::new(vec![
            ("Act1".into(), vec![emb("t1", &[1.0, 0.0])]),
            ("Act2".into(), vec![emb("t2", &[1.0, 0.0])]),
        ])
        .unwrap();
        let d = classify(&emb("q", &[2.0, 0.0]), &lib, &MatchConfig::new(0.95)).unwrap();
        assert_eq!(d.label, "Act1");
    }

    #[test]
    fn library_validation() {
        assert!(matches!(
            TemplateLibrary::new(vec![]),
            Err(ClassifyError::NoClasses)
        ));
        assert!(matches!(
            TemplateLibrary::new(vec![(NG.into(), vec![emb("a", &[1.0])])]),
            Err(ClassifyError::NgTemplate)
        ));
        assert!(matches!(
            TemplateLibrary::new(vec![("A".into(), vec![])]),
            Err(ClassifyError::EmptyClass(_))
        ));
        assert!(matches!(
            TemplateLibrary::new(vec![
                ("A".into(), vec![emb("a", &[1.0])]),
                ("B".into(), vec![emb("b", &[1.0, 2.0])])
            ]),
            Err(ClassifyError::DimMismatch { .. })
        ));
        let embs: IndexMap<String, Embedding> =
            [("a".to_string(), emb("a", &[1.0]))].into_iter().collect();
        let map = vec![TemplateMapRecord {
            class: "A".into(),
            item_ids: vec!["a".into(), "missing".into()],
        }];
        assert!(matches!(
            TemplateLibrary::from_map(&embs, &map),
            Err(ClassifyError::MissingTemplate(_))
        ));
    }

    #[test]
    fn confusion_and_stats() {
        let lib = lib2();
        let classes = lib.classes_with_ng();
        let decide = |id: &str, label: &str| ClassDecision {
            item_id: id.into(),
            label: label.into(),
            best_similarity: 0.0,
            per_class_similarity: IndexMap::new(),
        };
        let decisions = vec![decide("a", "Act1"), decide("b", NG), decide("c", "Act1")];
        let truth: HashMap<String, String> = [("a", "Act1"), ("b", "Act1"), ("c", "Act2")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let m = confusion(&decisions, &truth, &classes).unwrap();
        assert_eq!(m.get("Act1", NG), Some(1));
        assert_eq!(m.total(), 3);
        assert_eq!(m.row_sum("Act1"), Some(2));
        let s = classification_stats(&m).unwrap();
        assert_eq!((s.correct, s.incorrect, s.ng_routed_count), (1, 1, 1));
        assert_eq!(s.ng_excluded_accuracy, Some(0.5));
        assert_eq!(s.per_class_accuracy["Act1"], Some(0.5));
        assert_eq!(s.per_class_accuracy[NG], None);

        let mut missing = truth.clone();
        missing.remove("c");
        assert!(matches!(
            confusion(&decisions, &missing, &classes),
            Err(ClassifyError::MissingTruth(_))
        ));
    }

    #[test]
    fn stats_all_ng_and_perfect() {
        let classes = vec!["Act1".to_string(), NG.to_string()];
        let all_ng =
            ConfusionMatrix::from_counts(classes.clone(), vec![vec![0, 4], vec![0, 3]]).unwrap();
        let s = classification_stats(&all_ng).unwrap();
        assert_eq!(s.ng_excluded_accuracy, None);
        assert_eq!(s.ng_routed_count, 7);

        let diag =
            ConfusionMatrix::from_counts(classes.clone(), vec![vec![5, 0], vec![0, 2]]).unwrap();
        assert_eq!(classification_stats(&diag).unwrap().overall_accuracy, 1.0);

        let empty = ConfusionMatrix::zeros(classes);
        assert_eq!(
            classification_stats(&empty),
            Err(ClassifyError::EmptyMatrix)
        );
    }

    #[test]
    fn calibration_counts_every_item() {
        let lib = lib2();
        let items = vec![
            emb("a", &[1.0, 0.1]),
            emb("b", &[0.1, 1.0]),
            emb("c", &[-1.0, 0.0]),
        ];
        let cal = calibrate(&items, &lib, Aggregation::Max, 10).unwrap();
        assert_eq!(cal.edges.len(), 11);
        for counts in cal.class_counts.values() {
            assert_eq!(counts.iter().sum::<u64>(), 3);
        }
        let argmax_total: u64 = cal.argmax_counts.values().flatten().sum();
        assert_eq!(argmax_total, 3);
        let mut out = Vec::new();
        cal.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap().lines().count(),
            1 + 2 * 2 * 10
        );
    }
}
