//! Browser bindings for three interactive views of the annotation toolkit:
//! an NMS explorer, a threshold-sweep heatmap over a synthetic scene, and a
//! 2-D template matcher. Every export takes and returns JSON strings.

use actlabel_core::classify::{classify, Aggregation, MatchConfig, TemplateLibrary};
use actlabel_core::eval::{
    best_operating_point, greedy_nms, iou, sweep, FilterParams, GridAxis, Metric, Objective,
};
use actlabel_core::{BoundingBox, DetectionCandidate, Embedding, GroundTruthSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl ToString) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Deserialize)]
struct ScoredBox {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

#[derive(Serialize, Debug, PartialEq)]
struct NmsView {
    kept: Vec<usize>,
    iou: Vec<Vec<f64>>,
}

fn nms_view(boxes: &str, conf: f64, nms_iou: f64) -> Result<NmsView, String> {
    let input: Vec<ScoredBox> = serde_json::from_str(boxes).map_err(|e| e.to_string())?;
    let mut cands = Vec::with_capacity(input.len());
    for (i, b) in input.iter().enumerate() {
        let bbox = BoundingBox::new(b.bbox[0], b.bbox[1], b.bbox[2], b.bbox[3])
            .map_err(|e| format!("box {i}: {e}"))?;
        // the frame id carries the input index through NMS
        let c = DetectionCandidate::new(i.to_string(), bbox, b.score, None)
            .map_err(|e| format!("box {i}: {e}"))?;
        cands.push(c);
    }
    let table = cands
        .iter()
        .map(|a| cands.iter().map(|b| iou(&a.bbox, &b.bbox)).collect())
        .collect();
    let above: Vec<DetectionCandidate> = cands
        .into_iter()
        .filter(|c| c.score_primary >= conf)
        .collect();
    let mut kept: Vec<usize> = greedy_nms(above, nms_iou, |c| c.score_primary)
        .iter()
        .map(|c| c.frame_id.parse().expect("index id"))
        .collect();
    kept.sort_unstable();
    Ok(NmsView { kept, iou: table })
}

/// `boxes` is `[{"box": [x1, y1, x2, y2], "score": s}, ...]`. Returns the
/// pairwise IoU table and the indices that survive the confidence cut and
/// greedy NMS.
#[wasm_bindgen]
pub fn nms_explore(boxes: &str, conf: f64, nms_iou: f64) -> Result<String, JsValue> {
    let view = nms_view(boxes, conf, nms_iou).map_err(err)?;
    serde_json::to_string(&view).map_err(err)
}

fn corner_box(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(
        x.max(0.0),
        y.max(0.0),
        (x + w).max(x.max(0.0) + 1.0),
        (y + h).max(y.max(0.0) + 1.0),
    )
    .expect("positive size")
}

/// A small scene: one or two actors per frame, a tight detection per actor,
/// sometimes a loose duplicate, and some background clutter. The text score
/// is only attached when `dual` is set. Scores are
/// rounded to hundredths so threshold cells fall on clean boundaries.
fn scene(seed: u64, frames: usize, dual: bool) -> (Vec<DetectionCandidate>, GroundTruthSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score =
        |r: &mut ChaCha8Rng, lo: f64, hi: f64| (r.random_range(lo..hi) * 100.0).round() / 100.0;
    let mut cands = Vec::new();
    let mut gts = GroundTruthSet::new();
    for f in 0..frames {
        let frame = format!("f{f}");
        let mut boxes = Vec::new();
        for _ in 0..rng.random_range(1..=2) {
            let (x, y) = (rng.random_range(0.0..400.0), rng.random_range(0.0..300.0));
            let (w, h) = (rng.random_range(60.0..160.0), rng.random_range(80.0..200.0));
            let gt = corner_box(x, y, w, h);
            let near = |r: &mut ChaCha8Rng, amount: f64| {
                let mut d = || r.random_range(-amount..amount);
                corner_box(x + d(), y + d(), w + d(), h + d())
            };
            let tight = near(&mut rng, 8.0);
            let s1 = score(&mut rng, 0.4, 0.95);
            let s2 = score(&mut rng, 0.3, 0.9);
            cands.push(
                DetectionCandidate::new(&frame, tight, s1, dual.then_some(s2)).expect("valid"),
            );
            if rng.random_bool(0.3) {
                let loose = near(&mut rng, 30.0);
                let (s1, s2) = (score(&mut rng, 0.2, 0.7), score(&mut rng, 0.1, 0.6));
                cands.push(
                    DetectionCandidate::new(&frame, loose, s1, dual.then_some(s2)).expect("valid"),
                );
            }
            boxes.push(gt);
        }
        for _ in 0..rng.random_range(0..3) {
            let (x, y) = (rng.random_range(0.0..500.0), rng.random_range(0.0..380.0));
            let b = corner_box(
                x,
                y,
                rng.random_range(20.0..120.0),
                rng.random_range(20.0..120.0),
            );
            let (s1, s2) = (score(&mut rng, 0.0, 0.5), score(&mut rng, 0.0, 0.4));
            cands.push(DetectionCandidate::new(&frame, b, s1, dual.then_some(s2)).expect("valid"));
        }
        gts.insert(frame, boxes);
    }
    (cands, gts)
}

fn heatmap(
    seed: u64,
    frames: usize,
    mode: &str,
    recall_floor: f64,
) -> Result<serde_json::Value, String> {
    let base = match mode {
        "single" => FilterParams::Single {
            conf: 0.0,
            nms_iou: 0.5,
        },
        "dual" => FilterParams::Dual {
            box_thresh: 0.0,
            text_thresh: 0.0,
            nms_iou: None,
        },
        other => return Err(format!("mode must be single or dual, got {other:?}")),
    };
    let (cands, gts) = scene(seed, frames.max(1), mode == "dual");
    let axis = GridAxis::default();
    let surface = sweep(&cands, &gts, &base, &axis, &axis, 0.5).map_err(|e| e.to_string())?;
    let grid = |m: Metric| -> Vec<Vec<Option<f64>>> {
        (0..surface.axis1_values.len())
            .map(|i| {
                (0..surface.axis2_values.len())
                    .map(|j| surface.cell(i, j).metric(m))
                    .collect()
            })
            .collect()
    };
    let objective = Objective::MinPredicate {
        metric: Metric::Recall,
        bound: recall_floor,
    };
    let best = best_operating_point(&surface, objective)
        .ok()
        .map(|p| json!({"axis1": p.axis1, "axis2": p.axis2, "recall": p.report.recall, "accuracy": p.report.accuracy}));
    Ok(json!({
        "axis1_name": surface.axis1_name,
        "axis2_name": surface.axis2_name,
        "axis1": surface.axis1_values,
        "axis2": surface.axis2_values,
        "recall": grid(Metric::Recall),
        "accuracy": grid(Metric::Accuracy),
        "candidates": cands.len(),
        "ground_truth": gts.box_count(),
        "best": best,
    }))
}

/// Sweeps an 11 x 11 threshold grid over a seeded synthetic scene. `mode` is
/// `single` (conf x NMS IoU) or `dual` (box x text threshold). `best` is the
/// cell with the highest accuracy among those with recall at or above
/// `recall_floor`, or null.
#[wasm_bindgen]
pub fn sweep_heatmap(
    seed: u32,
    frames: u32,
    mode: &str,
    recall_floor: f64,
) -> Result<String, JsValue> {
    let v = heatmap(u64::from(seed), frames as usize, mode, recall_floor).map_err(err)?;
    Ok(v.to_string())
}

const TEMPLATES: [(&str, [[f64; 2]; 2]); 3] = [
    ("Screw", [[1.0, 0.15], [0.9, -0.2]]),
    ("Lift", [[-0.3, 1.0], [0.1, 0.95]]),
    ("Inspect", [[-0.95, -0.45], [-0.7, -0.8]]),
];

fn library() -> TemplateLibrary {
    let classes = TEMPLATES
        .iter()
        .map(|(name, ts)| {
            let embs = ts
                .iter()
                .enumerate()
                .map(|(i, t)| Embedding::new(format!("{name}-{i}"), t.to_vec()).expect("nonzero"))
                .collect();
            (name.to_string(), embs)
        })
        .collect();
    TemplateLibrary::new(classes).expect("fixed templates")
}

fn match_view(x: f64, y: f64, lambda: f64, aggregation: &str) -> Result<serde_json::Value, String> {
    let aggregation: Aggregation = aggregation.parse()?;
    let q = Embedding::new("query", vec![x, y]).map_err(|e| e.to_string())?;
    let cfg = MatchConfig {
        lambda,
        aggregation,
    };
    let d = classify(&q, &library(), &cfg).map_err(|e| e.to_string())?;
    let templates: Vec<_> = TEMPLATES
        .iter()
        .map(|(name, ts)| json!({"class": name, "points": ts}))
        .collect();
    Ok(json!({
        "label": d.label,
        "best_similarity": d.best_similarity,
        "per_class": d
            .per_class_similarity
            .iter()
            .map(|(class, sim)| json!({"class": class, "similarity": sim}))
            .collect::<Vec<_>>(),
        "templates": templates,
    }))
}

/// Classifies the 2-D point `(x, y)` against three fixed template classes.
/// Returns the label (`NG` below `lambda`), per-class similarities and the
/// templates for drawing.
#[wasm_bindgen]
pub fn match_point(x: f64, y: f64, lambda: f64, aggregation: &str) -> Result<String, JsValue> {
    Ok(match_view(x, y, lambda, aggregation)
        .map_err(err)?
        .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nms_keeps_the_best_of_a_cluster() {
        let boxes = r#"[
            {"box": [0, 0, 10, 10], "score": 0.9},
            {"box": [1, 1, 11, 11], "score": 0.8},
            {"box": [50, 50, 60, 60], "score": 0.7},
            {"box": [52, 50, 62, 60], "score": 0.1}
        ]"#;
        let v = nms_view(boxes, 0.2, 0.5).unwrap();
        assert_eq!(v.kept, [0, 2]);
        assert_eq!(v.iou.len(), 4);
        assert_eq!(v.iou[0][0], 1.0);
        assert_eq!(v.iou[0][1], v.iou[1][0]);
        // raising the NMS threshold past their overlap keeps both
        let v = nms_view(boxes, 0.0, 0.9).unwrap();
        assert_eq!(v.kept, [0, 1, 2, 3]);
    }

    #[test]
    fn nms_rejects_bad_boxes() {
        assert!(nms_view(r#"[{"box": [5, 0, 1, 1], "score": 0.5}]"#, 0.0, 0.5).is_err());
        assert!(nms_view("not json", 0.0, 0.5).is_err());
    }

    #[test]
    fn heatmap_is_a_full_grid() {
        let v = heatmap(3, 40, "dual", 0.8).unwrap();
        assert_eq!(v["recall"].as_array().unwrap().len(), 11);
        assert_eq!(v["recall"][0].as_array().unwrap().len(), 11);
        assert_eq!(v["axis1_name"], "box");
        assert_eq!(v["recall"][0][0], 1.0);
        assert!(v["best"]["recall"].as_f64().unwrap() >= 0.8);
        assert_eq!(heatmap(3, 40, "dual", 0.8).unwrap(), v);
        assert!(heatmap(3, 40, "triple", 0.8).is_err());
        assert_eq!(heatmap(3, 40, "single", 0.8).unwrap()["axis2_name"], "nms");
    }

    #[test]
    fn match_routes_to_ng_below_lambda() {
        let v = match_view(1.0, 0.0, 0.5, "max").unwrap();
        assert_eq!(v["label"], "Screw");
        let v = match_view(0.7, -0.7, 0.9, "max").unwrap();
        assert_eq!(v["label"], "NG");
        assert_eq!(v["per_class"][0]["class"], "Screw");
        assert_eq!(v["per_class"].as_array().unwrap().len(), 3);
        assert!(match_view(0.0, 0.0, 0.5, "max").is_err());
        assert!(match_view(1.0, 0.0, 0.5, "median").is_err());
    }
}
