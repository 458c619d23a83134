//! Seeded synthetic scenario generator.
//!
//! Produces a complete pipeline input set in a directory: detector output
//! with box and text scores, ground truth, item and template embeddings,
//! the template map, per-item truth labels and a `config.toml` pointing at
//! all of them. Item embeddings are generated for exactly the candidates the
//! configured filter keeps, standing in for the upstream crop/embed step.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::{Aggregation, TemplateMapRecord};
use crate::eval::iou;
use crate::eval::FilterParams;
use crate::jsonl::{self, DetectionRecord, EmbeddingRecord, GroundTruthRecord};
use crate::model::{validate_box, BoundingBox, NG};
use crate::pipeline::{sift_candidates, GridConfig, PathsConfig, PipelineConfig};

pub const CONFIG: &str = "config.toml";
pub const TRUTH: &str = "truth.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub scenario_name: String,
    pub seed: u64,
    pub frames: usize,
    pub classes: Vec<String>,
    pub dim: usize,
    pub templates_per_class: usize,
    /// Per-coordinate noise added to class centroids.
    pub noise: f64,
    /// Fraction of actors doing something irrelevant.
    pub ng_rate: f64,
    pub lambda: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            scenario_name: "synthetic-line".into(),
            seed: 7,
            frames: 200,
            classes: vec!["Act1".into(), "Act2".into(), "Act3".into()],
            dim: 32,
            templates_per_class: 3,
            noise: 0.08,
            ng_rate: 0.12,
            lambda: 0.5,
        }
    }
}

/// Ground-truth item label, used to score classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub item_id: String,
    pub label: String,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;

fn tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn hundredth(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(60.0..200.0);
    let h = rng.random_range(80.0..260.0);
    let x1 = rng.random_range(0.0..WIDTH - w);
    let y1 = rng.random_range(0.0..HEIGHT - h);
    validate_box([tenth(x1), tenth(y1), tenth(x1 + w), tenth(y1 + h)]).expect("positive size")
}

fn jitter(b: &BoundingBox, rng: &mut ChaCha8Rng, amount: f64) -> BoundingBox {
    let mut d = || rng.random_range(-amount..amount);
    let (x1, y1) = (b.x1() + d(), b.y1() + d());
    let (x2, y2) = (b.x2() + d(), b.y2() + d());
    validate_box([
        tenth(x1.max(0.0)),
        tenth(y1.max(0.0)),
        tenth(x2.max(x1.max(0.0) + 1.0)),
        tenth(y2.max(y1.max(0.0) + 1.0)),
    ])
    .expect("jittered box stays valid")
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    let n = Normal::new(0.0, sigma).expect("sigma is positive");
    (0..dim).map(|_| n.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn near(center: &[f64], rng: &mut ChaCha8Rng, sigma: f64) -> Vec<f64> {
    let noise = gaussian_vec(rng, center.len(), sigma);
    center.iter().zip(noise).map(|(c, e)| c + e).collect()
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> io::Error + '_ {
    move |e| io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

/// Writes the scenario into `dir` and returns the config path.
pub fn generate(spec: &FixtureSpec, dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let filter = FilterParams::Dual {
        box_thresh: 0.35,
        text_thresh: 0.25,
        nms_iou: None,
    };

    let mut detections = Vec::new();
    let mut ground_truth = Vec::new();
    // (frame, box, label) of every actor
    let mut actors: Vec<(String, BoundingBox, String)> = Vec::new();
    for f in 0..spec.frames {
        let frame = format!("f{f:05}");
        let n_actors = if rng.random_bool(0.15) {
            0
        } else {
            rng.random_range(1..=2)
        };
        let mut boxes = Vec::new();
        for _ in 0..n_actors {
            let b = random_box(&mut rng);
            let label = if rng.random_bool(spec.ng_rate) {
                NG.to_string()
            } else {
                spec.classes[rng.random_range(0..spec.classes.len())].clone()
            };
            detections.push(DetectionRecord {
                frame_id: frame.clone(),
                bbox: jitter(&b, &mut rng, 6.0).corners(),
                score: hundredth(rng.random_range(0.45..0.95)),
                score2: Some(hundredth(rng.random_range(0.35..0.9))),
            });
            if rng.random_bool(0.2) {
                detections.push(DetectionRecord {
                    frame_id: frame.clone(),
                    bbox: jitter(&b, &mut rng, 25.0).corners(),
                    score: hundredth(rng.random_range(0.2..0.6)),
                    score2: Some(hundredth(rng.random_range(0.1..0.5))),
                });
            }
            boxes.push(b);
            actors.push((frame.clone(), b, label));
        }
        for _ in 0..rng.random_range(0..3) {
            detections.push(DetectionRecord {
                frame_id: frame.clone(),
                bbox: random_box(&mut rng).corners(),
                score: hundredth(rng.random_range(0.0..0.4)),
                score2: Some(hundredth(rng.random_range(0.0..0.3))),
            });
        }
        ground_truth.push(GroundTruthRecord {
            frame_id: frame,
            boxes: boxes.iter().map(BoundingBox::corners).collect(),
        });
    }

    let centroids: Vec<Vec<f64>> = spec
        .classes
        .iter()
        .map(|_| unit(gaussian_vec(&mut rng, spec.dim, 1.0)))
        .collect();

    let mut templates = Vec::new();
    let mut map = Vec::new();
    for (c, class) in spec.classes.iter().enumerate() {
        let ids: Vec<String> = (0..spec.templates_per_class)
            .map(|i| format!("tmpl-{class}-{i}"))
            .collect();
        for id in &ids {
            templates.push(EmbeddingRecord {
                item_id: id.clone(),
                vector: near(&centroids[c], &mut rng, spec.noise),
            });
        }
        map.push(TemplateMapRecord {
            class: class.clone(),
            item_ids: ids,
        });
    }

    let cands = detections
        .iter()
        .map(|d| {
            let b = validate_box(d.bbox).expect("generated box");
            crate::model::DetectionCandidate::new(d.frame_id.clone(), b, d.score, d.score2)
                .expect("generated candidate")
        })
        .collect::<Vec<_>>();
    let (kept, _) = sift_candidates(&cands, &filter).expect("generated filter is valid");
    let mut embeddings = Vec::new();
    let mut truth = Vec::new();
    for k in &kept {
        let best = actors
            .iter()
            .filter(|(f, _, _)| *f == k.frame_id)
            .map(|(_, b, l)| (iou(b, &k.bbox), l))
            .filter(|(o, _)| *o >= 0.5)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let label = best.map_or(NG, |(_, l)| l.as_str()).to_string();
        let vector = match spec.classes.iter().position(|c| *c == label) {
            Some(c) => near(&centroids[c], &mut rng, spec.noise),
            None => gaussian_vec(&mut rng, spec.dim, 1.0),
        };
        embeddings.push(EmbeddingRecord {
            item_id: k.item_id.clone(),
            vector,
        });
        truth.push(TruthRecord {
            item_id: k.item_id.clone(),
            label,
        });
    }

    let write = |name: &str, body: &dyn Fn(&Path) -> io::Result<()>| {
        let p = dir.join(name);
        body(&p).map_err(io_err(&p))
    };
    write("detections.jsonl", &|p| jsonl::write_jsonl(p, &detections))?;
    write("ground_truth.jsonl", &|p| {
        jsonl::write_jsonl(p, &ground_truth)
    })?;
    write("embeddings.jsonl", &|p| jsonl::write_jsonl(p, &embeddings))?;
    write("templates.jsonl", &|p| jsonl::write_jsonl(p, &templates))?;
    write("template_map.jsonl", &|p| jsonl::write_jsonl(p, &map))?;
    write(TRUTH, &|p| jsonl::write_jsonl(p, &truth))?;

    let cfg = PipelineConfig {
        scenario_name: spec.scenario_name.clone(),
        paths: PathsConfig {
            detections: "detections.jsonl".into(),
            embeddings: "embeddings.jsonl".into(),
            templates: "templates.jsonl".into(),
            template_map: "template_map.jsonl".into(),
            ground_truth: Some("ground_truth.jsonl".into()),
            crops: None,
            workdir: "work".into(),
        },
        filter,
        lambda: spec.lambda,
        aggregation: Aggregation::Max,
        t_iou: 0.5,
        grid: GridConfig::default(),
        posts_per_line: 20,
        service_port: 8080,
    };
    let path = dir.join(CONFIG);
    fs::write(&path, cfg.to_toml()).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_truth(path: &Path) -> io::Result<Vec<TruthRecord>> {
    fs::read_to_string(path)?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(io::Error::other))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            frames: 20,
            ..FixtureSpec::default()
        };
        generate(&spec, a.path()).unwrap();
        generate(&spec, b.path()).unwrap();
        for name in ["detections.jsonl", "embeddings.jsonl", TRUTH, CONFIG] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn inputs_ingest_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = generate(&FixtureSpec::default(), dir.path()).unwrap();
        let cfg = PipelineConfig::load(&cfg).unwrap();
        let cands = jsonl::ingest_detections(&cfg.paths.detections).unwrap();
        let gts = jsonl::ingest_ground_truth(cfg.paths.ground_truth.as_ref().unwrap()).unwrap();
        assert_eq!(gts.frame_count(), 200);
        assert!(cands.len() > gts.box_count());
        let truth = read_truth(&dir.path().join(TRUTH)).unwrap();
        assert!(truth.iter().any(|t| t.label == NG));
        assert!(truth.iter().any(|t| t.label == "Act2"));
    }
}
