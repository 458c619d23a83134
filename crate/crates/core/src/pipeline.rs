//! Stage orchestration over a work directory.
//!
//! ```text
//! sift      detections.jsonl            -> sifted.jsonl, sift_summary.json, sift.done
//! classify  sifted + embeddings + lib   -> decisions.jsonl, review/, classify.done
//! export    review/ + sift_summary      -> manifest.jsonl, export_summary.json, export.done
//! ```
//!
//! A stage refuses to run until the marker of the stage it depends on exists.
//! Markers record SHA-256 digests of every input and output so a rerun with
//! the same inputs can be checked byte for byte. Nothing here reads a clock;
//! the only timestamps live in the review decision log.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::{
    classify_batch, Aggregation, ClassDecision, ClassifyError, MatchConfig, TemplateLibrary,
    TemplateMapRecord,
};
use crate::eval::{FilterError, FilterParams, GridAxis};
use crate::jsonl::{self, write_atomic, IngestError};
use crate::model::{BoundingBox, DatasetManifest, DetectionCandidate, ManifestError};
use crate::review::{
    build_manifest, ExportError, PendingPolicy, ReviewError, ReviewItem, ReviewStore,
};

pub const SIFTED: &str = "sifted.jsonl";
pub const SIFT_SUMMARY: &str = "sift_summary.json";
pub const DECISIONS: &str = "decisions.jsonl";
pub const REVIEW_DIR: &str = "review";
pub const MANIFEST: &str = "manifest.jsonl";
pub const EXPORT_SUMMARY: &str = "export_summary.json";

const CROP_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "webp", "bmp"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("no embedding for kept item {0}")]
    MissingEmbedding(String),
    #[error("stage {0} has not completed in this workdir")]
    StageNotRun(&'static str),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl PipelineError {
    fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 validation, 2 I/O, 3 blocked on pending decisions.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. }
            | PipelineError::Ingest(IngestError::Io { .. })
            | PipelineError::Review(ReviewError::Io { .. })
            | PipelineError::Export(ExportError::Io { .. })
            | PipelineError::Export(ExportError::Ingest(IngestError::Io { .. })) => 2,
            PipelineError::Export(ExportError::PendingDecision(_)) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub detections: PathBuf,
    pub embeddings: PathBuf,
    /// Template embeddings; may be the same file as `embeddings`.
    pub templates: PathBuf,
    /// `{"class", "item_ids"}` lines naming the template items per class.
    pub template_map: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// Directory of `{item_id}.{png,jpg,...}` crops.
    #[serde(default)]
    pub crops: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_axis")]
    pub axis1: String,
    #[serde(default = "default_axis")]
    pub axis2: String,
}

fn default_axis() -> String {
    GridAxis::default().to_string()
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            axis1: default_axis(),
            axis2: default_axis(),
        }
    }
}

impl GridConfig {
    pub fn axes(&self) -> Result<(GridAxis, GridAxis), PipelineError> {
        let parse = |s: &str| {
            s.parse::<GridAxis>()
                .map_err(|e| PipelineError::Config(format!("grid {s:?}: {e}")))
        };
        Ok((parse(&self.axis1)?, parse(&self.axis2)?))
    }
}

fn default_t_iou() -> f64 {
    0.5
}

fn default_posts() -> u32 {
    1
}

fn default_port() -> u16 {
    8080
}

/// Configuration file (TOML). Relative paths resolve against the directory
/// holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario_name: String,
    pub paths: PathsConfig,
    pub filter: FilterParams,
    pub lambda: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_t_iou")]
    pub t_iou: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_posts")]
    pub posts_per_line: u32,
    #[serde(default = "default_port")]
    pub service_port: u16,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.detections,
            &mut p.embeddings,
            &mut p.templates,
            &mut p.template_map,
            &mut p.workdir,
        ] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        for path in [&mut p.ground_truth, &mut p.crops].into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.scenario_name.trim().is_empty() {
            return Err(PipelineError::Config("scenario_name is empty".into()));
        }
        self.filter.validate()?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(PipelineError::Config(format!(
                "lambda must be in (0,1), got {}",
                self.lambda
            )));
        }
        if !(self.t_iou > 0.0 && self.t_iou < 1.0) {
            return Err(PipelineError::Config(format!(
                "t_iou must be in (0,1), got {}",
                self.t_iou
            )));
        }
        if self.posts_per_line == 0 {
            return Err(PipelineError::Config(
                "posts_per_line must be at least 1".into(),
            ));
        }
        self.grid.axes()?;
        Ok(())
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            lambda: self.lambda,
            aggregation: self.aggregation,
        }
    }

    pub fn workdir(&self) -> &Path {
        &self.paths.workdir
    }

    pub fn review_dir(&self) -> PathBuf {
        self.paths.workdir.join(REVIEW_DIR)
    }
}

fn require_file(path: &Path) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::io(
            path,
            io::Error::new(io::ErrorKind::NotFound, "input file not found"),
        ))
    }
}

/// A kept candidate with its assigned item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftedRecord {
    pub item_id: String,
    pub frame_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftSummary {
    pub in_count: usize,
    pub kept_count: usize,
    pub filtered_count: usize,
    pub frame_count: usize,
    /// Frames with no surviving candidate.
    pub empty_frames: Vec<String>,
}

/// Filters candidates frame by frame (frames in first-appearance order) and
/// names each survivor `{frame_id}-{n}`, `n` counting survivors within the
/// frame in filter output order.
pub fn sift_candidates(
    cands: &[DetectionCandidate],
    filter: &FilterParams,
) -> Result<(Vec<SiftedRecord>, SiftSummary), FilterError> {
    let mut frames: IndexMap<&str, Vec<DetectionCandidate>> = IndexMap::new();
    for c in cands {
        frames.entry(&c.frame_id).or_default().push(c.clone());
    }
    let mut kept = Vec::new();
    let mut empty_frames = Vec::new();
    for (frame, group) in &frames {
        let survivors = filter.apply(group)?;
        if survivors.is_empty() {
            empty_frames.push(frame.to_string());
        }
        for (n, c) in survivors.into_iter().enumerate() {
            kept.push(SiftedRecord {
                item_id: format!("{frame}-{n}"),
                frame_id: c.frame_id,
                bbox: c.bbox,
                score: c.score_primary,
                score2: c.score_secondary,
            });
        }
    }
    let summary = SiftSummary {
        in_count: cands.len(),
        kept_count: kept.len(),
        filtered_count: cands.len() - kept.len(),
        frame_count: frames.len(),
        empty_frames,
    };
    Ok((kept, summary))
}

/// Stage-completion record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMarker {
    pub stage: String,
    pub inputs: IndexMap<String, String>,
    pub outputs: IndexMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[&Path]) -> Result<IndexMap<String, String>, PipelineError> {
    paths
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, sha256_file(p)?))
        })
        .collect()
}

pub fn marker_path(workdir: &Path, stage: &str) -> PathBuf {
    workdir.join(format!("{stage}.done"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        io::Write::write_all(w, b"\n")
    })
    .map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn stamp(
    workdir: &Path,
    stage: &str,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<StageMarker, PipelineError> {
    let marker = StageMarker {
        stage: stage.to_string(),
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
    };
    write_json(&marker_path(workdir, stage), &marker)?;
    Ok(marker)
}

pub fn read_marker(workdir: &Path, stage: &'static str) -> Result<StageMarker, PipelineError> {
    let path = marker_path(workdir, stage);
    if !path.is_file() {
        return Err(PipelineError::StageNotRun(stage));
    }
    read_json(&path)
}

fn ensure_workdir(cfg: &PipelineConfig) -> Result<&Path, PipelineError> {
    let dir = cfg.workdir();
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    Ok(dir)
}

/// Stage A: filter the detector output.
pub fn run_sift(cfg: &PipelineConfig) -> Result<SiftSummary, PipelineError> {
    require_file(&cfg.paths.detections)?;
    let dir = ensure_workdir(cfg)?;
    let cands = jsonl::ingest_detections(&cfg.paths.detections)?;
    let (kept, summary) = sift_candidates(&cands, &cfg.filter)?;
    let out = dir.join(SIFTED);
    jsonl::write_jsonl(&out, &kept).map_err(|e| PipelineError::io(&out, e))?;
    let sum = dir.join(SIFT_SUMMARY);
    write_json(&sum, &summary)?;
    stamp(dir, "sift", &[&cfg.paths.detections], &[&out, &sum])?;
    Ok(summary)
}

pub fn read_sifted(path: &Path) -> Result<Vec<SiftedRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                PipelineError::Ingest(IngestError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
        })
        .collect()
}

pub fn read_template_map(path: &Path) -> Result<Vec<TemplateMapRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                PipelineError::Ingest(IngestError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
        })
        .collect()
}

/// Loads the template library, taking the embedding dimension from the
/// template file itself.
pub fn load_library(templates: &Path, map: &Path) -> Result<TemplateLibrary, PipelineError> {
    require_file(templates)?;
    require_file(map)?;
    let dim = jsonl::sniff_embedding_dim(templates)?
        .ok_or_else(|| PipelineError::Config(format!("{} is empty", templates.display())))?;
    let temps = jsonl::ingest_embeddings(templates, dim)?;
    let map = read_template_map(map)?;
    Ok(TemplateLibrary::from_map(&temps, &map)?)
}

fn find_crop(dir: &Path, item_id: &str) -> Option<PathBuf> {
    CROP_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{item_id}.{ext}")))
        .find(|p| p.is_file())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifySummary {
    pub items: usize,
    pub ng: usize,
    pub per_label: IndexMap<String, usize>,
}

/// Stage B: label every sifted item and seed the review queue with all of
/// them as pending. Re-running resets the review store.
pub fn run_classify(cfg: &PipelineConfig) -> Result<ClassifySummary, PipelineError> {
    let dir = cfg.workdir();
    read_marker(dir, "sift")?;
    let sifted_path = dir.join(SIFTED);
    let sifted = read_sifted(&sifted_path)?;
    let lib = load_library(&cfg.paths.templates, &cfg.paths.template_map)?;
    require_file(&cfg.paths.embeddings)?;
    let embeddings = jsonl::ingest_embeddings(&cfg.paths.embeddings, lib.dim())?;
    let queries = sifted
        .iter()
        .map(|s| {
            embeddings
                .get(&s.item_id)
                .cloned()
                .ok_or_else(|| PipelineError::MissingEmbedding(s.item_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let decisions = classify_batch(&queries, &lib, &cfg.match_config())?;

    let out = dir.join(DECISIONS);
    jsonl::write_jsonl(&out, &decisions).map_err(|e| PipelineError::io(&out, e))?;

    let items = seed_items(&sifted, &decisions, cfg.paths.crops.as_deref());
    let classes = lib.classes_with_ng();
    let mut per_label: IndexMap<String, usize> = classes.iter().map(|c| (c.clone(), 0)).collect();
    for d in &decisions {
        *per_label.entry(d.label.clone()).or_default() += 1;
    }
    ReviewStore::create(&cfg.review_dir(), classes, items)?;

    let review_items = cfg.review_dir().join(crate::review::ITEMS_FILE);
    stamp(
        dir,
        "classify",
        &[
            &sifted_path,
            &cfg.paths.embeddings,
            &cfg.paths.templates,
            &cfg.paths.template_map,
        ],
        &[&out, &review_items],
    )?;
    Ok(ClassifySummary {
        items: decisions.len(),
        ng: decisions.iter().filter(|d| d.is_ng()).count(),
        per_label,
    })
}

fn seed_items(
    sifted: &[SiftedRecord],
    decisions: &[ClassDecision],
    crops: Option<&Path>,
) -> Vec<ReviewItem> {
    sifted
        .iter()
        .zip(decisions)
        .map(|(s, d)| {
            let mut item = ReviewItem::pending(
                s.item_id.clone(),
                s.frame_id.clone(),
                s.bbox,
                d.label.clone(),
                d.best_similarity,
            );
            item.crop_path = crops.and_then(|c| find_crop(c, &s.item_id));
            item
        })
        .collect()
}

/// Table-1-shaped dataset summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub scenario: String,
    pub frames: u64,
    pub items: usize,
    pub skipped_pending: usize,
    pub class_counts: IndexMap<String, usize>,
}

/// Builds the manifest from the current review state without writing it.
pub fn export_manifest(
    cfg: &PipelineConfig,
    store: &ReviewStore,
    pending: PendingPolicy,
) -> Result<(DatasetManifest, usize), PipelineError> {
    let dir = cfg.workdir();
    read_marker(dir, "classify")?;
    let sift: SiftSummary = read_json(&dir.join(SIFT_SUMMARY))?;
    let base = DatasetManifest::new(
        cfg.scenario_name.clone(),
        store.classes().to_vec(),
        sift.frame_count as u64,
        vec![],
    )?;
    let items: Vec<ReviewItem> = store.items().cloned().collect();
    Ok(build_manifest(&base, &items, pending)?)
}

/// Stage C: write the labelled dataset.
pub fn run_export(
    cfg: &PipelineConfig,
    pending: PendingPolicy,
) -> Result<ExportSummary, PipelineError> {
    read_marker(cfg.workdir(), "classify")?;
    let store = ReviewStore::open(&cfg.review_dir())?;
    let (manifest, skipped) = export_manifest(cfg, &store, pending)?;
    let dir = cfg.workdir();
    let out = dir.join(MANIFEST);
    jsonl::write_manifest(&out, &manifest).map_err(|e| PipelineError::io(&out, e))?;
    let summary = ExportSummary {
        scenario: manifest.scenario_name.clone(),
        frames: manifest.frame_count,
        items: manifest.items.len(),
        skipped_pending: skipped,
        class_counts: manifest.class_counts().into_iter().collect(),
    };
    let sum = dir.join(EXPORT_SUMMARY);
    write_json(&sum, &summary)?;
    let log = cfg.review_dir().join(crate::review::LOG_FILE);
    stamp(dir, "export", &[&log], &[&out, &sum])?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{generate, FixtureSpec};
    use crate::review::Action;

    fn setup() -> (tempfile::TempDir, PipelineConfig) {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            frames: 30,
            ..FixtureSpec::default()
        };
        let cfg_path = generate(&spec, dir.path()).unwrap();
        let cfg = PipelineConfig::load(&cfg_path).unwrap();
        (dir, cfg)
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let (_d, cfg) = setup();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg.clone();
        bad.lambda = 1.5;
        assert!(matches!(bad.validate(), Err(PipelineError::Config(_))));
        let text = cfg.to_toml().replace("scenario_name", "scenario");
        assert!(PipelineConfig::from_toml(&text).is_err());
    }

    #[test]
    fn sift_conservation_and_trivial_thresholds() {
        let (_d, mut cfg) = setup();
        let s = run_sift(&cfg).unwrap();
        assert_eq!(s.in_count, s.kept_count + s.filtered_count);
        assert_eq!(
            jsonl::line_count(&cfg.workdir().join(SIFTED)).unwrap(),
            s.kept_count
        );
        assert_eq!(
            s.in_count,
            jsonl::line_count(&cfg.paths.detections).unwrap()
        );

        let cands = jsonl::ingest_detections(&cfg.paths.detections).unwrap();
        let zero = cfg.filter.with_axes(0.0, 0.0);
        let (kept, _) = sift_candidates(&cands, &zero).unwrap();
        assert_eq!(kept.len(), cands.len());

        cfg.filter = cfg.filter.with_axes(1.0, 1.0);
        let s = run_sift(&cfg).unwrap();
        assert_eq!(s.kept_count, 0);
        assert_eq!(s.empty_frames.len(), s.frame_count);
        assert!(cfg.workdir().join(SIFT_SUMMARY).is_file());
    }

    #[test]
    fn classify_requires_sift_and_embeddings() {
        let (_d, cfg) = setup();
        assert!(matches!(
            run_classify(&cfg),
            Err(PipelineError::StageNotRun("sift"))
        ));
        run_sift(&cfg).unwrap();
        let sum = run_classify(&cfg).unwrap();
        let store = ReviewStore::open(&cfg.review_dir()).unwrap();
        assert_eq!(store.len(), sum.items);
        assert_eq!(
            jsonl::line_count(&cfg.workdir().join(DECISIONS)).unwrap(),
            sum.items
        );

        // drop the first sifted item's embedding
        let sifted = read_sifted(&cfg.workdir().join(SIFTED)).unwrap();
        let victim = &sifted[0].item_id;
        let text = fs::read_to_string(&cfg.paths.embeddings).unwrap();
        let kept: String = text
            .lines()
            .filter(|l| !l.contains(&format!("\"{victim}\"")))
            .map(|l| format!("{l}\n"))
            .collect();
        fs::write(&cfg.paths.embeddings, kept).unwrap();
        match run_classify(&cfg) {
            Err(PipelineError::MissingEmbedding(id)) => assert_eq!(&id, victim),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn export_blocks_on_pending() {
        let (_d, cfg) = setup();
        run_sift(&cfg).unwrap();
        run_classify(&cfg).unwrap();
        let err = run_export(&cfg, PendingPolicy::Block).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let s = run_export(&cfg, PendingPolicy::Skip).unwrap();
        assert_eq!(s.items, 0);

        let mut store = ReviewStore::open(&cfg.review_dir()).unwrap();
        let ids: Vec<String> = store.items().map(|i| i.item_id.clone()).collect();
        for (n, id) in ids.iter().enumerate() {
            let action = if n % 5 == 0 {
                Action::Reject
            } else {
                Action::Accept
            };
            store.apply(id, action).unwrap();
        }
        drop(store);
        let s = run_export(&cfg, PendingPolicy::Block).unwrap();
        assert_eq!(s.items, ids.len() - ids.len().div_ceil(5));
        assert_eq!(s.class_counts.values().sum::<usize>(), s.items);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 1);
        assert_eq!(
            PipelineError::io(Path::new("x"), io::Error::other("boom")).exit_code(),
            2
        );
        assert_eq!(PipelineError::MissingEmbedding("a".into()).exit_code(), 1);
    }
}
