//! Line-oriented JSON persistence.
//!
//! Every file the toolkit reads or writes holds one JSON record per line.
//! Readers come in two flavours: `scan_*` collects every accepted record and
//! every per-line error (nothing is dropped silently), and the plain `ingest_*`
//! functions fail on the first bad line. Line numbers are 1-based.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_box, BoundingBox, DatasetManifest, DetectionCandidate, Embedding, EmbeddingError,
    GroundTruthSet, ManifestError, ManifestItem,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: validation error: {cause}")]
    Validation { line: usize, cause: String },
    #[error("line {line}: embedding {item_id} has dimension {got}, expected {expected}")]
    DimMismatch {
        line: usize,
        item_id: String,
        got: usize,
        expected: usize,
    },
    #[error("line {line}: embedding {item_id} has zero norm")]
    ZeroNorm { line: usize, item_id: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
}

impl IngestError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1-based line number the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Parse { line, .. }
            | IngestError::Validation { line, .. }
            | IngestError::DimMismatch { line, .. }
            | IngestError::ZeroNorm { line, .. }
            | IngestError::DuplicateId { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Outcome of a lenient scan. `accepted.len() + errors.len() == line_count`.
#[derive(Debug)]
pub struct IngestReport<T> {
    pub accepted: Vec<(usize, T)>,
    pub errors: Vec<IngestError>,
    pub line_count: usize,
}

impl<T> IngestReport<T> {
    pub fn into_result(self) -> Result<Vec<T>, IngestError> {
        match self.errors.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(self.accepted.into_iter().map(|(_, v)| v).collect()),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, IngestError> {
    let file = fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| IngestError::io(path, e))
}

fn parse_line<'a, T: Deserialize<'a>>(line: usize, text: &'a str) -> Result<T, IngestError> {
    if text.trim().is_empty() {
        return Err(IngestError::Parse {
            line,
            msg: "blank line".into(),
        });
    }
    serde_json::from_str(text).map_err(|e| IngestError::Parse {
        line,
        msg: e.to_string(),
    })
}

fn scan_with<T>(
    path: &Path,
    mut parse: impl FnMut(usize, &str) -> Result<T, IngestError>,
) -> Result<IngestReport<T>, IngestError> {
    let lines = read_lines(path)?;
    let mut report = IngestReport {
        accepted: Vec::new(),
        errors: Vec::new(),
        line_count: lines.len(),
    };
    for (i, text) in lines.iter().enumerate() {
        match parse(i + 1, text) {
            Ok(v) => report.accepted.push((i + 1, v)),
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default)]
    pub score2: Option<f64>,
}

impl From<&DetectionCandidate> for DetectionRecord {
    fn from(c: &DetectionCandidate) -> Self {
        DetectionRecord {
            frame_id: c.frame_id.clone(),
            bbox: c.bbox.corners(),
            score: c.score_primary,
            score2: c.score_secondary,
        }
    }
}

fn detection_from_line(line: usize, text: &str) -> Result<DetectionCandidate, IngestError> {
    let rec: DetectionRecord = parse_line(line, text)?;
    let invalid = |cause: String| IngestError::Validation { line, cause };
    let bbox = validate_box(rec.bbox).map_err(|e| invalid(e.to_string()))?;
    DetectionCandidate::new(rec.frame_id, bbox, rec.score, rec.score2)
        .map_err(|e| invalid(e.to_string()))
}

pub fn scan_detections(path: &Path) -> Result<IngestReport<DetectionCandidate>, IngestError> {
    scan_with(path, detection_from_line)
}

/// Reads a detections file, preserving line order.
pub fn ingest_detections(path: &Path) -> Result<Vec<DetectionCandidate>, IngestError> {
    scan_detections(path)?.into_result()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub item_id: String,
    pub vector: Vec<f64>,
}

pub fn scan_embeddings(
    path: &Path,
    expected_dim: usize,
) -> Result<IngestReport<Embedding>, IngestError> {
    let mut seen = std::collections::HashSet::new();
    scan_with(path, |line, text| {
        let rec: EmbeddingRecord = parse_line(line, text)?;
        if rec.vector.len() != expected_dim {
            return Err(IngestError::DimMismatch {
                line,
                item_id: rec.item_id,
                got: rec.vector.len(),
                expected: expected_dim,
            });
        }
        if !seen.insert(rec.item_id.clone()) {
            return Err(IngestError::DuplicateId {
                line,
                id: rec.item_id,
            });
        }
        Embedding::new(rec.item_id, rec.vector).map_err(|e| match e {
            EmbeddingError::ZeroNorm(item_id) => IngestError::ZeroNorm { line, item_id },
            other => IngestError::Validation {
                line,
                cause: other.to_string(),
            },
        })
    })
}

/// Reads an embeddings file into an id-keyed map that keeps file order.
pub fn ingest_embeddings(
    path: &Path,
    expected_dim: usize,
) -> Result<IndexMap<String, Embedding>, IngestError> {
    Ok(scan_embeddings(path, expected_dim)?
        .into_result()?
        .into_iter()
        .map(|e| (e.item_id().to_string(), e))
        .collect())
}

/// Dimension of the first record in an embeddings file, if it has one.
pub fn sniff_embedding_dim(path: &Path) -> Result<Option<usize>, IngestError> {
    let lines = read_lines(path)?;
    match lines.first() {
        Some(text) => {
            let rec: EmbeddingRecord = parse_line(1, text)?;
            Ok(Some(rec.vector.len()))
        }
        None => Ok(None),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub frame_id: String,
    pub boxes: Vec<[f64; 4]>,
}

pub fn ingest_ground_truth(path: &Path) -> Result<GroundTruthSet, IngestError> {
    let mut gts = GroundTruthSet::new();
    let report = scan_with(path, |line, text| {
        let rec: GroundTruthRecord = parse_line(line, text)?;
        if rec.frame_id.is_empty() {
            return Err(IngestError::Validation {
                line,
                cause: "frame_id is empty".into(),
            });
        }
        if gts.contains(&rec.frame_id) {
            return Err(IngestError::DuplicateId {
                line,
                id: rec.frame_id,
            });
        }
        let boxes = rec
            .boxes
            .into_iter()
            .map(validate_box)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IngestError::Validation {
                line,
                cause: e.to_string(),
            })?;
        gts.insert(rec.frame_id, boxes);
        Ok(())
    })?;
    report.into_result()?;
    Ok(gts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestHeader {
    scenario: String,
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<u64>,
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let lines = read_lines(path)?;
    let Some(first) = lines.first() else {
        return Err(IngestError::Parse {
            line: 1,
            msg: "missing manifest header".into(),
        });
    };
    let header: ManifestHeader = parse_line(1, first)?;
    let items = lines[1..]
        .iter()
        .enumerate()
        .map(|(i, text)| parse_line::<ManifestItem>(i + 2, text))
        .collect::<Result<Vec<_>, _>>()?;
    let frame_count = header.frame_count.unwrap_or_else(|| {
        let frames: std::collections::HashSet<_> = items.iter().map(|i| &i.frame_id).collect();
        frames.len() as u64
    });
    Ok(DatasetManifest::new(
        header.scenario,
        header.classes,
        frame_count,
        items,
    )?)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> io::Result<()> {
    let header = ManifestHeader {
        scenario: manifest.scenario_name.clone(),
        classes: manifest.class_names.clone(),
        frame_count: Some(manifest.frame_count),
    };
    write_atomic(path, |w| {
        write_record(w, &header)?;
        for item in &manifest.items {
            write_record(w, item)?;
        }
        Ok(())
    })
}

/// Serializes one record followed by a newline.
pub fn write_record<W: Write, T: Serialize>(w: &mut W, record: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> io::Result<()> {
    write_atomic(path, |w| {
        for r in records {
            write_record(w, r)?;
        }
        Ok(())
    })
}

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a half-written file.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Counts the lines in a text file.
pub fn line_count(path: &Path) -> Result<usize, IngestError> {
    Ok(read_lines(path)?.len())
}

/// Convenience for tests and fixtures.
pub fn detection_records(cands: &[DetectionCandidate]) -> Vec<DetectionRecord> {
    cands.iter().map(DetectionRecord::from).collect()
}

pub fn ground_truth_records(gts: &GroundTruthSet) -> Vec<GroundTruthRecord> {
    gts.frames()
        .map(|(f, boxes)| GroundTruthRecord {
            frame_id: f.to_string(),
            boxes: boxes.iter().map(BoundingBox::corners).collect(),
        })
        .collect()
}
