//! Human review queue backed by an append-only decision log.
//!
//! A store directory holds three files:
//!
//! * `classes.json`: ordered class list, `NG` last.
//! * `items.jsonl`: the seeded review items, all pending.
//! * `decisions.log.jsonl`: one line per decision, appended and synced before
//!   the in-memory state changes.
//!
//! Opening a store replays the log over the seed, so the state after a restart
//! is exactly the state before it. A torn final line (crash mid-write, no
//! trailing newline) is dropped; any other bad line is corruption.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, write_atomic, IngestError};
use crate::model::{BoundingBox, DatasetManifest, ManifestError, ManifestItem, NG};

pub const CLASSES_FILE: &str = "classes.json";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const LOG_FILE: &str = "decisions.log.jsonl";

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("item {0} not found")]
    NotFound(String),
    #[error("item {0} was already decided")]
    AlreadyDecided(String),
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("relabel needs a label")]
    MissingLabel,
    #[error("unknown action {0:?} (accept|reject|relabel)")]
    BadAction(String),
    #[error("review store corrupt: {0}")]
    StoreCorrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ReviewError {
    fn io(path: &Path, source: io::Error) -> Self {
        ReviewError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
    Relabeled(String),
}

impl ReviewStatus {
    pub fn is_pending(&self) -> bool {
        matches!(self, ReviewStatus::Pending)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReviewStatus::Pending => "pending",
            ReviewStatus::Accepted => "accepted",
            ReviewStatus::Rejected => "rejected",
            ReviewStatus::Relabeled(_) => "relabeled",
        }
    }
}

/// One proposed label awaiting (or having received) a human decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ReviewItemWire", try_from = "ReviewItemWire")]
pub struct ReviewItem {
    pub item_id: String,
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub proposed_label: String,
    pub best_similarity: f64,
    pub status: ReviewStatus,
    pub decided_at: Option<DateTime<Utc>>,
    pub crop_path: Option<PathBuf>,
}

impl ReviewItem {
    pub fn pending(
        item_id: impl Into<String>,
        frame_id: impl Into<String>,
        bbox: BoundingBox,
        proposed_label: impl Into<String>,
        best_similarity: f64,
    ) -> Self {
        ReviewItem {
            item_id: item_id.into(),
            frame_id: frame_id.into(),
            bbox,
            proposed_label: proposed_label.into(),
            best_similarity,
            status: ReviewStatus::Pending,
            decided_at: None,
            crop_path: None,
        }
    }

    /// Proposed for `NG`, reviewed first.
    pub fn ng_flagged(&self) -> bool {
        self.proposed_label == NG
    }

    /// Label the item carries into the dataset, if it is kept.
    pub fn final_label(&self) -> Option<&str> {
        match &self.status {
            ReviewStatus::Accepted => Some(&self.proposed_label),
            ReviewStatus::Relabeled(l) => Some(l),
            ReviewStatus::Pending | ReviewStatus::Rejected => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReviewItemWire {
    item_id: String,
    frame_id: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    proposed_label: String,
    best_similarity: f64,
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relabeled_to: Option<String>,
    #[serde(default)]
    decided_at: Option<DateTime<Utc>>,
    #[serde(default)]
    crop_path: Option<PathBuf>,
    #[serde(default)]
    ng_flagged: bool,
}

impl From<ReviewItem> for ReviewItemWire {
    fn from(i: ReviewItem) -> Self {
        let ng_flagged = i.ng_flagged();
        let (status, relabeled_to) = match i.status {
            ReviewStatus::Relabeled(l) => ("relabeled".to_string(), Some(l)),
            s => (s.name().to_string(), None),
        };
        ReviewItemWire {
            item_id: i.item_id,
            frame_id: i.frame_id,
            bbox: i.bbox,
            proposed_label: i.proposed_label,
            best_similarity: i.best_similarity,
            status,
            relabeled_to,
            decided_at: i.decided_at,
            crop_path: i.crop_path,
            ng_flagged,
        }
    }
}

impl TryFrom<ReviewItemWire> for ReviewItem {
    type Error = String;

    fn try_from(w: ReviewItemWire) -> Result<Self, Self::Error> {
        let status = match (w.status.as_str(), w.relabeled_to) {
            ("pending", None) => ReviewStatus::Pending,
            ("accepted", None) => ReviewStatus::Accepted,
            ("rejected", None) => ReviewStatus::Rejected,
            ("relabeled", Some(l)) => ReviewStatus::Relabeled(l),
            (s, _) => return Err(format!("bad status {s:?}")),
        };
        Ok(ReviewItem {
            item_id: w.item_id,
            frame_id: w.frame_id,
            bbox: w.bbox,
            proposed_label: w.proposed_label,
            best_similarity: w.best_similarity,
            status,
            decided_at: w.decided_at,
            crop_path: w.crop_path,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "label", rename_all = "lowercase")]
pub enum Action {
    Accept,
    Reject,
    Relabel(String),
}

impl Action {
    /// Parses the HTTP/CLI form: `accept`, `reject`, or `relabel` plus a label.
    pub fn parse(action: &str, label: Option<&str>) -> Result<Self, ReviewError> {
        match action {
            "accept" => Ok(Action::Accept),
            "reject" => Ok(Action::Reject),
            "relabel" => label
                .map(|l| Action::Relabel(l.to_string()))
                .ok_or(ReviewError::MissingLabel),
            other => Err(ReviewError::BadAction(other.to_string())),
        }
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub item_id: String,
    #[serde(flatten)]
    pub action: Action,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueFilter {
    Pending,
    Decided,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReviewStats {
    pub pending: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub relabeled: u64,
    /// Final labels of kept (accepted or relabeled) items, in class order.
    pub per_class_counts: IndexMap<String, u64>,
}

/// In-memory review state plus its durable log. Mutations go through
/// [`ReviewStore::apply`]; callers sharing a store across threads must
/// serialize writers themselves (e.g. behind a lock).
#[derive(Debug)]
pub struct ReviewStore {
    dir: PathBuf,
    classes: Vec<String>,
    items: BTreeMap<String, ReviewItem>,
    log: File,
    next_seq: u64,
}

impl ReviewStore {
    /// Initialises a fresh store in `dir`, replacing any previous one.
    pub fn create(
        dir: &Path,
        classes: Vec<String>,
        items: Vec<ReviewItem>,
    ) -> Result<Self, ReviewError> {
        if classes.last().map(String::as_str) != Some(NG) {
            return Err(ReviewError::StoreCorrupt(format!(
                "class list must end with {NG}"
            )));
        }
        fs::create_dir_all(dir).map_err(|e| ReviewError::io(dir, e))?;
        let cpath = dir.join(CLASSES_FILE);
        write_atomic(&cpath, |w| {
            serde_json::to_writer(&mut *w, &classes)?;
            w.write_all(b"\n")
        })
        .map_err(|e| ReviewError::io(&cpath, e))?;
        let ipath = dir.join(ITEMS_FILE);
        jsonl::write_jsonl(&ipath, &items).map_err(|e| ReviewError::io(&ipath, e))?;
        let lpath = dir.join(LOG_FILE);
        File::create(&lpath).map_err(|e| ReviewError::io(&lpath, e))?;
        Self::open(dir)
    }

    /// Loads the seed and replays the decision log.
    pub fn open(dir: &Path) -> Result<Self, ReviewError> {
        let cpath = dir.join(CLASSES_FILE);
        let text = fs::read_to_string(&cpath).map_err(|e| ReviewError::io(&cpath, e))?;
        let classes: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| ReviewError::StoreCorrupt(format!("{CLASSES_FILE}: {e}")))?;

        let ipath = dir.join(ITEMS_FILE);
        let text = fs::read_to_string(&ipath).map_err(|e| ReviewError::io(&ipath, e))?;
        let mut items = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let item: ReviewItem = serde_json::from_str(line).map_err(|e| {
                ReviewError::StoreCorrupt(format!("{ITEMS_FILE} line {}: {e}", i + 1))
            })?;
            if items.insert(item.item_id.clone(), item).is_some() {
                return Err(ReviewError::StoreCorrupt(format!(
                    "{ITEMS_FILE} line {}: duplicate item",
                    i + 1
                )));
            }
        }

        let lpath = dir.join(LOG_FILE);
        let records = read_log(&lpath)?;
        let mut store = ReviewStore {
            dir: dir.to_path_buf(),
            classes,
            items,
            log: OpenOptions::new()
                .append(true)
                .open(&lpath)
                .map_err(|e| ReviewError::io(&lpath, e))?,
            next_seq: 1,
        };
        for rec in records {
            if rec.seq != store.next_seq {
                return Err(ReviewError::StoreCorrupt(format!(
                    "log sequence jumps to {} at {}",
                    rec.seq, store.next_seq
                )));
            }
            store
                .transition(&rec.item_id, &rec.action, rec.decided_at)
                .map_err(|e| ReviewError::StoreCorrupt(format!("log seq {}: {e}", rec.seq)))?;
            store.next_seq += 1;
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn get(&self, item_id: &str) -> Option<&ReviewItem> {
        self.items.get(item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// All items ordered by id.
    pub fn items(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items.values()
    }

    fn check(&self, item_id: &str, action: &Action) -> Result<(), ReviewError> {
        let item = self
            .items
            .get(item_id)
            .ok_or_else(|| ReviewError::NotFound(item_id.to_string()))?;
        if !item.status.is_pending() {
            return Err(ReviewError::AlreadyDecided(item_id.to_string()));
        }
        if let Action::Relabel(l) = action {
            if !self.classes.contains(l) {
                return Err(ReviewError::UnknownLabel(l.clone()));
            }
        }
        Ok(())
    }

    fn transition(
        &mut self,
        item_id: &str,
        action: &Action,
        at: DateTime<Utc>,
    ) -> Result<ReviewItem, ReviewError> {
        self.check(item_id, action)?;
        let item = self.items.get_mut(item_id).expect("checked above");
        item.status = match action {
            Action::Accept => ReviewStatus::Accepted,
            Action::Reject => ReviewStatus::Rejected,
            Action::Relabel(l) => ReviewStatus::Relabeled(l.clone()),
        };
        item.decided_at = Some(at);
        Ok(item.clone())
    }

    /// Records a decision: validated, appended and synced to the log, then
    /// applied in memory.
    pub fn apply_at(
        &mut self,
        item_id: &str,
        action: Action,
        at: DateTime<Utc>,
    ) -> Result<ReviewItem, ReviewError> {
        self.check(item_id, &action)?;
        // Millisecond precision so the replayed timestamp equals the live one.
        let at = DateTime::parse_from_rfc3339(&at.to_rfc3339_opts(SecondsFormat::Millis, true))
            .expect("rfc3339 roundtrip")
            .with_timezone(&Utc);
        let rec = LogRecord {
            seq: self.next_seq,
            item_id: item_id.to_string(),
            action,
            decided_at: at,
        };
        let lpath = self.dir.join(LOG_FILE);
        let mut line = serde_json::to_vec(&rec).expect("log record serializes");
        line.push(b'\n');
        self.log
            .write_all(&line)
            .and_then(|_| self.log.sync_data())
            .map_err(|e| ReviewError::io(&lpath, e))?;
        self.next_seq += 1;
        self.transition(item_id, &rec.action, at)
    }

    pub fn apply(&mut self, item_id: &str, action: Action) -> Result<ReviewItem, ReviewError> {
        self.apply_at(item_id, action, Utc::now())
    }

    /// Items matching `filter`, `NG`-flagged first and then by id, truncated
    /// to `limit`; also returns the untruncated count.
    pub fn queue(&self, filter: QueueFilter, limit: Option<usize>) -> (Vec<ReviewItem>, usize) {
        let mut matching: Vec<&ReviewItem> = self
            .items
            .values()
            .filter(|i| match filter {
                QueueFilter::Pending => i.status.is_pending(),
                QueueFilter::Decided => !i.status.is_pending(),
                QueueFilter::All => true,
            })
            .collect();
        // BTreeMap order already sorts by id; a stable sort keeps it within groups.
        matching.sort_by_key(|i| !i.ng_flagged());
        let total = matching.len();
        let items = matching
            .into_iter()
            .take(limit.unwrap_or(usize::MAX))
            .cloned()
            .collect();
        (items, total)
    }

    pub fn stats(&self) -> ReviewStats {
        let mut s = ReviewStats {
            pending: 0,
            accepted: 0,
            rejected: 0,
            relabeled: 0,
            per_class_counts: self.classes.iter().map(|c| (c.clone(), 0)).collect(),
        };
        for item in self.items.values() {
            match item.status {
                ReviewStatus::Pending => s.pending += 1,
                ReviewStatus::Accepted => s.accepted += 1,
                ReviewStatus::Rejected => s.rejected += 1,
                ReviewStatus::Relabeled(_) => s.relabeled += 1,
            }
            if let Some(l) = item.final_label() {
                *s.per_class_counts.entry(l.to_string()).or_default() += 1;
            }
        }
        s
    }
}

/// Reads the decision log, dropping a torn final line.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, ReviewError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ReviewError::io(path, e)),
    };
    let text = String::from_utf8_lossy(&bytes);
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<LogRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !complete => {
                // torn write: cut it so the next append starts on a clean line
                let keep = bytes.len() - line.len();
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(|e| ReviewError::io(path, e))?;
                f.set_len(keep as u64)
                    .map_err(|e| ReviewError::io(path, e))?;
            }
            Err(e) => {
                return Err(ReviewError::StoreCorrupt(format!(
                    "{LOG_FILE} line {}: {e}",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("item {0} is still pending")]
    PendingDecision(String),
    #[error("item {item_id} has label {label} outside the class list")]
    UnknownLabel { item_id: String, label: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PendingPolicy {
    #[default]
    Block,
    Skip,
}

/// Builds the final dataset from `base` (scenario, classes, frame count and
/// any pre-labelled items) plus the review outcome. Rejected items are
/// dropped, relabeled items carry the human label, and decision items are
/// appended in id order. Returns the manifest and the number of skipped
/// pending items.
pub fn build_manifest(
    base: &DatasetManifest,
    decisions: &[ReviewItem],
    pending: PendingPolicy,
) -> Result<(DatasetManifest, usize), ExportError> {
    let mut sorted: Vec<&ReviewItem> = decisions.iter().collect();
    sorted.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let mut items = base.items.clone();
    let mut skipped = 0;
    for d in sorted {
        match (&d.status, pending) {
            (ReviewStatus::Pending, PendingPolicy::Block) => {
                return Err(ExportError::PendingDecision(d.item_id.clone()))
            }
            (ReviewStatus::Pending, PendingPolicy::Skip) => skipped += 1,
            (ReviewStatus::Rejected, _) => {}
            _ => {
                let label = d.final_label().expect("kept item has a label").to_string();
                if !base.class_names.contains(&label) {
                    return Err(ExportError::UnknownLabel {
                        item_id: d.item_id.clone(),
                        label,
                    });
                }
                items.push(ManifestItem {
                    item_id: d.item_id.clone(),
                    frame_id: d.frame_id.clone(),
                    bbox: d.bbox,
                    label,
                });
            }
        }
    }
    let manifest = DatasetManifest::new(
        base.scenario_name.clone(),
        base.class_names.clone(),
        base.frame_count,
        items,
    )?;
    Ok((manifest, skipped))
}

/// Strict export: every decision must be final. Writes the manifest to `path`.
pub fn export_dataset(
    base: &DatasetManifest,
    decisions: &[ReviewItem],
    path: &Path,
) -> Result<DatasetManifest, ExportError> {
    let (m, _) = build_manifest(base, decisions, PendingPolicy::Block)?;
    jsonl::write_manifest(path, &m).map_err(|e| ExportError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_box, with_ng};

    fn classes() -> Vec<String> {
        with_ng(&["Act1".into(), "Act2".into()]).unwrap()
    }

    fn seed(n: usize) -> Vec<ReviewItem> {
        (0..n)
            .map(|i| {
                let label = if i % 3 == 2 { NG } else { "Act1" };
                ReviewItem::pending(
                    format!("item-{i:02}"),
                    format!("f{i}"),
                    validate_box([i as f64, 0.0, i as f64 + 1.5, 2.0]).unwrap(),
                    label,
                    0.5,
                )
            })
            .collect()
    }

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2024-05-01T10:00:00.000Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    #[test]
    fn decisions_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::create(dir.path(), classes(), seed(3)).unwrap();
        let item = s.apply_at("item-00", Action::Accept, t0()).unwrap();
        assert_eq!(item.status, ReviewStatus::Accepted);
        assert!(matches!(
            s.apply_at("item-00", Action::Reject, t0()),
            Err(ReviewError::AlreadyDecided(_))
        ));
        assert!(matches!(
            s.apply_at("nope", Action::Accept, t0()),
            Err(ReviewError::NotFound(_))
        ));
        assert!(matches!(
            s.apply_at("item-01", Action::Relabel("Act9".into()), t0()),
            Err(ReviewError::UnknownLabel(_))
        ));
        // failed decisions leave no trace in the log
        assert_eq!(read_log(&dir.path().join(LOG_FILE)).unwrap().len(), 1);
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::create(dir.path(), classes(), seed(6)).unwrap();
        s.apply_at("item-01", Action::Accept, t0()).unwrap();
        s.apply_at("item-02", Action::Relabel("Act2".into()), t0())
            .unwrap();
        s.apply_at("item-04", Action::Reject, t0()).unwrap();
        let before: Vec<ReviewItem> = s.items().cloned().collect();
        drop(s);
        let s = ReviewStore::open(dir.path()).unwrap();
        let after: Vec<ReviewItem> = s.items().cloned().collect();
        assert_eq!(before, after);
        let st = s.stats();
        assert_eq!(
            (st.pending, st.accepted, st.rejected, st.relabeled),
            (3, 1, 1, 1)
        );
        assert_eq!(st.per_class_counts["Act2"], 1);
    }

    #[test]
    fn torn_tail_is_dropped_other_garbage_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::create(dir.path(), classes(), seed(3)).unwrap();
        s.apply_at("item-00", Action::Accept, t0()).unwrap();
        drop(s);
        let lpath = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&lpath).unwrap();
        f.write_all(b"{\"seq\":2,\"item_").unwrap();
        drop(f);
        let mut s = ReviewStore::open(dir.path()).unwrap();
        assert_eq!(s.get("item-00").unwrap().status, ReviewStatus::Accepted);
        s.apply_at("item-01", Action::Reject, t0()).unwrap();
        drop(s);
        assert_eq!(read_log(&lpath).unwrap().len(), 2);

        let mut f = OpenOptions::new().append(true).open(&lpath).unwrap();
        f.write_all(b"garbage\n").unwrap();
        drop(f);
        assert!(matches!(
            ReviewStore::open(dir.path()),
            Err(ReviewError::StoreCorrupt(_))
        ));
    }

    #[test]
    fn queue_orders_ng_first() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::create(dir.path(), classes(), seed(6)).unwrap();
        let (q, total) = s.queue(QueueFilter::Pending, None);
        assert_eq!(total, 6);
        let ids: Vec<&str> = q.iter().map(|i| i.item_id.as_str()).collect();
        assert_eq!(
            ids,
            ["item-02", "item-05", "item-00", "item-01", "item-03", "item-04"]
        );
        s.apply_at("item-02", Action::Accept, t0()).unwrap();
        let (q, total) = s.queue(QueueFilter::Pending, Some(2));
        assert_eq!(total, 5);
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].item_id, "item-05");
        assert_eq!(s.queue(QueueFilter::Decided, None).1, 1);
    }

    #[test]
    fn review_item_json() {
        let mut item = seed(1).remove(0);
        item.status = ReviewStatus::Relabeled("Act2".into());
        let v: serde_json::Value = serde_json::to_value(&item).unwrap();
        assert_eq!(v["status"], "relabeled");
        assert_eq!(v["relabeled_to"], "Act2");
        assert_eq!(v["box"][2], 1.5);
        let back: ReviewItem = serde_json::from_value(v).unwrap();
        assert_eq!(back, item);
    }

    fn base() -> DatasetManifest {
        DatasetManifest::new("line", classes(), 10, vec![]).unwrap()
    }

    #[test]
    fn export_filters_and_relabels() {
        let mut items = seed(10);
        for (i, it) in items.iter_mut().enumerate() {
            it.status = match i {
                3 | 7 => ReviewStatus::Rejected,
                4 => ReviewStatus::Relabeled("Act2".into()),
                _ => ReviewStatus::Accepted,
            };
        }
        let (m, skipped) = build_manifest(&base(), &items, PendingPolicy::Block).unwrap();
        assert_eq!((m.items.len(), skipped), (8, 0));
        let relabeled = m.items.iter().find(|i| i.item_id == "item-04").unwrap();
        assert_eq!(relabeled.label, "Act2");
        let counts: usize = m.class_counts().iter().map(|(_, n)| n).sum();
        assert_eq!(counts, 8);

        items[0].status = ReviewStatus::Pending;
        assert!(matches!(
            build_manifest(&base(), &items, PendingPolicy::Block),
            Err(ExportError::PendingDecision(ref id)) if id == "item-00"
        ));
        let (m, skipped) = build_manifest(&base(), &items, PendingPolicy::Skip).unwrap();
        assert_eq!((m.items.len(), skipped), (7, 1));
    }

    #[test]
    fn export_roundtrips_through_ingest() {
        let mut items = seed(4);
        items
            .iter_mut()
            .for_each(|i| i.status = ReviewStatus::Accepted);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let m = export_dataset(&base(), &items, &path).unwrap();
        assert_eq!(jsonl::read_manifest(&path).unwrap(), m);
    }
}
