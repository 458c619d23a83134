//! Toolkit for building industrial action-recognition datasets at low
//! annotation cost.
//!
//! The crate covers the whole offline loop around external foundation
//! models, which are treated as producers of boxes and embeddings:
//!
//! * [`model`] and [`jsonl`]: validated domain types and line-oriented persistence.
//! * [`eval`]: IoU, confidence / dual-threshold filtering, greedy NMS, pooled
//!   recall and accuracy, and hyperparameter surface sweeps.
//! * [`classify`]: cosine matching of action embeddings against class
//!   templates with a similarity threshold that routes misses to `NG`.
//! * [`review`] and [`pipeline`]: the log-sourced human review queue and the
//!   sift / classify / export stages.
//! * [`cost`]: annotation workload and time accounting.
//! * [`lora`] and [`distill`]: low-rank adapters and temperature-scaled
//!   knowledge distillation at desk scale.

pub mod classify;
pub mod cost;
pub mod distill;
pub mod eval;
pub mod fixture;
pub mod jsonl;
pub mod lora;
pub mod model;
pub mod pipeline;
pub mod review;

pub use model::{
    BoundingBox, BoxError, DatasetManifest, DetectionCandidate, Embedding, GroundTruthSet,
    ManifestItem, NG,
};
