//! Annotation cost accounting: workload (images to annotate by hand) and
//! time (hours), per post and scaled to a whole line, with the relative
//! improvement of an automated pipeline over manual annotation.
//!
//! Ledgers are configuration, not measurements.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("manual baseline must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("ledgers disagree on stage {0}")]
    StageMismatch(&'static str),
    #[error("posts per line must be at least 1")]
    ZeroPosts,
    #[error("negative cost in stage {0}")]
    Negative(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    /// Images annotated by hand.
    pub aw_images: u64,
    /// Hours of manual annotation per post.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_hours: Option<f64>,
}

/// Costs of one annotation method on one line.
///
/// `overall` counts images for the whole line; `detection` counts images per
/// post; `classification` counts images per action category per post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub posts_per_line: u32,
    #[serde(default)]
    pub actions_per_post: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall: Option<StageCost>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<StageCost>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<StageCost>,
}

impl CostLedger {
    pub fn validate(&self) -> Result<(), CostError> {
        if self.posts_per_line == 0 {
            return Err(CostError::ZeroPosts);
        }
        for (name, stage) in self.stages() {
            if stage.is_some_and(|s| s.at_hours.is_some_and(|h| !(h >= 0.0 && h.is_finite()))) {
                return Err(CostError::Negative(name));
            }
        }
        Ok(())
    }

    fn stages(&self) -> [(&'static str, Option<StageCost>); 3] {
        [
            ("overall", self.overall),
            ("detection", self.detection),
            ("classification", self.classification),
        ]
    }
}

/// Signed percentage change from `manual` to `automated`; negative means the
/// automated method costs less. Full precision; see [`round_display`].
pub fn improvement(manual: f64, automated: f64) -> Result<f64, CostError> {
    if manual.is_nan() || manual <= 0.0 {
        return Err(CostError::ZeroBaseline(manual));
    }
    Ok((automated - manual) / manual * 100.0)
}

/// One decimal, halves rounded away from zero.
pub fn round_display(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Per-post figure scaled linearly to `n_posts`.
pub fn scale_to_posts(per_post: f64, n_posts: u32) -> f64 {
    per_post * n_posts as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub source: String,
    pub index: String,
    pub manual: f64,
    pub automated: f64,
    pub impv: f64,
}

impl CostRow {
    pub fn impv_display(&self) -> f64 {
        round_display(self.impv)
    }
}

fn row(source: &str, index: String, manual: f64, automated: f64) -> Result<CostRow, CostError> {
    Ok(CostRow {
        source: source.to_string(),
        index,
        manual,
        automated,
        impv: improvement(manual, automated)?,
    })
}

/// Side-by-side comparison of two ledgers, one row per cost index.
pub fn cost_report(manual: &CostLedger, automated: &CostLedger) -> Result<Vec<CostRow>, CostError> {
    manual.validate()?;
    automated.validate()?;
    if manual.posts_per_line != automated.posts_per_line {
        return Err(CostError::StageMismatch("posts_per_line"));
    }
    let posts = manual.posts_per_line;
    let mut rows = Vec::new();
    for ((name, m), (_, a)) in manual.stages().into_iter().zip(automated.stages()) {
        let (m, a) = match (m, a) {
            (None, None) => continue,
            (Some(m), Some(a)) if m.at_hours.is_some() == a.at_hours.is_some() => (m, a),
            _ => return Err(CostError::StageMismatch(name)),
        };
        let (source, aw_index, at_label) = match name {
            "overall" => (
                "ACs for entire IHAR",
                format!("AW (images for all {posts} posts in a single line)"),
                "entire IHAR",
            ),
            "detection" => (
                "ACs for detection",
                "AW for training detector (images per post)".to_string(),
                "entire detection tasks",
            ),
            _ => (
                "ACs for classification",
                "AW for training classifier (per action category for a post)".to_string(),
                "entire classification tasks",
            ),
        };
        rows.push(row(
            source,
            aw_index,
            m.aw_images as f64,
            a.aw_images as f64,
        )?);
        if let (Some(mh), Some(ah)) = (m.at_hours, a.at_hours) {
            if name == "overall" {
                rows.push(row(source, format!("AT of {at_label} (hours)"), mh, ah)?);
                continue;
            }
            rows.push(row(
                source,
                format!("AT of {at_label} (hours per post)"),
                mh,
                ah,
            )?);
            rows.push(row(
                source,
                format!("AT of {at_label} (hours for all {posts} posts in a single line)"),
                scale_to_posts(mh, posts),
                scale_to_posts(ah, posts),
            )?);
        }
    }
    Ok(rows)
}

/// `source,index,manual,automated,impv_percent` with the improvement rounded
/// to one decimal.
pub fn write_report_csv<W: Write>(rows: &[CostRow], mut w: W) -> io::Result<()> {
    writeln!(w, "source,index,manual,automated,impv_percent")?;
    for r in rows {
        writeln!(
            w,
            "{},\"{}\",{},{},{:.1}",
            r.source,
            r.index,
            r.manual,
            r.automated,
            r.impv_display()
        )?;
    }
    Ok(())
}
