//! Confusion matrices and per-class / weighted F1 reports at patch, line,
//! and page granularity.
//!
//! Rejected items land in a dedicated column of the confusion matrix and are
//! excluded from precision/recall/F1, but they still count toward each
//! class's support so that reports stay comparable across thresholds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scoring::{decide, page_score, page_vote, Decision, PageAggregation, ScoredLine};
use crate::Result;

/// Aggregation granularity of a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patch,
    Line,
    Page,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Patch => "patch",
            Level::Line => "line",
            Level::Page => "page",
        }
    }
}

/// K×K tally of (true class, predicted class) plus a reject column per true
/// class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    /// Row-major: `counts[true * k + predicted]`.
    counts: Vec<u64>,
    /// Rejected items per true class.
    rejects: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
            rejects: vec![0; k],
        }
    }

    /// Build from explicit accepted counts (tests and worked examples).
    pub fn from_counts(rows: &[Vec<u64>]) -> Self {
        let k = rows.len();
        let mut cm = Self::new(k);
        for (t, row) in rows.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                cm.counts[t * k + p] = n;
            }
        }
        cm
    }

    pub fn record(&mut self, true_label: usize, decision: &Decision) -> Result<()> {
        if true_label >= self.k {
            return Err(Error::LabelOutOfRange {
                label: true_label,
                num_classes: self.k,
            });
        }
        match decision.accepted_class() {
            Some(class) => {
                if class >= self.k {
                    return Err(Error::LabelOutOfRange {
                        label: class,
                        num_classes: self.k,
                    });
                }
                self.counts[true_label * self.k + class] += 1;
            }
            None => self.rejects[true_label] += 1,
        }
        Ok(())
    }

    pub fn from_pairs(k: usize, pairs: &[(usize, Decision)]) -> Result<Self> {
        let mut cm = Self::new(k);
        for (true_label, decision) in pairs {
            cm.record(*true_label, decision)?;
        }
        Ok(cm)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, true_label: usize, predicted: usize) -> u64 {
        self.counts[true_label * self.k + predicted]
    }

    pub fn rejects(&self, true_label: usize) -> u64 {
        self.rejects[true_label]
    }

    /// All evaluated items, accepted and rejected.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.rejects.iter().sum::<u64>()
    }

    pub fn total_rejected(&self) -> u64 {
        self.rejects.iter().sum()
    }

    /// Items of this true class, including rejected ones.
    pub fn support(&self, true_label: usize) -> u64 {
        let accepted: u64 = (0..self.k).map(|p| self.get(true_label, p)).sum();
        accepted + self.rejects[true_label]
    }

    /// Write as CSV: one row per true class, one column per predicted class,
    /// plus a trailing reject column.
    pub fn write_csv(&self, class_names: &[String], path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
        let mut header = vec!["true_class".to_string()];
        header.extend(class_names.iter().cloned());
        header.push("reject".to_string());
        writer.write_record(&header)?;
        for t in 0..self.k {
            let mut row = vec![class_names[t].clone()];
            row.extend((0..self.k).map(|p| self.get(t, p).to_string()));
            row.push(self.rejects[t].to_string());
            writer.write_record(&row)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Precision/recall/F1 for one class. Support counts every evaluated item of
/// the class, rejected ones included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Full per-level metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub total_items: u64,
    pub rejected_items: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall, F1 (0/0 defined as 0) and the
/// support-weighted F1 average. Rejected items count toward support but not
/// toward any TP/FP/FN.
pub fn f1_report(cm: &ConfusionMatrix, level: Level, class_names: &[String]) -> MetricsReport {
    let k = cm.k();
    assert_eq!(class_names.len(), k, "one name per class");
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let fp: u64 = (0..k).filter(|&t| t != c).map(|t| cm.get(t, c)).sum();
        let accepted_row: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let fn_ = accepted_row - tp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: cm.support(c),
        });
    }
    let total_support: u64 = per_class.iter().map(|m| m.support).sum();
    let weighted_f1 = if total_support == 0 {
        0.0
    } else {
        per_class
            .iter()
            .map(|m| m.f1 * m.support as f64)
            .sum::<f64>()
            / total_support as f64
    };
    MetricsReport {
        level,
        class_names: class_names.to_vec(),
        per_class,
        weighted_f1,
        total_items: cm.total(),
        rejected_items: cm.total_rejected(),
    }
}

impl MetricsReport {
    /// Human-readable fixed-width table.
    pub fn render_text(&self) -> String {
        let name_w = self
            .class_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(out, "level: {}", self.level.as_str());
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>8}",
                name, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            out,
            "weighted F1: {:.4}  (items: {}, rejected: {})",
            self.weighted_f1, self.total_items, self.rejected_items
        );
        out
    }
}

/// One level's confusion matrix and metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

/// Reports for all three aggregation levels of one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultilevelReport {
    pub patch: LevelReport,
    pub line: LevelReport,
    pub page: LevelReport,
    /// Lines with an empty page id, excluded from the page level.
    pub lines_without_page: usize,
}

/// Evaluate scored lines at patch, line, and page level.
///
/// Patch level takes each patch's argmax (no rejection); line and page level
/// apply the reject threshold to the aggregated score. Pages are keyed by
/// (codex, page id); a page's true class is the majority label of its lines
/// (ties toward the lowest index).
pub fn evaluate_multilevel(
    lines: &[ScoredLine],
    class_names: &[String],
    threshold: f64,
    page_aggregation: PageAggregation,
) -> Result<MultilevelReport> {
    let k = class_names.len();
    if lines.is_empty() {
        return Err(Error::EmptyDataset("no lines to evaluate".into()));
    }

    let mut patch_pairs = Vec::new();
    let mut line_pairs = Vec::new();
    let mut by_page: BTreeMap<(String, String), Vec<&ScoredLine>> = BTreeMap::new();
    let mut lines_without_page = 0usize;

    for line in lines {
        if line.true_label >= k {
            return Err(Error::LabelOutOfRange {
                label: line.true_label,
                num_classes: k,
            });
        }
        for score in &line.patch_scores {
            patch_pairs.push((line.true_label, decide(score, 0.0)));
        }
        let ls = line.line_score()?;
        line_pairs.push((line.true_label, decide(&ls.score, threshold)));
        if line.page_id.is_empty() {
            lines_without_page += 1;
        } else {
            by_page
                .entry((line.codex_id.clone(), line.page_id.clone()))
                .or_default()
                .push(line);
        }
    }

    let mut page_pairs = Vec::new();
    for members in by_page.values() {
        let mut label_counts = vec![0usize; k];
        let mut line_scores = Vec::with_capacity(members.len());
        for line in members {
            label_counts[line.true_label] += 1;
            line_scores.push(line.line_score()?);
        }
        let max = *label_counts.iter().max().unwrap();
        let page_label = label_counts.iter().position(|&c| c == max).unwrap();
        let page_vec = match page_aggregation {
            PageAggregation::WeightedMean => page_score(&line_scores)?,
            PageAggregation::MajorityVote => page_vote(&line_scores, k)?,
        };
        page_pairs.push((page_label, decide(&page_vec, threshold)));
    }

    let level = |pairs: &[(usize, Decision)], level: Level| -> Result<LevelReport> {
        let confusion = ConfusionMatrix::from_pairs(k, pairs)?;
        let metrics = f1_report(&confusion, level, class_names);
        Ok(LevelReport { confusion, metrics })
    };

    Ok(MultilevelReport {
        patch: level(&patch_pairs, Level::Patch)?,
        line: level(&line_pairs, Level::Line)?,
        page: level(&page_pairs, Level::Page)?,
        lines_without_page,
    })
}
