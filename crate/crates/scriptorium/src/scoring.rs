//! Patch-to-line and line-to-page score aggregation, plus the reject option.
//!
//! The classifier emits one softmax vector per patch. A line's score is the
//! componentwise mean of its patch vectors; a page's score is the
//! patch-count-weighted mean of its line scores, which equals the flat mean
//! over every patch on the page. Decisions threshold the maximum probability:
//! below the threshold the item is rejected instead of classified.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Tolerance on the simplex sum constraint.
pub const SIMPLEX_SUM_TOL: f64 = 1e-6;

/// Slack accepted on component bounds before clamping. Averaging softmax
/// outputs can leave floating-point dust a hair outside [0, 1].
const COMPONENT_TOL: f64 = 1e-9;

/// A probability distribution over the K classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    /// Validate simplex membership: components in [0, 1] (up to dust, which
    /// is clamped away) and sum within `1e-6` of 1.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidScoreVector("empty vector".into()));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || !(-COMPONENT_TOL..=1.0 + COMPONENT_TOL).contains(&p) {
                return Err(Error::InvalidScoreVector(format!(
                    "component {p} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidScoreVector(format!(
                "components sum to {sum}, expected 1"
            )));
        }
        let clamped = probs.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(Self(clamped))
    }

    /// Point mass on one class.
    pub fn one_hot(class: usize, k: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[class] = 1.0;
        Self(probs)
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// Index and value of the largest component; ties break toward the
    /// lowest class index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        (best, self.0[best])
    }
}

/// A line's aggregated score together with how many patches produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    pub line_id: String,
    pub score: ScoreVector,
    pub num_patches: usize,
}

/// Accept-or-reject outcome of thresholding a score vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Accept { class: usize, confidence: f64 },
    Reject,
}

/// The outcome plus the threshold that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub threshold: f64,
}

impl Decision {
    pub fn is_reject(&self) -> bool {
        matches!(self.outcome, Outcome::Reject)
    }

    /// Accepted class index, if any.
    pub fn accepted_class(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Accept { class, .. } => Some(class),
            Outcome::Reject => None,
        }
    }
}

/// How line scores combine into a page score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageAggregation {
    /// Patch-count-weighted mean of line scores (flat mean over all patches).
    #[default]
    WeightedMean,
    /// Each line votes with its argmax; the page vector holds vote fractions.
    MajorityVote,
}

/// All scores produced for one labeled line, the unit of evaluation input.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredLine {
    pub line_id: String,
    pub codex_id: String,
    pub page_id: String,
    pub true_label: usize,
    pub patch_scores: Vec<ScoreVector>,
}

impl ScoredLine {
    pub fn line_score(&self) -> Result<LineScore> {
        line_score(&self.line_id, &self.patch_scores)
    }
}

fn check_uniform_k(scores: &[ScoreVector]) -> Result<usize> {
    let k = scores[0].k();
    for s in scores {
        if s.k() != k {
            return Err(Error::ScoreLengthMismatch(k, s.k()));
        }
    }
    Ok(k)
}

/// Componentwise arithmetic mean of a line's patch scores.
pub fn line_score(line_id: &str, patch_scores: &[ScoreVector]) -> Result<LineScore> {
    if patch_scores.is_empty() {
        return Err(Error::EmptyScores {
            context: "line_score",
        });
    }
    let k = check_uniform_k(patch_scores)?;
    let n = patch_scores.len();
    let mut mean = vec![0.0; k];
    for s in patch_scores {
        for (m, &p) in mean.iter_mut().zip(s.probs()) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    Ok(LineScore {
        line_id: line_id.to_string(),
        score: ScoreVector::new(mean)?,
        num_patches: n,
    })
}

/// Patch-count-weighted mean of line scores — identical to averaging over
/// every patch of the page in one flat pass.
pub fn page_score(line_scores: &[LineScore]) -> Result<ScoreVector> {
    if line_scores.is_empty() {
        return Err(Error::EmptyScores {
            context: "page_score",
        });
    }
    let k = line_scores[0].score.k();
    let mut acc = vec![0.0; k];
    let mut total = 0usize;
    for ls in line_scores {
        if ls.score.k() != k {
            return Err(Error::ScoreLengthMismatch(k, ls.score.k()));
        }
        for (a, &p) in acc.iter_mut().zip(ls.score.probs()) {
            *a += p * ls.num_patches as f64;
        }
        total += ls.num_patches;
    }
    for a in &mut acc {
        *a /= total as f64;
    }
    ScoreVector::new(acc)
}

/// Majority vote across lines: each line contributes its argmax class; the
/// result holds vote fractions (still a simplex vector, so the same
/// thresholding applies).
pub fn page_vote(line_scores: &[LineScore], k: usize) -> Result<ScoreVector> {
    if line_scores.is_empty() {
        return Err(Error::EmptyScores {
            context: "page_vote",
        });
    }
    let mut votes = vec![0.0; k];
    for ls in line_scores {
        if ls.score.k() != k {
            return Err(Error::ScoreLengthMismatch(k, ls.score.k()));
        }
        votes[ls.score.argmax().0] += 1.0;
    }
    let n = line_scores.len() as f64;
    for v in &mut votes {
        *v /= n;
    }
    ScoreVector::new(votes)
}

/// Chow-style reject rule: accept the argmax class when its probability
/// reaches the threshold, otherwise reject.
pub fn decide(score: &ScoreVector, threshold: f64) -> Decision {
    let (class, confidence) = score.argmax();
    let outcome = if confidence >= threshold {
        Outcome::Accept { class, confidence }
    } else {
        Outcome::Reject
    };
    Decision { outcome, threshold }
}

/// One row of an error-reject curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub reject_rate: f64,
    pub error_rate: f64,
}

/// The standard evaluation grid: thresholds 0.00 to 1.00 in steps of 0.01.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Sweep thresholds over scored items. Per threshold: the fraction rejected
/// (max probability below the threshold) and the misclassification rate among
/// the accepted items (0 when everything is rejected).
pub fn error_reject_curve(
    items: &[(ScoreVector, usize)],
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>> {
    if items.is_empty() {
        return Err(Error::EmptyScores {
            context: "error_reject_curve",
        });
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidThresholdGrid("empty grid".into()));
    }
    for pair in thresholds.windows(2) {
        if pair[0] > pair[1] {
            return Err(Error::InvalidThresholdGrid(format!(
                "not sorted ascending: {} before {}",
                pair[0], pair[1]
            )));
        }
    }
    if thresholds[0] < 0.0 || *thresholds.last().unwrap() > 1.0 {
        return Err(Error::InvalidThresholdGrid(
            "thresholds must lie in [0, 1]".into(),
        ));
    }

    let judged: Vec<(f64, bool)> = items
        .iter()
        .map(|(score, label)| {
            let (class, confidence) = score.argmax();
            (confidence, class == *label)
        })
        .collect();
    let n = judged.len() as f64;
    let points = thresholds
        .iter()
        .map(|&t| {
            let mut rejected = 0usize;
            let mut accepted = 0usize;
            let mut wrong = 0usize;
            for &(confidence, correct) in &judged {
                if confidence < t {
                    rejected += 1;
                } else {
                    accepted += 1;
                    if !correct {
                        wrong += 1;
                    }
                }
            }
            let error_rate = if accepted == 0 {
                0.0
            } else {
                wrong as f64 / accepted as f64
            };
            CurvePoint {
                threshold: t,
                reject_rate: rejected as f64 / n,
                error_rate,
            }
        })
        .collect();
    Ok(points)
}

/// Write a curve as CSV: `threshold,reject_rate,error_rate`.
pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    writer.write_record(["threshold", "reject_rate", "error_rate"])?;
    for p in points {
        writer.write_record(&[
            p.threshold.to_string(),
            p.reject_rate.to_string(),
            p.error_rate.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
