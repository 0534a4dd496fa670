//! End-to-end plumbing: manifest records -> preprocessed patches ->
//! training samples or per-line score sheets.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::classifier::{forward, ModelParams, Sample};
use crate::dataset::LineRecord;
use crate::error::Error;
use crate::imaging::{self, PreprocessMode};
use crate::patching::{self, NormConstants, PatchSpec, RawPatch};
use crate::scoring::{ScoreVector, ScoredLine};
use crate::Result;

/// A line loaded, preprocessed, resized, and cut into raw patches.
#[derive(Clone, Debug)]
pub struct PatchedLine {
    pub record: LineRecord,
    pub patches: Vec<RawPatch>,
}

/// Load one record's image and cut it into patches. Returns `Ok(None)` when
/// the line is uninformative (aspect ratio at or below the floor) and is
/// skipped.
pub fn load_and_patch(
    record: &LineRecord,
    base_dir: &Path,
    mode: PreprocessMode,
    spec: &PatchSpec,
) -> Result<Option<PatchedLine>> {
    let path = base_dir.join(&record.image_path);
    let image = imaging::RasterImage::load(&path)?;
    if !imaging::is_informative(&image) {
        return Ok(None);
    }
    let processed = imaging::preprocess(&image, mode)?;
    let resized = patching::resize_to_height(&processed, spec.height)?;
    let patches = patching::extract_patches(&resized, spec)?;
    Ok(Some(PatchedLine {
        record: record.clone(),
        patches,
    }))
}

/// Load the lines named by `ids` (a split partition), in order. Returns the
/// patched lines plus the number skipped as uninformative. Ids missing from
/// the manifest are an error.
pub fn load_split_lines(
    records: &[LineRecord],
    ids: &[String],
    base_dir: &Path,
    mode: PreprocessMode,
    spec: &PatchSpec,
) -> Result<(Vec<PatchedLine>, usize)> {
    let by_id: BTreeMap<&str, &LineRecord> =
        records.iter().map(|r| (r.line_id.as_str(), r)).collect();
    let picked: Vec<&LineRecord> = ids
        .iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| {
                Error::Split(format!("line id {id} is in the split but not the manifest"))
            })
        })
        .collect::<Result<_>>()?;

    let loaded: Vec<Option<PatchedLine>> = picked
        .par_iter()
        .map(|record| load_and_patch(record, base_dir, mode, spec))
        .collect::<Result<_>>()?;

    let mut lines = Vec::with_capacity(loaded.len());
    let mut skipped = 0;
    for entry in loaded {
        match entry {
            Some(line) => lines.push(line),
            None => skipped += 1,
        }
    }
    Ok((lines, skipped))
}

/// Mean and standard deviation of raw intensities (scaled to [0,1]) over
/// every pixel of every patch. Computed sequentially in a fixed order so the
/// constants are bit-stable. The deviation is floored at 1e-6 to keep
/// normalization finite on degenerate inputs.
pub fn compute_norm(lines: &[PatchedLine]) -> Result<NormConstants> {
    let mut count = 0u64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for line in lines {
        for patch in &line.patches {
            for &v in patch.image.pixels() {
                let x = v as f64 / 255.0;
                sum += x;
                sum_sq += x * x;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset(
            "no pixels available for normalization".into(),
        ));
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    let std = var.sqrt().max(1e-6);
    Ok(NormConstants { mean, std })
}

/// Flatten lines into labeled, normalized training samples (one per patch).
/// Scribe labels missing from `class_index` are an error.
pub fn to_samples(
    lines: &[PatchedLine],
    class_index: &BTreeMap<String, usize>,
    norm: &NormConstants,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for line in lines {
        let label = *class_index.get(&line.record.scribe).ok_or_else(|| {
            Error::Split(format!(
                "scribe {} of line {} is not in the class list",
                line.record.scribe, line.record.line_id
            ))
        })?;
        for raw in &line.patches {
            samples.push(Sample {
                patch: patching::normalize(raw, norm),
                label,
            });
        }
    }
    Ok(samples)
}

/// Run the model over every patch of every line, producing per-line score
/// sheets ready for aggregation and evaluation. Normalization constants come
/// from the model itself, so scoring always matches training.
pub fn score_lines(
    params: &ModelParams,
    lines: &[PatchedLine],
    class_index: &BTreeMap<String, usize>,
) -> Result<Vec<ScoredLine>> {
    let norm = params.norm();
    lines
        .par_iter()
        .map(|line| {
            let label = *class_index.get(&line.record.scribe).ok_or_else(|| {
                Error::Split(format!(
                    "scribe {} of line {} is not in the class list",
                    line.record.scribe, line.record.line_id
                ))
            })?;
            let patch_scores: Vec<ScoreVector> = line
                .patches
                .iter()
                .map(|raw| forward(params, &patching::normalize(raw, &norm)))
                .collect::<Result<_>>()?;
            Ok(ScoredLine {
                line_id: line.record.line_id.clone(),
                codex_id: line.record.codex.clone(),
                page_id: line.record.page.clone(),
                true_label: label,
                patch_scores,
            })
        })
        .collect()
}
