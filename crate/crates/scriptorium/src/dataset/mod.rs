//! Manifest ingestion and codex-disjoint train/validation/test splitting.
//!
//! The corpus is described by a CSV manifest (`line_id,image_path,scribe,
//! codex,page`). Codices are partitioned into training codices and separate
//! codices: train, validation, and test_A are drawn only from training
//! codices (60/20/20 per class), while every line of a separate codex can
//! appear only in test_B. That makes test_A measure in-codex generalization
//! and test_B cross-codex generalization.

mod synth;

pub use synth::{codex_palette, generate_synthetic, ClassStyle, CodexPalette, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Expected manifest header, in order.
pub const MANIFEST_HEADER: [&str; 5] = ["line_id", "image_path", "scribe", "codex", "page"];

/// One manifest row: a segmented line image with its labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRecord {
    pub line_id: String,
    /// Image location, interpreted relative to the manifest's directory
    /// unless absolute.
    pub image_path: String,
    pub scribe: String,
    pub codex: String,
    /// May be empty; such lines are skipped at page-level evaluation.
    pub page: String,
}

/// Read and validate a manifest CSV.
pub fn load_manifest(path: &Path) -> Result<Vec<LineRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            problem: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            problem: e.to_string(),
        })?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != MANIFEST_HEADER {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            problem: format!(
                "header must be `{}`, got `{}`",
                MANIFEST_HEADER.join(","),
                got.join(",")
            ),
        });
    }

    let mut records = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 2; // 1-based, counting the header line
        let row = row.map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            problem: format!("row {row_no}: {e}"),
        })?;
        let field = |idx: usize| row.get(idx).unwrap_or("").to_string();
        let record = LineRecord {
            line_id: field(0),
            image_path: field(1),
            scribe: field(2),
            codex: field(3),
            page: field(4),
        };
        let fail = |problem: String| {
            Err(Error::ManifestRow {
                row: row_no,
                line_id: record.line_id.clone(),
                problem,
            })
        };
        if record.line_id.is_empty() {
            return fail("empty line_id".into());
        }
        if record.image_path.is_empty() {
            return fail("empty image_path".into());
        }
        if record.scribe.is_empty() {
            return fail("empty scribe".into());
        }
        if record.codex.is_empty() {
            return fail("empty codex".into());
        }
        if !seen.insert(record.line_id.clone()) {
            return fail("duplicate line id".into());
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records as a manifest CSV with the standard header.
pub fn write_manifest(records: &[LineRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    writer.write_record(MANIFEST_HEADER)?;
    for r in records {
        writer.write_record([&r.line_id, &r.image_path, &r.scribe, &r.codex, &r.page])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// The four split partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    TestA,
    TestB,
}

/// Line-id assignments produced by [`make_splits`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    /// Sorted class labels; index order defines the label indices used by
    /// the classifier.
    pub classes: Vec<String>,
    pub training_codices: Vec<String>,
    pub separate_codices: Vec<String>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test_a: Vec<String>,
    pub test_b: Vec<String>,
}

impl SplitManifest {
    pub fn ids(&self, partition: Partition) -> &[String] {
        match partition {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::TestA => &self.test_a,
            Partition::TestB => &self.test_b,
        }
    }

    /// Class label → index mapping.
    pub fn class_index(&self) -> BTreeMap<String, usize> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Knobs for [`make_splits`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Maximum lines drawn per class from the training codices; `None` takes
    /// everything.
    pub per_class_cap: Option<usize>,
    /// Maximum test_B lines per class; `None` takes everything.
    pub test_b_cap: Option<usize>,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            per_class_cap: None,
            test_b_cap: None,
            seed: 0,
        }
    }
}

/// Draw up to `cap` lines, cycling codices in order and taking one random
/// line per visit (uniform within the codex, without replacement). The
/// returned order interleaves codices, so prefix slices stay codex-balanced.
fn round_robin_draw(
    per_codex: &mut BTreeMap<String, Vec<String>>,
    cap: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    // shuffle each codex pool once; popping from the back is then a uniform
    // draw without replacement
    let codices: Vec<String> = per_codex.keys().cloned().collect();
    for pool in per_codex.values_mut() {
        pool.sort();
        pool.shuffle(rng);
    }
    let total: usize = per_codex.values().map(|v| v.len()).sum();
    let want = cap.map_or(total, |c| c.min(total));
    let mut drawn = Vec::with_capacity(want);
    'outer: loop {
        let mut any = false;
        for codex in &codices {
            let pool = per_codex.get_mut(codex).unwrap();
            if let Some(line) = pool.pop() {
                drawn.push(line);
                any = true;
                if drawn.len() == want {
                    break 'outer;
                }
            }
        }
        if !any {
            break;
        }
    }
    drawn
}

/// Split `n` into 60/20/20 counts by the largest-remainder rule. Ties on the
/// remainder resolve in train, validation, test_A order.
fn split_counts(n: usize) -> (usize, usize, usize) {
    let fractions = [0.6, 0.2, 0.2];
    let ideal: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    // stable sort keeps the index order train < validation < test_a on ties
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap()
    });
    for i in 0..(n - assigned) {
        counts[order[i]] += 1;
    }
    (counts[0], counts[1], counts[2])
}

/// Partition the corpus per Table-1-style discipline.
///
/// Per class (in sorted order): lines from training codices are drawn
/// uniformly across codices up to the cap, then divided 60/20/20 into
/// train/validation/test_A by largest remainder; every line of a separate
/// codex goes to test_B (up to its cap). Each class must have at least one
/// training codex and one separate codex.
pub fn make_splits(
    records: &[LineRecord],
    separate_codices: &BTreeSet<String>,
    opts: &SplitOptions,
) -> Result<SplitManifest> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("manifest has no lines".into()));
    }
    let classes: BTreeSet<String> = records.iter().map(|r| r.scribe.clone()).collect();
    let present_codices: BTreeSet<String> = records.iter().map(|r| r.codex.clone()).collect();
    for codex in separate_codices {
        if !present_codices.contains(codex) {
            return Err(Error::Split(format!(
                "separate codex {codex} does not occur in the manifest"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut manifest = SplitManifest {
        classes: classes.iter().cloned().collect(),
        training_codices: present_codices
            .iter()
            .filter(|c| !separate_codices.contains(*c))
            .cloned()
            .collect(),
        separate_codices: present_codices
            .iter()
            .filter(|c| separate_codices.contains(*c))
            .cloned()
            .collect(),
        train: Vec::new(),
        validation: Vec::new(),
        test_a: Vec::new(),
        test_b: Vec::new(),
    };

    for class in &classes {
        let mut training_pool: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut separate_pool: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records.iter().filter(|r| &r.scribe == class) {
            let target = if separate_codices.contains(&r.codex) {
                &mut separate_pool
            } else {
                &mut training_pool
            };
            target
                .entry(r.codex.clone())
                .or_default()
                .push(r.line_id.clone());
        }
        if training_pool.is_empty() {
            return Err(Error::NoTrainingCodex {
                class: class.clone(),
            });
        }
        if separate_pool.is_empty() {
            return Err(Error::NoSeparateCodex {
                class: class.clone(),
            });
        }

        let drawn = round_robin_draw(&mut training_pool, opts.per_class_cap, &mut rng);
        let (n_train, n_val, _n_test) = split_counts(drawn.len());
        manifest.train.extend_from_slice(&drawn[..n_train]);
        manifest
            .validation
            .extend_from_slice(&drawn[n_train..n_train + n_val]);
        manifest.test_a.extend_from_slice(&drawn[n_train + n_val..]);

        let test_b = round_robin_draw(&mut separate_pool, opts.test_b_cap, &mut rng);
        manifest.test_b.extend(test_b);
    }

    for list in [
        &mut manifest.train,
        &mut manifest.validation,
        &mut manifest.test_a,
        &mut manifest.test_b,
    ] {
        list.sort();
    }
    Ok(manifest)
}

/// Verify split invariants against the records they were built from:
/// partitions are disjoint, separate-codex lines appear only in test_B,
/// train/validation/test_A lines only come from training codices, and
/// per-class proportions hold 60/20/20 within one line.
pub fn check_split(records: &[LineRecord], manifest: &SplitManifest) -> Result<()> {
    let by_id: BTreeMap<&str, &LineRecord> =
        records.iter().map(|r| (r.line_id.as_str(), r)).collect();
    let separate: BTreeSet<&str> = manifest
        .separate_codices
        .iter()
        .map(String::as_str)
        .collect();

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let parts = [
        (Partition::Train, &manifest.train),
        (Partition::Validation, &manifest.validation),
        (Partition::TestA, &manifest.test_a),
        (Partition::TestB, &manifest.test_b),
    ];
    for (partition, ids) in &parts {
        for id in ids.iter() {
            let record = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Split(format!("line {id} not in manifest")))?;
            if !seen.insert(id) {
                return Err(Error::Split(format!("line {id} assigned twice")));
            }
            let is_separate = separate.contains(record.codex.as_str());
            let in_test_b = *partition == Partition::TestB;
            if is_separate != in_test_b {
                return Err(Error::Split(format!(
                    "line {id} from codex {} is in the wrong partition",
                    record.codex
                )));
            }
        }
    }

    // per-class 60/20/20 within +-1
    for class in &manifest.classes {
        let count = |ids: &[String]| {
            ids.iter()
                .filter(|id| by_id[id.as_str()].scribe == *class)
                .count()
        };
        let (tr, va, te) = (
            count(&manifest.train),
            count(&manifest.validation),
            count(&manifest.test_a),
        );
        let n = (tr + va + te) as f64;
        for (got, frac) in [(tr, 0.6), (va, 0.2), (te, 0.2)] {
            if (got as f64 - frac * n).abs() > 1.0 + 1e-9 {
                return Err(Error::Split(format!(
                    "class {class}: {got} lines vs ideal {:.1}",
                    frac * n
                )));
            }
        }
    }
    Ok(())
}
