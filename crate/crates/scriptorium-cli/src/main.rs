//! `scriptorium` — operator-facing front end for the scribe-identification
//! pipeline: corpus synthesis, codex-disjoint splitting, patch-classifier
//! training, multi-level evaluation, prediction with a reject option, and
//! error-reject curves.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.
//! Every subcommand writes a `<command>-config.json` echo of its resolved
//! parameters next to its outputs, so a run is fully described by that file
//! plus the input data. `SCRIPTORIUM_THREADS` caps internal parallelism.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use scriptorium::classifier::{
    read_checkpoint_file, train, write_checkpoint_file, write_history_csv, ConvLayerSpec,
    ModelConfig, ModelParams, TrainConfig,
};
use scriptorium::dataset::{
    generate_synthetic, load_manifest, make_splits, LineRecord, Partition, SplitManifest,
    SplitOptions, SynthConfig,
};
use scriptorium::error::Error;
use scriptorium::evaluation::{evaluate_multilevel, MultilevelReport};
use scriptorium::imaging::PreprocessMode;
use scriptorium::patching::PatchSpec;
use scriptorium::pipeline::{self, PatchedLine};
use scriptorium::scoring::{
    decide, default_threshold_grid, error_reject_curve, write_curve_csv, PageAggregation,
};
use scriptorium::Result;

#[derive(Parser)]
#[command(
    name = "scriptorium",
    version,
    about = "Scribe identification for handwritten line images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus with codex-correlated appearance
    Synth(SynthArgs),
    /// Partition a manifest into train/validation/test_A/test_B by codex
    Split(SplitArgs),
    /// Train the patch classifier and save a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint at patch, line, and page level on both test sets
    Evaluate(EvaluateArgs),
    /// Score unlabeled lines and decide per line under a reject threshold
    Predict(PredictArgs),
    /// Sweep the reject threshold and write error-reject curve data
    RejectCurve(RejectCurveArgs),
}

fn parse_mode(s: &str) -> std::result::Result<PreprocessMode, String> {
    PreprocessMode::parse(s)
        .ok_or_else(|| format!("unknown mode `{s}` (expected RGB, GS, or GS_MASK)"))
}

/// `OUT,KERNEL,STRIDE,pool|nopool`, e.g. `8,3,1,pool`.
fn parse_conv(s: &str) -> std::result::Result<ConvLayerSpec, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!(
            "conv layer `{s}` must be OUT,KERNEL,STRIDE,pool|nopool"
        ));
    }
    let num = |p: &str, what: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad {what} `{p}` in conv layer `{s}`"))
    };
    let pool = match parts[3].trim() {
        "pool" => true,
        "nopool" => false,
        other => return Err(format!("bad pool flag `{other}` (expected pool or nopool)")),
    };
    Ok(ConvLayerSpec {
        out_channels: num(parts[0], "channel count")?,
        kernel_size: num(parts[1], "kernel size")?,
        stride: num(parts[2], "stride")?,
        pool,
    })
}

fn parse_aggregation(s: &str) -> std::result::Result<PageAggregation, String> {
    match s.to_ascii_lowercase().as_str() {
        "weighted-mean" => Ok(PageAggregation::WeightedMean),
        "majority-vote" => Ok(PageAggregation::MajorityVote),
        _ => Err(format!(
            "unknown aggregation `{s}` (expected weighted-mean or majority-vote)"
        )),
    }
}

fn parse_partition(s: &str) -> std::result::Result<Partition, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "train" => Ok(Partition::Train),
        "validation" => Ok(Partition::Validation),
        "test_a" => Ok(Partition::TestA),
        "test_b" => Ok(Partition::TestB),
        _ => Err(format!(
            "unknown partition `{s}` (expected train, validation, test_a, or test_b)"
        )),
    }
}

#[derive(clap::Args, Serialize)]
struct SynthArgs {
    /// Number of scribe classes
    #[arg(long, default_value_t = 7)]
    classes: usize,
    /// Codices per class (at least 2; one can then be held out)
    #[arg(long, default_value_t = 3)]
    codices: usize,
    /// Lines per codex
    #[arg(long, default_value_t = 60)]
    lines: usize,
    /// Lines per page
    #[arg(long, default_value_t = 8)]
    lines_per_page: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for images and manifest.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct SplitArgs {
    /// Corpus manifest CSV
    #[arg(long)]
    manifest: PathBuf,
    /// Codex id to hold out as a separate (test_B-only) codex; repeatable
    #[arg(long = "separate", conflicts_with = "auto_separate")]
    separate: Vec<String>,
    /// Hold out the last N codices (by sorted id) of each class
    #[arg(long)]
    auto_separate: Option<usize>,
    /// Cap on lines drawn per class from the training codices
    #[arg(long)]
    cap: Option<usize>,
    /// Cap on test_B lines per class
    #[arg(long)]
    test_b_cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the split manifest JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Split manifest JSON from `split`
    #[arg(long)]
    split: PathBuf,
    /// Base directory for image paths (default: the manifest's directory)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Preprocessing mode: RGB, GS, or GS_MASK
    #[arg(long, default_value = "GS_MASK", value_parser = parse_mode)]
    mode: PreprocessMode,
    /// Square patch side in pixels
    #[arg(long, default_value_t = 28)]
    patch_size: usize,
    /// Conv layer as OUT,KERNEL,STRIDE,pool|nopool; repeatable, in order
    #[arg(long = "conv", value_parser = parse_conv)]
    conv: Vec<ConvLayerSpec>,
    /// Hidden fully-connected width; repeatable, in order
    #[arg(long = "fc")]
    fc: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    learning_rate: f64,
    /// Seed for weight init and epoch shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for model.ckpt and history.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Must produce the channel count the checkpoint was trained on
    #[arg(long, default_value = "GS_MASK", value_parser = parse_mode)]
    mode: PreprocessMode,
    /// Reject threshold applied at line and page level
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Page aggregation: weighted-mean or majority-vote
    #[arg(long, default_value = "weighted-mean", value_parser = parse_aggregation)]
    aggregation: PageAggregation,
    /// Output directory for reports
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest of lines to score (labels, if present, are ignored)
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    manifest: Option<PathBuf>,
    /// Directory of line images (*.png) to score instead of a manifest
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "GS_MASK", value_parser = parse_mode)]
    mode: PreprocessMode,
    /// Lines whose top probability falls below this are marked REJECT
    #[arg(long, default_value_t = 0.4)]
    threshold: f64,
    /// Split manifest JSON; supplies class names for decisions
    #[arg(long)]
    split: Option<PathBuf>,
    /// Output directory for predictions.csv and histogram.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct RejectCurveArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "GS_MASK", value_parser = parse_mode)]
    mode: PreprocessMode,
    /// Which split partition to sweep
    #[arg(long, default_value = "test_b", value_parser = parse_partition)]
    partition: Partition,
    /// Output directory for curve.csv and per-class curves
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Ok(threads) = std::env::var("SCRIPTORIUM_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                // a failure here means a pool already exists; keep going
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: SCRIPTORIUM_THREADS must be a positive integer, got `{threads}`");
                std::process::exit(1);
            }
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Split(args) => cmd_split(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::RejectCurve(args) => cmd_reject_curve(&args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

/// Write the resolved parameters of a run next to its outputs.
fn echo_config<T: Serialize>(dir: &Path, command: &str, args: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{command}-config.json"));
    let json = serde_json::to_string_pretty(args)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

fn data_dir_for(manifest: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf())
}

/// Class names for decisions/reports: the split's classes when available,
/// positional names otherwise.
fn class_names(split: Option<&SplitManifest>, k: usize) -> Result<Vec<String>> {
    match split {
        Some(s) => {
            if s.classes.len() != k {
                return Err(Error::Split(format!(
                    "split lists {} classes but the checkpoint has {k}",
                    s.classes.len()
                )));
            }
            Ok(s.classes.clone())
        }
        None => Ok((0..k).map(|i| format!("class{i}")).collect()),
    }
}

fn check_mode_against_model(mode: PreprocessMode, params: &ModelParams) -> Result<()> {
    let expected = params.config().input_channels;
    if mode.output_channels() != expected {
        return Err(Error::InvalidModelConfig(format!(
            "mode {} yields {}-channel input but the checkpoint expects {} channels",
            mode.as_str(),
            mode.output_channels(),
            expected
        )));
    }
    Ok(())
}

fn patch_spec_of(params: &ModelParams) -> Result<PatchSpec> {
    PatchSpec::new(params.config().input_width, params.config().input_height)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        num_classes: args.classes,
        codices_per_class: args.codices,
        lines_per_codex: args.lines,
        lines_per_page: args.lines_per_page,
        seed: args.seed,
    };
    echo_config(&args.out, "synth", args)?;
    let manifest = generate_synthetic(&config, &args.out)?;
    println!(
        "generated {} lines ({} classes x {} codices x {} lines) -> {}",
        args.classes * args.codices * args.lines,
        args.classes,
        args.codices,
        args.lines,
        manifest.display()
    );
    Ok(())
}

/// Last-N-per-class holdout: for each scribe, the lexicographically last N
/// codices that scribe appears in become separate codices.
fn auto_separate_set(records: &[LineRecord], n: usize) -> BTreeSet<String> {
    let mut per_class: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        per_class
            .entry(r.scribe.as_str())
            .or_default()
            .insert(r.codex.as_str());
    }
    let mut separate = BTreeSet::new();
    for codices in per_class.values() {
        for codex in codices.iter().rev().take(n) {
            separate.insert((*codex).to_string());
        }
    }
    separate
}

fn cmd_split(args: &SplitArgs) -> Result<()> {
    let records = load_manifest(&args.manifest)?;
    let separate: BTreeSet<String> = match args.auto_separate {
        Some(n) => auto_separate_set(&records, n),
        None => args.separate.iter().cloned().collect(),
    };
    if separate.is_empty() {
        return Err(Error::Split(
            "no separate codices named; use --separate or --auto-separate".into(),
        ));
    }
    let opts = SplitOptions {
        per_class_cap: args.cap,
        test_b_cap: args.test_b_cap,
        seed: args.seed,
    };
    let manifest = make_splits(&records, &separate, &opts)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            echo_config(dir, "split", args)?;
        } else {
            echo_config(Path::new("."), "split", args)?;
        }
    }
    manifest.save(&args.out)?;
    println!(
        "split {} classes: train {} / validation {} / test_A {} / test_B {} -> {}",
        manifest.classes.len(),
        manifest.train.len(),
        manifest.validation.len(),
        manifest.test_a.len(),
        manifest.test_b.len(),
        args.out.display()
    );
    Ok(())
}

/// Default architecture when no --conv/--fc flags are given: three small
/// pooled conv stages and one hidden layer.
fn default_arch() -> (Vec<ConvLayerSpec>, Vec<usize>) {
    let conv = |out_channels| ConvLayerSpec {
        out_channels,
        kernel_size: 3,
        stride: 1,
        pool: true,
    };
    (vec![conv(4), conv(8), conv(16)], vec![16])
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let records = load_manifest(&args.manifest)?;
    let split = SplitManifest::load(&args.split)?;
    let data_dir = data_dir_for(&args.manifest, &args.data_dir);
    let spec = PatchSpec::square(args.patch_size)?;

    let (train_lines, train_skipped) =
        pipeline::load_split_lines(&records, &split.train, &data_dir, args.mode, &spec)?;
    let (val_lines, val_skipped) =
        pipeline::load_split_lines(&records, &split.validation, &data_dir, args.mode, &spec)?;
    let norm = pipeline::compute_norm(&train_lines)?;
    let class_index = split.class_index();
    let train_samples = pipeline::to_samples(&train_lines, &class_index, &norm)?;
    let val_samples = pipeline::to_samples(&val_lines, &class_index, &norm)?;

    let (conv_layers, fc_layers) = if args.conv.is_empty() && args.fc.is_empty() {
        default_arch()
    } else {
        (args.conv.clone(), args.fc.clone())
    };
    let model_config = ModelConfig {
        input_height: args.patch_size,
        input_width: args.patch_size,
        input_channels: args.mode.output_channels(),
        num_classes: split.classes.len(),
        conv_layers,
        fc_layers,
        seed: args.seed,
    };
    let tcfg = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        seed: args.seed,
        ..TrainConfig::default()
    };

    echo_config(&args.out, "train", args)?;
    println!(
        "training on {} patches from {} lines ({} skipped), validating on {} patches ({} lines, {} skipped)",
        train_samples.len(),
        train_lines.len(),
        train_skipped,
        val_samples.len(),
        val_lines.len(),
        val_skipped
    );
    let outcome = train(&model_config, &tcfg, &train_samples, &val_samples, norm)?;

    let ckpt_path = args.out.join("model.ckpt");
    write_checkpoint_file(&outcome.params, &ckpt_path)?;
    write_history_csv(&outcome.history, &args.out.join("history.csv"))?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "saved {} ({} parameters); best epoch {} with validation weighted F1 {:.4}",
        ckpt_path.display(),
        outcome.params.num_params(),
        outcome.best_epoch,
        best.val_weighted_f1
    );
    Ok(())
}

/// Score one split partition end to end.
fn score_partition(
    records: &[LineRecord],
    split: &SplitManifest,
    partition: Partition,
    data_dir: &Path,
    mode: PreprocessMode,
    params: &ModelParams,
) -> Result<(Vec<scriptorium::scoring::ScoredLine>, Vec<PatchedLine>, usize)> {
    let spec = patch_spec_of(params)?;
    let ids = split.ids(partition);
    let (lines, skipped) = pipeline::load_split_lines(records, ids, data_dir, mode, &spec)?;
    let scored = pipeline::score_lines(params, &lines, &split.class_index())?;
    Ok((scored, lines, skipped))
}

fn write_level_reports(
    report: &MultilevelReport,
    set_name: &str,
    names: &[String],
    out: &Path,
    summary: &mut String,
) -> Result<()> {
    use std::fmt::Write as _;
    let levels = [
        ("patch", &report.patch),
        ("line", &report.line),
        ("page", &report.page),
    ];
    for (level_name, level) in levels {
        let json_path = out.join(format!("report_{set_name}_{level_name}.json"));
        let json = serde_json::to_string_pretty(level)?;
        std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
        level
            .confusion
            .write_csv(names, &out.join(format!("confusion_{set_name}_{level_name}.csv")))?;
        writeln!(summary, "{}", level.metrics.render_text()).expect("string write");
    }
    writeln!(
        summary,
        "[{set_name}] lines without a page id: {}\n",
        report.lines_without_page
    )
    .expect("string write");
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let records = load_manifest(&args.manifest)?;
    let split = SplitManifest::load(&args.split)?;
    let data_dir = data_dir_for(&args.manifest, &args.data_dir);
    let params = read_checkpoint_file(&args.checkpoint)?;
    check_mode_against_model(args.mode, &params)?;
    let names = class_names(Some(&split), params.config().num_classes)?;

    echo_config(&args.out, "evaluate", args)?;
    let mut summary = String::new();
    for (partition, set_name) in [(Partition::TestA, "test_a"), (Partition::TestB, "test_b")] {
        let (scored, lines, skipped) =
            score_partition(&records, &split, partition, &data_dir, args.mode, &params)?;
        let report = evaluate_multilevel(&scored, &names, args.threshold, args.aggregation)?;
        use std::fmt::Write as _;
        writeln!(
            summary,
            "== {set_name}: {} lines evaluated, {} skipped as uninformative ==\n",
            lines.len(),
            skipped
        )
        .expect("string write");
        write_level_reports(&report, set_name, &names, &args.out, &mut summary)?;
        println!(
            "{set_name}: weighted F1 patch {:.4} / line {:.4} / page {:.4}",
            report.patch.metrics.weighted_f1,
            report.line.metrics.weighted_f1,
            report.page.metrics.weighted_f1
        );
    }
    let summary_path = args.out.join("summary.txt");
    std::fs::write(&summary_path, &summary).map_err(|e| Error::io(&summary_path, e))?;
    Ok(())
}

/// Records to predict on: manifest rows, or synthesized rows for a directory
/// of images (file stem as line id, one shared section).
fn prediction_records(args: &PredictArgs) -> Result<(Vec<LineRecord>, PathBuf)> {
    if let Some(manifest) = &args.manifest {
        let records = load_manifest(manifest)?;
        Ok((records, data_dir_for(manifest, &args.data_dir)))
    } else {
        let dir = args.images.as_ref().expect("clap enforces one source");
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| {
                let name = entry.ok()?.file_name().to_string_lossy().into_owned();
                name.to_ascii_lowercase().ends_with(".png").then_some(name)
            })
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "no .png files in {}",
                dir.display()
            )));
        }
        let records = names
            .into_iter()
            .map(|name| LineRecord {
                line_id: name.trim_end_matches(".png").trim_end_matches(".PNG").to_string(),
                image_path: name,
                scribe: String::new(),
                codex: "all".into(),
                page: String::new(),
            })
            .collect();
        Ok((records, dir.clone()))
    }
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let params = read_checkpoint_file(&args.checkpoint)?;
    check_mode_against_model(args.mode, &params)?;
    let split = match &args.split {
        Some(path) => Some(SplitManifest::load(path)?),
        None => None,
    };
    let names = class_names(split.as_ref(), params.config().num_classes)?;
    let spec = patch_spec_of(&params)?;
    let (records, data_dir) = prediction_records(args)?;

    echo_config(&args.out, "predict", args)?;
    let mut skipped = 0usize;
    let mut rows: Vec<(String, String, Vec<f64>, Option<usize>)> = Vec::new();
    for record in &records {
        let Some(line) = pipeline::load_and_patch(record, &data_dir, args.mode, &spec)? else {
            skipped += 1;
            continue;
        };
        let norm = params.norm();
        let patch_scores: Vec<_> = line
            .patches
            .iter()
            .map(|raw| {
                scriptorium::classifier::forward(
                    &params,
                    &scriptorium::patching::normalize(raw, &norm),
                )
            })
            .collect::<Result<_>>()?;
        let score = scriptorium::scoring::line_score(&record.line_id, &patch_scores)?;
        let decision = decide(&score.score, args.threshold);
        rows.push((
            record.line_id.clone(),
            record.codex.clone(),
            score.score.probs().to_vec(),
            decision.accepted_class(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(
            "no informative lines to predict on".into(),
        ));
    }

    let k = names.len();
    let pred_path = args.out.join("predictions.csv");
    let mut csv = String::from("line_id");
    for i in 0..k {
        csv.push_str(&format!(",p_class{i}"));
    }
    csv.push_str(",decision\n");
    let mut histogram: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    let mut rejected = 0usize;
    for (line_id, section, probs, accepted) in &rows {
        csv.push_str(line_id);
        for p in probs {
            csv.push_str(&format!(",{p}"));
        }
        match accepted {
            Some(class) => {
                csv.push_str(&format!(",{}\n", names[*class]));
                histogram.entry(section).or_insert_with(|| vec![0; k])[*class] += 1;
            }
            None => {
                csv.push_str(",REJECT\n");
                rejected += 1;
            }
        }
    }
    std::fs::write(&pred_path, &csv).map_err(|e| Error::io(&pred_path, e))?;

    let hist_path = args.out.join("histogram.csv");
    let mut hist = String::from("section");
    for name in &names {
        hist.push_str(&format!(",{name}"));
    }
    hist.push('\n');
    for (section, counts) in &histogram {
        hist.push_str(section);
        for c in counts {
            hist.push_str(&format!(",{c}"));
        }
        hist.push('\n');
    }
    std::fs::write(&hist_path, &hist).map_err(|e| Error::io(&hist_path, e))?;

    println!(
        "predicted {} lines ({} rejected at threshold {}, {} skipped) -> {}",
        rows.len(),
        rejected,
        args.threshold,
        skipped,
        pred_path.display()
    );
    Ok(())
}

fn cmd_reject_curve(args: &RejectCurveArgs) -> Result<()> {
    let records = load_manifest(&args.manifest)?;
    let split = SplitManifest::load(&args.split)?;
    let data_dir = data_dir_for(&args.manifest, &args.data_dir);
    let params = read_checkpoint_file(&args.checkpoint)?;
    check_mode_against_model(args.mode, &params)?;
    let names = class_names(Some(&split), params.config().num_classes)?;

    echo_config(&args.out, "reject-curve", args)?;
    let (scored, _, _) = score_partition(
        &records,
        &split,
        args.partition,
        &data_dir,
        args.mode,
        &params,
    )?;
    let items: Vec<_> = scored
        .iter()
        .map(|line| Ok((line.line_score()?.score, line.true_label)))
        .collect::<Result<_>>()?;
    let grid = default_threshold_grid();
    let points = error_reject_curve(&items, &grid)?;
    let curve_path = args.out.join("curve.csv");
    write_curve_csv(&points, &curve_path)?;

    for (label, name) in names.iter().enumerate() {
        let class_items: Vec<_> = items
            .iter()
            .filter(|(_, l)| *l == label)
            .cloned()
            .collect();
        if class_items.is_empty() {
            println!("class {name}: no lines in this partition, curve skipped");
            continue;
        }
        let class_points = error_reject_curve(&class_items, &grid)?;
        write_curve_csv(
            &class_points,
            &args.out.join(format!("curve_{}.csv", sanitize(name))),
        )?;
    }
    println!(
        "wrote {} thresholds over {} lines -> {}",
        points.len(),
        items.len(),
        curve_path.display()
    );
    Ok(())
}
