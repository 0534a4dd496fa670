//! Mini-batch training loop with best-on-validation snapshotting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::network::{forward, loss_and_gradient_refs, ModelParams};
use super::{ModelConfig, TrainConfig};
use crate::error::Error;
use crate::evaluation::{f1_report, ConfusionMatrix, Level};
use crate::patching::{NormConstants, Patch};
use crate::scoring::decide;
use crate::Result;

/// One labeled, normalized training patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub patch: Patch,
    pub label: usize,
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_weighted_f1: f64,
}

/// Result of a training run: the best-on-validation parameters plus the full
/// epoch history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Patch-level weighted F1 of the model on a labeled set, with no rejection.
pub fn validation_f1(params: &ModelParams, set: &[Sample]) -> Result<f64> {
    let k = params.config().num_classes;
    let decisions: Vec<(usize, crate::scoring::Decision)> = set
        .par_iter()
        .map(|sample| {
            forward(params, &sample.patch).map(|score| (sample.label, decide(&score, 0.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let cm = ConfusionMatrix::from_pairs(k, &decisions)?;
    let names: Vec<String> = (0..k).map(|c| c.to_string()).collect();
    Ok(f1_report(&cm, Level::Patch, &names).weighted_f1)
}

/// Train with mini-batch Adam for `tcfg.epochs` epochs, evaluating patch-level
/// weighted F1 on the validation set after each epoch and keeping the
/// best-scoring snapshot (strictly better only, so ties resolve to the
/// earlier epoch).
///
/// Initialization derives from `config.seed`, shuffling from `tcfg.seed`; with
/// both fixed the outcome is bit-identical across runs and thread counts.
pub fn train(
    config: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    norm: NormConstants,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty".into()));
    }
    for sample in train_set.iter().chain(val_set) {
        if sample.label >= config.num_classes {
            return Err(Error::LabelOutOfRange {
                label: sample.label,
                num_classes: config.num_classes,
            });
        }
    }

    let mut params = ModelParams::init(config, norm)?;
    let mut adam = Adam::from_train_config(tcfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);

    let mut history: Vec<EpochStats> = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tcfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = match loss_and_gradient_refs(&params, &batch) {
                Ok(ok) => ok,
                Err(Error::NonFiniteLoss { .. }) => {
                    return Err(Error::TrainingDiverged {
                        epoch,
                        batch: batch_idx,
                        completed: epoch - 1,
                        history,
                    });
                }
                Err(other) => return Err(other),
            };
            adam.step(&mut params, &grad);
            loss_sum += loss * batch.len() as f64;
        }
        let mean_loss = loss_sum / train_set.len() as f64;
        let val_weighted_f1 = validation_f1(&params, val_set)?;
        history.push(EpochStats {
            epoch,
            mean_loss,
            val_weighted_f1,
        });
        let improved = match &best {
            None => true,
            Some((best_f1, _, _)) => val_weighted_f1 > *best_f1,
        };
        if improved {
            best = Some((val_weighted_f1, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("epochs >= 1 guarantees one snapshot");
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        history,
    })
}

/// Write the epoch history as CSV: `epoch,mean_loss,val_weighted_f1`.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    writer.write_record(["epoch", "mean_loss", "val_weighted_f1"])?;
    for stats in history {
        writer.write_record(&[
            stats.epoch.to_string(),
            stats.mean_loss.to_string(),
            stats.val_weighted_f1.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
