//! Mini-batch SGD training with the supported training-time defenses:
//! early stopping, L2 weight decay, dropout, label smoothing and DP-SGD.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{argmax, cross_entropy_unchecked};
use super::model::{DropoutMasks, GradientSet, MlpModel};
use crate::data::{DataSplit, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub validation_fraction: f64,
}

/// DP-SGD parameters. `delta` is carried for reporting only; no privacy
/// accounting is performed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub early_stopping: Option<EarlyStopping>,
    pub dp: Option<DpConfig>,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![128],
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 32,
            l2_lambda: 0.0,
            dropout_rate: 0.0,
            label_smoothing: 0.0,
            early_stopping: None,
            dp: None,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2_lambda must be nonnegative, got {}", self.l2_lambda));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if let Some(es) = &self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return bad(format!("validation_fraction {} outside (0, 1)", es.validation_fraction));
            }
        }
        if let Some(dp) = &self.dp {
            check_dp(dp.clip_norm, dp.noise_multiplier)?;
        }
        Ok(())
    }
}

fn check_dp(clip_norm: f64, noise_multiplier: f64) -> Result<()> {
    if !(clip_norm > 0.0 && clip_norm.is_finite()) {
        return Err(Error::Config(format!("DP clip norm must be positive, got {clip_norm}")));
    }
    if !(noise_multiplier >= 0.0 && noise_multiplier.is_finite()) {
        return Err(Error::Config(format!(
            "DP noise multiplier must be nonnegative, got {noise_multiplier}"
        )));
    }
    Ok(())
}

/// Independent RNG streams so that toggling one defense does not perturb
/// the randomness consumed by another.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Noise = 4,
    Validation = 5,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DpStepStats {
    pub max_raw_norm: f64,
    pub max_clipped_norm: f64,
}

/// One DP-SGD update: each per-example gradient is clipped to `clip_norm`
/// over the flattened parameter vector, the clipped gradients are summed,
/// Gaussian noise with std `noise_multiplier · clip_norm` is added per
/// coordinate, and the result is averaged over the batch before a plain SGD
/// step.
pub fn dp_sgd_step<R: Rng>(
    model: &mut MlpModel,
    per_example: &[GradientSet],
    clip_norm: f64,
    noise_multiplier: f64,
    lr: f64,
    rng: &mut R,
) -> Result<DpStepStats> {
    check_dp(clip_norm, noise_multiplier)?;
    if per_example.is_empty() {
        return Err(Error::InvalidInput("DP step needs at least one example".into()));
    }
    let mut sum = GradientSet::zeros_like(model);
    let mut stats = DpStepStats::default();
    for g in per_example {
        let norm = g.l2_norm();
        let factor = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        let mut clipped = g.clone();
        clipped.scale(factor);
        stats.max_raw_norm = stats.max_raw_norm.max(norm);
        stats.max_clipped_norm = stats.max_clipped_norm.max(clipped.l2_norm());
        sum.add_assign(&clipped);
    }
    if noise_multiplier > 0.0 {
        let normal = Normal::new(0.0, noise_multiplier * clip_norm)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for v in sum.values_mut() {
            *v += normal.sample(rng);
        }
    }
    sum.scale(1.0 / per_example.len() as f64);
    model.sgd_step(&sum, lr)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub label: usize,
    pub is_member: bool,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub loss: f64,
    pub latent: Vec<f64>,
}

impl PredictionRecord {
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn is_correct(&self) -> bool {
        self.predicted() == self.label
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub records: Vec<PredictionRecord>,
}

impl Evaluation {
    pub fn mean_loss(&self) -> f64 {
        self.records.iter().map(|r| r.loss).sum::<f64>() / self.records.len() as f64
    }
}

/// Inference on the given samples with no dropout. Losses use hard labels.
pub fn evaluate(model: &MlpModel, dataset: &Dataset, indices: &[usize], is_member: bool) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty subset".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidInput(format!("index {bad} out of range")));
    }
    let records = indices
        .par_iter()
        .map(|&index| {
            let (x, label) = dataset.sample(index);
            let trace = model.forward(x, None)?;
            if label >= trace.probs.len() {
                return Err(Error::InvalidInput(format!(
                    "label {label} of sample {index} exceeds model classes"
                )));
            }
            let loss = cross_entropy_unchecked(&trace.probs, label, 0.0);
            Ok(PredictionRecord {
                index,
                label,
                is_member,
                latent: trace.latent().to_vec(),
                logits: trace.logits,
                probs: trace.probs,
                loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(Evaluation {
        accuracy: correct as f64 / records.len() as f64,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_clipped_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned when early stopping is active.
    pub best_epoch: Option<usize>,
    pub stopped_at: Option<usize>,
    /// Members held out for validation by early stopping; they never
    /// receive gradient updates.
    pub validation_indices: Vec<usize>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
        let mut out = String::from("epoch,train_acc,test_acc,train_loss,test_loss\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:?},{},{:?},{}",
                e.epoch,
                e.train_acc,
                opt(e.test_acc),
                e.train_loss,
                opt(e.test_loss)
            );
        }
        out
    }

    /// Largest post-clipping per-example gradient norm seen in the run.
    pub fn max_clipped_norm(&self) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.max_clipped_norm)
            .reduce(f64::max)
    }
}

/// Splits members into (trained, validation) sets. Without early stopping
/// every member is trained on.
pub fn holdout_validation(members: &[usize], config: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let Some(es) = &config.early_stopping else {
        return Ok((members.to_vec(), Vec::new()));
    };
    if members.len() < 2 {
        return Err(Error::InvalidInput("early stopping needs at least 2 members".into()));
    }
    let mut shuffled = members.to_vec();
    shuffled.shuffle(&mut stream_rng(config.rng_seed, Stream::Validation));
    let k = ((es.validation_fraction * shuffled.len() as f64).round() as usize).clamp(1, shuffled.len() - 1);
    let mut val = shuffled.split_off(shuffled.len() - k);
    shuffled.sort_unstable();
    val.sort_unstable();
    Ok((shuffled, val))
}

pub fn train(dataset: &Dataset, split: &DataSplit, config: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    train_with_observer(dataset, split, config, |_, _| {})
}

/// Like [`train`], calling `observer(epoch, model)` with the initial model
/// (epoch 0) and after every completed epoch.
pub fn train_with_observer<F>(
    dataset: &Dataset,
    split: &DataSplit,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(MlpModel, TrainHistory)>
where
    F: FnMut(usize, &MlpModel),
{
    config.validate()?;
    split.validate(dataset.len())?;
    if split.member_indices.is_empty() {
        return Err(Error::InvalidInput("member set is empty".into()));
    }

    let mut init_rng = stream_rng(config.rng_seed, Stream::Init);
    let mut model = MlpModel::init(
        dataset.feature_dim(),
        &config.hidden_layers,
        dataset.num_classes,
        &mut init_rng,
    );
    let mut history = TrainHistory::default();
    observer(0, &model);
    if config.epochs == 0 {
        return Ok((model, history));
    }

    let (mut train_idx, val_idx) = holdout_validation(&split.member_indices, config)?;
    history.validation_indices = val_idx.clone();

    let mut shuffle_rng = stream_rng(config.rng_seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(config.rng_seed, Stream::Dropout);
    let mut noise_rng = stream_rng(config.rng_seed, Stream::Noise);

    let mut best: Option<(f64, f64, usize, MlpModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut max_clipped: Option<f64> = None;
        for (batch_no, batch) in train_idx.chunks(config.batch_size).enumerate() {
            let masks = if config.dropout_rate > 0.0 {
                Some(DropoutMasks::sample(&model, config.dropout_rate, &mut dropout_rng)?)
            } else {
                None
            };
            let mut per_example = Vec::with_capacity(batch.len());
            for &i in batch {
                let (x, label) = dataset.sample(i);
                let trace = model.forward(x, masks.as_ref())?;
                let loss = cross_entropy_unchecked(&trace.probs, label, config.label_smoothing);
                if !loss.is_finite() || trace.probs.iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
                }
                per_example.push(model.backward(&trace, label, config.l2_lambda, config.label_smoothing));
            }
            match &config.dp {
                Some(dp) => {
                    let stats = dp_sgd_step(
                        &mut model,
                        &per_example,
                        dp.clip_norm,
                        dp.noise_multiplier,
                        config.learning_rate,
                        &mut noise_rng,
                    )?;
                    max_clipped = Some(max_clipped.map_or(stats.max_clipped_norm, |m: f64| m.max(stats.max_clipped_norm)));
                }
                None => {
                    let mut mean = GradientSet::zeros_like(&model);
                    for g in &per_example {
                        mean.add_assign(g);
                    }
                    mean.scale(1.0 / per_example.len() as f64);
                    model.sgd_step(&mean, config.learning_rate)?;
                }
            }
        }

        let train_eval = evaluate(&model, dataset, &train_idx, true)?;
        let test_eval = if split.nonmember_indices.is_empty() {
            None
        } else {
            Some(evaluate(&model, dataset, &split.nonmember_indices, false)?)
        };
        let val_eval = if val_idx.is_empty() {
            None
        } else {
            Some(evaluate(&model, dataset, &val_idx, true)?)
        };
        let train_loss = train_eval.mean_loss();
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: train_idx.len().div_ceil(config.batch_size),
            });
        }
        history.epochs.push(EpochStats {
            epoch,
            train_acc: train_eval.accuracy,
            test_acc: test_eval.as_ref().map(|e| e.accuracy),
            train_loss,
            test_loss: test_eval.as_ref().map(Evaluation::mean_loss),
            val_acc: val_eval.as_ref().map(|e| e.accuracy),
            max_clipped_norm: max_clipped,
        });
        observer(epoch, &model);

        if let (Some(es), Some(val)) = (&config.early_stopping, &val_eval) {
            let (acc, loss) = (val.accuracy, val.mean_loss());
            let improved = match &best {
                None => true,
                Some((best_acc, best_loss, _, _)) => acc > *best_acc || (acc == *best_acc && loss < *best_loss),
            };
            if improved {
                best = Some((acc, loss, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= es.patience {
                    history.stopped_at = Some(epoch);
                    break;
                }
            }
        }
    }

    if let Some((_, _, epoch, snapshot)) = best {
        history.best_epoch = Some(epoch);
        model = snapshot;
    }
    Ok((model, history))
}
