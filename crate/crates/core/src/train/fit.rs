use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::Optimizer;
use crate::autodiff::{Element, Tape, Var};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, Batch, Model, ModelConfig};
use crate::nn::{Forward, Mode};

/// Lower clamp of predicted probabilities inside the loss.
pub const PROB_EPSILON: f64 = 1e-7;

/// Mean categorical cross-entropy of `probs [B, C]` against one-hot
/// `targets [B, C]`, with probabilities clamped to `[ε, 1 − ε]`.
pub fn cross_entropy<T: Element>(tape: &mut Tape<T>, probs: Var, targets: Var) -> Result<Var> {
    let b = tape.shape(probs)[0];
    if b == 0 {
        return Err(Error::Contract("cross_entropy on an empty batch".into()));
    }
    let p = tape.clamp(probs, PROB_EPSILON, 1.0 - PROB_EPSILON);
    let lp = tape.log(p);
    let prod = tape.mul(lp, targets)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, -1.0 / b as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub current_lr: f64,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    /// Ran the configured number of epochs.
    Completed,
    EarlyStopped,
    /// Stopped on a non-finite loss or gradient; the message names it.
    Diverged(String),
}

#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    /// Parameters with the lowest validation loss seen, epoch 0 included.
    pub model: Model<T>,
    pub log: Vec<TrainLogRecord>,
    /// Learning rate used in each trained epoch.
    pub lr_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_trained: usize,
    pub stop: StopReason,
}

impl<T> FitOutcome<T> {
    pub fn diverged(&self) -> bool {
        matches!(self.stop, StopReason::Diverged(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub accuracy: f64,
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    mix(seed, epoch as u64)
}

fn correct(probs: &[f64], labels: &[u8]) -> usize {
    probs
        .chunks(2)
        .zip(labels)
        .filter(|(p, &l)| (p[1] >= 0.5) == (l == 1))
        .count()
}

/// Cross-entropy plus weighted pooling auxiliary losses.
fn objective<T: Element>(cx: &mut Forward<'_, T>, probs: Var, batch: &Batch<T>, aux_weight: f64) -> Result<Var> {
    let targets = cx.constant(batch.targets.clone());
    let mut loss = cross_entropy(cx.tape, probs, targets)?;
    if aux_weight > 0.0 {
        let aux: Vec<Var> = cx.aux_losses().iter().map(|(_, v)| *v).collect();
        for a in aux {
            let w = cx.tape.scale(a, aux_weight);
            loss = cx.tape.add(loss, w)?;
        }
    }
    Ok(loss)
}

/// Loss and accuracy of `model` on `data` in inference mode.
pub fn evaluate_loss<T: Element>(model: &Model<T>, data: &Dataset, cfg: &TrainConfig) -> Result<LossStats> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let parts = data
        .samples
        .par_chunks(cfg.batch_size.max(1))
        .map(|chunk| -> Result<(f64, usize)> {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let batch = Batch::<T>::from_samples(&refs)?;
            let mut tape = Tape::new();
            let mut cx = Forward::new(&mut tape, &model.params, Mode::Infer, false, 0);
            let out = model.net.forward(&mut cx, &batch)?;
            let loss = objective(&mut cx, out.probs, &batch, cfg.aux_loss_weight)?;
            let l = cx.value(loss).item().as_f64();
            let ok = correct(&cx.value(out.probs).to_f64_vec(), &batch.labels);
            Ok((l * chunk.len() as f64, ok))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    let (sum, ok) = parts.iter().fold((0.0, 0), |(s, c), &(l, k)| (s + l, c + k));
    Ok(LossStats {
        loss: sum / n,
        accuracy: ok as f64 / n,
    })
}

/// One optimizer step on `batch`. Returns the batch loss and the number of
/// correct train-mode predictions.
pub fn train_step<T: Element>(
    model: &mut Model<T>,
    opt: &mut Optimizer<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    lr: f64,
    dropout_seed: u64,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let mut cx = Forward::new(&mut tape, &model.params, Mode::Train, true, dropout_seed).with_update_step(opt.steps());
    let out = model.net.forward(&mut cx, batch)?;
    let loss = objective(&mut cx, out.probs, batch, cfg.aux_loss_weight)?;
    let value = cx.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::Divergence(format!("non-finite training loss {value}")));
    }
    let ok = correct(&cx.value(out.probs).to_f64_vec(), &batch.labels);
    let grads = cx.tape.backward(loss)?;
    let param_grads = cx.param_grads(&grads);
    let bn = cx.take_bn_updates();
    drop(cx);
    drop(grads);
    opt.step(&mut model.params, &param_grads, lr)?;
    for (id, v) in bn {
        model.params.set(id, v)?;
    }
    Ok((value, ok))
}

/// [`fit_with`] without a progress callback.
pub fn fit<T: Element>(model: Model<T>, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome<T>> {
    fit_with(model, train, val, cfg, |_| {})
}

/// Trains with Adam (or the configured optimizer), decaying the learning
/// rate on validation plateaus and stopping early. The validation loss of
/// the incoming model is logged as epoch 0 and competes for "best".
pub fn fit_with<T: Element>(
    mut model: Model<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainLogRecord),
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Contract("validation set is empty".into()));
    }
    let start = Instant::now();
    let mut log = Vec::new();
    let mut push = |log: &mut Vec<TrainLogRecord>, epoch, split: &str, s: LossStats, lr| {
        let r = TrainLogRecord {
            epoch,
            split: split.to_string(),
            loss: s.loss,
            accuracy: s.accuracy,
            current_lr: lr,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_record(&r);
        log.push(r);
    };

    let mut lr = cfg.lr_init;
    let initial = evaluate_loss(&model, val, cfg)?;
    push(&mut log, 0, "val", initial, lr);
    if !initial.loss.is_finite() {
        return Err(Error::Divergence(format!("initial validation loss is {}", initial.loss)));
    }

    let mut best = model.clone();
    let mut best_loss = initial.loss;
    let mut best_epoch = 0;
    let mut plateau_wait = 0;
    let mut stop_wait = 0;
    let mut lr_trace = Vec::new();
    let mut stop = StopReason::Completed;
    let mut opt = Optimizer::new(cfg);
    let mut epochs_trained = 0;

    for epoch in 1..=cfg.epochs {
        lr_trace.push(lr);
        let seed = epoch_seed(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let (mut sum, mut ok) = (0.0, 0usize);
        let mut failure = None;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train.samples[i]).collect();
            let batch = Batch::<T>::from_samples(&refs)?;
            match train_step(&mut model, &mut opt, &batch, cfg, lr, mix(seed, bi as u64)) {
                Ok((l, k)) => {
                    sum += l * idx.len() as f64;
                    ok += k;
                }
                Err(Error::Divergence(msg)) => {
                    failure = Some(format!("epoch {epoch}, batch {bi}: {msg}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(msg) = failure {
            stop = StopReason::Diverged(msg);
            break;
        }
        epochs_trained = epoch;
        let n = train.len() as f64;
        push(&mut log, epoch, "train", LossStats { loss: sum / n, accuracy: ok as f64 / n }, lr);

        let v = evaluate_loss(&model, val, cfg)?;
        push(&mut log, epoch, "val", v, lr);
        if !v.loss.is_finite() {
            stop = StopReason::Diverged(format!("epoch {epoch}: validation loss is {}", v.loss));
            break;
        }
        if v.loss < best_loss - cfg.min_delta {
            best_loss = v.loss;
            best_epoch = epoch;
            best = model.clone();
            plateau_wait = 0;
            stop_wait = 0;
        } else {
            plateau_wait += 1;
            stop_wait += 1;
            if stop_wait >= cfg.early_stop_patience {
                stop = StopReason::EarlyStopped;
                break;
            }
            if plateau_wait >= cfg.plateau_patience {
                lr = (lr * cfg.lr_decay_factor).max(cfg.lr_min);
                plateau_wait = 0;
            }
        }
    }

    Ok(FitOutcome {
        model: best,
        log,
        lr_trace,
        best_epoch,
        best_val_loss: best_loss,
        epochs_trained,
        stop,
    })
}

/// Loads a parent checkpoint (which must match `expected`) and continues
/// training on one dataset.
pub fn finetune(
    checkpoint: &Path,
    expected: &ModelConfig,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    on_record: impl FnMut(&TrainLogRecord),
) -> Result<FitOutcome<f32>> {
    let model = load_checkpoint(checkpoint, Some(expected))?;
    fit_with(model, train, val, cfg, on_record)
}

/// Writes one JSON object per line.
pub fn write_log(path: &Path, log: &[TrainLogRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn uniform_prediction_costs_ln2() {
        let mut t = Tape::<f64>::new();
        let p = t.constant(Tensor::from_f64(&[2, 2], &[0.5, 0.5, 0.5, 0.5]).unwrap());
        let y = t.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = cross_entropy(&mut t, p, y).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_costs_about_epsilon() {
        let mut t = Tape::<f64>::new();
        let p = t.constant(Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap());
        let y = t.constant(Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap());
        let l = cross_entropy(&mut t, p, y).unwrap();
        let v = t.value(l).item();
        assert!(v > 0.0 && (v - 1e-7).abs() < 1e-12, "{v}");
    }

    #[test]
    fn epoch_seeds_differ() {
        assert_ne!(epoch_seed(0, 1), epoch_seed(0, 2));
        assert_ne!(epoch_seed(0, 1), epoch_seed(1, 1));
    }
}
