//! SGD-with-momentum training loop with a CV-monitored learning-rate
//! schedule, frame-accuracy metrics and the gradient-variance-vs-temperature
//! diagnostic.
//!
//! Training runs as a list of phases. Each phase has its own loss and
//! optimizer config, restarts the schedule and the velocity buffers, and
//! ends by restoring the best-CV checkpoint seen during the phase. A
//! pre-training call followed by a fine-tuning call on the same model and
//! RNG is therefore bit-identical to one `run_phases` call with two phases.

use crate::data::SequenceDataset;
use crate::error::{KtError, Result};
use crate::layers::{ce_hard, ce_soft, logit_match, softmax_t_row, Temperature};
use crate::models::Network;
use crate::numerics::{Matrix, Pcg32};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.0001,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 20,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(KtError::Argument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(KtError::Argument(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(KtError::Argument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Classical momentum: v <- mu*v - eta*g; theta <- theta + v.
pub fn sgd_momentum_step(
    param: &mut Matrix,
    grad: &Matrix,
    velocity: &mut Matrix,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(KtError::shape("sgd step", param.shape(), grad.shape()));
    }
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data().iter())
        .zip(velocity.data_mut().iter_mut())
    {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
    Ok(())
}

/// Which loss drives a training phase. `Soft` and `LogitMatch` read
/// per-frame target rows aligned with the training split's global frame
/// order: posteriors for `Soft`, teacher logits for `LogitMatch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Hard,
    Soft(Temperature),
    LogitMatch,
}

#[derive(Debug, Clone, Copy)]
pub struct Phase {
    pub loss: LossKind,
    pub config: SgdConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based within its phase.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub tr_fa: f64,
    pub cv_fa: f64,
}

/// CV improvement (in frame-accuracy fraction) under which the schedule
/// starts halving: 0.2 percentage points.
const IMPROVEMENT_THRESHOLD: f64 = 0.002;
/// Schedule stops once the rate falls below initial/64.
const LR_FLOOR_DIVISOR: f64 = 64.0;
/// Global gradient-norm clip, applied to LSTM training only.
const LSTM_CLIP_NORM: f64 = 5.0;

fn frame_loss(loss: LossKind, targets: Option<&Matrix>, global_idx: usize, label: usize, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    match loss {
        LossKind::Hard => ce_hard(label, logits),
        LossKind::Soft(t) => {
            let targets = targets.ok_or_else(|| {
                KtError::Argument("soft loss requires target rows".into())
            })?;
            ce_soft(targets.row(global_idx), logits, t)
        }
        LossKind::LogitMatch => {
            let targets = targets.ok_or_else(|| {
                KtError::Argument("logit matching requires teacher logit rows".into())
            })?;
            logit_match(targets.row(global_idx), logits)
        }
    }
}

fn clip_gradients(net: &mut Network, max_norm: f64) {
    let mut total = 0.0;
    for (_, grad) in net.params_and_grads() {
        total += grad.squared_norm();
    }
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, grad) in net.params_and_grads() {
            grad.scale(scale);
        }
    }
}

fn apply_updates(net: &mut Network, velocities: &mut [Matrix], lr: f64, momentum: f64) -> Result<()> {
    for ((param, grad), velocity) in net.params_and_grads().into_iter().zip(velocities.iter_mut()) {
        sgd_momentum_step(param, grad, velocity, lr, momentum)?;
    }
    Ok(())
}

/// Fraction of frames whose predicted class equals the hard label.
pub fn frame_accuracy(net: &Network, data: &SequenceDataset) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    if net.is_sequence_model() {
        for seq in &data.sequences {
            let preds = net.predict(&seq.frames)?;
            for (p, &l) in preds.iter().zip(seq.labels.iter()) {
                if *p == l {
                    correct += 1;
                }
                total += 1;
            }
        }
    } else {
        let frames = data.frames_matrix();
        let labels = data.labels_flat();
        let preds = net.predict(&frames)?;
        for (p, l) in preds.iter().zip(labels.iter()) {
            if p == l {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(KtError::Argument("empty data split".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Fraction of sequences with at least one frame error.
pub fn sequence_error_rate(net: &Network, data: &SequenceDataset) -> Result<f64> {
    let mut wrong = 0usize;
    for seq in &data.sequences {
        let preds = net.predict(&seq.frames)?;
        if preds.iter().zip(seq.labels.iter()).any(|(p, l)| p != l) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.sequences.len() as f64)
}

/// Runs the phases in order on one model. Returns the concatenated epoch
/// history; the model is left at the last phase's best-CV checkpoint.
pub fn run_phases(
    net: &mut Network,
    train: &SequenceDataset,
    cv: &SequenceDataset,
    targets: Option<&Matrix>,
    phases: &[Phase],
    rng: &mut Pcg32,
) -> Result<Vec<EpochRecord>> {
    if train.sequences.is_empty() || cv.sequences.is_empty() {
        return Err(KtError::Argument("empty train or cv split".into()));
    }
    let total_frames = train.total_frames();
    if let Some(t) = targets {
        if t.rows() != total_frames {
            return Err(KtError::Argument(format!(
                "target rows ({}) misaligned with training frames ({})",
                t.rows(),
                total_frames
            )));
        }
    }
    // Global frame offset of each sequence, for target alignment.
    let mut offsets = Vec::with_capacity(train.sequences.len());
    let mut acc = 0usize;
    for seq in &train.sequences {
        offsets.push(acc);
        acc += seq.frames.rows();
    }

    let mut history = Vec::new();
    for phase in phases {
        phase.config.validate()?;
        let needs_targets = !matches!(phase.loss, LossKind::Hard);
        if needs_targets && targets.is_none() {
            return Err(KtError::Argument(
                "phase loss requires target rows but none were given".into(),
            ));
        }
        if phase.config.max_epochs == 0 {
            continue;
        }

        let mut velocities: Vec<Matrix> = net
            .params_and_grads()
            .iter()
            .map(|(p, _)| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        let initial_lr = phase.config.learning_rate;
        let mut lr = initial_lr;
        let mut halving = false;
        let mut best_cv = frame_accuracy(net, cv)?;
        let mut best_model = net.clone();

        for epoch in 1..=phase.config.max_epochs {
            let mut loss_sum = 0.0;
            if net.is_sequence_model() {
                // Whole sequences per batch so recurrent state is correct.
                let mut order: Vec<usize> = (0..train.sequences.len()).collect();
                rng.shuffle(&mut order);
                for &s in &order {
                    let seq = &train.sequences[s];
                    let t_len = seq.frames.rows();
                    net.zero_grads();
                    let logits = net.forward_logits(&seq.frames)?;
                    let mut grad = Matrix::zeros(t_len, logits.cols());
                    for t in 0..t_len {
                        let (l, g) = frame_loss(
                            phase.loss,
                            targets,
                            offsets[s] + t,
                            seq.labels[t],
                            logits.row(t),
                        )?;
                        loss_sum += l;
                        for (c, v) in g.iter().enumerate() {
                            grad.set(t, c, v / t_len as f64);
                        }
                    }
                    net.backward(&grad)?;
                    clip_gradients(net, LSTM_CLIP_NORM);
                    apply_updates(net, &mut velocities, lr, phase.config.momentum)?;
                }
            } else {
                // Frame-level shuffling for the MLP.
                let frames = train.frames_matrix();
                let labels = train.labels_flat();
                let mut order: Vec<usize> = (0..total_frames).collect();
                rng.shuffle(&mut order);
                for chunk in order.chunks(phase.config.batch_size) {
                    let mut x = Matrix::zeros(chunk.len(), train.feature_dim);
                    for (r, &idx) in chunk.iter().enumerate() {
                        x.row_mut(r).copy_from_slice(frames.row(idx));
                    }
                    net.zero_grads();
                    let logits = net.forward_logits(&x)?;
                    let mut grad = Matrix::zeros(chunk.len(), logits.cols());
                    for (r, &idx) in chunk.iter().enumerate() {
                        let (l, g) =
                            frame_loss(phase.loss, targets, idx, labels[idx], logits.row(r))?;
                        loss_sum += l;
                        for (c, v) in g.iter().enumerate() {
                            grad.set(r, c, v / chunk.len() as f64);
                        }
                    }
                    net.backward(&grad)?;
                    apply_updates(net, &mut velocities, lr, phase.config.momentum)?;
                }
            }

            let train_loss = loss_sum / total_frames as f64;
            let tr_fa = frame_accuracy(net, train)?;
            let cv_fa = frame_accuracy(net, cv)?;
            history.push(EpochRecord {
                epoch,
                learning_rate: lr,
                train_loss,
                tr_fa,
                cv_fa,
            });

            let improvement = cv_fa - best_cv;
            if cv_fa > best_cv {
                best_cv = cv_fa;
                best_model = net.clone();
            }
            if halving || improvement < IMPROVEMENT_THRESHOLD {
                halving = true;
                lr /= 2.0;
            }
            if lr < initial_lr / LR_FLOOR_DIVISOR {
                break;
            }
        }
        *net = best_model;
    }
    Ok(history)
}

/// Single-phase convenience wrapper.
pub fn run_training(
    net: &mut Network,
    loss: LossKind,
    train: &SequenceDataset,
    cv: &SequenceDataset,
    targets: Option<&Matrix>,
    config: SgdConfig,
    rng: &mut Pcg32,
) -> Result<Vec<EpochRecord>> {
    run_phases(net, train, cv, targets, &[Phase { loss, config }], rng)
}

/// Epoch history as CSV with the documented column order.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,learning_rate,train_loss,tr_fa,cv_fa\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.learning_rate, r.train_loss, r.tr_fa, r.cv_fa
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVarianceRow {
    pub temperature: f64,
    /// Mean L2 norm of the per-frame output-layer gradient (q - p)/T.
    pub mean_grad_norm: f64,
    /// Across-frame variance, averaged over gradient components.
    pub variance: f64,
}

/// Measures how the per-frame output gradients spread across training
/// samples at each temperature. Reported, never asserted: soft targets are
/// expected to shrink the spread, but that is a diagnostic, not an
/// invariant.
pub fn gradient_variance_diagnostic(
    net: &Network,
    frames: &Matrix,
    targets_per_t: &[(Temperature, Matrix)],
) -> Result<Vec<GradientVarianceRow>> {
    let mut rows = Vec::with_capacity(targets_per_t.len());
    let logits = net.forward_logits_frozen(frames)?;
    for (t, targets) in targets_per_t {
        if targets.shape() != logits.shape() {
            return Err(KtError::shape(
                "diagnostic targets",
                targets.shape(),
                logits.shape(),
            ));
        }
        let n = logits.rows();
        let k = logits.cols();
        let mut grads = Matrix::zeros(n, k);
        let mut norm_sum = 0.0;
        for r in 0..n {
            let q = softmax_t_row(logits.row(r), *t)?;
            let mut sq = 0.0;
            for c in 0..k {
                let g = (q[c] - targets.get(r, c)) / t.value();
                grads.set(r, c, g);
                sq += g * g;
            }
            norm_sum += sq.sqrt();
        }
        let mut variance = 0.0;
        for c in 0..k {
            let mut mean = 0.0;
            for r in 0..n {
                mean += grads.get(r, c);
            }
            mean /= n as f64;
            let mut var = 0.0;
            for r in 0..n {
                let d = grads.get(r, c) - mean;
                var += d * d;
            }
            variance += var / n as f64;
        }
        rows.push(GradientVarianceRow {
            temperature: t.value(),
            mean_grad_norm: norm_sum / n as f64,
            variance: variance / k as f64,
        });
    }
    Ok(rows)
}

/// Markdown/plain table for the diagnostic rows.
pub fn diagnostic_report(rows: &[GradientVarianceRow]) -> String {
    let mut out = String::from("| T | mean grad norm | across-frame variance |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {:.6e} | {:.6e} |", r.temperature, r.mean_grad_norm, r.variance);
    }
    out
}
