//! Deterministic synthetic sequential-classification data (a desk-scale
//! stand-in for a frame-labeled speech corpus) plus CSV ingestion for
//! user-provided sequence data.
//!
//! The generator runs a first-order Markov chain over K hidden classes
//! (uniform start, self-loop probability p, uniform over the other classes)
//! and emits D-dimensional Gaussian frames around per-class means. Labels
//! are the hidden classes. Everything is a pure function of the seed; the
//! three splits draw from three disjoint PCG32 streams.

use crate::error::{KtError, Result};
use crate::numerics::{Matrix, Pcg32};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Cv,
    Test,
}

/// One sequence: T frames of D features with a class label per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Sequence>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub split: Split,
}

impl SequenceDataset {
    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.rows()).sum()
    }

    /// All frames stacked into one N x D matrix, sequence order preserved.
    pub fn frames_matrix(&self) -> Matrix {
        let n = self.total_frames();
        let mut out = Matrix::zeros(n, self.feature_dim);
        let mut row = 0;
        for seq in &self.sequences {
            for t in 0..seq.frames.rows() {
                out.row_mut(row).copy_from_slice(seq.frames.row(t));
                row += 1;
            }
        }
        out
    }

    pub fn labels_flat(&self) -> Vec<usize> {
        self.sequences
            .iter()
            .flat_map(|s| s.labels.iter().copied())
            .collect()
    }
}

/// Per-dimension affine map fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    /// Dimensions whose train variance was zero; they pass through with
    /// stddev forced to 1.
    pub constant_dims: Vec<usize>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub min_seq_len: usize,
    pub max_seq_len: usize,
    pub train_sequences: usize,
    pub cv_sequences: usize,
    pub test_sequences: usize,
    pub self_loop_prob: f64,
    pub mean_separation: f64,
    pub noise_stddev: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_classes: 10,
            feature_dim: 8,
            min_seq_len: 30,
            max_seq_len: 60,
            train_sequences: 800,
            cv_sequences: 150,
            test_sequences: 150,
            self_loop_prob: 0.9,
            mean_separation: 1.0,
            noise_stddev: 0.42,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(KtError::Argument("need at least 2 classes".into()));
        }
        if self.num_classes > 2 * self.feature_dim {
            return Err(KtError::Argument(format!(
                "class mean placement needs num_classes <= 2*feature_dim ({} > {})",
                self.num_classes,
                2 * self.feature_dim
            )));
        }
        if self.feature_dim == 0 {
            return Err(KtError::Argument("feature_dim must be positive".into()));
        }
        if self.min_seq_len == 0 || self.max_seq_len < self.min_seq_len {
            return Err(KtError::Argument("bad sequence length range".into()));
        }
        if self.train_sequences == 0 || self.cv_sequences == 0 || self.test_sequences == 0 {
            return Err(KtError::Argument("split counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.self_loop_prob) {
            return Err(KtError::Argument(format!(
                "self_loop_prob must be in [0,1], got {}",
                self.self_loop_prob
            )));
        }
        if self.noise_stddev < 0.0 {
            return Err(KtError::Argument("noise_stddev must be non-negative".into()));
        }
        Ok(())
    }
}

/// Class means on signed, scaled coordinate axes: class k sits at
/// separation * e_{k mod D}, negated for the second wrap. Distinct for
/// K <= 2D.
pub fn class_means(config: &GeneratorConfig) -> Vec<Vec<f64>> {
    let d = config.feature_dim;
    (0..config.num_classes)
        .map(|k| {
            let mut mean = vec![0.0; d];
            let sign = if k < d { 1.0 } else { -1.0 };
            mean[k % d] = sign * config.mean_separation;
            mean
        })
        .collect()
}

const STREAM_TRAIN: u64 = 0x11;
const STREAM_CV: u64 = 0x12;
const STREAM_TEST: u64 = 0x13;

fn generate_split(
    config: &GeneratorConfig,
    count: usize,
    split: Split,
    stream: u64,
) -> SequenceDataset {
    let means = class_means(config);
    let mut rng = Pcg32::new(config.seed, stream);
    let k = config.num_classes as u32;
    let mut sequences = Vec::with_capacity(count);
    for _ in 0..count {
        let span = (config.max_seq_len - config.min_seq_len + 1) as u32;
        let len = config.min_seq_len + rng.next_below(span) as usize;
        let mut frames = Matrix::zeros(len, config.feature_dim);
        let mut labels = Vec::with_capacity(len);
        let mut state = rng.next_below(k) as usize;
        for t in 0..len {
            labels.push(state);
            for (d, f) in frames.row_mut(t).iter_mut().enumerate() {
                *f = means[state][d] + rng.gaussian(0.0, config.noise_stddev).expect("valid stddev");
            }
            if rng.next_f64() >= config.self_loop_prob {
                let jump = rng.next_below(k - 1) as usize;
                state = if jump >= state { jump + 1 } else { jump };
            }
        }
        sequences.push(Sequence { frames, labels });
    }
    SequenceDataset {
        sequences,
        num_classes: config.num_classes,
        feature_dim: config.feature_dim,
        split,
    }
}

/// Generates the train/cv/test splits from three disjoint RNG streams.
pub fn generate_synthetic(
    config: &GeneratorConfig,
) -> Result<(SequenceDataset, SequenceDataset, SequenceDataset)> {
    config.validate()?;
    Ok((
        generate_split(config, config.train_sequences, Split::Train, STREAM_TRAIN),
        generate_split(config, config.cv_sequences, Split::Cv, STREAM_CV),
        generate_split(config, config.test_sequences, Split::Test, STREAM_TEST),
    ))
}

/// Fits per-dimension mean/stddev on train and applies the same affine map
/// to all three splits. Zero-variance dimensions pass through unscaled and
/// are recorded as warnings.
pub fn standardize(
    train: &mut SequenceDataset,
    cv: &mut SequenceDataset,
    test: &mut SequenceDataset,
) -> Result<Standardization> {
    let n = train.total_frames();
    if n == 0 {
        return Err(KtError::Argument("empty training split".into()));
    }
    let d = train.feature_dim;
    let mut mean = vec![0.0; d];
    for seq in &train.sequences {
        for t in 0..seq.frames.rows() {
            for (m, &v) in mean.iter_mut().zip(seq.frames.row(t).iter()) {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for seq in &train.sequences {
        for t in 0..seq.frames.rows() {
            for (i, &v) in seq.frames.row(t).iter().enumerate() {
                let c = v - mean[i];
                var[i] += c * c;
            }
        }
    }
    let mut constant_dims = Vec::new();
    let stddev: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = (v / n as f64).sqrt();
            if s == 0.0 {
                constant_dims.push(i);
                1.0
            } else {
                s
            }
        })
        .collect();
    let stats = Standardization {
        mean,
        stddev,
        constant_dims,
    };
    for ds in [train, cv, test] {
        apply_standardization(ds, &stats);
    }
    Ok(stats)
}

pub fn apply_standardization(ds: &mut SequenceDataset, stats: &Standardization) {
    for seq in &mut ds.sequences {
        for t in 0..seq.frames.rows() {
            for (i, v) in seq.frames.row_mut(t).iter_mut().enumerate() {
                *v = (*v - stats.mean[i]) / stats.stddev[i];
            }
        }
    }
}

/// CSV schema: header `seq_id,frame_idx,label,f0,...`, one row per frame,
/// UTF-8, LF line endings. Float text uses Rust's shortest round-trip
/// formatting, so save/load is lossless.
pub fn save_csv(ds: &SequenceDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("seq_id,frame_idx,label");
    for d in 0..ds.feature_dim {
        let _ = write!(out, ",f{d}");
    }
    out.push('\n');
    for (seq_id, seq) in ds.sequences.iter().enumerate() {
        for t in 0..seq.frames.rows() {
            let _ = write!(out, "{seq_id},{t},{}", seq.labels[t]);
            for &v in seq.frames.row(t) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_csv(path: &Path, num_classes: usize, split: Split) -> Result<SequenceDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(KtError::CsvFormat {
        line: 1,
        message: "empty file, expected a header row".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "seq_id" || cols[1] != "frame_idx" || cols[2] != "label" {
        return Err(KtError::CsvFormat {
            line: 1,
            message: format!("bad header: {header}"),
        });
    }
    let feature_dim = cols.len() - 3;

    // Rows grouped by seq_id; frames within a sequence must arrive in order.
    let mut sequences: Vec<(Vec<Vec<f64>>, Vec<usize>)> = Vec::new();
    let mut current_id: Option<usize> = None;
    let mut any_row = false;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        any_row = true;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(KtError::CsvFormat {
                line: line_no,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let parse_int = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| KtError::CsvFormat {
                line: line_no,
                message: format!("non-numeric {what}: {s}"),
            })
        };
        let seq_id = parse_int(fields[0], "seq_id")?;
        let label = parse_int(fields[2], "label")?;
        if label >= num_classes {
            return Err(KtError::CsvFormat {
                line: line_no,
                message: format!("label {label} out of range for {num_classes} classes"),
            });
        }
        let mut frame = Vec::with_capacity(feature_dim);
        for f in &fields[3..] {
            frame.push(f.parse::<f64>().map_err(|_| KtError::CsvFormat {
                line: line_no,
                message: format!("non-numeric feature: {f}"),
            })?);
        }
        if current_id != Some(seq_id) {
            current_id = Some(seq_id);
            sequences.push((Vec::new(), Vec::new()));
        }
        let last = sequences.last_mut().expect("pushed above");
        last.0.push(frame);
        last.1.push(label);
    }
    if !any_row {
        return Err(KtError::CsvFormat {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let sequences = sequences
        .into_iter()
        .map(|(frames, labels)| {
            Ok(Sequence {
                frames: Matrix::from_rows(&frames)?,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceDataset {
        sequences,
        num_classes,
        feature_dim,
        split,
    })
}

/// Frame accuracy of the 1-nearest-mean classifier against the true
/// generator means. Serves as an independent difficulty probe for the
/// synthetic task.
pub fn nearest_mean_accuracy(ds: &SequenceDataset, means: &[Vec<f64>]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for seq in &ds.sequences {
        for t in 0..seq.frames.rows() {
            let frame = seq.frames.row(t);
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (k, mean) in means.iter().enumerate() {
                let dist: f64 = frame
                    .iter()
                    .zip(mean.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best_dist {
                    best_dist = dist;
                    best = k;
                }
            }
            if best == seq.labels[t] {
                correct += 1;
            }
            total += 1;
        }
    }
    correct as f64 / total as f64
}
