//! The pre-training procedures: knowledge-transfer pre-training against a
//! teacher's temperature-scaled soft targets, hard-target fine-tuning, RBM
//! layer-wise pre-training, layer-by-layer discriminative pre-training, and
//! the sequential RBM + knowledge-transfer combination.
//!
//! Soft targets are generated offline, once, and can be cached to disk, so
//! experiments stay deterministic and the teacher is only evaluated once.

use crate::data::SequenceDataset;
use crate::error::{KtError, Result};
use crate::layers::{softmax_t, Temperature};
use crate::models::{stack_rbms_into_mlp, Mlp, Network, Rbm, VisibleType};
use crate::numerics::{Matrix, Pcg32};
use crate::train::{run_training, EpochRecord, LossKind, SgdConfig};
use std::fs;
use std::path::{Path, PathBuf};

const SOFT_TARGET_MAGIC: &[u8; 4] = b"KTST";
const SOFT_TARGET_VERSION: u32 = 1;

/// Per-frame teacher posteriors with the temperature used to produce them,
/// row-aligned 1:1 with the dataset's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetSet {
    pub posteriors: Matrix,
    pub temperature: Temperature,
    pub teacher_id: String,
}

impl SoftTargetSet {
    pub fn num_frames(&self) -> usize {
        self.posteriors.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.posteriors.cols()
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.posteriors.rows() {
            let row = self.posteriors.row(r);
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(KtError::Argument(format!(
                    "soft target row {r} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(KtError::Argument(format!(
                    "soft target row {r} sums to {sum}"
                )));
            }
        }
        Ok(())
    }

    /// Binary cache: magic "KTST", version, N u64, K u32, temperature f64,
    /// length-prefixed teacher id, then N x K little-endian f64 posteriors.
    pub fn save(&self, path: &Path) -> Result<()> {
        use crate::models::serialize::ByteWriter;
        let mut w = ByteWriter::new();
        w.bytes(SOFT_TARGET_MAGIC);
        w.u32(SOFT_TARGET_VERSION);
        w.u64(self.posteriors.rows() as u64);
        w.u32(self.posteriors.cols() as u32);
        w.f64(self.temperature.value());
        w.string(&self.teacher_id);
        w.matrix(&self.posteriors);
        fs::write(path, w.into_vec())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SoftTargetSet> {
        use crate::models::serialize::{check_header, ByteReader};
        let data = fs::read(path)?;
        let mut r = ByteReader::new(&data);
        check_header(&mut r, SOFT_TARGET_MAGIC, SOFT_TARGET_VERSION)?;
        let n = r.u64("frame count")? as usize;
        let k = r.u32("class count")? as usize;
        let temperature = Temperature::new(r.f64("temperature")?)
            .map_err(|e| KtError::Format {
                offset: r.offset(),
                message: e.to_string(),
            })?;
        let teacher_id = r.string("teacher id")?;
        let posteriors = r.matrix(n, k, "posteriors")?;
        r.expect_end()?;
        let set = SoftTargetSet {
            posteriors,
            temperature,
            teacher_id,
        };
        set.validate()?;
        Ok(set)
    }
}

/// Runs the teacher over every frame of the split and softens its logits at
/// temperature T. Offline and deterministic given teacher and data.
pub fn generate_soft_targets(
    teacher: &Network,
    data: &SequenceDataset,
    t: Temperature,
    teacher_id: &str,
) -> Result<SoftTargetSet> {
    let logits = generate_teacher_logits(teacher, data)?;
    Ok(SoftTargetSet {
        posteriors: softmax_t(&logits, t)?,
        temperature: t,
        teacher_id: teacher_id.to_string(),
    })
}

/// Teacher logits for every frame, in dataset order. Target table for the
/// logit-matching transfer loss.
pub fn generate_teacher_logits(teacher: &Network, data: &SequenceDataset) -> Result<Matrix> {
    if teacher.input_dim() != data.feature_dim {
        return Err(KtError::shape(
            "teacher input vs data features",
            (1, teacher.input_dim()),
            (1, data.feature_dim),
        ));
    }
    let mut out = Matrix::zeros(data.total_frames(), teacher.num_classes());
    let mut row = 0;
    if teacher.is_sequence_model() {
        for seq in &data.sequences {
            let logits = teacher.forward_logits_frozen(&seq.frames)?;
            for t in 0..logits.rows() {
                out.row_mut(row).copy_from_slice(logits.row(t));
                row += 1;
            }
        }
    } else {
        let logits = teacher.forward_logits_frozen(&data.frames_matrix())?;
        for t in 0..logits.rows() {
            out.row_mut(row).copy_from_slice(logits.row(t));
            row += 1;
        }
    }
    Ok(out)
}

/// Knowledge-transfer pre-training: minimizes soft-target cross-entropy at
/// the targets' temperature (the student softmax runs at the same T).
pub fn kt_pretrain(
    student: &mut Network,
    targets: &SoftTargetSet,
    train: &SequenceDataset,
    cv: &SequenceDataset,
    config: SgdConfig,
    rng: &mut Pcg32,
) -> Result<Vec<EpochRecord>> {
    if targets.num_frames() != train.total_frames() {
        return Err(KtError::Argument(format!(
            "soft targets cover {} frames but the split has {}",
            targets.num_frames(),
            train.total_frames()
        )));
    }
    run_training(
        student,
        LossKind::Soft(targets.temperature),
        train,
        cv,
        Some(&targets.posteriors),
        config,
        rng,
    )
}

/// Alternative transfer loss: squared error against teacher logits.
/// Not the default; the dark-knowledge cross-entropy route performs better.
pub fn kt_pretrain_logit_match(
    student: &mut Network,
    teacher_logits: &Matrix,
    train: &SequenceDataset,
    cv: &SequenceDataset,
    config: SgdConfig,
    rng: &mut Pcg32,
) -> Result<Vec<EpochRecord>> {
    run_training(
        student,
        LossKind::LogitMatch,
        train,
        cv,
        Some(teacher_logits),
        config,
        rng,
    )
}

/// Hard-target refinement at T=1. With `reinit_output` the classification
/// layer is redrawn before training starts; hidden layers always carry over.
pub fn fine_tune(
    student: &mut Network,
    train: &SequenceDataset,
    cv: &SequenceDataset,
    config: SgdConfig,
    reinit_output: bool,
    rng: &mut Pcg32,
) -> Result<Vec<EpochRecord>> {
    if reinit_output {
        student.reinit_output_layer(rng);
    }
    run_training(student, LossKind::Hard, train, cv, None, config, rng)
}

/// Contrastive-divergence budget for one RBM layer.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

pub struct RbmPretrainResult {
    pub rbms: Vec<Rbm>,
    /// Per layer, the mean reconstruction error of each epoch.
    pub recon_errors: Vec<Vec<f64>>,
}

/// Greedy bottom-up RBM stack: the first layer is Gaussian-Bernoulli over
/// the standardized features, deeper layers Bernoulli-Bernoulli over the
/// previous layer's hidden probabilities.
pub fn rbm_pretrain(
    layer_sizes: &[usize],
    train: &SequenceDataset,
    config: CdConfig,
    rng: &mut Pcg32,
) -> Result<RbmPretrainResult> {
    if layer_sizes.is_empty() {
        return Err(KtError::Argument("no RBM layers requested".into()));
    }
    if config.batch_size == 0 || config.learning_rate <= 0.0 {
        return Err(KtError::Argument("bad CD config".into()));
    }
    let mut representation = train.frames_matrix();
    let mut rbms = Vec::with_capacity(layer_sizes.len());
    let mut recon_errors = Vec::with_capacity(layer_sizes.len());
    for (depth, &size) in layer_sizes.iter().enumerate() {
        let vtype = if depth == 0 {
            VisibleType::Gaussian
        } else {
            VisibleType::Bernoulli
        };
        let mut rbm = Rbm::new(representation.cols(), size, vtype, rng);
        let n = representation.rows();
        let mut errors = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let mut err_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let mut batch = Matrix::zeros(chunk.len(), representation.cols());
                for (r, &idx) in chunk.iter().enumerate() {
                    batch.row_mut(r).copy_from_slice(representation.row(idx));
                }
                err_sum += rbm.cd1_step(&batch, config.learning_rate, rng)?;
                batches += 1;
            }
            errors.push(err_sum / batches as f64);
        }
        representation = rbm.hidden_probs(&representation)?;
        rbms.push(rbm);
        recon_errors.push(errors);
    }
    Ok(RbmPretrainResult { rbms, recon_errors })
}

/// Layer-by-layer discriminative pre-training: grow one hidden layer at a
/// time, attach a fresh output layer after each addition, and train the
/// whole current stack on hard cross-entropy for a short budget.
/// Intermediate output layers are discarded on every growth step.
pub fn discriminative_pretrain(
    hidden_sizes: &[usize],
    train: &SequenceDataset,
    cv: &SequenceDataset,
    config: SgdConfig,
    rng: &mut Pcg32,
) -> Result<(Mlp, Vec<EpochRecord>)> {
    if hidden_sizes.is_empty() {
        return Err(KtError::Argument("no hidden layers requested".into()));
    }
    let num_classes = train.num_classes;
    let mut trained_hidden: Vec<crate::layers::AffineLayer> = Vec::new();
    let mut history = Vec::new();
    let mut last_mlp = None;
    for (k, &size) in hidden_sizes.iter().enumerate() {
        let prev_dim = if k == 0 {
            train.feature_dim
        } else {
            hidden_sizes[k - 1]
        };
        let mut new_layer = crate::layers::AffineLayer::new(prev_dim, size);
        new_layer.init(rng);
        let mut hidden = trained_hidden.clone();
        hidden.push(new_layer);
        let mut output = crate::layers::AffineLayer::new(size, num_classes);
        output.init(rng);
        let mlp = Mlp::from_layers(hidden, output, train.feature_dim, num_classes);
        let mut net = Network::Mlp(mlp);
        let records = run_training(&mut net, LossKind::Hard, train, cv, None, config, rng)?;
        history.extend(records);
        let Network::Mlp(mlp) = net else { unreachable!() };
        trained_hidden = mlp.hidden.clone();
        last_mlp = Some(mlp);
    }
    Ok((last_mlp.expect("at least one growth step"), history))
}

/// RBM pre-training followed by knowledge-transfer pre-training on the
/// whole stacked network. The returned model is ready for `fine_tune`.
pub fn combined_pretrain(
    layer_sizes: &[usize],
    train: &SequenceDataset,
    cv: &SequenceDataset,
    teacher: &Network,
    t: Temperature,
    cd_config: CdConfig,
    kt_config: SgdConfig,
    rng: &mut Pcg32,
) -> Result<(Network, Vec<EpochRecord>)> {
    let rbm_result = rbm_pretrain(layer_sizes, train, cd_config, rng)?;
    let mlp = stack_rbms_into_mlp(&rbm_result.rbms, train.num_classes, rng)?;
    let mut net = Network::Mlp(mlp);
    let targets = generate_soft_targets(teacher, train, t, "combined-teacher")?;
    let history = kt_pretrain(&mut net, &targets, train, cv, kt_config, rng)?;
    Ok((net, history))
}

/// Which pre-training route an experiment arm uses (the Table III row
/// schema).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Raw,
    Kt,
    Rbm,
    Discriminative,
    RbmThenKt,
}

impl Strategy {
    pub fn involves_kt(self) -> bool {
        matches!(self, Strategy::Kt | Strategy::RbmThenKt)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainPlan {
    pub strategy: Strategy,
    pub temperature: Option<Temperature>,
    pub reinit_output: bool,
    pub teacher_model_path: Option<PathBuf>,
}

impl PretrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.strategy.involves_kt() != self.temperature.is_some() {
            return Err(KtError::Argument(
                "temperature is required exactly when the strategy involves knowledge transfer"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Uniform entry point for every strategy on an MLP student: returns the
/// pre-trained (not yet fine-tuned) model. `Raw` returns a fresh random
/// init.
#[allow(clippy::too_many_arguments)]
pub fn execute_plan(
    plan: &PretrainPlan,
    hidden_sizes: &[usize],
    train: &SequenceDataset,
    cv: &SequenceDataset,
    teacher: Option<&Network>,
    cd_config: CdConfig,
    pretrain_config: SgdConfig,
    rng: &mut Pcg32,
) -> Result<Network> {
    plan.validate()?;
    let need_teacher = plan.strategy.involves_kt();
    if need_teacher && teacher.is_none() {
        return Err(KtError::Argument(
            "knowledge-transfer strategies require a teacher model".into(),
        ));
    }
    match plan.strategy {
        Strategy::Raw => Ok(Network::Mlp(Mlp::new(
            train.feature_dim,
            hidden_sizes,
            train.num_classes,
            rng,
        ))),
        Strategy::Kt => {
            let t = plan.temperature.expect("validated");
            let teacher = teacher.expect("checked");
            let mut net = Network::Mlp(Mlp::new(
                train.feature_dim,
                hidden_sizes,
                train.num_classes,
                rng,
            ));
            let targets = generate_soft_targets(teacher, train, t, "plan-teacher")?;
            kt_pretrain(&mut net, &targets, train, cv, pretrain_config, rng)?;
            Ok(net)
        }
        Strategy::Rbm => {
            let result = rbm_pretrain(hidden_sizes, train, cd_config, rng)?;
            Ok(Network::Mlp(stack_rbms_into_mlp(
                &result.rbms,
                train.num_classes,
                rng,
            )?))
        }
        Strategy::Discriminative => {
            let (mlp, _) = discriminative_pretrain(hidden_sizes, train, cv, pretrain_config, rng)?;
            Ok(Network::Mlp(mlp))
        }
        Strategy::RbmThenKt => {
            let t = plan.temperature.expect("validated");
            let teacher = teacher.expect("checked");
            let (net, _) = combined_pretrain(
                hidden_sizes,
                train,
                cv,
                teacher,
                t,
                cd_config,
                pretrain_config,
                rng,
            )?;
            Ok(net)
        }
    }
}
