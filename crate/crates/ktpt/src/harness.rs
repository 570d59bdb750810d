//! Experiment orchestration: the desk-scale result-table runs (LSTM student
//! with strong and weak MLP teachers, and the MLP pre-training-method
//! comparison), report emission, and the gradient-variance diagnostic run.
//!
//! Every experiment is a pure function of (config, seed). Each arm owns its
//! own RNG streams, so arms can run concurrently and the merged table is
//! independent of execution order.

use crate::data::{generate_synthetic, standardize, GeneratorConfig, SequenceDataset};
use crate::error::{KtError, Result};
use crate::layers::Temperature;
use crate::models::{stack_rbms_into_mlp, Mlp, Network, StackedLstm};
use crate::numerics::Pcg32;
use crate::pretrain::{
    combined_pretrain, discriminative_pretrain, fine_tune, generate_soft_targets, kt_pretrain,
    rbm_pretrain, CdConfig, SoftTargetSet,
};
use crate::train::{
    frame_accuracy, gradient_variance_diagnostic, run_training, sequence_error_rate,
    GradientVarianceRow, LossKind, SgdConfig,
};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

/// Full description of an experiment run. Loadable from a TOML file; every
/// field has a default, and command-line flags override file values.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: GeneratorConfig,
    /// One complete experiment per seed; tables report mean +/- stddev.
    pub seeds: Vec<u64>,
    /// Transfer temperatures swept in the LSTM tables.
    pub temperatures: Vec<f64>,
    /// Single temperature used by the MLP pre-training comparison.
    pub comparison_temperature: f64,
    pub teacher_strong: Vec<usize>,
    pub teacher_weak: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: Vec<usize>,
    pub mlp_student: Vec<usize>,
    pub teacher_sgd: SgdConfig,
    pub lstm_sgd: SgdConfig,
    pub mlp_sgd: SgdConfig,
    pub cd: CdConfig,
    pub workers: usize,
    /// When false, rows record 0.0 seconds so reports are byte-reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: GeneratorConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            temperatures: vec![1.0, 2.0],
            comparison_temperature: 2.0,
            teacher_strong: vec![64, 64],
            teacher_weak: vec![64],
            lstm_hidden: 48,
            lstm_layers: vec![1, 2],
            mlp_student: vec![48, 48, 48],
            teacher_sgd: SgdConfig {
                learning_rate: 0.05,
                batch_size: 32,
                max_epochs: 12,
                ..SgdConfig::default()
            },
            lstm_sgd: SgdConfig {
                learning_rate: 0.004,
                max_epochs: 2,
                ..SgdConfig::default()
            },
            mlp_sgd: SgdConfig {
                learning_rate: 0.01,
                batch_size: 32,
                max_epochs: 3,
                ..SgdConfig::default()
            },
            cd: CdConfig {
                epochs: 5,
                ..CdConfig::default()
            },
            workers: 4,
            record_timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(KtError::Argument("seed list must be non-empty".into()));
        }
        if self.temperatures.is_empty() {
            return Err(KtError::Argument("temperature list must be non-empty".into()));
        }
        for &t in &self.temperatures {
            Temperature::new(t)?;
        }
        Temperature::new(self.comparison_temperature)?;
        if self.workers == 0 {
            return Err(KtError::Argument("workers must be at least 1".into()));
        }
        if self.lstm_hidden == 0 || self.lstm_layers.is_empty() || self.lstm_layers.contains(&0) {
            return Err(KtError::Argument("bad LSTM student geometry".into()));
        }
        if self.teacher_strong.is_empty() || self.teacher_weak.is_empty() || self.mlp_student.is_empty()
        {
            return Err(KtError::Argument("teacher/student specs must be non-empty".into()));
        }
        self.teacher_sgd.validate()?;
        self.lstm_sgd.validate()?;
        self.mlp_sgd.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| KtError::Argument(format!("bad config file: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

/// One experiment outcome. Rates are fractions in [0,1]; reports print them
/// as percentages with one decimal.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub system: String,
    pub spec: String,
    pub temperature: Option<f64>,
    pub tr_fa: f64,
    pub cv_fa: f64,
    pub test_error_rate: f64,
    pub seq_error_rate: f64,
    pub seed: u64,
    pub seconds: f64,
}

impl ResultRow {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tr_fa", self.tr_fa),
            ("cv_fa", self.cv_fa),
            ("test_error_rate", self.test_error_rate),
            ("seq_error_rate", self.seq_error_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(KtError::Argument(format!(
                    "{name} out of [0,1] in row {}/{}: {v}",
                    self.system, self.spec
                )));
            }
        }
        Ok(())
    }
}

pub struct PreparedData {
    pub train: SequenceDataset,
    pub cv: SequenceDataset,
    pub test: SequenceDataset,
}

/// Generates and standardizes the synthetic dataset for a run. Shared by
/// every arm; depends only on the dataset config, not the arm seeds.
pub fn prepare_data(config: &GeneratorConfig) -> Result<PreparedData> {
    let (mut train, mut cv, mut test) = generate_synthetic(config)?;
    standardize(&mut train, &mut cv, &mut test)?;
    Ok(PreparedData { train, cv, test })
}

/// Frame accuracies and error rates for one trained model.
pub fn evaluate_model(net: &Network, data: &PreparedData) -> Result<(f64, f64, f64, f64)> {
    let tr_fa = frame_accuracy(net, &data.train)?;
    let cv_fa = frame_accuracy(net, &data.cv)?;
    let test_err = 1.0 - frame_accuracy(net, &data.test)?;
    let seq_err = sequence_error_rate(net, &data.test)?;
    Ok((tr_fa, cv_fa, test_err, seq_err))
}

struct ArmTimer {
    start: Instant,
    record: bool,
}

impl ArmTimer {
    fn new(record: bool) -> Self {
        ArmTimer {
            start: Instant::now(),
            record,
        }
    }

    fn seconds(&self) -> f64 {
        if self.record {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

fn make_row(
    net: &Network,
    data: &PreparedData,
    system: &str,
    spec: &str,
    temperature: Option<f64>,
    seed: u64,
    timer: &ArmTimer,
) -> Result<ResultRow> {
    let (tr_fa, cv_fa, test_error_rate, seq_error_rate) = evaluate_model(net, data)?;
    let row = ResultRow {
        system: system.to_string(),
        spec: spec.to_string(),
        temperature,
        tr_fa,
        cv_fa,
        test_error_rate,
        seq_error_rate,
        seed,
        seconds: timer.seconds(),
    };
    row.validate()?;
    Ok(row)
}

fn spec_label_mlp(sizes: &[usize]) -> String {
    let mut s = String::from("mlp");
    for size in sizes {
        let _ = write!(s, "-{size}");
    }
    s
}

fn spec_label_lstm(layers: usize, hidden: usize) -> String {
    format!("lstm-{layers}x{hidden}")
}

/// Distinct RNG streams per arm so arms are order-independent. The stream
/// encodes (table, layer index, system index, temperature index).
fn arm_rng(seed: u64, table: u64, layer_idx: u64, system_idx: u64, temp_idx: u64) -> Pcg32 {
    Pcg32::new(
        seed,
        table * 1_000_000 + layer_idx * 10_000 + system_idx * 100 + temp_idx,
    )
}

fn train_mlp_teacher(
    sizes: &[usize],
    data: &PreparedData,
    config: &ExperimentConfig,
    rng: &mut Pcg32,
) -> Result<Network> {
    let mut net = Network::Mlp(Mlp::new(
        data.train.feature_dim,
        sizes,
        data.train.num_classes,
        rng,
    ));
    run_training(
        &mut net,
        LossKind::Hard,
        &data.train,
        &data.cv,
        None,
        config.teacher_sgd,
        rng,
    )?;
    Ok(net)
}

fn fresh_lstm(layers: usize, data: &PreparedData, config: &ExperimentConfig, rng: &mut Pcg32) -> Network {
    Network::Lstm(StackedLstm::new(
        data.train.feature_dim,
        layers,
        config.lstm_hidden,
        data.train.num_classes,
        rng,
    ))
}

/// All rows for one seed of the LSTM tables: one teacher row, then per layer
/// count the systems raw / prt.@T / prt.+ft.@T.
fn rnn_table_seed(
    table: u64,
    teacher_sizes: &[usize],
    config: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let teacher_spec = spec_label_mlp(teacher_sizes);

    let timer = ArmTimer::new(config.record_timing);
    let mut rng = arm_rng(seed, table, 0, 0, 0);
    let teacher = train_mlp_teacher(teacher_sizes, data, config, &mut rng)?;
    rows.push(make_row(&teacher, data, "teacher", &teacher_spec, None, seed, &timer)?);

    let mut targets: Vec<(f64, SoftTargetSet)> = Vec::new();
    for &t in &config.temperatures {
        let set = generate_soft_targets(&teacher, &data.train, Temperature::new(t)?, &teacher_spec)?;
        targets.push((t, set));
    }

    for (li, &layers) in config.lstm_layers.iter().enumerate() {
        let spec = spec_label_lstm(layers, config.lstm_hidden);
        let li = li as u64 + 1;

        let timer = ArmTimer::new(config.record_timing);
        let mut rng = arm_rng(seed, table, li, 1, 0);
        let mut raw = fresh_lstm(layers, data, config, &mut rng);
        run_training(
            &mut raw,
            LossKind::Hard,
            &data.train,
            &data.cv,
            None,
            config.lstm_sgd,
            &mut rng,
        )?;
        rows.push(make_row(&raw, data, "raw", &spec, None, seed, &timer)?);

        for (ti, (t, set)) in targets.iter().enumerate() {
            let ti = ti as u64;
            let timer = ArmTimer::new(config.record_timing);
            let mut rng = arm_rng(seed, table, li, 2, ti);
            let mut pretrained = fresh_lstm(layers, data, config, &mut rng);
            kt_pretrain(&mut pretrained, set, &data.train, &data.cv, config.lstm_sgd, &mut rng)?;
            rows.push(make_row(&pretrained, data, "prt.", &spec, Some(*t), seed, &timer)?);

            // The fine-tuned system continues from the pre-trained model on
            // its own stream; the LSTM output layer is retained.
            let timer = ArmTimer::new(config.record_timing);
            let mut rng = arm_rng(seed, table, li, 3, ti);
            let mut tuned = pretrained.clone();
            fine_tune(&mut tuned, &data.train, &data.cv, config.lstm_sgd, false, &mut rng)?;
            rows.push(make_row(&tuned, data, "prt.+ft.", &spec, Some(*t), seed, &timer)?);
        }
    }
    Ok(rows)
}

/// Runs one closure per seed, optionally across worker threads, and merges
/// the rows into a deterministic order.
fn run_seeds<F>(config: &ExperimentConfig, f: F) -> Result<Vec<ResultRow>>
where
    F: Fn(u64) -> Result<Vec<ResultRow>> + Sync,
{
    let seeds = &config.seeds;
    let mut per_seed: Vec<Option<Result<Vec<ResultRow>>>> = Vec::new();
    per_seed.resize_with(seeds.len(), || None);
    if config.workers <= 1 || seeds.len() <= 1 {
        for (i, &seed) in seeds.iter().enumerate() {
            per_seed[i] = Some(f(seed));
        }
    } else {
        let next = AtomicUsize::new(0);
        let results = Mutex::new(&mut per_seed);
        let workers = config.workers.min(seeds.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= seeds.len() {
                        break;
                    }
                    let out = f(seeds[i]);
                    let mut guard = results.lock().expect("worker poisoned");
                    (**guard)[i] = Some(out);
                });
            }
        });
    }
    let mut rows = Vec::new();
    for slot in per_seed {
        rows.extend(slot.expect("every seed ran")?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (&a.system, &a.spec)
            .cmp(&(&b.system, &b.spec))
            .then(
                a.temperature
                    .unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&b.temperature.unwrap_or(f64::NEG_INFINITY)),
            )
            .then(a.seed.cmp(&b.seed))
    });
}

/// LSTM students pre-trained by the strong (2-hidden-layer) MLP teacher.
pub fn reproduce_table_1(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let data = prepare_data(&config.dataset)?;
    run_seeds(config, |seed| {
        rnn_table_seed(1, &config.teacher_strong, config, &data, seed)
    })
}

/// Same layout with the weak (1-hidden-layer) teacher.
pub fn reproduce_table_2(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let data = prepare_data(&config.dataset)?;
    run_seeds(config, |seed| {
        rnn_table_seed(2, &config.teacher_weak, config, &data, seed)
    })
}

/// The seven pre-training strategies compared on the under-provisioned MLP
/// student, all fine-tuned where applicable.
pub fn reproduce_table_3(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let data = prepare_data(&config.dataset)?;
    run_seeds(config, |seed| table_3_seed(config, &data, seed))
}

fn table_3_seed(config: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<Vec<ResultRow>> {
    let table = 3;
    let spec = spec_label_mlp(&config.mlp_student);
    let t = Temperature::new(config.comparison_temperature)?;
    let sizes = &config.mlp_student;
    let mut rows = Vec::new();

    let mut rng = arm_rng(seed, table, 0, 0, 0);
    let strong = train_mlp_teacher(&config.teacher_strong, data, config, &mut rng)?;
    let mut rng = arm_rng(seed, table, 0, 1, 0);
    let weak = train_mlp_teacher(&config.teacher_weak, data, config, &mut rng)?;
    let strong_targets = generate_soft_targets(&strong, &data.train, t, "strong")?;
    let weak_targets = generate_soft_targets(&weak, &data.train, t, "weak")?;

    let fresh_student = |rng: &mut Pcg32| {
        Network::Mlp(Mlp::new(
            data.train.feature_dim,
            sizes,
            data.train.num_classes,
            rng,
        ))
    };

    // raw: plain supervised training with the fine-tuning budget.
    let timer = ArmTimer::new(config.record_timing);
    let mut rng = arm_rng(seed, table, 1, 0, 0);
    let mut net = fresh_student(&mut rng);
    run_training(&mut net, LossKind::Hard, &data.train, &data.cv, None, config.mlp_sgd, &mut rng)?;
    rows.push(make_row(&net, data, "raw", &spec, None, seed, &timer)?);

    // rbm: unsupervised stack, then fine-tuning (the fresh output layer is
    // already random, so nothing is re-initialized).
    let timer = ArmTimer::new(config.record_timing);
    let mut rng = arm_rng(seed, table, 1, 1, 0);
    let result = rbm_pretrain(sizes, &data.train, config.cd, &mut rng)?;
    let mut net = Network::Mlp(stack_rbms_into_mlp(&result.rbms, data.train.num_classes, &mut rng)?);
    fine_tune(&mut net, &data.train, &data.cv, config.mlp_sgd, false, &mut rng)?;
    rows.push(make_row(&net, data, "rbm+ft.", &spec, None, seed, &timer)?);

    // discriminative: layer-by-layer growth, then fine-tuning of the whole
    // stack; its output layer is already trained, so it is kept.
    let timer = ArmTimer::new(config.record_timing);
    let mut rng = arm_rng(seed, table, 1, 2, 0);
    let (mlp, _) = discriminative_pretrain(sizes, &data.train, &data.cv, config.mlp_sgd, &mut rng)?;
    let mut net = Network::Mlp(mlp);
    fine_tune(&mut net, &data.train, &data.cv, config.mlp_sgd, false, &mut rng)?;
    rows.push(make_row(&net, data, "disc.+ft.", &spec, None, seed, &timer)?);

    // kt: transfer pre-training, then fine-tuning with a re-drawn output
    // layer (kept hidden layers carry the transferred knowledge).
    for (idx, (label, targets)) in [("kt(strong)+ft.", &strong_targets), ("kt(weak)+ft.", &weak_targets)]
        .into_iter()
        .enumerate()
    {
        let timer = ArmTimer::new(config.record_timing);
        let mut rng = arm_rng(seed, table, 1, 3 + idx as u64, 0);
        let mut net = fresh_student(&mut rng);
        kt_pretrain(&mut net, targets, &data.train, &data.cv, config.mlp_sgd, &mut rng)?;
        fine_tune(&mut net, &data.train, &data.cv, config.mlp_sgd, true, &mut rng)?;
        rows.push(make_row(&net, data, label, &spec, Some(t.value()), seed, &timer)?);
    }

    // rbm+kt: RBM initialization, transfer pre-training on the stacked
    // network, then fine-tuning with a re-drawn output layer.
    for (idx, (label, teacher)) in [("rbm+kt(strong)+ft.", &strong), ("rbm+kt(weak)+ft.", &weak)]
        .into_iter()
        .enumerate()
    {
        let timer = ArmTimer::new(config.record_timing);
        let mut rng = arm_rng(seed, table, 1, 5 + idx as u64, 0);
        let (mut net, _) = combined_pretrain(
            sizes,
            &data.train,
            &data.cv,
            teacher,
            t,
            config.cd,
            config.mlp_sgd,
            &mut rng,
        )?;
        fine_tune(&mut net, &data.train, &data.cv, config.mlp_sgd, true, &mut rng)?;
        rows.push(make_row(&net, data, label, &spec, Some(t.value()), seed, &timer)?);
    }

    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = KtError;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" => Ok(ReportFormat::Markdown),
            other => Err(KtError::Argument(format!(
                "unknown report format {other:?}; expected csv or markdown"
            ))),
        }
    }
}

fn fmt_pct(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

fn fmt_temperature(t: Option<f64>) -> String {
    match t {
        None => String::new(),
        Some(t) if t == t.trunc() => format!("{t:.0}"),
        Some(t) => format!("{t}"),
    }
}

#[derive(Debug, Clone)]
struct SummaryLine {
    system: String,
    spec: String,
    temperature: Option<f64>,
    tr_fa_mean: f64,
    cv_fa_mean: f64,
    err_mean: f64,
    err_stddev: f64,
    seq_err_mean: f64,
    count: usize,
}

fn summarize(rows: &[ResultRow]) -> Vec<SummaryLine> {
    let mut lines: Vec<SummaryLine> = Vec::new();
    for row in rows {
        let key = (&row.system, &row.spec, row.temperature);
        if let Some(line) = lines
            .iter_mut()
            .find(|l| (&l.system, &l.spec, l.temperature) == key)
        {
            line.tr_fa_mean += row.tr_fa;
            line.cv_fa_mean += row.cv_fa;
            line.err_mean += row.test_error_rate;
            line.seq_err_mean += row.seq_error_rate;
            line.count += 1;
        } else {
            lines.push(SummaryLine {
                system: row.system.clone(),
                spec: row.spec.clone(),
                temperature: row.temperature,
                tr_fa_mean: row.tr_fa,
                cv_fa_mean: row.cv_fa,
                err_mean: row.test_error_rate,
                err_stddev: 0.0,
                seq_err_mean: row.seq_error_rate,
                count: 1,
            });
        }
    }
    for line in &mut lines {
        let n = line.count as f64;
        line.tr_fa_mean /= n;
        line.cv_fa_mean /= n;
        line.err_mean /= n;
        line.seq_err_mean /= n;
    }
    for line in &mut lines {
        if line.count > 1 {
            let mut ss = 0.0;
            for row in rows {
                if (&row.system, &row.spec, row.temperature)
                    == (&line.system, &line.spec, line.temperature)
                {
                    let d = row.test_error_rate - line.err_mean;
                    ss += d * d;
                }
            }
            line.err_stddev = (ss / (line.count as f64 - 1.0)).sqrt();
        }
    }
    lines
}

/// Renders the rows in the requested format. Per-seed rows come first, then
/// a seed-mean +/- stddev summary block. Column order is fixed; percentages
/// carry one decimal.
pub fn emit_report(rows: &[ResultRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(KtError::Argument("cannot report an empty row set".into()));
    }
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let summary = summarize(&sorted);
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("system,spec,T,tr_fa_pct,cv_fa_pct,er_pct,seed,seconds\n");
            for r in &sorted {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{:.1}",
                    r.system,
                    r.spec,
                    fmt_temperature(r.temperature),
                    fmt_pct(r.tr_fa),
                    fmt_pct(r.cv_fa),
                    fmt_pct(r.test_error_rate),
                    r.seed,
                    r.seconds,
                );
            }
            out.push_str("# summary: system,spec,T,er_mean_pct,er_stddev_pct,seq_er_mean_pct\n");
            for s in &summary {
                let _ = writeln!(
                    out,
                    "# {},{},{},{},{},{}",
                    s.system,
                    s.spec,
                    fmt_temperature(s.temperature),
                    fmt_pct(s.err_mean),
                    fmt_pct(s.err_stddev),
                    fmt_pct(s.seq_err_mean),
                );
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| System | #LSTM/Spec | T | TR FA% | CV FA% | ER% |\n");
            out.push_str("|---|---|---|---|---|---|\n");
            for s in &summary {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    s.system,
                    s.spec,
                    fmt_temperature(s.temperature),
                    fmt_pct(s.tr_fa_mean),
                    fmt_pct(s.cv_fa_mean),
                    fmt_pct(s.err_mean),
                );
            }
            let n = summary.iter().map(|s| s.count).max().unwrap_or(0);
            let _ = writeln!(out, "\nSeed summary (mean +/- stddev over {n} seeds):\n");
            for s in &summary {
                let t = match s.temperature {
                    Some(t) => format!(" T={}", fmt_temperature(Some(t))),
                    None => String::new(),
                };
                let _ = writeln!(
                    out,
                    "- {} {}{}: ER {} +/- {}, sequence ER {}",
                    s.system,
                    s.spec,
                    t,
                    fmt_pct(s.err_mean),
                    fmt_pct(s.err_stddev),
                    fmt_pct(s.seq_err_mean),
                );
            }
        }
    }
    Ok(out)
}

/// Parses a CSV report back into rows (summary comment lines are skipped).
/// Values carry the one-decimal precision of the printed file.
pub fn parse_report_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(KtError::CsvFormat {
                line: i + 1,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let pct = |field: &str, what: &str| -> Result<f64> {
            field.parse::<f64>().map(|v| v / 100.0).map_err(|_| KtError::CsvFormat {
                line: i + 1,
                message: format!("bad {what}: {field:?}"),
            })
        };
        let temperature = if fields[2].is_empty() {
            None
        } else {
            Some(fields[2].parse::<f64>().map_err(|_| KtError::CsvFormat {
                line: i + 1,
                message: format!("bad temperature: {:?}", fields[2]),
            })?)
        };
        rows.push(ResultRow {
            system: fields[0].to_string(),
            spec: fields[1].to_string(),
            temperature,
            tr_fa: pct(fields[3], "train accuracy")?,
            cv_fa: pct(fields[4], "cv accuracy")?,
            test_error_rate: pct(fields[5], "error rate")?,
            seq_error_rate: 0.0,
            seed: fields[6].parse().map_err(|_| KtError::CsvFormat {
                line: i + 1,
                message: format!("bad seed: {:?}", fields[6]),
            })?,
            seconds: fields[7].parse().map_err(|_| KtError::CsvFormat {
                line: i + 1,
                message: format!("bad seconds: {:?}", fields[7]),
            })?,
        });
    }
    Ok(rows)
}

/// The gradient-variance measurement: trains the strong teacher, builds an
/// untrained student, and reports the per-temperature spread of the
/// student's output-layer gradients against the teacher's soft targets.
pub fn run_gradient_diagnostic(
    config: &ExperimentConfig,
    seed: u64,
    temperatures: &[f64],
) -> Result<Vec<GradientVarianceRow>> {
    config.validate()?;
    let data = prepare_data(&config.dataset)?;
    let mut rng = Pcg32::new(seed, 9_000_000);
    let teacher = train_mlp_teacher(&config.teacher_strong, &data, config, &mut rng)?;
    let student = Network::Mlp(Mlp::new(
        data.train.feature_dim,
        &config.mlp_student,
        data.train.num_classes,
        &mut rng,
    ));
    let frames = data.train.frames_matrix();
    let mut targets = Vec::new();
    for &t in temperatures {
        let t = Temperature::new(t)?;
        let set = generate_soft_targets(&teacher, &data.train, t, "diagnostic")?;
        targets.push((t, set.posteriors));
    }
    gradient_variance_diagnostic(&student, &frames, &targets)
}

/// Error for a subcommand input that another subcommand must create first.
pub fn require_artifact(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(KtError::Argument(format!(
            "missing artifact {}; produce it with `ktpt {producer}`",
            path.display()
        )))
    }
}
