//! End-to-end acceptance checks. Each test covers one numbered criterion
//! and prints a `[PASS]`/`[FAIL]` line (visible with `--nocapture`).

use ktpt::data::{generate_synthetic, standardize, GeneratorConfig, SequenceDataset};
use ktpt::harness::{
    emit_report, reproduce_table_1, reproduce_table_2, reproduce_table_3, run_gradient_diagnostic,
    ExperimentConfig, ReportFormat, ResultRow,
};
use ktpt::layers::{ce_hard, ce_soft, softmax_t, softmax_t_row, Temperature};
use ktpt::models::{argmax, Mlp, Network, StackedLstm};
use ktpt::numerics::{Matrix, Pcg32};
use ktpt::pretrain::{fine_tune, generate_soft_targets, kt_pretrain, rbm_pretrain, CdConfig};
use ktpt::train::{run_phases, run_training, LossKind, Phase, SgdConfig};
use std::time::Instant;

struct Criterion {
    number: u32,
    label: &'static str,
    start: Instant,
}

impl Criterion {
    fn new(number: u32, label: &'static str) -> Self {
        Criterion {
            number,
            label,
            start: Instant::now(),
        }
    }

    fn pass(self) {
        println!(
            "[PASS] criterion {}: {} ({:.1}s)",
            self.number,
            self.label,
            self.start.elapsed().as_secs_f64()
        );
    }
}

impl Drop for Criterion {
    fn drop(&mut self) {
        if std::thread::panicking() {
            println!("[FAIL] criterion {}: {}", self.number, self.label);
        }
    }
}

fn small_data(seed: u64) -> (SequenceDataset, SequenceDataset, SequenceDataset) {
    let config = GeneratorConfig {
        train_sequences: 24,
        cv_sequences: 8,
        test_sequences: 8,
        min_seq_len: 10,
        max_seq_len: 18,
        seed,
        ..GeneratorConfig::default()
    };
    let (mut train, mut cv, mut test) = generate_synthetic(&config).unwrap();
    standardize(&mut train, &mut cv, &mut test).unwrap();
    (train, cv, test)
}

fn random_distribution(k: usize, rng: &mut Pcg32) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.05).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

enum TestLoss {
    Hard(Vec<usize>),
    Soft(Matrix, Temperature),
}

fn total_loss(net: &Network, x: &Matrix, loss: &TestLoss) -> f64 {
    let logits = net.forward_logits_frozen(x).unwrap();
    let mut total = 0.0;
    for r in 0..logits.rows() {
        total += match loss {
            TestLoss::Hard(labels) => ce_hard(labels[r], logits.row(r)).unwrap().0,
            TestLoss::Soft(p, t) => ce_soft(p.row(r), logits.row(r), *t).unwrap().0,
        };
    }
    total
}

fn analytic_grads(net: &mut Network, x: &Matrix, loss: &TestLoss) -> Vec<Matrix> {
    net.zero_grads();
    let logits = net.forward_logits(x).unwrap();
    let mut grads = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let g = match loss {
            TestLoss::Hard(labels) => ce_hard(labels[r], logits.row(r)).unwrap().1,
            TestLoss::Soft(p, t) => ce_soft(p.row(r), logits.row(r), *t).unwrap().1,
        };
        grads.row_mut(r).copy_from_slice(&g);
    }
    net.backward(&grads).unwrap();
    net.params_and_grads()
        .into_iter()
        .map(|(_, g)| g.clone())
        .collect()
}

/// Central finite differences over every parameter; returns the worst
/// relative error (with an absolute floor for near-zero components).
fn gradient_check(net: &mut Network, x: &Matrix, loss: &TestLoss) -> f64 {
    let analytic = analytic_grads(net, x, loss);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let num_params = analytic.len();
    for p in 0..num_params {
        for i in 0..analytic[p].data().len() {
            let orig = net.params_and_grads()[p].0.data()[i];
            net.params_and_grads()[p].0.data_mut()[i] = orig + h;
            let lp = total_loss(net, x, loss);
            net.params_and_grads()[p].0.data_mut()[i] = orig - h;
            let lm = total_loss(net, x, loss);
            net.params_and_grads()[p].0.data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[p].data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max(((a - numeric) / denom).abs());
        }
    }
    worst
}

#[test]
fn criterion_1_gradient_correctness() {
    let c = Criterion::new(1, "analytic gradients match finite differences");
    let mut rng = Pcg32::new(1001, 1);
    let mut configs = 0;
    for round in 0..4 {
        for loss_id in 0..3 {
            // MLP: 2 hidden layers, dims <= 6.
            let (din, h1, h2, k) = (3 + round % 3, 4, 5, 3 + round % 2);
            let mut net = Network::Mlp(Mlp::new(din, &[h1, h2], k, &mut rng));
            let n = 4;
            let mut x = Matrix::zeros(n, din);
            for v in x.data_mut() {
                *v = rng.gaussian(0.0, 1.0).unwrap();
            }
            let loss = match loss_id {
                0 => TestLoss::Hard((0..n).map(|_| rng.next_below(k as u32) as usize).collect()),
                t => {
                    let mut p = Matrix::zeros(n, k);
                    for r in 0..n {
                        p.row_mut(r).copy_from_slice(&random_distribution(k, &mut rng));
                    }
                    TestLoss::Soft(p, Temperature::new(t as f64).unwrap())
                }
            };
            let worst = gradient_check(&mut net, &x, &loss);
            assert!(worst < 1e-5, "mlp round {round} loss {loss_id}: {worst}");
            configs += 1;

            // Stacked LSTM: 2 layers, H=4, sequence length 5.
            let din = 3;
            let k = 3;
            let mut net = Network::Lstm(StackedLstm::new(din, 2, 4, k, &mut rng));
            let n = 5;
            let mut x = Matrix::zeros(n, din);
            for v in x.data_mut() {
                *v = rng.gaussian(0.0, 1.0).unwrap();
            }
            let loss = match loss_id {
                0 => TestLoss::Hard((0..n).map(|_| rng.next_below(k as u32) as usize).collect()),
                t => {
                    let mut p = Matrix::zeros(n, k);
                    for r in 0..n {
                        p.row_mut(r).copy_from_slice(&random_distribution(k, &mut rng));
                    }
                    TestLoss::Soft(p, Temperature::new(t as f64).unwrap())
                }
            };
            let worst = gradient_check(&mut net, &x, &loss);
            assert!(worst < 1e-5, "lstm round {round} loss {loss_id}: {worst}");
            configs += 1;
        }
    }
    assert!(configs >= 20, "only {configs} configurations checked");
    c.pass();
}

#[test]
fn criterion_2_temperature_softmax_suite() {
    let c = Criterion::new(2, "temperature softmax properties");
    let mut rng = Pcg32::new(1002, 2);
    let temps = [0.5, 1.0, 2.0, 5.0, 20.0];
    for _ in 0..100 {
        let k = 6;
        let z: Vec<f64> = (0..k).map(|_| rng.gaussian(0.0, 2.0).unwrap()).collect();
        // Regenerate constant rows (vanishingly unlikely, but the entropy
        // monotonicity claim excludes them).
        if z.iter().all(|&v| (v - z[0]).abs() < 1e-12) {
            continue;
        }
        let base = softmax_t_row(&z, Temperature::ONE).unwrap();
        // T=1 equals the standard softmax.
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (a, e) in base.iter().zip(exps.iter()) {
            assert!((a - e / sum).abs() < 1e-14);
        }
        let mut last_entropy = f64::NEG_INFINITY;
        for &t in &temps {
            let p = softmax_t_row(&z, Temperature::new(t).unwrap()).unwrap();
            let total: f64 = p.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "row sum {total} at T={t}");
            assert_eq!(argmax(&p), argmax(&z), "argmax changed at T={t}");
            let entropy: f64 = p
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| -v * v.ln())
                .sum();
            assert!(
                entropy >= last_entropy - 1e-12,
                "entropy not monotone at T={t}"
            );
            last_entropy = entropy;
        }
    }
    // ce_soft gradient equals (q - p)/T and matches finite differences.
    for _ in 0..25 {
        let k = 5;
        let z: Vec<f64> = (0..k).map(|_| rng.gaussian(0.0, 2.0).unwrap()).collect();
        let p = random_distribution(k, &mut rng);
        let t = Temperature::new(0.5 + 4.0 * rng.next_f64()).unwrap();
        let (_, grad) = ce_soft(&p, &z, t).unwrap();
        let q = softmax_t_row(&z, t).unwrap();
        let h = 1e-6;
        for i in 0..k {
            assert!((grad[i] - (q[i] - p[i]) / t.value()).abs() < 1e-12);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let numeric =
                (ce_soft(&p, &zp, t).unwrap().0 - ce_soft(&p, &zm, t).unwrap().0) / (2.0 * h);
            assert!((grad[i] - numeric).abs() < 1e-7, "fd gap {}", grad[i] - numeric);
        }
    }
    c.pass();
}

#[test]
fn criterion_3_pretrain_finetune_continuity() {
    let c = Criterion::new(3, "pretrain + finetune equals one switched run");
    let (train, cv, _) = small_data(3);
    let mut teacher_rng = Pcg32::new(1003, 3);
    let mut teacher = Network::Mlp(Mlp::new(train.feature_dim, &[16], train.num_classes, &mut teacher_rng));
    let quick = SgdConfig {
        learning_rate: 0.1,
        max_epochs: 3,
        ..SgdConfig::default()
    };
    run_training(&mut teacher, LossKind::Hard, &train, &cv, None, quick, &mut teacher_rng).unwrap();
    let t = Temperature::new(2.0).unwrap();
    let targets = generate_soft_targets(&teacher, &train, t, "teacher").unwrap();

    let mut init_rng = Pcg32::new(1003, 4);
    let student = Network::Mlp(Mlp::new(train.feature_dim, &[10, 10], train.num_classes, &mut init_rng));

    let mut a = student.clone();
    let mut rng_a = Pcg32::new(77, 7);
    let mut history_a = kt_pretrain(&mut a, &targets, &train, &cv, quick, &mut rng_a).unwrap();
    history_a.extend(fine_tune(&mut a, &train, &cv, quick, false, &mut rng_a).unwrap());

    let mut b = student.clone();
    let mut rng_b = Pcg32::new(77, 7);
    let phases = [
        Phase {
            loss: LossKind::Soft(t),
            config: quick,
        },
        Phase {
            loss: LossKind::Hard,
            config: quick,
        },
    ];
    let history_b = run_phases(
        &mut b,
        &train,
        &cv,
        Some(&targets.posteriors),
        &phases,
        &mut rng_b,
    )
    .unwrap();

    assert_eq!(history_a, history_b, "loss traces differ");
    let x = train.frames_matrix();
    assert_eq!(
        a.forward_logits_frozen(&x).unwrap(),
        b.forward_logits_frozen(&x).unwrap(),
        "final parameters differ"
    );
    c.pass();
}

fn acceptance_config() -> ExperimentConfig {
    ExperimentConfig {
        record_timing: false,
        ..ExperimentConfig::default()
    }
}

fn mean_err<'a>(
    rows: &'a [ResultRow],
    system: &str,
    spec: &str,
    t: Option<f64>,
) -> (f64, Vec<&'a ResultRow>) {
    let picked: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.system == system && r.spec == spec && r.temperature == t)
        .collect();
    assert!(!picked.is_empty(), "no rows for {system}/{spec}/{t:?}");
    let mean = picked.iter().map(|r| r.test_error_rate).sum::<f64>() / picked.len() as f64;
    (mean, picked)
}

#[test]
fn criterion_4_table_1_ordering() {
    let c = Criterion::new(4, "pretraining + finetuning beats raw (strong teacher)");
    let config = acceptance_config();
    let rows = reproduce_table_1(&config).unwrap();
    let per_layer = 1 + 2 * config.temperatures.len();
    assert_eq!(
        rows.len(),
        config.seeds.len() * (config.lstm_layers.len() * per_layer + 1),
        "row count"
    );
    let spec = "lstm-1x48";
    let (raw_mean, raw_rows) = mean_err(&rows, "raw", spec, None);
    for &t in &[1.0, 2.0] {
        let (ft_mean, ft_rows) = mean_err(&rows, "prt.+ft.", spec, Some(t));
        assert!(
            ft_mean < raw_mean,
            "T={t}: mean {ft_mean:.4} vs raw {raw_mean:.4}"
        );
        let mut strict = 0;
        for (ft, raw) in ft_rows.iter().zip(raw_rows.iter()) {
            assert_eq!(ft.seed, raw.seed);
            if ft.test_error_rate < raw.test_error_rate {
                strict += 1;
            }
        }
        assert!(
            strict * 5 >= ft_rows.len() * 4,
            "T={t}: strict ordering in only {strict}/{} seeds",
            ft_rows.len()
        );
        println!(
            "  table 1, T={t}: prt.+ft. {:.4} vs raw {:.4} ({strict}/{} seeds strict)",
            ft_mean,
            raw_mean,
            ft_rows.len()
        );
    }
    c.pass();
}

#[test]
fn criterion_5_table_2_weak_teacher() {
    let c = Criterion::new(5, "pretraining still helps with a weak teacher");
    let config = acceptance_config();
    let rows = reproduce_table_2(&config).unwrap();
    let spec = "lstm-1x48";
    let (raw_mean, _) = mean_err(&rows, "raw", spec, None);
    for &t in &[1.0, 2.0] {
        let (ft_mean, _) = mean_err(&rows, "prt.+ft.", spec, Some(t));
        assert!(
            ft_mean < raw_mean,
            "T={t}: mean {ft_mean:.4} vs raw {raw_mean:.4}"
        );
        println!("  table 2, T={t}: prt.+ft. {ft_mean:.4} vs raw {raw_mean:.4}");
    }
    c.pass();
}

#[test]
fn criterion_6_table_3_combination() {
    let c = Criterion::new(6, "rbm + knowledge transfer at least matches raw");
    let config = acceptance_config();
    let rows = reproduce_table_3(&config).unwrap();
    let spec = "mlp-48-48-48";
    let t = config.comparison_temperature;
    let (raw_mean, _) = mean_err(&rows, "raw", spec, None);
    let (combo_mean, _) = mean_err(&rows, "rbm+kt(strong)+ft.", spec, Some(t));
    assert!(
        combo_mean <= raw_mean,
        "combined {combo_mean:.4} vs raw {raw_mean:.4}"
    );
    let report = emit_report(&rows, ReportFormat::Markdown).unwrap();
    for system in [
        "raw",
        "rbm+ft.",
        "disc.+ft.",
        "kt(strong)+ft.",
        "kt(weak)+ft.",
        "rbm+kt(strong)+ft.",
        "rbm+kt(weak)+ft.",
    ] {
        assert!(report.contains(system), "missing {system} in report");
    }
    assert!(report.contains("+/-"), "missing stddev summary");
    println!("  table 3: rbm+kt {combo_mean:.4} vs raw {raw_mean:.4}");
    // Reported, not asserted: the constituent orderings at desk scale.
    let (kt_strong, _) = mean_err(&rows, "kt(strong)+ft.", spec, Some(t));
    let (kt_weak, _) = mean_err(&rows, "kt(weak)+ft.", spec, Some(t));
    let (rbm_only, _) = mean_err(&rows, "rbm+ft.", spec, None);
    println!(
        "  table 3 (reported): kt(strong) {kt_strong:.4}, kt(weak) {kt_weak:.4}, rbm {rbm_only:.4}"
    );
    c.pass();
}

#[test]
fn criterion_7_rbm_sanity() {
    let c = Criterion::new(7, "contrastive divergence improves reconstruction");
    let config = GeneratorConfig::default();
    let (mut train, mut cv, mut test) = generate_synthetic(&config).unwrap();
    standardize(&mut train, &mut cv, &mut test).unwrap();
    let mut rng = Pcg32::new(1007, 7);
    let result = rbm_pretrain(
        &[48, 48, 48],
        &train,
        CdConfig {
            epochs: 4,
            learning_rate: 0.01,
            ..CdConfig::default()
        },
        &mut rng,
    )
    .unwrap();
    for (layer, errors) in result.recon_errors.iter().enumerate() {
        assert!(
            errors.last().unwrap() < errors.first().unwrap(),
            "layer {layer}: {errors:?}"
        );
        println!(
            "  rbm layer {layer}: reconstruction error {:.5} -> {:.5}",
            errors.first().unwrap(),
            errors.last().unwrap()
        );
    }
    // Forward equivalence of the stacked network is exact: the MLP's logits
    // equal the manual chain of hidden probabilities plus the output affine.
    let mlp = ktpt::models::stack_rbms_into_mlp(&result.rbms, train.num_classes, &mut rng).unwrap();
    let x = {
        let full = train.frames_matrix();
        let mut sub = Matrix::zeros(32, full.cols());
        for r in 0..32 {
            sub.row_mut(r).copy_from_slice(full.row(r));
        }
        sub
    };
    let mut chained = x.clone();
    for rbm in &result.rbms {
        chained = rbm.hidden_probs(&chained).unwrap();
    }
    let mut manual = chained.matmul_transpose(&mlp.output.weights).unwrap();
    for r in 0..manual.rows() {
        for c_idx in 0..manual.cols() {
            let v = manual.get(r, c_idx) + mlp.output.bias.get(0, c_idx);
            manual.set(r, c_idx, v);
        }
    }
    let net = Network::Mlp(mlp);
    assert_eq!(net.forward_logits_frozen(&x).unwrap(), manual, "stack equivalence");
    c.pass();
}

#[test]
fn criterion_8_reproduce_tables_determinism() {
    let c = Criterion::new(8, "byte-identical reports across runs");
    let config = ExperimentConfig {
        seeds: vec![1],
        record_timing: false,
        ..ExperimentConfig::default()
    };
    let first = emit_report(&reproduce_table_1(&config).unwrap(), ReportFormat::Csv).unwrap();
    let second = emit_report(&reproduce_table_1(&config).unwrap(), ReportFormat::Csv).unwrap();
    assert_eq!(first.as_bytes(), second.as_bytes(), "CSV bytes differ");
    c.pass();
}

#[test]
fn criterion_9_gradient_variance_diagnostic() {
    let c = Criterion::new(9, "gradient-variance diagnostic matches pinned baseline");
    let config = ExperimentConfig {
        dataset: GeneratorConfig {
            train_sequences: 60,
            cv_sequences: 20,
            test_sequences: 20,
            ..GeneratorConfig::default()
        },
        record_timing: false,
        ..ExperimentConfig::default()
    };
    let rows = run_gradient_diagnostic(&config, 1, &[1.0, 2.0, 5.0]).unwrap();
    assert_eq!(rows.len(), 3);
    // Frozen from a run under this exact config and seed; any drift in the
    // numeric pipeline shows up as a bit-level mismatch here.
    let baseline: [(f64, u64, u64); 3] = [
        (1.0, 0x3fe7eae264e1a870, 0x3fad2382578410ab),
        (2.0, 0x3fcf369205c7ea43, 0x3f79d9fca8224bf0),
        (5.0, 0x3fa2eb9a346eec47, 0x3f21fb2f35893dde),
    ];
    for row in &rows {
        println!(
            "  T={}: mean grad norm {:.6e} (bits {:#018x}), variance {:.6e} (bits {:#018x})",
            row.temperature,
            row.mean_grad_norm,
            row.mean_grad_norm.to_bits(),
            row.variance,
            row.variance.to_bits()
        );
    }
    for (row, (t, norm_bits, var_bits)) in rows.iter().zip(baseline.iter()) {
        assert_eq!(row.temperature, *t);
        assert_eq!(row.mean_grad_norm.to_bits(), *norm_bits, "mean norm drifted");
        assert_eq!(row.variance.to_bits(), *var_bits, "variance drifted");
    }
    c.pass();
}
