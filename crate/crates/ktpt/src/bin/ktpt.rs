//! Command-line front end. Every subcommand is a pure function of
//! (config, seed) and reads/writes only its declared artifacts under the
//! output directory, so re-running with identical inputs reproduces
//! identical files.

use clap::{Parser, Subcommand};
use ktpt::data::save_csv;
use ktpt::harness::{
    emit_report, prepare_data, reproduce_table_1, reproduce_table_2, reproduce_table_3,
    require_artifact, ExperimentConfig, PreparedData, ReportFormat,
};
use ktpt::layers::Temperature;
use ktpt::models::{Mlp, Network, StackedLstm};
use ktpt::numerics::Pcg32;
use ktpt::pretrain::{
    fine_tune, generate_soft_targets, kt_pretrain, PretrainPlan, SoftTargetSet, Strategy,
};
use ktpt::train::{
    diagnostic_report, frame_accuracy, history_to_csv, run_training, sequence_error_rate,
    EpochRecord, LossKind,
};
use ktpt::{KtError, Result};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ktpt", about = "Knowledge-transfer pre-training toolkit", version)]
struct Cli {
    /// TOML experiment config; flags below override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Experiment seed (repeatable); overrides the config's seed list.
    #[arg(long, global = true)]
    seed: Vec<u64>,

    /// Output directory (default `out/`, or the KTPT_OUT environment
    /// variable when set).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Concurrent experiment arms.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Transfer temperature (repeatable); overrides the config's list.
    #[arg(long, global = true)]
    temperature: Vec<f64>,

    /// Report format for emitted tables.
    #[arg(long, global = true, default_value = "csv")]
    format: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write train/cv/test CSV files.
    GenData,
    /// Train an MLP teacher on hard targets and save it.
    TrainTeacher {
        /// Which teacher geometry to use.
        #[arg(long, default_value = "strong")]
        teacher: TeacherKind,
    },
    /// Produce soft-target caches from a saved teacher, one per temperature.
    Distill {
        /// Teacher model file (default: the train-teacher artifact).
        #[arg(long)]
        teacher_model: Option<PathBuf>,
    },
    /// Pre-train a student and save the un-fine-tuned model.
    Pretrain {
        #[arg(long, default_value = "kt")]
        strategy: StrategyArg,
        /// Student kind; non-KT strategies support `mlp` only.
        #[arg(long, default_value = "mlp")]
        student: StudentKind,
        /// LSTM layer count when `--student lstm`.
        #[arg(long, default_value_t = 1)]
        lstm_layers: usize,
    },
    /// Fine-tune a saved model on hard targets.
    Finetune {
        /// Model to start from (default: the pretrain artifact).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Redraw the output layer first. Defaults by student kind: on for
        /// MLP, off for LSTM.
        #[arg(long)]
        reinit_output: Option<bool>,
    },
    /// Report train/cv/test metrics for a saved model.
    Evaluate {
        /// Model to evaluate (default: the finetune artifact).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the result-table experiments and write report files.
    ReproduceTables {
        #[arg(long, default_value = "all")]
        table: TableArg,
    },
    /// Measure output-gradient spread across temperatures.
    DiagnoseGradients,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum TeacherKind {
    Strong,
    Weak,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StudentKind {
    Mlp,
    Lstm,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StrategyArg {
    Raw,
    Kt,
    Rbm,
    Discriminative,
    RbmThenKt,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Raw => Strategy::Raw,
            StrategyArg::Kt => Strategy::Kt,
            StrategyArg::Rbm => Strategy::Rbm,
            StrategyArg::Discriminative => Strategy::Discriminative,
            StrategyArg::RbmThenKt => Strategy::RbmThenKt,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum TableArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

struct Context {
    config: ExperimentConfig,
    out: PathBuf,
    format: ReportFormat,
}

impl Context {
    fn build(cli: &Cli) -> Result<Context> {
        let mut config = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    KtError::Argument(format!("cannot read config {}: {e}", path.display()))
                })?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if !cli.seed.is_empty() {
            config.seeds = cli.seed.clone();
        }
        if !cli.temperature.is_empty() {
            config.temperatures = cli.temperature.clone();
        }
        if let Some(workers) = cli.workers {
            config.workers = workers;
        }
        config.validate()?;
        let out = cli
            .out
            .clone()
            .or_else(|| std::env::var_os("KTPT_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)?;
        Ok(Context {
            config,
            out,
            format: cli.format.parse()?,
        })
    }

    fn seed(&self) -> u64 {
        self.config.seeds[0]
    }

    fn data(&self) -> Result<PreparedData> {
        prepare_data(&self.config.dataset)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn teacher_path(&self, kind: TeacherKind) -> PathBuf {
        match kind {
            TeacherKind::Strong => self.path("teacher-strong.ktpt"),
            TeacherKind::Weak => self.path("teacher-weak.ktpt"),
        }
    }

    fn soft_target_path(&self, t: f64) -> PathBuf {
        self.path(&format!("soft-targets-T{}.ktst", fmt_t(t)))
    }
}

fn fmt_t(t: f64) -> String {
    if t == t.trunc() {
        format!("{t:.0}")
    } else {
        format!("{t}")
    }
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_to_csv(history))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::build(cli)?;
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::TrainTeacher { teacher } => train_teacher(&ctx, *teacher),
        Command::Distill { teacher_model } => distill(&ctx, teacher_model.as_deref()),
        Command::Pretrain {
            strategy,
            student,
            lstm_layers,
        } => pretrain(&ctx, (*strategy).into(), *student, *lstm_layers),
        Command::Finetune {
            model,
            reinit_output,
        } => finetune(&ctx, model.as_deref(), *reinit_output),
        Command::Evaluate { model } => evaluate(&ctx, model.as_deref()),
        Command::ReproduceTables { table } => reproduce_tables(&ctx, *table),
        Command::DiagnoseGradients => diagnose_gradients(&ctx),
    }
}

fn gen_data(ctx: &Context) -> Result<()> {
    let mut config = ctx.config.dataset.clone();
    config.seed = ctx.seed();
    let (train, cv, test) = ktpt::data::generate_synthetic(&config)?;
    for (ds, name) in [(&train, "train.csv"), (&cv, "cv.csv"), (&test, "test.csv")] {
        save_csv(ds, &ctx.path(name))?;
    }
    println!(
        "wrote {} train / {} cv / {} test sequences to {}",
        train.sequences.len(),
        cv.sequences.len(),
        test.sequences.len(),
        ctx.out.display()
    );
    Ok(())
}

fn train_teacher(ctx: &Context, kind: TeacherKind) -> Result<()> {
    let data = ctx.data()?;
    let sizes = match kind {
        TeacherKind::Strong => &ctx.config.teacher_strong,
        TeacherKind::Weak => &ctx.config.teacher_weak,
    };
    let mut rng = Pcg32::new(ctx.seed(), 1);
    let mut teacher = Network::Mlp(Mlp::new(
        data.train.feature_dim,
        sizes,
        data.train.num_classes,
        &mut rng,
    ));
    let history = run_training(
        &mut teacher,
        LossKind::Hard,
        &data.train,
        &data.cv,
        None,
        ctx.config.teacher_sgd,
        &mut rng,
    )?;
    let path = ctx.teacher_path(kind);
    teacher.save(&path)?;
    write_history(&ctx.path("teacher-history.csv"), &history)?;
    println!(
        "teacher saved to {} (cv frame accuracy {:.3})",
        path.display(),
        frame_accuracy(&teacher, &data.cv)?
    );
    Ok(())
}

fn distill(ctx: &Context, teacher_model: Option<&Path>) -> Result<()> {
    let teacher_path = teacher_model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.teacher_path(TeacherKind::Strong));
    require_artifact(&teacher_path, "train-teacher")?;
    let teacher = Network::load(&teacher_path)?;
    let data = ctx.data()?;
    let teacher_id = teacher_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("teacher")
        .to_string();
    for &t in &ctx.config.temperatures {
        let targets =
            generate_soft_targets(&teacher, &data.train, Temperature::new(t)?, &teacher_id)?;
        let path = ctx.soft_target_path(t);
        targets.save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn pretrain(ctx: &Context, strategy: Strategy, student: StudentKind, lstm_layers: usize) -> Result<()> {
    let data = ctx.data()?;
    let mut rng = Pcg32::new(ctx.seed(), 2);
    let t = ctx.config.temperatures[0];
    let out = ctx.path("pretrained.ktpt");

    let net = match student {
        StudentKind::Lstm => {
            if strategy != Strategy::Kt {
                return Err(KtError::Argument(
                    "LSTM students support only the kt strategy".into(),
                ));
            }
            let targets_path = ctx.soft_target_path(t);
            require_artifact(&targets_path, "distill")?;
            let targets = SoftTargetSet::load(&targets_path)?;
            let mut net = Network::Lstm(StackedLstm::new(
                data.train.feature_dim,
                lstm_layers,
                ctx.config.lstm_hidden,
                data.train.num_classes,
                &mut rng,
            ));
            let history = kt_pretrain(
                &mut net,
                &targets,
                &data.train,
                &data.cv,
                ctx.config.lstm_sgd,
                &mut rng,
            )?;
            write_history(&ctx.path("pretrain-history.csv"), &history)?;
            net
        }
        StudentKind::Mlp => {
            let plan = PretrainPlan {
                strategy,
                temperature: strategy
                    .involves_kt()
                    .then(|| Temperature::new(t))
                    .transpose()?,
                reinit_output: true,
                teacher_model_path: None,
            };
            let teacher = if strategy.involves_kt() {
                let path = ctx.teacher_path(TeacherKind::Strong);
                require_artifact(&path, "train-teacher")?;
                Some(Network::load(&path)?)
            } else {
                None
            };
            ktpt::pretrain::execute_plan(
                &plan,
                &ctx.config.mlp_student,
                &data.train,
                &data.cv,
                teacher.as_ref(),
                ctx.config.cd,
                ctx.config.mlp_sgd,
                &mut rng,
            )?
        }
    };
    net.save(&out)?;
    println!("pretrained model saved to {}", out.display());
    Ok(())
}

fn finetune(ctx: &Context, model: Option<&Path>, reinit_output: Option<bool>) -> Result<()> {
    let model_path = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path("pretrained.ktpt"));
    require_artifact(&model_path, "pretrain")?;
    let mut net = Network::load(&model_path)?;
    let data = ctx.data()?;
    let reinit = reinit_output.unwrap_or(!net.is_sequence_model());
    let config = if net.is_sequence_model() {
        ctx.config.lstm_sgd
    } else {
        ctx.config.mlp_sgd
    };
    let mut rng = Pcg32::new(ctx.seed(), 3);
    let history = fine_tune(&mut net, &data.train, &data.cv, config, reinit, &mut rng)?;
    let out = ctx.path("model.ktpt");
    net.save(&out)?;
    write_history(&ctx.path("finetune-history.csv"), &history)?;
    println!(
        "fine-tuned model saved to {} (cv frame accuracy {:.3})",
        out.display(),
        frame_accuracy(&net, &data.cv)?
    );
    Ok(())
}

fn evaluate(ctx: &Context, model: Option<&Path>) -> Result<()> {
    let model_path = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path("model.ktpt"));
    require_artifact(&model_path, "finetune")?;
    let net = Network::load(&model_path)?;
    let data = ctx.data()?;
    println!("train frame accuracy: {:.4}", frame_accuracy(&net, &data.train)?);
    println!("cv frame accuracy: {:.4}", frame_accuracy(&net, &data.cv)?);
    println!(
        "test frame error rate: {:.4}",
        1.0 - frame_accuracy(&net, &data.test)?
    );
    println!(
        "test sequence error rate: {:.4}",
        sequence_error_rate(&net, &data.test)?
    );
    Ok(())
}

fn reproduce_tables(ctx: &Context, table: TableArg) -> Result<()> {
    let ext = match ctx.format {
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "md",
    };
    let runs: Vec<(u64, fn(&ExperimentConfig) -> Result<Vec<ktpt::harness::ResultRow>>)> =
        match table {
            TableArg::One => vec![(1, reproduce_table_1)],
            TableArg::Two => vec![(2, reproduce_table_2)],
            TableArg::Three => vec![(3, reproduce_table_3)],
            TableArg::All => vec![
                (1, reproduce_table_1),
                (2, reproduce_table_2),
                (3, reproduce_table_3),
            ],
        };
    for (n, run) in runs {
        let rows = run(&ctx.config)?;
        let report = emit_report(&rows, ctx.format)?;
        let path = ctx.path(&format!("table{n}.{ext}"));
        fs::write(&path, &report)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn diagnose_gradients(ctx: &Context) -> Result<()> {
    let temperatures = if ctx.config.temperatures == ExperimentConfig::default().temperatures {
        vec![1.0, 2.0, 5.0]
    } else {
        ctx.config.temperatures.clone()
    };
    let rows = ktpt::harness::run_gradient_diagnostic(&ctx.config, ctx.seed(), &temperatures)?;
    let report = diagnostic_report(&rows);
    let path = ctx.path("gradient-diagnostic.md");
    fs::write(&path, &report)?;
    print!("{report}");
    println!("wrote {}", path.display());
    Ok(())
}
