//! Command-line front end: schedule dumps, landscape benchmarks, training
//! runs, scheduler comparisons and CIFAR-10 inspection.
//!
//! Defaults follow the reference training setup (SGD with momentum 0.9,
//! weight decay 5e-4, batch 128, halt above loss 4.5 after 2 epochs) and the
//! reference schedule-shape figure (restart lr 0.05, floor 0.001, one-epoch
//! cycles growing by 1.5x, one warmup epoch from 1e-4).

pub mod plot;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use anneal::harness::{write_run_csv, write_run_metadata, write_trajectory_csv};
use anneal::{
    bytes_checksum, dump_schedule, fmt_sig, landscape_run, parse_cifar10, Activation, AdamConfig, BlobSpec,
    ExperimentConfig, HaltRule, HarnessError, LandscapeKind, LandscapeOptimizer, LogBaseRule, Matrix, MlpSpec,
    OptimizerConfig, OutputHead, RestartPolicy, RunResult, ScheduleKind, ScheduleSpec, SgdConfig, Task, WarmupConfig,
};

use plot::LinePlot;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Divergence { .. } => CliError::Divergence(e.to_string()),
            HarnessError::Data(_) => CliError::Data(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "anneal", version, about = "Learning-rate annealing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learning-rate schedules.
    #[command(subcommand)]
    Schedule(ScheduleCommand),
    /// Optimizers on analytic test functions.
    #[command(subcommand)]
    Landscape(LandscapeCommand),
    /// Train an MLP with one schedule.
    Train(TrainArgs),
    /// Train the same MLP under several schedules.
    Compare(CompareArgs),
    /// CIFAR-10 binary files.
    #[command(subcommand)]
    Cifar(CifarCommand),
}

#[derive(Debug, Subcommand)]
pub enum ScheduleCommand {
    /// Write the per-epoch learning rate as CSV (and optionally SVG).
    Dump(DumpArgs),
}

#[derive(Debug, Subcommand)]
pub enum LandscapeCommand {
    /// Run an optimizer from a start point and record the trajectory.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum CifarCommand {
    /// Print record count, label histogram and first-record checksum.
    Inspect { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Log,
    Cosine,
    Step,
    Constant,
}

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    /// Floor of each annealing cycle.
    #[arg(long, default_value_t = 0.001)]
    pub eta_min: f64,
    /// Rate each annealing cycle restarts from.
    #[arg(long, default_value_t = 0.05)]
    pub restart_lr: f64,
    /// Length of the first cycle in epochs.
    #[arg(long = "initial-decay", default_value_t = 1)]
    pub initial_decay: usize,
    /// Length of the second cycle in epochs.
    #[arg(long, default_value_t = 1)]
    pub interval: usize,
    /// Growth factor of later cycles (>= 1).
    #[arg(long, default_value_t = 1.5)]
    pub mult: f64,
    /// Linear warmup epochs before the first cycle (annealing kinds only).
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Rate at the first warmup epoch.
    #[arg(long = "warmup-start", default_value_t = 0.0001)]
    pub warmup_start: f64,
    /// Rate of the constant and step schedules.
    #[arg(long, default_value_t = 0.0001)]
    pub eta0: f64,
    /// Step-decay factor, required for --kind step.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Epochs between step decays, required for --kind step.
    #[arg(long = "step-size")]
    pub step_size: Option<usize>,
    /// Log-annealing base: `range` (1/(eta_max-eta_min)), `min` (1/eta_min) or a number > 1.
    #[arg(long = "log-base", default_value = "range")]
    pub log_base: String,
}

impl ShapeArgs {
    pub fn spec(&self, kind: KindArg) -> Result<ScheduleSpec> {
        let restart = RestartPolicy {
            initial_decay_epochs: self.initial_decay,
            restart_interval: self.interval,
            restart_interval_multiplier: self.mult,
            restart_lr: self.restart_lr,
            min_decay_lr: self.eta_min,
        };
        let warmup = WarmupConfig {
            warmup_epochs: self.warmup,
            warmup_start_lr: self.warmup_start,
        };
        let kind = match kind {
            KindArg::Log => ScheduleKind::LogAnnealing {
                base: self.log_base_rule()?,
            },
            KindArg::Cosine => ScheduleKind::CosineAnnealing,
            KindArg::Constant => ScheduleKind::Constant { eta0: self.eta0 },
            KindArg::Step => match (self.gamma, self.step_size) {
                (Some(gamma), Some(step_size)) => ScheduleKind::StepDecay {
                    eta0: self.eta0,
                    gamma,
                    step_size,
                },
                _ => return Err(CliError::Usage("--kind step requires --gamma and --step-size".into())),
            },
        };
        ScheduleSpec::new(kind, restart, warmup).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn log_base_rule(&self) -> Result<LogBaseRule<f64>> {
        match self.log_base.as_str() {
            "range" => Ok(LogBaseRule::RangeReciprocal),
            "min" => Ok(LogBaseRule::MinReciprocal),
            other => other
                .parse::<f64>()
                .map(LogBaseRule::Explicit)
                .map_err(|_| CliError::Usage(format!("--log-base: expected range, min or a number, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long)]
    pub epochs: usize,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SVG plot here.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// SGD dampening.
    #[arg(long, default_value_t = 0.0)]
    pub dampening: f64,
    /// Coupled L2 weight decay.
    #[arg(long = "weight-decay", default_value_t = 0.0005)]
    pub weight_decay: f64,
}

impl OptimArgs {
    pub fn config(&self) -> Result<OptimizerConfig> {
        let cfg = match self.optimizer {
            OptimizerArg::Sgd => OptimizerConfig::Sgd(SgdConfig {
                momentum: self.momentum,
                dampening: self.dampening,
                weight_decay: self.weight_decay,
            }),
            OptimizerArg::Adam => OptimizerConfig::Adam(AdamConfig {
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            }),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionArg {
    Ackley,
    Griewank,
    Rastrigin,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchOptimizerArg {
    Sgd,
    Adam,
    Newton,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub function: FunctionArg,
    /// Start point, comma separated; its length sets the dimension.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub start: Vec<f64>,
    /// Condition number of the diagonal quadratic (eigenvalues spaced from 1).
    #[arg(long, default_value_t = 10.0)]
    pub condition: f64,
    #[arg(long = "optimizer", value_enum, default_value_t = BenchOptimizerArg::Sgd)]
    pub optimizer: BenchOptimizerArg,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// SGD dampening.
    #[arg(long, default_value_t = 0.0)]
    pub dampening: f64,
    /// Coupled L2 weight decay.
    #[arg(long = "weight-decay", default_value_t = 0.0005)]
    pub weight_decay: f64,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long)]
    pub steps: usize,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SVG plot here.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Blobs,
    Cifar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Leaky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Blobs)]
    pub task: TaskArg,
    /// Blob classes.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Blob points per class.
    #[arg(long = "per-class", default_value_t = 500)]
    pub per_class: usize,
    /// Blob dimension.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Distance between blob centres.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    /// Blob noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// CIFAR-10 binary batch file, required for --task cifar.
    #[arg(long)]
    pub cifar: Option<PathBuf>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    pub activation: ActivationArg,
    #[arg(long, value_enum, default_value_t = HeadArg::Softmax)]
    pub head: HeadArg,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long = "batch-size", default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long)]
    pub epochs: usize,
    /// Halt when the epoch mean loss exceeds this...
    #[arg(long, default_value_t = 4.5)]
    pub threshold: f64,
    /// ...after this many epochs.
    #[arg(long, default_value_t = 2)]
    pub buffer: usize,
    /// Seeds data, initialisation and batch order.
    #[arg(long, env = "ANNEAL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Directory for CSV, metadata and SVG outputs.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

impl TaskArgs {
    pub fn experiment(&self, schedule: ScheduleSpec) -> Result<ExperimentConfig> {
        let data = match self.task {
            TaskArg::Blobs => anneal::gen_blobs(&BlobSpec {
                classes: self.classes,
                per_class: self.per_class,
                dim: self.dim,
                center_separation: self.separation,
                noise_sigma: self.noise,
                seed: self.seed,
            })
            .map_err(|e| CliError::Usage(e.to_string()))?,
            TaskArg::Cifar => {
                let path = self
                    .cifar
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--task cifar requires --cifar <path>".into()))?;
                let bytes = read(path)?;
                let records = parse_cifar10(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                anneal::dataio::cifar_to_dataset(&records, "cifar10").map_err(|e| CliError::Data(e.to_string()))?
            }
        };
        let mut layer_sizes = vec![data.dim()];
        layer_sizes.extend(&self.hidden);
        layer_sizes.push(data.classes);
        let spec = MlpSpec {
            layer_sizes,
            hidden_activation: match self.activation {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::Leaky => Activation::leaky(),
            },
            output_head: match self.head {
                HeadArg::Softmax => OutputHead::SoftmaxWithSparseCe,
                HeadArg::Sigmoid => OutputHead::SigmoidWithCategoricalCe,
            },
            init_seed: self.seed,
        };
        let cfg = ExperimentConfig {
            task: Task::Mlp { spec, data },
            optimizer: self.optim.config()?,
            schedule,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            halt: HaltRule {
                buffer_epochs: self.buffer,
                loss_threshold: self.threshold,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub task: TaskArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Schedules to compare, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub schedules: Vec<KindArg>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub task: TaskArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Schedule(ScheduleCommand::Dump(args)) => schedule_dump(&args),
        Command::Landscape(LandscapeCommand::Bench(args)) => landscape_bench(&args),
        Command::Train(args) => train(&args),
        Command::Compare(args) => compare(&args),
        Command::Cifar(CifarCommand::Inspect { path }) => cifar_inspect(&path, &mut io::stdout().lock()),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn write_file(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    fill(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

pub fn schedule_dump(args: &DumpArgs) -> Result<()> {
    let spec = args.shape.spec(args.kind)?;
    if args.epochs < 1 {
        return Err(CliError::Usage("--epochs must be >= 1".into()));
    }
    let rows = dump_schedule(&spec, args.epochs);
    write_file(&args.out, |w| anneal::schedule::write_schedule_csv(w, &rows))?;
    if let Some(svg) = &args.svg {
        let points = rows.iter().map(|&(e, lr)| (e as f64, lr)).collect();
        let plot = LinePlot::new("Learning rate schedule", "epoch", "learning rate").with_series(spec.name(), points);
        write_file(svg, |w| w.write_all(plot.to_svg().as_bytes()))?;
    }
    Ok(())
}

pub fn landscape_bench(args: &BenchArgs) -> Result<()> {
    let dim = args.start.len();
    let kind = match args.function {
        FunctionArg::Ackley => LandscapeKind::Ackley,
        FunctionArg::Griewank => LandscapeKind::Griewank,
        FunctionArg::Rastrigin => LandscapeKind::Rastrigin,
        FunctionArg::Quadratic => {
            if !(args.condition >= 1.0 && args.condition.is_finite()) {
                return Err(CliError::Usage("--condition must be >= 1".into()));
            }
            let diag: Vec<f64> = (0..dim)
                .map(|i| {
                    if dim == 1 {
                        1.0
                    } else {
                        1.0 + (args.condition - 1.0) * i as f64 / (dim - 1) as f64
                    }
                })
                .collect();
            LandscapeKind::quadratic(Matrix::from_diag(&diag)).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    let schedule = args.shape.spec(args.kind)?;
    let optimizer = match args.optimizer {
        BenchOptimizerArg::Newton => LandscapeOptimizer::Newton,
        BenchOptimizerArg::Sgd | BenchOptimizerArg::Adam => {
            let optim = OptimArgs {
                optimizer: if args.optimizer == BenchOptimizerArg::Sgd {
                    OptimizerArg::Sgd
                } else {
                    OptimizerArg::Adam
                },
                momentum: args.momentum,
                dampening: args.dampening,
                weight_decay: args.weight_decay,
            };
            LandscapeOptimizer::FirstOrder(optim.config()?)
        }
    };
    let trajectory = landscape_run(&kind, &args.start, optimizer, &schedule, args.steps)?;
    write_file(&args.out, |w| write_trajectory_csv(w, &trajectory))?;
    if let Some(svg) = &args.svg {
        let f = trajectory.iter().map(|p| (p.step as f64, p.f)).collect();
        let best = trajectory.iter().map(|p| (p.step as f64, p.best_f)).collect();
        let plot = LinePlot::new(&format!("{} ({})", kind.name(), schedule.name()), "step", "f")
            .with_series("f", f)
            .with_series("best f", best);
        write_file(svg, |w| w.write_all(plot.to_svg().as_bytes()))?;
    }
    if let Some(last) = trajectory.last() {
        println!(
            "{}: final f {}, best f {}",
            kind.name(),
            fmt_sig(last.f, 10),
            fmt_sig(last.best_f, 10)
        );
    }
    Ok(())
}

fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    write_file(&dir.join(format!("{}.csv", result.schedule)), |w| {
        write_run_csv(w, result)
    })?;
    write_file(&dir.join(format!("{}.meta", result.schedule)), |w| {
        write_run_metadata(w, result)
    })
}

fn loss_series(result: &RunResult) -> Vec<(f64, f64)> {
    result.metrics.iter().map(|m| (m.epoch as f64, m.mean_loss)).collect()
}

fn summary(result: &RunResult) -> String {
    let last = result.metrics.last().expect("at least one epoch");
    let mut line = format!(
        "{}: final loss {}, accuracy {}, epochs {}",
        result.schedule,
        fmt_sig(last.mean_loss, 6),
        last.accuracy.map(|a| fmt_sig(a, 4)).unwrap_or_else(|| "-".into()),
        result.metrics.len()
    );
    if let Some(e) = result.halt_epoch {
        line.push_str(&format!(", halted at epoch {e}"));
    }
    line
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let schedule = args.shape.spec(args.kind)?;
    let cfg = args.task.experiment(schedule)?;
    let result = anneal::run_experiment(&cfg)?;
    make_dir(&args.task.out_dir)?;
    write_run(&args.task.out_dir, &result)?;
    let plot = LinePlot::new("Training loss", "epoch", "mean loss").with_series(&result.schedule, loss_series(&result));
    let svg = args.task.out_dir.join(format!("{}.svg", result.schedule));
    write_file(&svg, |w| w.write_all(plot.to_svg().as_bytes()))?;
    println!("{}", summary(&result));
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let mut kinds = Vec::new();
    for &k in &args.schedules {
        if kinds.contains(&k) {
            return Err(CliError::Usage(format!("schedule {k:?} listed twice")));
        }
        kinds.push(k);
    }
    let specs = kinds.iter().map(|&k| args.shape.spec(k)).collect::<Result<Vec<_>>>()?;
    let base = args.task.experiment(specs[0])?;
    let results = anneal::compare(&base, &specs)?;

    make_dir(&args.task.out_dir)?;
    let mut plot = LinePlot::new("Scheduler comparison", "epoch", "mean loss");
    let mut failures = 0;
    for (name, result) in &results {
        match result {
            Ok(r) => {
                write_run(&args.task.out_dir, r)?;
                plot = plot.with_series(name, loss_series(r));
                println!("{}", summary(r));
            }
            Err(e) => {
                failures += 1;
                println!("{name}: {e}");
            }
        }
    }
    let svg = args.task.out_dir.join("compare.svg");
    write_file(&svg, |w| w.write_all(plot.to_svg().as_bytes()))?;
    if failures == results.len() {
        return Err(CliError::Divergence("every run diverged".into()));
    }
    Ok(())
}

pub fn cifar_inspect(path: &Path, out: &mut impl Write) -> Result<()> {
    let bytes = read(path)?;
    let records = parse_cifar10(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut counts = [0usize; 10];
    for r in &records {
        counts[usize::from(r.label)] += 1;
    }
    let stdout_err = |source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    writeln!(out, "{} records", records.len()).map_err(stdout_err)?;
    for (label, n) in counts.iter().enumerate() {
        writeln!(out, "label {label}: {n}").map_err(stdout_err)?;
    }
    if !records.is_empty() {
        let first = &bytes[..anneal::dataio::CIFAR10_RECORD];
        writeln!(out, "first record checksum: {:016x}", bytes_checksum(first)).map_err(stdout_err)?;
    }
    Ok(())
}
