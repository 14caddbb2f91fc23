//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use condadapt_core::data::{synth_generate, Dataset, SynthConfig, DEFAULT_SIGMAS};
use condadapt_core::eval::per_scenario_report;
use condadapt_core::labels::{Condition, Drowsiness, SceneKind};
use condadapt_core::network::Network;
use condadapt_core::tensor::Shape;
use condadapt_core::training::{self, grad_check, tiny_problem, TrainError};
use thiserror::Error;

use crate::config::{ConfigError, Overrides, RunConfig};
use crate::format::{write_atomic, FormatError};
use crate::{checkpoint, dataset_io, pgm, report};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(TrainError),
    #[error("gradient check failed: max relative error {max:e} exceeds {tolerance:e}")]
    CheckFailed { max: f64, tolerance: f64 },
}

impl CliError {
    /// 0 success, 1 usage, 2 data, 3 divergence, 4 check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::CheckFailed { .. } => 4,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "condadapt",
    version,
    about = "Condition-adaptive drowsiness detection on video clips"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Build a dataset from a folder of PGM frames and a label file.
    Import(ImportArgs),
    /// Train a network and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write metric reports.
    Eval(EvalArgs),
    /// Print the predictions for one clip.
    Predict(PredictArgs),
    /// Check analytic gradients against finite differences on a tiny network.
    Gradcheck(GradcheckArgs),
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h < 2 || w < 2 {
        return Err(format!("extents must be at least 2x2, got {s:?}"));
    }
    Ok((h, w))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub clips: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frame extents as HxW.
    #[arg(long, default_value = "32x32", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Expand every clip into its 8 flipped/blurred variants.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Directory of .pgm frames.
    #[arg(long)]
    pub frames: PathBuf,
    /// Label file; defaults to labels.txt inside the frame directory.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "32x32", value_parser = parse_size)]
    pub size: (usize, usize),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "phase1-steps")]
    pub phase1_steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Seeds weight initialization and the shuffle order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the step log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output path prefix: writes PREFIX.json and PREFIX.txt.
    #[arg(long)]
    pub report: PathBuf,
    /// Also write PREFIX.roc.csv.
    #[arg(long)]
    pub roc: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip index into --data, or a dataset file whose first clip is used.
    #[arg(long)]
    pub clip: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Parses `args` (program name first) and runs the command, writing logs to
/// `out` and diagnostics to `err`. Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Import(a) => import(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn print_balance(out: &mut dyn Write, ds: &Dataset) -> Result<(), CliError> {
    let (drowsy, alert) = ds.class_balance();
    let extents = ds
        .extents()
        .map_err(data_err)?
        .map(|s| s.to_string())
        .unwrap_or_default();
    writeln!(out, "clips\t{}\textents\t{extents}", ds.len())?;
    writeln!(out, "drowsy\t{drowsy}\tnon-drowsy\t{alert}")?;
    Ok(())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = SynthConfig {
        height: a.size.0,
        width: a.size.1,
        ..SynthConfig::default()
    };
    let clips = usize::try_from(a.clips).map_err(|_| CliError::Usage("--clips too large".into()))?;
    let mut ds = synth_generate(clips, a.seed, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.augment {
        ds = ds.augmented(&DEFAULT_SIGMAS).map_err(data_err)?;
    }
    dataset_io::save(&a.out, &ds)?;
    print_balance(out, &ds)?;
    writeln!(out, "wrote\t{}", a.out.display())?;
    Ok(())
}

fn import(a: ImportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let labels = a.labels.unwrap_or_else(|| a.frames.join("labels.txt"));
    let ds = pgm::import_dir(&a.frames, &labels, a.size).map_err(data_err)?;
    dataset_io::save(&a.out, &ds)?;
    print_balance(out, &ds)?;
    writeln!(out, "wrote\t{}", a.out.display())?;
    Ok(())
}

fn input_extents(ds: &Dataset) -> Result<[usize; 4], CliError> {
    let shape = ds
        .extents()
        .map_err(data_err)?
        .ok_or_else(|| CliError::Data("dataset is empty".into()))?;
    shape
        .dims()
        .try_into()
        .map_err(|_| CliError::Data(format!("clips must be rank 4, got {shape}")))
}

fn check_extents(ds: &Dataset, net: &Network) -> Result<(), CliError> {
    let data = Shape::new(input_extents(ds)?.to_vec()).map_err(data_err)?;
    let input = net.input_shape();
    if data != input {
        return Err(CliError::Data(format!(
            "dataset clip extents {data} do not match checkpoint input extents {input}"
        )));
    }
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let overrides = Overrides {
        epochs: a.epochs,
        phase1_steps: a.phase1_steps,
        lambda: a.lambda,
        beta: a.beta,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let mut cfg = RunConfig::resolve(a.config.as_deref(), &overrides)?;
    let ds = dataset_io::load(&a.data)?;
    // the network's input extents always follow the data
    cfg.network.input = input_extents(&ds)?;
    cfg.validate()?;
    writeln!(out, "# effective config\n{}", cfg.to_json())?;

    let mut net = Network::new(cfg.network.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let header = "step\tepoch\tphase\tjoint\tscene\tdetection";
    writeln!(out, "{header}")?;
    let mut log = format!("{header}\n");
    let started = Instant::now();
    let mut write_err = None;
    let result = training::train(&ds, &mut net, &cfg.train, |s, _| {
        let line = format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            s.step, s.epoch, s.phase, s.joint, s.scene, s.detection
        );
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
        log.push_str(&line);
        log.push('\n');
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let report = match result {
        Ok(r) => r,
        Err(e @ TrainError::Diverged { .. }) => return Err(CliError::Diverged(e)),
        Err(e) => return Err(data_err(e)),
    };

    checkpoint::save(&a.out, &net)?;
    if let Some(path) = &a.log {
        write_atomic(path, log.as_bytes())?;
    }
    let metrics = per_scenario_report(&ds, &net).map_err(data_err)?;
    writeln!(out, "steps\t{}", report.steps.len())?;
    writeln!(out, "seconds\t{:.1}", started.elapsed().as_secs_f64())?;
    writeln!(out, "checksum\t{:016x}", report.checksum)?;
    writeln!(out, "train_accuracy\t{:.4}", metrics.overall.accuracy)?;
    for s in &metrics.scenarios {
        writeln!(out, "train_accuracy[{}]\t{:.4}", s.name, s.metrics.accuracy)?;
    }
    writeln!(out, "wrote\t{}", a.out.display())?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = checkpoint::load(&a.checkpoint)?;
    let ds = dataset_io::load(&a.data)?;
    check_extents(&ds, &net)?;
    let r = per_scenario_report(&ds, &net).map_err(data_err)?;
    let text = report::render_text(&r);
    write_atomic(&with_suffix(&a.report, ".json"), report::to_json(&r).as_bytes())?;
    write_atomic(&with_suffix(&a.report, ".txt"), text.as_bytes())?;
    if a.roc {
        write_atomic(&with_suffix(&a.report, ".roc.csv"), report::roc_csv(&r).as_bytes())?;
    }
    write!(out, "{text}")?;
    Ok(())
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = checkpoint::load(&a.checkpoint)?;
    let (ds, index) = match (a.clip.parse::<usize>(), &a.data) {
        (Ok(i), Some(data)) => (dataset_io::load(data)?, i),
        (Ok(_), None) => return Err(CliError::Usage("a clip index needs --data".into())),
        (Err(_), _) => (dataset_io::load(Path::new(&a.clip))?, 0),
    };
    let clip = ds
        .clips
        .get(index)
        .ok_or_else(|| CliError::Data(format!("clip index {index} out of range (dataset has {})", ds.len())))?;
    check_extents(&ds, &net)?;
    let p = net.predict_clip(&clip.clip).map_err(data_err)?;
    for (kind, &i) in SceneKind::ALL.iter().zip(&p.scene) {
        let name = kind.category_name(i).unwrap_or("?");
        let label = match kind {
            SceneKind::GlassesIllum => "glasses/illumination",
            SceneKind::Head => "head",
            SceneKind::Mouth => "mouth",
            SceneKind::Eye => "eye",
        };
        writeln!(out, "{label}\t{name}")?;
    }
    let class = Drowsiness::from_index(p.drowsy_class).map_err(data_err)?;
    writeln!(out, "drowsiness\t{}", class.name())?;
    writeln!(out, "probability\t{:.6}", p.drowsy_probability())?;
    Ok(())
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.tolerance.is_nan() || a.tolerance <= 0.0 {
        return Err(CliError::Usage(format!(
            "tolerance must be positive, got {}",
            a.tolerance
        )));
    }
    let started = Instant::now();
    let mut problem = tiny_problem(a.seed);
    writeln!(out, "parameters\t{}", problem.net.params().parameter_count())?;
    let r = grad_check(&mut problem, 1e-5, a.tolerance);
    writeln!(out, "group\tmax_rel_error")?;
    for (group, e) in r.by_group() {
        let mark = if e < a.tolerance { "ok" } else { "FAIL" };
        writeln!(out, "{group}\t{e:.3e}\t{mark}")?;
    }
    writeln!(out, "seconds\t{:.1}", started.elapsed().as_secs_f64())?;
    if r.passed() {
        writeln!(out, "PASS")?;
        Ok(())
    } else {
        Err(CliError::CheckFailed {
            max: r.max_rel_error(),
            tolerance: a.tolerance,
        })
    }
}
