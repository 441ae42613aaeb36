//! Command-line application: five subcommands over one shared run
//! configuration, with deterministic seeding and static result files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;

use crate::config::{AblateMode, RunConfig, TaskKind};
use crate::contrastive::train_encoder;
use crate::encoder::EncoderParams;
use crate::error::{CheckpointError, Error, Result};
use crate::eval::{ablation_sweep, evaluate_cell, MetricsRow, SweepContext};
use crate::guidance::Similarity;
use crate::output::{
    aggregate_report, line_chart, read_metrics_csv, write_atomic, write_loss_csv,
    write_metrics_csv, write_report_csv, write_trace_csv, write_translations_csv, ReportRow,
    Series,
};
use crate::rng::{child_rng, phase, phase_seed};
use crate::score::{AnalyticMixtureScore, GaussianMixture, ScoreFunction};
use crate::score_net::{train_score, NetScore};
use crate::sde::NoiseSchedule;
use crate::tasks::{ImageTask, InvariantView, MixtureTask};

const EXIT_HELP: &str = "Exit codes:
  0  success
  1  I/O failure
  2  malformed config or command line
  3  missing or malformed checkpoint
  4  invalid argument or incompatible shapes
  5  numerical failure or training divergence";

#[derive(Parser)]
#[command(
    name = "csde",
    version,
    about = "Contrastively guided SDE translation between data domains",
    after_help = EXIT_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run config file; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. guidance.lambda=50.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the contrastive encoder; writes encoder.ckpt, encoder_loss.csv,
    /// encoder_loss.svg.
    TrainEncoder(CommonArgs),
    /// Train the denoising score net on target draws; writes score.ckpt,
    /// score_loss.csv, score_loss.svg.
    TrainScore(CommonArgs),
    /// Translate evaluation sources; writes translations.csv, trace.csv,
    /// metrics.csv.
    Translate(CommonArgs),
    /// Sweep lambda, initial time, and similarity; writes metrics.csv.
    Ablate(CommonArgs),
    /// Aggregate metrics.csv over seeds; writes report.csv and
    /// faithfulness.svg.
    Report(CommonArgs),
}

/// Entry point behind `main`; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("CSDE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid CSDE_THREADS value '{v}'"),
        }
    }
    let result = match &cli.command {
        Command::TrainEncoder(args) => load_config(args).and_then(cmd_train_encoder),
        Command::TrainScore(args) => load_config(args).and_then(cmd_train_score),
        Command::Translate(args) => load_config(args).and_then(cmd_translate),
        Command::Ablate(args) => load_config(args).and_then(cmd_ablate),
        Command::Report(args) => load_config(args).and_then(cmd_report),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Checkpoint(_) => 3,
        Error::InvalidArgument(_) | Error::Domain { .. } => 4,
        Error::Numerical(_) | Error::TrainingDiverged { .. } => 5,
        Error::Io(_) => 1,
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The two built-in translation tasks behind one sampling interface.
enum Task {
    Gmm(MixtureTask),
    Image(ImageTask),
}

impl Task {
    fn build(cfg: &RunConfig) -> Result<Task> {
        Ok(match cfg.task {
            TaskKind::GmmTranslate => Task::Gmm(MixtureTask::new(&cfg.mixture)?),
            TaskKind::ImageTranslate => {
                cfg.image.validate()?;
                Task::Image(cfg.image.clone())
            }
        })
    }

    fn dim(&self) -> usize {
        match self {
            Task::Gmm(t) => t.dim(),
            Task::Image(t) => t.dim(),
        }
    }

    fn view(&self) -> InvariantView {
        match self {
            Task::Gmm(t) => t.view.clone(),
            Task::Image(t) => t.view(),
        }
    }

    fn sample_source(&self, n: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<Array1<f64>> {
        match self {
            Task::Gmm(t) => t.sample_source(n, rng),
            Task::Image(t) => t.sample_source(n, rng),
        }
    }

    fn sample_target(&self, n: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<Array1<f64>> {
        match self {
            Task::Gmm(t) => t.sample_target(n, rng),
            Task::Image(t) => t.sample_target(n, rng),
        }
    }

    fn target_mixture(&self) -> Option<&GaussianMixture> {
        match self {
            Task::Gmm(t) => Some(&t.target),
            Task::Image(_) => None,
        }
    }

    fn image_peak(&self) -> Option<f64> {
        match self {
            Task::Gmm(_) => None,
            Task::Image(_) => Some(1.0),
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Checkpoint(CheckpointError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found; {hint}", path.display()),
        ))))
    }
}

fn load_encoder(cfg: &RunConfig, dim: usize) -> Result<EncoderParams> {
    let path = cfg.encoder_checkpoint();
    require_file(&path, "run train-encoder first or set paths.encoder")?;
    let params = EncoderParams::load(&path)?;
    if params.config().input_dim != dim {
        return Err(Error::InvalidArgument(format!(
            "encoder at {} expects {} coordinates but the task has {dim}",
            path.display(),
            params.config().input_dim
        )));
    }
    Ok(params)
}

fn build_score(
    cfg: &RunConfig,
    task: &Task,
    schedule: &NoiseSchedule,
) -> Result<Box<dyn ScoreFunction>> {
    match cfg.score_checkpoint() {
        None => match task {
            Task::Gmm(t) => Ok(Box::new(AnalyticMixtureScore {
                mixture: t.target.clone(),
                schedule: schedule.clone(),
            })),
            Task::Image(_) => unreachable!("image task always resolves a score path"),
        },
        Some(path) => {
            require_file(&path, "run train-score first or set paths.score")?;
            let net = NetScore::new(EncoderParams::load(&path)?, schedule.clone())?;
            if net.dim() != task.dim() {
                return Err(Error::InvalidArgument(format!(
                    "score net at {} models {} coordinates but the task has {}",
                    path.display(),
                    net.dim(),
                    task.dim()
                )));
            }
            Ok(Box::new(net))
        }
    }
}

fn write_loss_outputs(cfg: &RunConfig, stem: &str, title: &str, curve: &[f64]) -> Result<()> {
    write_loss_csv(&cfg.out_dir.join(format!("{stem}.csv")), curve)?;
    let series = [Series {
        label: "loss".into(),
        points: curve.iter().enumerate().map(|(i, &l)| (i as f64, l)).collect(),
    }];
    let svg = line_chart(title, "iteration", "loss", &series);
    write_atomic(&cfg.out_dir.join(format!("{stem}.svg")), svg.as_bytes())
}

fn cmd_train_encoder(cfg: RunConfig) -> Result<()> {
    let task = Task::build(&cfg)?;
    let schedule = cfg.schedule()?;
    let data_seed = phase_seed(cfg.seed, phase::DATA_TRAIN);
    let mut data = task.sample_source(cfg.data.train_samples, &mut child_rng(data_seed, 0));
    data.extend(task.sample_target(cfg.data.train_samples, &mut child_rng(data_seed, 1)));

    let params = EncoderParams::init(
        cfg.encoder_config(),
        &mut child_rng(phase_seed(cfg.seed, phase::ENCODER_INIT), 0),
    )?;
    let (trained, curve) = train_encoder(
        params,
        &data,
        &task.view(),
        &schedule,
        &cfg.train,
        &mut child_rng(phase_seed(cfg.seed, phase::ENCODER_TRAIN), 0),
    )?;

    let ckpt = cfg.encoder_checkpoint();
    ensure_parent(&ckpt)?;
    trained.save(&ckpt)?;
    write_loss_outputs(&cfg, "encoder_loss", "contrastive training loss", &curve)?;
    println!(
        "trained encoder on {} samples for {} iterations (final loss {:.6}); wrote {}",
        data.len(),
        curve.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn cmd_train_score(cfg: RunConfig) -> Result<()> {
    let task = Task::build(&cfg)?;
    let schedule = cfg.schedule()?;
    let data_seed = phase_seed(cfg.seed, phase::DATA_TRAIN);
    let data = task.sample_target(cfg.data.train_samples, &mut child_rng(data_seed, 1));

    let params = EncoderParams::init(
        NetScore::default_config(task.dim()),
        &mut child_rng(phase_seed(cfg.seed, phase::SCORE_INIT), 0),
    )?;
    let (net, curve) = train_score(
        params,
        &data,
        &schedule,
        &cfg.score_train,
        &mut child_rng(phase_seed(cfg.seed, phase::SCORE_TRAIN), 0),
    )?;

    let ckpt = cfg
        .score_checkpoint()
        .unwrap_or_else(|| cfg.out_dir.join("score.ckpt"));
    ensure_parent(&ckpt)?;
    net.params().save(&ckpt)?;
    write_loss_outputs(&cfg, "score_loss", "denoising training loss", &curve)?;
    println!(
        "trained score net on {} target samples for {} iterations (final loss {:.6}); wrote {}",
        data.len(),
        curve.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

struct EvalData {
    sources: Vec<Array1<f64>>,
    target_samples: Vec<Array1<f64>>,
    view: InvariantView,
}

fn eval_data(cfg: &RunConfig, task: &Task) -> EvalData {
    let seed = phase_seed(cfg.seed, phase::DATA_EVAL);
    EvalData {
        sources: task.sample_source(cfg.data.eval_samples, &mut child_rng(seed, 0)),
        target_samples: task.sample_target(cfg.data.target_samples, &mut child_rng(seed, 1)),
        view: task.view(),
    }
}

fn sweep_context<'a>(
    cfg: &'a RunConfig,
    task: &'a Task,
    data: &'a EvalData,
    score: &'a dyn ScoreFunction,
    encoder: Option<&'a EncoderParams>,
    schedule: &'a NoiseSchedule,
) -> SweepContext<'a> {
    SweepContext {
        task: cfg.task.name(),
        sources: &data.sources,
        score,
        encoder,
        schedule,
        view: &data.view,
        target: task.target_mixture(),
        target_samples: &data.target_samples,
        image_peak: task.image_peak(),
        steps: cfg.guidance.steps,
        seed: cfg.seed,
    }
}

fn cmd_translate(cfg: RunConfig) -> Result<()> {
    let task = Task::build(&cfg)?;
    let schedule = cfg.schedule()?;
    let data = eval_data(&cfg, &task);
    let score = build_score(&cfg, &task, &schedule)?;
    let encoder = if cfg.guidance.lambda > 0.0 {
        Some(load_encoder(&cfg, task.dim())?)
    } else {
        None
    };
    let ctx = sweep_context(&cfg, &task, &data, &*score, encoder.as_ref(), &schedule);
    let cell = evaluate_cell(&ctx, cfg.guidance.lambda, cfg.guidance.initial_time, cfg.guidance.similarity)?;

    write_translations_csv(&cfg.out_dir.join("translations.csv"), &cell.results)?;
    write_trace_csv(&cfg.out_dir.join("trace.csv"), &cell.results)?;
    write_metrics_csv(&cfg.out_dir.join("metrics.csv"), std::slice::from_ref(&cell.row))?;
    println!(
        "translated {} items (lambda {}, initial time {}, {}): l2 {:.4}, invariant_l2 {:.4}; wrote {}",
        cell.row.n,
        cell.row.lambda,
        cell.row.initial_time,
        cell.row.similarity,
        cell.row.l2,
        cell.row.invariant_l2,
        cfg.out_dir.join("metrics.csv").display()
    );
    Ok(())
}

/// Ablation cells for one seed, in deterministic emission order.
fn sweep_rows(cfg: &RunConfig, ctx: &SweepContext) -> Result<Vec<MetricsRow>> {
    match cfg.ablate.mode {
        AblateMode::Grid => ablation_sweep(
            ctx,
            &cfg.ablate.lambdas,
            &cfg.ablate.initial_times,
            &cfg.ablate.similarities,
        ),
        AblateMode::PerSimilarity => {
            let p = cfg.guidance.initial_time;
            let mut rows = Vec::new();
            for (sim, lambdas) in [
                (Similarity::Cosine, &cfg.ablate.cosine_lambdas),
                (Similarity::NegL2, &cfg.ablate.neg_l2_lambdas),
            ] {
                for &lambda in lambdas {
                    rows.push(evaluate_cell(ctx, lambda, p, sim)?.row);
                }
            }
            Ok(rows)
        }
    }
}

fn cmd_ablate(cfg: RunConfig) -> Result<()> {
    let task = Task::build(&cfg)?;
    let schedule = cfg.schedule()?;
    let score = build_score(&cfg, &task, &schedule)?;
    let needs_encoder = match cfg.ablate.mode {
        AblateMode::Grid => cfg.ablate.lambdas.iter().any(|&l| l > 0.0),
        AblateMode::PerSimilarity => cfg
            .ablate
            .cosine_lambdas
            .iter()
            .chain(&cfg.ablate.neg_l2_lambdas)
            .any(|&l| l > 0.0),
    };
    let encoder = if needs_encoder {
        Some(load_encoder(&cfg, task.dim())?)
    } else {
        None
    };

    let mut seeds = vec![cfg.seed];
    for &s in &cfg.ablate.extra_seeds {
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    let mut rows = Vec::new();
    for seed in seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        let data = eval_data(&seed_cfg, &task);
        let ctx = sweep_context(&seed_cfg, &task, &data, &*score, encoder.as_ref(), &schedule);
        rows.extend(sweep_rows(&seed_cfg, &ctx)?);
    }

    let path = cfg.out_dir.join("metrics.csv");
    write_metrics_csv(&path, &rows)?;
    println!("swept {} cells; wrote {}", rows.len(), path.display());
    Ok(())
}

/// One faithfulness series per (task, lambda, similarity) group, points
/// ordered by initial time.
fn faithfulness_series(report: &[ReportRow]) -> Vec<Series> {
    let mut keys: Vec<(String, f64, String)> = Vec::new();
    for r in report {
        let key = (r.task.clone(), r.lambda, r.similarity.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    keys.into_iter()
        .map(|(task, lambda, sim)| {
            let mut points: Vec<(f64, f64)> = report
                .iter()
                .filter(|r| r.task == task && r.lambda == lambda && r.similarity == sim)
                .map(|r| (r.initial_time, r.l2.0))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: format!("{task} lambda={lambda} {sim}"),
                points,
            }
        })
        .collect()
}

fn cmd_report(cfg: RunConfig) -> Result<()> {
    let metrics_path = cfg.out_dir.join("metrics.csv");
    if !metrics_path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "{} not found; run translate or ablate first",
                metrics_path.display()
            ),
        )));
    }
    let rows = read_metrics_csv(&metrics_path)?;
    let report = aggregate_report(&rows);
    let report_path = cfg.out_dir.join("report.csv");
    write_report_csv(&report_path, &report)?;

    let series = faithfulness_series(&report);
    let chart_path = cfg.out_dir.join("faithfulness.svg");
    let svg = line_chart(
        "translation faithfulness",
        "initial time",
        "mean l2 to source",
        &series,
    );
    write_atomic(&chart_path, svg.as_bytes())?;
    println!(
        "aggregated {} metric rows into {} cells; wrote {} and {}",
        rows.len(),
        report.len(),
        report_path.display(),
        chart_path.display()
    );
    Ok(())
}
