use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use neuroplan::bench::{
    emit_report, read_report_csv, read_report_json, run_bench, run_planner, write_records,
    write_rows, BenchOptions, Metrics, PlannerSpec, ReportFormat, StopRule,
};
use neuroplan::data::{gen_corpus, load_dataset, save_dataset, CorpusSpec, Dataset, EnvKind};
use neuroplan::learn::{ContinualConfig, ContinualLearner, SelectionPolicy};
use neuroplan::models::{Architecture, MpnetModel, PointCloud, TrainConfig, TrainMode};
use neuroplan::planner::{PlanConfig, PlanRecord};
use neuroplan::smp::PlanningProblem;
use neuroplan::{Config, RobotModel, Workspace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const SPLITS: [&str; 3] = ["train", "seen", "unseen"];

#[derive(Parser)]
#[command(name = "neuroplan", version, about = "Neural motion planning toolkit")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset generation and inspection.
    #[command(subcommand)]
    Data(DataCmd),
    /// Model training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Solve one problem and print its result record.
    Plan(PlanArgs),
    /// Run planners over a dataset split and write a report.
    Bench(BenchArgs),
    /// Merge report files into one table.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum DataCmd {
    /// Generate train, seen and unseen splits.
    Gen(GenArgs),
    /// Export one problem of a split as a problem file.
    Problem(ProblemArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "simple2d")]
    env: EnvKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    train_workspaces: usize,
    #[arg(long, default_value_t = 100)]
    demos_per_workspace: usize,
    #[arg(long, default_value_t = 10)]
    seen_workspaces: usize,
    #[arg(long, default_value_t = 50)]
    seen_problems: usize,
    #[arg(long, default_value_t = 5)]
    unseen_workspaces: usize,
    #[arg(long, default_value_t = 100)]
    unseen_problems: usize,
    /// RRT* iterations per expert demonstration.
    #[arg(long, default_value_t = 10_000)]
    expert_budget: usize,
}

#[derive(Args)]
struct ProblemArgs {
    /// Corpus directory written by `data gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "seen", value_parser = SPLITS)]
    split: String,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Batch training over the whole training split.
    Offline(OfflineArgs),
    /// One pass over the demonstrations with episodic memory and rehearsal.
    Continual(ContinualArgs),
    /// Continual learning that asks for a demonstration only on failure.
    Active(ContinualArgs),
}

#[derive(Args, Clone)]
struct ArchArgs {
    #[arg(long, default_value_t = 28)]
    latent: usize,
    #[arg(long, value_delimiter = ',', default_value = "256")]
    enet_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "512,512,256,128")]
    pnet_hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    EndToEnd,
    Separate,
}

#[derive(Args)]
struct OfflineArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, value_enum, default_value = "end-to-end")]
    mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Loss curve as JSON.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct ContinualArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    /// Use at most this many demonstrations of the stream.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    memory: usize,
    #[arg(long, default_value_t = 100)]
    replay_period: usize,
    #[arg(long, default_value_t = 100)]
    replay_batch: usize,
    #[arg(long, default_value_t = 50)]
    n_c: usize,
    #[arg(long, default_value = "reservoir")]
    policy: SelectionPolicy,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Training log as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct PlanArgs {
    /// Problem file (see `data problem`).
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Allow the classical oracle during replanning.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 10_000)]
    oracle_budget: usize,
    /// Write the record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StopArg {
    First,
    Budget,
    Match,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "seen", value_parser = SPLITS)]
    split: String,
    /// Planner names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    planner: Vec<PlannerSpec>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Iteration cap of sampling-based planners.
    #[arg(long, default_value_t = 20_000)]
    iters: usize,
    /// Stopping rule of sampling-based planners.
    #[arg(long, value_enum, default_value = "budget")]
    stop: StopArg,
    /// Cost reference for `--stop match`: `expert` or an earlier planner.
    #[arg(long, default_value = "expert")]
    reference: String,
    #[arg(long)]
    threads: Option<usize>,
    /// Record zero wall times, making reports reproducible byte for byte.
    #[arg(long)]
    no_time: bool,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run records as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files (`.csv` or `.json`).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Self-contained planning problem.
#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    robot: RobotModel,
    workspace: Workspace,
    cloud: PointCloud,
    start: Config,
    goal: Config,
}

enum Outcome {
    Done,
    PlanFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::PlanFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let seed = cli.seed;
    match cli.command {
        Command::Data(DataCmd::Gen(a)) => data_gen(a, seed),
        Command::Data(DataCmd::Problem(a)) => data_problem(a),
        Command::Train(TrainCmd::Offline(a)) => train_offline(a, seed),
        Command::Train(TrainCmd::Continual(a)) => train_continual(a, seed, false),
        Command::Train(TrainCmd::Active(a)) => train_continual(a, seed, true),
        Command::Plan(a) => plan(a, seed),
        Command::Bench(a) => bench(a, seed),
        Command::Report(a) => report(a),
    }
}

fn output(path: Option<&FsPath>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_split(dir: &FsPath, split: &str) -> Result<Dataset> {
    let path = dir.join(split);
    load_dataset(&path).with_context(|| format!("loading {}", path.display()))
}

fn data_gen(a: GenArgs, seed: u64) -> Result<Outcome> {
    let spec = CorpusSpec {
        train_workspaces: a.train_workspaces,
        demos_per_workspace: a.demos_per_workspace,
        seen_workspaces: a.seen_workspaces,
        seen_problems: a.seen_problems,
        unseen_workspaces: a.unseen_workspaces,
        unseen_problems: a.unseen_problems,
        expert_budget: a.expert_budget,
    };
    let t0 = Instant::now();
    let corpus = gen_corpus(a.env, &spec, seed)?;
    for ds in [&corpus.train, &corpus.seen, &corpus.unseen] {
        save_dataset(ds, &a.out.join(ds.split.name()))?;
        eprintln!(
            "{}: {} workspaces, {} paths",
            ds.split,
            ds.workspaces.len(),
            ds.len()
        );
    }
    eprintln!("generated in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(Outcome::Done)
}

fn data_problem(a: ProblemArgs) -> Result<Outcome> {
    let ds = load_split(&a.data, &a.split)?;
    if a.index >= ds.len() {
        bail!("index {} out of range ({} problems)", a.index, ds.len());
    }
    let p = ds.problem(a.index);
    let file = ProblemFile {
        robot: p.robot,
        workspace: (*p.ws).clone(),
        cloud: (*p.cloud).clone(),
        start: p.start,
        goal: p.goal,
    };
    let mut out = output(Some(&a.out))?;
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.flush()?;
    Ok(Outcome::Done)
}

fn new_model(ds: &Dataset, arch: &ArchArgs, rng: &mut ChaCha8Rng) -> Result<MpnetModel> {
    let first = ds.workspaces.first().context("dataset has no workspaces")?;
    let arch = Architecture {
        latent_dim: arch.latent,
        enet_hidden: arch.enet_hidden.clone(),
        pnet_hidden: arch.pnet_hidden.clone(),
        pnet_dropout: arch.dropout,
        ..Default::default()
    };
    Ok(MpnetModel::new(
        ds.env.robot(),
        &first.ws.bounds,
        first.cloud.points.len(),
        arch,
        rng,
    )?)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn train_offline(a: OfflineArgs, seed: u64) -> Result<Outcome> {
    let ds = load_split(&a.data, "train")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = new_model(&ds, &a.arch, &mut rng)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        ..Default::default()
    };
    let mode = match a.mode {
        ModeArg::EndToEnd => TrainMode::EndToEnd,
        ModeArg::Separate => TrainMode::Separate,
    };
    let t0 = Instant::now();
    let rep =
        neuroplan::models::train_offline(&mut model, &ds.training_demos(), mode, &cfg, &mut rng)?;
    eprintln!(
        "trained {} epochs in {:.1}s, final loss {:.5}",
        a.epochs,
        t0.elapsed().as_secs_f64(),
        rep.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    model.save(&a.out, seed, unix_now())?;
    if let Some(p) = &a.curve {
        let mut out = output(Some(p))?;
        serde_json::to_writer(&mut out, &rep)?;
        out.flush()?;
    }
    Ok(Outcome::Done)
}

fn train_continual(a: ContinualArgs, seed: u64, active: bool) -> Result<Outcome> {
    let mut ds = load_split(&a.data, "train")?.interleaved();
    if let Some(n) = a.limit {
        ds = ds.truncated(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = new_model(&ds, &a.arch, &mut rng)?;
    let cfg = ContinualConfig {
        memory_capacity: a.memory,
        replay_period: a.replay_period,
        replay_batch: a.replay_batch,
        n_c: a.n_c,
        policy: a.policy,
        lr: a.lr,
        ..Default::default()
    };
    let mut learner = ContinualLearner::new(model, cfg)?;
    let t0 = Instant::now();
    if active {
        // the expert's answers are the stored demonstrations
        let problems = ds.problems();
        let paths: Vec<neuroplan::Path> = ds.demos.iter().map(|d| d.path.clone()).collect();
        let mut lookup = |p: &PlanningProblem, _: &mut dyn rand::RngCore| {
            let i = problems.iter().position(|q| {
                Arc::ptr_eq(&q.ws, &p.ws) && q.start == p.start && q.goal == p.goal
            })?;
            Some(paths[i].clone())
        };
        let rep = learner.active_continual_loop(
            &problems,
            &mut lookup,
            &PlanConfig::default(),
            &mut rng,
        )?;
        eprintln!(
            "{} problems, {} expert demonstrations, {} solved by the model",
            problems.len(),
            rep.demo_count,
            rep.model_solved
        );
    } else {
        learner.continual_loop(&ds.training_demos(), &mut rng)?;
        eprintln!("{} demonstrations", ds.len());
    }
    eprintln!("trained in {:.1}s", t0.elapsed().as_secs_f64());
    learner.model.save(&a.out, seed, unix_now())?;
    if let Some(p) = &a.log {
        learner.write_log(p)?;
    }
    Ok(Outcome::Done)
}

fn plan(a: PlanArgs, seed: u64) -> Result<Outcome> {
    let text = std::fs::read_to_string(&a.problem)
        .with_context(|| format!("reading {}", a.problem.display()))?;
    let file: ProblemFile = serde_json::from_str(&text).context("parsing problem file")?;
    let model = MpnetModel::load(&a.model)
        .with_context(|| format!("loading model {}", a.model.display()))?;
    if model.robot != file.robot {
        bail!("problem robot does not match the model's robot");
    }
    let problem = PlanningProblem {
        robot: file.robot,
        ws: Arc::new(file.workspace),
        start: file.start,
        goal: file.goal,
        cloud: Arc::new(file.cloud),
    };
    problem.validate()?;
    let cfg = PlanConfig {
        plan_oracle: a.oracle,
        oracle_budget: a.oracle_budget,
        ..Default::default()
    };
    let spec = PlannerSpec::MpnetPath { oracle: a.oracle };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Instant::now();
    let out = run_planner(&spec, Some(&model), &problem, &cfg, None, &mut rng)?;
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let record = PlanRecord {
        problem_id: a.problem.display().to_string(),
        planner: spec.name().into(),
        success: out.path.is_some(),
        cost: out.path.as_ref().map(|p| problem.robot.path_cost(p)),
        states: out.path,
        pnet_calls: out.pnet_calls,
        oracle_called: out.oracle_called,
        wall_ms,
        seed,
    };
    let mut w = output(a.out.as_deref())?;
    serde_json::to_writer(&mut w, &record)?;
    writeln!(w)?;
    w.flush()?;
    Ok(if record.success {
        Outcome::Done
    } else {
        Outcome::PlanFailed
    })
}

fn bench(a: BenchArgs, seed: u64) -> Result<Outcome> {
    let ds = load_split(&a.data, &a.split)?;
    let model = match &a.model {
        Some(p) => {
            Some(MpnetModel::load(p).with_context(|| format!("loading model {}", p.display()))?)
        }
        None => None,
    };
    let stop = match a.stop {
        StopArg::First => StopRule::FirstSolution,
        StopArg::Budget => StopRule::Budget,
        StopArg::Match => StopRule::MatchReference,
    };
    let opts = BenchOptions {
        trials: a.trials,
        seed,
        measure_time: !a.no_time,
        threads: a.threads,
        ..Default::default()
    };
    let expert: Vec<Option<f64>> = ds.demos.iter().map(|d| Some(d.path.cost())).collect();
    let mut done: Vec<Metrics> = Vec::new();
    for spec in &a.planner {
        let spec = spec.with_budget(a.iters, stop);
        let sampling = matches!(
            spec,
            PlannerSpec::RrtStar { .. }
                | PlannerSpec::InformedRrtStar { .. }
                | PlannerSpec::MpnetSmp { .. }
        );
        let references = if sampling && stop == StopRule::MatchReference {
            if a.reference == "expert" {
                Some(expert.clone())
            } else {
                let m = done
                    .iter()
                    .find(|m| m.planner == a.reference)
                    .with_context(|| {
                        format!("reference planner `{}` must be listed earlier", a.reference)
                    })?;
                Some(m.costs_by_problem())
            }
        } else {
            None
        };
        let m = run_bench(&ds, &spec, model.as_ref(), references.as_deref(), &opts)?;
        eprintln!(
            "{} {}: success {:.3}, t_mean {:.2} ms",
            m.planner, m.split, m.success_rate, m.t_mean
        );
        done.push(m);
    }
    let mut w = output(a.out.as_deref())?;
    emit_report(&done, a.format, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.records {
        let mut w = output(Some(p))?;
        for m in &done {
            write_records(m, &mut w)?;
        }
        w.flush()?;
    }
    Ok(Outcome::Done)
}

fn report(a: ReportArgs) -> Result<Outcome> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let more = match p.extension().and_then(|e| e.to_str()) {
            Some("json") => read_report_json(p),
            Some("csv") => read_report_csv(p),
            _ => bail!("{}: expected a .csv or .json report", p.display()),
        }
        .with_context(|| format!("reading {}", p.display()))?;
        rows.extend(more);
    }
    let mut w = output(a.out.as_deref())?;
    write_rows(&rows, a.format, &mut w)?;
    w.flush()?;
    Ok(Outcome::Done)
}
