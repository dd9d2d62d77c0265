//! Benchmark harness: runs a planner over a dataset, aggregates success,
//! time and cost, and writes CSV / JSON reports.

use std::fmt;
use std::io::Write;
use std::path::Path as FsPath;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cspace::Path;
use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::models::MpnetModel;
use crate::planner::{
    bnp, lsc, mpnet_path, BidirectionalMpnetSampler, MpnetSampler, PlanConfig, PlanRecord,
};
use crate::smp::{rrt_star, InformedSampler, PlanningProblem, RrtParams, Sampler, UniformSampler};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "NEUROPLAN_THREADS";
/// Tolerance of the cost-matched stopping rule.
pub const MATCH_TOLERANCE: f64 = 0.05;
const STREAM_BENCH: u64 = 11;

/// When a sampling-based planner stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    FirstSolution,
    /// Use the whole iteration budget.
    Budget,
    /// Stop once the cost is within `MATCH_TOLERANCE` of the reference
    /// cost for the problem (the budget still caps the run).
    MatchReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerSpec {
    MpnetPath {
        oracle: bool,
    },
    /// Bidirectional neural planning and contraction only.
    Bnp,
    RrtStar {
        max_iters: usize,
        stop: StopRule,
    },
    InformedRrtStar {
        max_iters: usize,
        stop: StopRule,
    },
    MpnetSmp {
        max_iters: usize,
        stop: StopRule,
        bidirectional: bool,
    },
}

impl PlannerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerSpec::MpnetPath { oracle: false } => "mpnet_np",
            PlannerSpec::MpnetPath { oracle: true } => "mpnet_hp",
            PlannerSpec::Bnp => "bnp",
            PlannerSpec::RrtStar { .. } => "rrt_star",
            PlannerSpec::InformedRrtStar { .. } => "informed_rrt_star",
            PlannerSpec::MpnetSmp {
                bidirectional: false,
                ..
            } => "mpnet_smp",
            PlannerSpec::MpnetSmp {
                bidirectional: true,
                ..
            } => "mpnet_smp_bi",
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(
            self,
            PlannerSpec::MpnetPath { .. } | PlannerSpec::Bnp | PlannerSpec::MpnetSmp { .. }
        )
    }

    /// Replaces the budget and stopping rule of sampling-based planners.
    pub fn with_budget(self, iters: usize, rule: StopRule) -> Self {
        match self {
            PlannerSpec::RrtStar { .. } => PlannerSpec::RrtStar {
                max_iters: iters,
                stop: rule,
            },
            PlannerSpec::InformedRrtStar { .. } => PlannerSpec::InformedRrtStar {
                max_iters: iters,
                stop: rule,
            },
            PlannerSpec::MpnetSmp { bidirectional, .. } => PlannerSpec::MpnetSmp {
                max_iters: iters,
                stop: rule,
                bidirectional,
            },
            other => other,
        }
    }
}

impl fmt::Display for PlannerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerSpec {
    type Err = Error;

    /// Planner names with default budgets (20 000 iterations, full budget).
    fn from_str(s: &str) -> Result<Self> {
        let (iters, stop) = (20_000, StopRule::Budget);
        Ok(match s {
            "mpnet_np" => PlannerSpec::MpnetPath { oracle: false },
            "mpnet_hp" => PlannerSpec::MpnetPath { oracle: true },
            "bnp" => PlannerSpec::Bnp,
            "rrt_star" => PlannerSpec::RrtStar {
                max_iters: iters,
                stop,
            },
            "informed_rrt_star" => PlannerSpec::InformedRrtStar {
                max_iters: iters,
                stop,
            },
            "mpnet_smp" => PlannerSpec::MpnetSmp {
                max_iters: iters,
                stop,
                bidirectional: false,
            },
            "mpnet_smp_bi" => PlannerSpec::MpnetSmp {
                max_iters: iters,
                stop,
                bidirectional: true,
            },
            other => return Err(Error::InvalidArgument(format!("unknown planner `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub trials: usize,
    pub seed: u64,
    pub plan: PlanConfig,
    /// With timing off every `wall_ms` is zero, so reports depend only on
    /// the seed and the inputs.
    pub measure_time: bool,
    /// Worker count; falls back to `NEUROPLAN_THREADS`, then to rayon's
    /// default.
    pub threads: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            trials: 1,
            seed: 0,
            plan: PlanConfig::default(),
            measure_time: true,
            threads: None,
        }
    }
}

/// Outcome of one planner call.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub path: Option<Path>,
    pub pnet_calls: usize,
    pub oracle_called: bool,
    pub iters: Option<usize>,
}

fn rrt_params(max_iters: usize, stop: StopRule, reference: Option<f64>, step: f64) -> RrtParams {
    RrtParams {
        max_iters,
        step,
        stop_on_first: stop == StopRule::FirstSolution,
        cost_target: match stop {
            StopRule::MatchReference => reference.map(|c| (1.0 + MATCH_TOLERANCE) * c),
            _ => None,
        },
        ..Default::default()
    }
}

/// Runs one planner on one problem.
pub fn run_planner(
    spec: &PlannerSpec,
    model: Option<&MpnetModel>,
    problem: &PlanningProblem,
    plan: &PlanConfig,
    reference: Option<f64>,
    rng: &mut dyn RngCore,
) -> Result<RunOutcome> {
    let need_model = || {
        model.ok_or_else(|| Error::InvalidArgument(format!("planner {spec} needs a trained model")))
    };
    let fine = plan.steps.fine;
    let sampled = |sampler: &mut dyn Sampler, max_iters, stop, rng: &mut dyn RngCore| {
        let res = rrt_star(
            problem,
            sampler,
            &rrt_params(max_iters, stop, reference, fine),
            rng,
        );
        (res.path, res.stats.iters)
    };
    Ok(match *spec {
        PlannerSpec::MpnetPath { oracle } => {
            let cfg = PlanConfig {
                plan_oracle: oracle,
                ..*plan
            };
            let out = mpnet_path(need_model()?, problem, &cfg, rng)?;
            RunOutcome {
                path: out.path,
                pnet_calls: out.stats.pnet_calls,
                oracle_called: out.stats.oracle_called,
                iters: None,
            }
        }
        PlannerSpec::Bnp => {
            let model = need_model()?;
            let z = model.encode(&problem.cloud)?;
            let mut stats = Default::default();
            let raw = bnp(
                model,
                &problem.start,
                &problem.goal,
                &z,
                &problem.ws,
                plan.n,
                plan.steps.coarse,
                &mut stats,
                rng,
            )?;
            let path = raw
                .map(|p| lsc(&p, &problem.robot, &problem.ws, fine))
                .filter(|p| problem.robot.path_feasible(p, &problem.ws, fine));
            RunOutcome {
                path,
                pnet_calls: stats.pnet_calls,
                oracle_called: false,
                iters: None,
            }
        }
        PlannerSpec::RrtStar { max_iters, stop } => {
            let (path, iters) = sampled(&mut UniformSampler::new(problem), max_iters, stop, rng);
            RunOutcome {
                path,
                pnet_calls: 0,
                oracle_called: false,
                iters: Some(iters),
            }
        }
        PlannerSpec::InformedRrtStar { max_iters, stop } => {
            let (path, iters) = sampled(&mut InformedSampler::new(problem), max_iters, stop, rng);
            RunOutcome {
                path,
                pnet_calls: 0,
                oracle_called: false,
                iters: Some(iters),
            }
        }
        PlannerSpec::MpnetSmp {
            max_iters,
            stop,
            bidirectional,
        } => {
            let model = need_model()?;
            let (path, iters, calls) = if bidirectional {
                let mut s = BidirectionalMpnetSampler::new(model, problem, plan)?;
                let (p, i) = sampled(&mut s, max_iters, stop, rng);
                (p, i, s.pnet_calls)
            } else {
                let mut s = MpnetSampler::new(model, problem, plan)?;
                let (p, i) = sampled(&mut s, max_iters, stop, rng);
                (p, i, s.pnet_calls)
            };
            RunOutcome {
                path,
                pnet_calls: calls,
                oracle_called: false,
                iters: Some(iters),
            }
        }
    })
}

/// Aggregates of one (planner, env, split) cell plus its per-run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub planner: String,
    pub env: String,
    pub split: String,
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over all attempts.
    pub t_mean: f64,
    pub t_std: f64,
    /// Over successful attempts only; `None` without successes.
    pub c_mean: Option<f64>,
    pub c_std: Option<f64>,
    pub records: Vec<PlanRecord>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() < 2 {
        0.0
    } else {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    (mean, var.sqrt())
}

impl Metrics {
    pub fn from_records(planner: &str, env: &str, split: &str, records: Vec<PlanRecord>) -> Self {
        let attempts = records.len();
        let successes = records.iter().filter(|r| r.success).count();
        let times: Vec<f64> = records.iter().map(|r| r.wall_ms).collect();
        let costs: Vec<f64> = records
            .iter()
            .filter(|r| r.success)
            .filter_map(|r| r.cost)
            .collect();
        let (t_mean, t_std) = mean_std(&times);
        let (c_mean, c_std) = if costs.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&costs);
            (Some(m), Some(s))
        };
        Self {
            planner: planner.into(),
            env: env.into(),
            split: split.into(),
            attempts,
            successes,
            success_rate: if attempts == 0 {
                0.0
            } else {
                successes as f64 / attempts as f64
            },
            t_mean,
            t_std,
            c_mean,
            c_std,
            records,
        }
    }

    pub fn row(&self) -> ReportRow {
        ReportRow {
            planner: self.planner.clone(),
            env: self.env.clone(),
            split: self.split.clone(),
            success: self.success_rate,
            t_mean: self.t_mean,
            t_std: self.t_std,
            c_mean: self.c_mean,
            c_std: self.c_std,
            n: self.attempts,
        }
    }

    /// Solution cost per problem index of trial 0, `None` where it failed.
    pub fn costs_by_problem(&self) -> Vec<Option<f64>> {
        self.records
            .iter()
            .filter(|r| r.problem_id.ends_with("/0"))
            .map(|r| r.cost)
            .collect()
    }
}

pub fn thread_count(requested: Option<usize>) -> Option<usize> {
    requested
        .or_else(|| {
            std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .filter(|&n| n > 0)
}

/// Runs `spec` on every problem of `ds`, `trials` times each. Run `k` of
/// problem `i` uses its own rng seeded from `(seed, i, k)`, so results do
/// not depend on the worker count. `references` feeds the cost-matched
/// stopping rule.
pub fn run_bench(
    ds: &Dataset,
    spec: &PlannerSpec,
    model: Option<&MpnetModel>,
    references: Option<&[Option<f64>]>,
    opts: &BenchOptions,
) -> Result<Metrics> {
    if spec.needs_model() && model.is_none() {
        return Err(Error::InvalidArgument(format!(
            "planner {spec} needs a trained model"
        )));
    }
    if let Some(r) = references {
        if r.len() != ds.len() {
            return Err(Error::DimensionMismatch {
                expected: ds.len(),
                got: r.len(),
            });
        }
    }
    let jobs: Vec<(usize, usize)> = (0..ds.len())
        .flat_map(|i| (0..opts.trials).map(move |k| (i, k)))
        .collect();
    let run = |&(i, k): &(usize, usize)| -> Result<PlanRecord> {
        let problem = ds.problem(i);
        let seed = derive_seed(opts.seed, STREAM_BENCH, (i * opts.trials + k) as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = references.and_then(|r| r[i]);
        let t0 = Instant::now();
        let out = run_planner(spec, model, &problem, &opts.plan, reference, &mut rng)?;
        let wall_ms = if opts.measure_time {
            t0.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        Ok(PlanRecord {
            problem_id: format!("{}/{i}/{k}", ds.split),
            planner: spec.name().into(),
            success: out.path.is_some(),
            cost: out.path.as_ref().map(|p| problem.robot.path_cost(p)),
            states: out.path,
            pnet_calls: out.pnet_calls,
            oracle_called: out.oracle_called,
            wall_ms,
            seed,
        })
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(opts.threads) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let records: Vec<PlanRecord> =
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?;
    Ok(Metrics::from_records(
        spec.name(),
        ds.env.name(),
        ds.split.name(),
        records,
    ))
}

/// One report row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub planner: String,
    pub env: String,
    pub split: String,
    pub success: f64,
    pub t_mean: f64,
    pub t_std: f64,
    pub c_mean: Option<f64>,
    pub c_std: Option<f64>,
    pub n: usize,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "planner", "env", "split", "success", "t_mean", "t_std", "c_mean", "c_std", "n",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format `{other}`"
            ))),
        }
    }
}

/// One row per metrics cell in the given order.
pub fn emit_report<W: Write>(metrics: &[Metrics], format: ReportFormat, out: W) -> Result<()> {
    let rows: Vec<ReportRow> = metrics.iter().map(Metrics::row).collect();
    write_rows(&rows, format, out)
}

pub fn write_rows<W: Write>(rows: &[ReportRow], format: ReportFormat, mut out: W) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(out);
            w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
            for r in rows {
                w.serialize(r).map_err(csv_err)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, rows)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_report_json(path: &FsPath) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn read_report_csv(path: &FsPath) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Per-run records as JSON lines.
pub fn write_records<W: Write>(metrics: &Metrics, mut out: W) -> Result<()> {
    for r in &metrics.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dataset, EnvKind, Split};

    fn dataset() -> Dataset {
        gen_dataset(EnvKind::Simple2d, Split::Seen, &[0, 1], 3, 1_500, 4).unwrap()
    }

    fn record(success: bool, cost: Option<f64>, wall_ms: f64) -> PlanRecord {
        PlanRecord {
            problem_id: "seen/0/0".into(),
            planner: "x".into(),
            success,
            cost,
            states: None,
            pnet_calls: 0,
            oracle_called: false,
            wall_ms,
            seed: 0,
        }
    }

    #[test]
    fn aggregates_ignore_failed_costs() {
        let m = Metrics::from_records(
            "p",
            "e",
            "s",
            vec![
                record(true, Some(10.0), 1.0),
                record(false, None, 3.0),
                record(true, Some(14.0), 2.0),
            ],
        );
        assert_eq!(m.successes, 2);
        assert!((m.success_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.c_mean, Some(12.0));
        assert!((m.c_std.unwrap() - 8f64.sqrt()).abs() < 1e-12);
        assert!((m.t_mean - 2.0).abs() < 1e-12);
        let fail = Metrics::from_records("p", "e", "s", vec![record(false, None, 1.0); 4]);
        assert_eq!(fail.success_rate, 0.0);
        assert_eq!(fail.c_mean, None);
    }

    #[test]
    fn missing_model_is_an_error() {
        let ds = dataset();
        let err = run_bench(
            &ds,
            &PlannerSpec::MpnetPath { oracle: true },
            None,
            None,
            &BenchOptions::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn larger_budget_never_solves_less() {
        let ds = dataset();
        let opts = BenchOptions {
            measure_time: false,
            ..Default::default()
        };
        let small = run_bench(
            &ds,
            &PlannerSpec::RrtStar {
                max_iters: 30,
                stop: StopRule::FirstSolution,
            },
            None,
            None,
            &opts,
        )
        .unwrap();
        let full = run_bench(
            &ds,
            &PlannerSpec::RrtStar {
                max_iters: 5_000,
                stop: StopRule::FirstSolution,
            },
            None,
            None,
            &opts,
        )
        .unwrap();
        assert_eq!(full.success_rate, 1.0);
        assert!(full.success_rate >= small.success_rate);
        for r in &full.records {
            let i: usize = r.problem_id.split('/').nth(1).unwrap().parse().unwrap();
            let p = ds.problem(i);
            assert!(p
                .robot
                .path_feasible(r.states.as_ref().unwrap(), &p.ws, 0.05));
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let ds = dataset();
        let spec = PlannerSpec::RrtStar {
            max_iters: 800,
            stop: StopRule::Budget,
        };
        let one = BenchOptions {
            measure_time: false,
            threads: Some(1),
            trials: 2,
            ..Default::default()
        };
        let three = BenchOptions {
            threads: Some(3),
            ..one.clone()
        };
        let a = run_bench(&ds, &spec, None, None, &one).unwrap();
        let b = run_bench(&ds, &spec, None, None, &three).unwrap();
        assert_eq!(a, b);
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        emit_report(&[a], ReportFormat::Csv, &mut csv_a).unwrap();
        emit_report(&[b], ReportFormat::Csv, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn matched_stopping_rule_stops_early() {
        let ds = dataset();
        let opts = BenchOptions {
            measure_time: false,
            ..Default::default()
        };
        let full = run_bench(
            &ds,
            &PlannerSpec::RrtStar {
                max_iters: 4_000,
                stop: StopRule::Budget,
            },
            None,
            None,
            &opts,
        )
        .unwrap();
        // a loose reference is met long before the cap
        let refs: Vec<Option<f64>> = full
            .costs_by_problem()
            .iter()
            .map(|c| c.map(|c| 2.0 * c))
            .collect();
        let matched = run_bench(
            &ds,
            &PlannerSpec::RrtStar {
                max_iters: 4_000,
                stop: StopRule::MatchReference,
            },
            None,
            Some(&refs),
            &opts,
        )
        .unwrap();
        for (r, reference) in matched.records.iter().zip(&refs) {
            assert!(r.cost.unwrap() <= 1.05 * reference.unwrap());
        }
        let nodes = |m: &Metrics| {
            m.records
                .iter()
                .map(|r| r.states.as_ref().unwrap().len())
                .sum::<usize>()
        };
        assert!(nodes(&matched) > 0 && nodes(&full) > 0);
    }

    #[test]
    fn report_shapes() {
        let mut out = Vec::new();
        emit_report(&[], ReportFormat::Csv, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "planner,env,split,success,t_mean,t_std,c_mean,c_std,n\n"
        );

        let mut cells = Vec::new();
        for planner in ["a", "b"] {
            for env in ["simple2d", "complex2d"] {
                cells.push(Metrics::from_records(
                    planner,
                    env,
                    "seen",
                    vec![record(true, Some(3.0), 1.0)],
                ));
            }
        }
        cells.push(Metrics::from_records(
            "c",
            "simple2d",
            "seen",
            vec![record(false, None, 1.0)],
        ));
        let mut out = Vec::new();
        emit_report(&cells[..4], ReportFormat::Csv, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 5);

        let dir = tempfile::tempdir().unwrap();
        for (fmt, name) in [(ReportFormat::Json, "r.json"), (ReportFormat::Csv, "r.csv")] {
            let path = dir.path().join(name);
            emit_report(&cells, fmt, std::fs::File::create(&path).unwrap()).unwrap();
            let back = if fmt == ReportFormat::Json {
                read_report_json(&path)
            } else {
                read_report_csv(&path)
            }
            .unwrap();
            let rows: Vec<ReportRow> = cells.iter().map(Metrics::row).collect();
            assert_eq!(back, rows);
        }
    }

    #[test]
    fn planner_names_parse() {
        for name in [
            "mpnet_np",
            "mpnet_hp",
            "bnp",
            "rrt_star",
            "informed_rrt_star",
            "mpnet_smp",
            "mpnet_smp_bi",
        ] {
            assert_eq!(name.parse::<PlannerSpec>().unwrap().name(), name);
        }
        assert!("bit_star".parse::<PlannerSpec>().is_err());
    }
}
