//! Neural planning on top of a trained [`MpnetModel`]: the bidirectional
//! neural planner, lazy states contraction, neural and hybrid replanning,
//! the full MPNetPath pipeline and neural samplers for RRT*.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::cspace::{Config, Path, RobotModel, Workspace};
use crate::error::Result;
use crate::models::{LatentCode, MpnetModel};
use crate::smp::{rrt_star, PlanningProblem, RrtParams, SampleContext, Sampler, UniformSampler};

/// Steering resolutions for global connection attempts, replanning and
/// final validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Steps {
    pub coarse: f64,
    pub medium: f64,
    pub fine: f64,
}

impl Default for Steps {
    fn default() -> Self {
        Self {
            coarse: 0.8,
            medium: 0.2,
            fine: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Iteration budget of one bidirectional planning call.
    pub n: usize,
    /// Neural replanning rounds.
    pub n_r: usize,
    /// Neural draws before a sampler falls back to uniform sampling.
    pub n_smp: usize,
    pub steps: Steps,
    /// Allow one hybrid replanning round with the classical oracle.
    pub plan_oracle: bool,
    pub oracle_budget: usize,
    pub oracle_eta: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n: 80,
            n_r: 12,
            n_smp: 300,
            steps: Steps::default(),
            plan_oracle: true,
            oracle_budget: 10_000,
            oracle_eta: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStats {
    pub pnet_calls: usize,
    pub oracle_called: bool,
    pub replanning_rounds: usize,
    /// The first bidirectional pass already gave a feasible path.
    pub connected_without_replanning: bool,
}

/// Bidirectional neural planner: grows one path from each end, always
/// extending the path whose turn it is towards the other one, and returns
/// as soon as the two ends can be joined with a straight segment at `step`.
#[allow(clippy::too_many_arguments)]
pub fn bnp(
    model: &MpnetModel,
    start: &Config,
    goal: &Config,
    z: &LatentCode,
    ws: &Workspace,
    budget: usize,
    step: f64,
    stats: &mut PlanStats,
    rng: &mut dyn RngCore,
) -> Result<Option<Path>> {
    let robot = &model.robot;
    if robot.steer_to(start, goal, ws, step) {
        return Ok(Some(Path::new(vec![start.clone(), goal.clone()])));
    }
    let mut a = vec![start.clone()];
    let mut b = vec![goal.clone()];
    // true while `a` is the path rooted at the goal
    let mut swapped = false;
    for _ in 0..budget {
        let next = model.predict_next(z, a.last().unwrap(), b.last().unwrap(), rng)?;
        stats.pnet_calls += 1;
        if !robot.collides(&next, ws) {
            a.push(next);
            if robot.steer_to(a.last().unwrap(), b.last().unwrap(), ws, step) {
                let (from_start, from_goal) = if swapped { (b, a) } else { (a, b) };
                let mut states = from_start;
                states.extend(from_goal.into_iter().rev());
                return Ok(Some(Path::new(states)));
            }
        }
        std::mem::swap(&mut a, &mut b);
        swapped = !swapped;
    }
    Ok(None)
}

/// Lazy states contraction: from each kept state jump to the farthest later
/// state reachable by a straight segment. Segments that cannot be
/// shortcut are kept as they are.
pub fn lsc(sigma: &Path, robot: &RobotModel, ws: &Workspace, step: f64) -> Path {
    let s = &sigma.states;
    if s.len() <= 2 {
        return sigma.clone();
    }
    let mut out = vec![s[0].clone()];
    let mut i = 0;
    while i + 1 < s.len() {
        let j = ((i + 2)..s.len())
            .rev()
            .find(|&j| robot.steer_to(&s[i], &s[j], ws, step))
            .unwrap_or(i + 1);
        out.push(s[j].clone());
        i = j;
    }
    Path::new(out)
}

/// Repairs every segment of `sigma` that fails at the fine step by planning
/// between its two ends, with the neural planner or with RRT*.
pub fn replan(
    model: &MpnetModel,
    sigma: &Path,
    z: &LatentCode,
    problem: &PlanningProblem,
    cfg: &PlanConfig,
    plan_oracle: bool,
    stats: &mut PlanStats,
    rng: &mut dyn RngCore,
) -> Result<Option<Path>> {
    let robot = &problem.robot;
    let ws = &*problem.ws;
    let s = &sigma.states;
    let Some(first) = s.first() else {
        return Ok(None);
    };
    let mut out = vec![first.clone()];
    for w in s.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if robot.steer_to(a, b, ws, cfg.steps.fine) {
            out.push(b.clone());
            continue;
        }
        let sub = if plan_oracle {
            stats.oracle_called = true;
            oracle_connect(problem, a, b, cfg, rng)
        } else {
            bnp(model, a, b, z, ws, cfg.n, cfg.steps.medium, stats, rng)?
        };
        match sub {
            Some(p) => out.extend(p.states.into_iter().skip(1)),
            None => return Ok(None),
        }
    }
    Ok(Some(Path::new(out)))
}

fn oracle_connect(
    problem: &PlanningProblem,
    a: &Config,
    b: &Config,
    cfg: &PlanConfig,
    rng: &mut dyn RngCore,
) -> Option<Path> {
    let sub = problem.with_endpoints(a.clone(), b.clone());
    let params = RrtParams {
        max_iters: cfg.oracle_budget,
        eta: cfg.oracle_eta,
        step: cfg.steps.fine,
        stop_on_first: true,
        cost_target: None,
    };
    rrt_star(&sub, &mut UniformSampler::new(&sub), &params, rng).path
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub path: Option<Path>,
    pub stats: PlanStats,
}

/// Full neural planning pipeline: bidirectional planning, contraction,
/// up to `n_r` neural replanning rounds and, when enabled, one hybrid
/// round with the oracle. Returned paths are feasible at the fine step.
pub fn mpnet_path(
    model: &MpnetModel,
    problem: &PlanningProblem,
    cfg: &PlanConfig,
    rng: &mut dyn RngCore,
) -> Result<PlanOutcome> {
    let robot = &problem.robot;
    let ws = &*problem.ws;
    let fine = cfg.steps.fine;
    let mut stats = PlanStats::default();
    let z = model.encode(&problem.cloud)?;
    let accept = |p: &Path| robot.path_feasible(p, ws, fine);

    let initial = bnp(
        model,
        &problem.start,
        &problem.goal,
        &z,
        ws,
        cfg.n,
        cfg.steps.coarse,
        &mut stats,
        rng,
    )?;
    let mut sigma =
        initial.unwrap_or_else(|| Path::new(vec![problem.start.clone(), problem.goal.clone()]));
    sigma = lsc(&sigma, robot, ws, fine);
    if accept(&sigma) {
        stats.connected_without_replanning = true;
        return Ok(PlanOutcome {
            path: Some(sigma),
            stats,
        });
    }
    for _ in 0..cfg.n_r {
        stats.replanning_rounds += 1;
        if let Some(p) = replan(model, &sigma, &z, problem, cfg, false, &mut stats, rng)? {
            sigma = lsc(&p, robot, ws, fine);
            if accept(&sigma) {
                return Ok(PlanOutcome {
                    path: Some(sigma),
                    stats,
                });
            }
        }
    }
    if cfg.plan_oracle {
        if let Some(p) = replan(model, &sigma, &z, problem, cfg, true, &mut stats, rng)? {
            sigma = lsc(&p, robot, ws, fine);
            if accept(&sigma) {
                return Ok(PlanOutcome {
                    path: Some(sigma),
                    stats,
                });
            }
        }
    }
    Ok(PlanOutcome { path: None, stats })
}

/// One line of planner output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub problem_id: String,
    pub planner: String,
    pub success: bool,
    pub cost: Option<f64>,
    pub states: Option<Path>,
    pub pnet_calls: usize,
    pub oracle_called: bool,
    pub wall_ms: f64,
    pub seed: u64,
}

/// Neural sampler for RRT*: a chain of one-step predictions from the start
/// towards the goal, restarted whenever it reaches the goal region, for the
/// first `n_smp` draws; uniform sampling afterwards.
pub struct MpnetSampler<'a> {
    model: &'a MpnetModel,
    z: LatentCode,
    start: Config,
    goal: Config,
    c_rand: Config,
    n_smp: usize,
    pub uniform: UniformSampler,
    pub draws: usize,
    pub resets: usize,
    pub pnet_calls: usize,
}

impl<'a> MpnetSampler<'a> {
    pub fn new(model: &'a MpnetModel, problem: &PlanningProblem, cfg: &PlanConfig) -> Result<Self> {
        Ok(Self {
            model,
            z: model.encode(&problem.cloud)?,
            start: problem.start.clone(),
            goal: problem.goal.clone(),
            c_rand: problem.start.clone(),
            n_smp: cfg.n_smp,
            uniform: UniformSampler::new(problem),
            draws: 0,
            resets: 0,
            pnet_calls: 0,
        })
    }

    pub fn in_neural_phase(&self) -> bool {
        self.draws < self.n_smp
    }
}

impl Sampler for MpnetSampler<'_> {
    fn sample(&mut self, ctx: &SampleContext, rng: &mut dyn RngCore) -> Config {
        if !self.in_neural_phase() {
            return self.uniform.sample(ctx, rng);
        }
        self.draws += 1;
        self.pnet_calls += 1;
        let robot = &self.model.robot;
        let next = self
            .model
            .predict_next(&self.z, &self.c_rand, &self.goal, rng)
            .expect("problem matches model");
        let next = robot.clamp_to_bounds(next, &self.uniform.ws);
        if robot.in_goal_region(&next, &self.goal) {
            self.c_rand = self.start.clone();
            self.resets += 1;
        } else {
            self.c_rand = next.clone();
        }
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chain {
    Start,
    Goal,
}

/// Two prediction chains, one from each end, each aimed at the other's
/// latest state; the chains alternate every draw. A chain restarts from its
/// origin when it reaches the other end's goal-radius ball.
pub struct BidirectionalMpnetSampler<'a> {
    model: &'a MpnetModel,
    z: LatentCode,
    start: Config,
    goal: Config,
    from_start: Config,
    from_goal: Config,
    next_chain: Chain,
    n_smp: usize,
    pub uniform: UniformSampler,
    pub draws: usize,
    pub pnet_calls: usize,
    /// Origin of every neural draw, in order.
    pub origins: Vec<Chain>,
    pub resets: Vec<Chain>,
}

impl<'a> BidirectionalMpnetSampler<'a> {
    pub fn new(model: &'a MpnetModel, problem: &PlanningProblem, cfg: &PlanConfig) -> Result<Self> {
        Ok(Self {
            model,
            z: model.encode(&problem.cloud)?,
            start: problem.start.clone(),
            goal: problem.goal.clone(),
            from_start: problem.start.clone(),
            from_goal: problem.goal.clone(),
            next_chain: Chain::Start,
            n_smp: cfg.n_smp,
            uniform: UniformSampler::new(problem),
            draws: 0,
            pnet_calls: 0,
            origins: vec![],
            resets: vec![],
        })
    }
}

impl Sampler for BidirectionalMpnetSampler<'_> {
    fn sample(&mut self, ctx: &SampleContext, rng: &mut dyn RngCore) -> Config {
        if self.draws >= self.n_smp {
            return self.uniform.sample(ctx, rng);
        }
        self.draws += 1;
        self.pnet_calls += 1;
        let robot = &self.model.robot;
        let chain = self.next_chain;
        let (cur, target, origin, end) = match chain {
            Chain::Start => (&self.from_start, &self.from_goal, &self.start, &self.goal),
            Chain::Goal => (&self.from_goal, &self.from_start, &self.goal, &self.start),
        };
        let next = self
            .model
            .predict_next(&self.z, cur, target, rng)
            .expect("problem matches model");
        let next = robot.clamp_to_bounds(next, &self.uniform.ws);
        let restart = robot.in_goal_region(&next, end);
        let new_state = if restart {
            origin.clone()
        } else {
            next.clone()
        };
        match chain {
            Chain::Start => self.from_start = new_state,
            Chain::Goal => self.from_goal = new_state,
        }
        if restart {
            self.resets.push(chain);
        }
        self.origins.push(chain);
        self.next_chain = match chain {
            Chain::Start => Chain::Goal,
            Chain::Goal => Chain::Start,
        };
        next
    }
}

/// Fraction of `samples` within `radius` of the polyline `path`.
pub fn fraction_near_path(samples: &[Config], path: &Path, radius: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let near = samples
        .iter()
        .filter(|s| distance_to_polyline(s, path) <= radius)
        .count();
    near as f64 / samples.len() as f64
}

/// Euclidean distance from `x` to the polyline through `path`'s states.
pub fn distance_to_polyline(x: &Config, path: &Path) -> f64 {
    let s = &path.states;
    if s.len() == 1 {
        return x.euclidean(&s[0]);
    }
    s.windows(2)
        .map(|w| {
            let (a, b) = (&w[0].coords, &w[1].coords);
            let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
            let len2: f64 = ab.iter().map(|v| v * v).sum();
            let t = if len2 == 0.0 {
                0.0
            } else {
                (x.coords
                    .iter()
                    .zip(a)
                    .zip(&ab)
                    .map(|((xi, ai), di)| (xi - ai) * di)
                    .sum::<f64>()
                    / len2)
                    .clamp(0.0, 1.0)
            };
            x.coords
                .iter()
                .zip(a)
                .zip(&ab)
                .map(|((xi, ai), di)| (xi - ai - t * di).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Draws `n` samples from `sampler` with an empty planning context.
pub fn draw_samples(sampler: &mut dyn Sampler, n: usize, rng: &mut dyn RngCore) -> Vec<Config> {
    let ctx = SampleContext::default();
    (0..n).map(|_| sampler.sample(&ctx, rng)).collect()
}

/// Random polyline through free space used by property tests.
pub fn random_free_walk<R: Rng>(
    robot: &RobotModel,
    ws: &Workspace,
    len: usize,
    step: f64,
    rng: &mut R,
) -> Result<Path> {
    let mut states = vec![robot.sample_free(ws, rng)?];
    while states.len() < len {
        let c = robot.sample_free(ws, rng)?;
        if robot.steer_to(states.last().unwrap(), &c, ws, step) {
            states.push(c);
        }
    }
    Ok(Path::new(states))
}
