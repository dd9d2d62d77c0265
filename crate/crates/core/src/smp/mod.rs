//! Sampling-based planners: RRT* with a pluggable sampler, and
//! Informed-RRT* built on top of it.

pub mod kdtree;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cspace::{Config, Path, RobotModel, Workspace};
use crate::error::{Error, Result};
use crate::models::PointCloud;
use kdtree::KdTree;

/// Trees up to this size use a linear nearest-neighbor scan.
pub const LINEAR_SCAN_LIMIT: usize = 2_000;

/// Default probability of sampling the goal center.
pub const GOAL_BIAS: f64 = 0.05;

/// Start, goal region and obstacles of one query.
#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub robot: RobotModel,
    pub ws: Arc<Workspace>,
    pub start: Config,
    /// Center of the goal region.
    pub goal: Config,
    pub cloud: Arc<PointCloud>,
}

impl PlanningProblem {
    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.robot.check_config(&self.start)?;
        self.robot.check_config(&self.goal)?;
        if self.robot.collides(&self.start, &self.ws) {
            return Err(Error::InvalidArgument(
                "start configuration is in collision".into(),
            ));
        }
        Ok(())
    }

    /// Same obstacles and robot, different endpoints.
    pub fn with_endpoints(&self, start: Config, goal: Config) -> Self {
        Self {
            start,
            goal,
            ..self.clone()
        }
    }
}

/// Search tree rooted at the start configuration.
#[derive(Debug, Clone)]
pub struct Tree {
    pub nodes: Vec<Config>,
    pub parent: Vec<Option<usize>>,
    pub cost: Vec<f64>,
    children: Vec<Vec<usize>>,
    kd: Option<KdTree>,
    split_axes: Vec<usize>,
}

#[derive(Serialize)]
struct TreeDump<'a> {
    nodes: &'a [Config],
    parents: &'a [Option<usize>],
    costs: &'a [f64],
}

impl Tree {
    pub fn new(root: Config, robot: &RobotModel) -> Self {
        Self {
            nodes: vec![root],
            parent: vec![None],
            cost: vec![0.0],
            children: vec![vec![]],
            kd: None,
            split_axes: (0..robot.workspace_dim()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add(&mut self, c: Config, parent: usize, cost: f64) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(c);
        self.parent.push(Some(parent));
        self.cost.push(cost);
        self.children.push(vec![]);
        self.children[parent].push(idx);
        match &mut self.kd {
            Some(kd) => kd.insert(idx, &self.nodes),
            None if self.nodes.len() > LINEAR_SCAN_LIMIT => {
                let mut kd = KdTree::new(self.split_axes.clone());
                for i in 0..self.nodes.len() {
                    kd.insert(i, &self.nodes);
                }
                self.kd = Some(kd);
            }
            None => {}
        }
        idx
    }

    /// Closest node; ties go to the lowest index.
    pub fn nearest(&self, q: &Config, robot: &RobotModel) -> usize {
        let dist = |a: &Config, b: &Config| robot.distance(a, b);
        if let Some(kd) = &self.kd {
            return kd
                .nearest(q, &self.nodes, &dist)
                .map(|(i, _)| i)
                .unwrap_or(0);
        }
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = robot.distance(q, n);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Indices of nodes within `radius` of `q`, ascending.
    pub fn near(&self, q: &Config, radius: f64, robot: &RobotModel) -> Vec<usize> {
        let dist = |a: &Config, b: &Config| robot.distance(a, b);
        let mut out = Vec::new();
        match &self.kd {
            Some(kd) => {
                kd.within(q, radius, &self.nodes, &dist, &mut out);
                out.sort_unstable();
            }
            None => {
                out.extend((0..self.nodes.len()).filter(|&i| dist(q, &self.nodes[i]) <= radius))
            }
        }
        out
    }

    /// Re-parents `child` and refreshes the costs of its whole subtree.
    pub fn set_parent(&mut self, child: usize, new_parent: usize, robot: &RobotModel) {
        if let Some(old) = self.parent[child] {
            self.children[old].retain(|&c| c != child);
        }
        self.parent[child] = Some(new_parent);
        self.children[new_parent].push(child);
        self.cost[child] =
            self.cost[new_parent] + robot.distance(&self.nodes[new_parent], &self.nodes[child]);
        let mut stack = self.children[child].clone();
        while let Some(n) = stack.pop() {
            let p = self.parent[n].unwrap();
            self.cost[n] = self.cost[p] + robot.distance(&self.nodes[p], &self.nodes[n]);
            stack.extend(self.children[n].iter().copied());
        }
    }

    /// States from the root to `idx`.
    pub fn path_to(&self, idx: usize) -> Path {
        let mut states = vec![self.nodes[idx].clone()];
        let mut cur = idx;
        while let Some(p) = self.parent[cur] {
            states.push(self.nodes[p].clone());
            cur = p;
        }
        states.reverse();
        Path::new(states)
    }

    /// Checks acyclicity and cost consistency by full recomputation.
    pub fn check_invariants(&self, robot: &RobotModel) -> std::result::Result<(), String> {
        if self.parent[0].is_some() || self.cost[0] != 0.0 {
            return Err("root must have no parent and zero cost".into());
        }
        for i in 1..self.nodes.len() {
            let mut cur = i;
            let mut total = 0.0;
            let mut hops = 0;
            while let Some(p) = self.parent[cur] {
                total += robot.distance(&self.nodes[p], &self.nodes[cur]);
                cur = p;
                hops += 1;
                if hops > self.nodes.len() {
                    return Err(format!("cycle through node {i}"));
                }
            }
            if cur != 0 {
                return Err(format!("node {i} is not connected to the root"));
            }
            if (total - self.cost[i]).abs() > 1e-9 * (1.0 + total) {
                return Err(format!("node {i}: stored cost {} != {total}", self.cost[i]));
            }
        }
        Ok(())
    }

    /// Debug dump `{nodes, parents, costs}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TreeDump {
            nodes: &self.nodes,
            parents: &self.parent,
            costs: &self.cost,
        })
        .expect("tree dump is plain data")
    }
}

/// Re-parents every neighbor that becomes cheaper through `new_idx` over a
/// collision-free segment. Returns the number of rewired nodes.
pub fn rewire(
    tree: &mut Tree,
    new_idx: usize,
    neighbors: &[usize],
    robot: &RobotModel,
    ws: &Workspace,
    step: f64,
) -> usize {
    let mut changed = 0;
    for &n in neighbors {
        if n == new_idx || tree.parent[new_idx] == Some(n) {
            continue;
        }
        let through = tree.cost[new_idx] + robot.distance(&tree.nodes[new_idx], &tree.nodes[n]);
        if through < tree.cost[n] - 1e-12
            && robot.steer_to(&tree.nodes[new_idx], &tree.nodes[n], ws, step)
        {
            tree.set_parent(n, new_idx, robot);
            changed += 1;
        }
    }
    changed
}

/// What the planner knows when it asks for a sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleContext {
    pub best_cost: Option<f64>,
}

/// Source of configurations for tree extension.
pub trait Sampler {
    fn sample(&mut self, ctx: &SampleContext, rng: &mut dyn RngCore) -> Config;
}

/// Uniform sampler over the workspace bounds with a goal bias.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    pub robot: RobotModel,
    pub ws: Arc<Workspace>,
    pub goal: Config,
    pub goal_bias: f64,
}

impl UniformSampler {
    pub fn new(problem: &PlanningProblem) -> Self {
        Self {
            robot: problem.robot.clone(),
            ws: Arc::clone(&problem.ws),
            goal: problem.goal.clone(),
            goal_bias: GOAL_BIAS,
        }
    }

    pub fn without_goal_bias(mut self) -> Self {
        self.goal_bias = 0.0;
        self
    }
}

impl Sampler for UniformSampler {
    fn sample(&mut self, _ctx: &SampleContext, rng: &mut dyn RngCore) -> Config {
        if self.goal_bias > 0.0 && rng.gen::<f64>() < self.goal_bias {
            return self.goal.clone();
        }
        self.robot.sample_uniform(&self.ws, rng)
    }
}

/// Uniform sample from the prolate hyperspheroid with foci `start` and
/// `goal` and transverse diameter `c_best`.
pub fn informed_sample<R: Rng + ?Sized>(
    start: &Config,
    goal: &Config,
    c_best: f64,
    rng: &mut R,
) -> Result<Config> {
    let d = start.dim();
    let c_min = start.euclidean(goal);
    if c_best < c_min {
        return Err(Error::InvalidArgument(format!(
            "best cost {c_best} is below the focal distance {c_min}"
        )));
    }
    let centre: Vec<f64> = start
        .coords
        .iter()
        .zip(&goal.coords)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let basis = if c_min > 0.0 {
        let axis: Vec<f64> = start
            .coords
            .iter()
            .zip(&goal.coords)
            .map(|(a, b)| (b - a) / c_min)
            .collect();
        orthonormal_basis(&axis)
    } else {
        (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    };
    let r_major = 0.5 * c_best;
    let r_minor = 0.5 * (c_best * c_best - c_min * c_min).max(0.0).sqrt();
    let ball = unit_ball_sample(d, rng);
    let mut x = centre;
    for (k, b) in basis.iter().enumerate() {
        let r = if k == 0 { r_major } else { r_minor };
        for (xi, bi) in x.iter_mut().zip(b) {
            *xi += r * ball[k] * bi;
        }
    }
    Ok(Config::new(x))
}

fn unit_ball_sample<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let radius = rng.gen::<f64>().powf(1.0 / d as f64);
    g.into_iter().map(|v| v / norm * radius).collect()
}

/// Orthonormal basis whose first vector is `axis` (unit length).
fn orthonormal_basis(axis: &[f64]) -> Vec<Vec<f64>> {
    let d = axis.len();
    let mut basis = vec![axis.to_vec()];
    for e in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v: Vec<f64> = (0..d).map(|j| if j == e { 1.0 } else { 0.0 }).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Uniform sampling until a solution exists, then sampling from the
/// ellipsoid of states that could still improve it.
#[derive(Debug, Clone)]
pub struct InformedSampler {
    pub uniform: UniformSampler,
    pub start: Config,
    /// Samples drawn from the ellipsoid, with the bound used for each.
    pub informed_draws: Vec<(Config, f64)>,
    pub record: bool,
}

impl InformedSampler {
    pub fn new(problem: &PlanningProblem) -> Self {
        Self {
            uniform: UniformSampler::new(problem),
            start: problem.start.clone(),
            informed_draws: vec![],
            record: false,
        }
    }
}

impl Sampler for InformedSampler {
    fn sample(&mut self, ctx: &SampleContext, rng: &mut dyn RngCore) -> Config {
        let Some(best) = ctx.best_cost else {
            return self.uniform.sample(ctx, rng);
        };
        if self.uniform.robot.is_se2() {
            // the ellipsoid is defined for the Euclidean metric only
            return self.uniform.sample(ctx, rng);
        }
        let goal = &self.uniform.goal;
        let best = best.max(self.start.euclidean(goal));
        let mut x =
            informed_sample(&self.start, goal, best, rng).expect("bound clamped above c_min");
        for _ in 0..100 {
            if self.uniform.ws.bounds.contains_point(&x.coords) {
                break;
            }
            x = informed_sample(&self.start, goal, best, rng).expect("bound clamped above c_min");
        }
        if self.record {
            self.informed_draws.push((x.clone(), best));
        }
        x
    }
}

/// Budget and stopping rules of one RRT* run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtParams {
    pub max_iters: usize,
    /// Maximum extension length.
    pub eta: f64,
    /// Collision-checking resolution.
    pub step: f64,
    /// Return as soon as any solution exists.
    pub stop_on_first: bool,
    /// Return once the best cost is at or below this value.
    pub cost_target: Option<f64>,
}

impl Default for RrtParams {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            eta: 2.0,
            step: 0.05,
            stop_on_first: false,
            cost_target: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RrtStats {
    pub iters: usize,
    pub nodes: usize,
    pub cost: Option<f64>,
    pub first_solution_iter: Option<usize>,
    /// `(iteration, best cost)` every time the best cost improves.
    pub cost_history: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct RrtResult {
    pub path: Option<Path>,
    pub tree: Tree,
    pub stats: RrtStats,
}

/// `gamma` of the shrinking connection radius for the problem's free space.
pub fn rrt_gamma(robot: &RobotModel, ws: &Workspace) -> f64 {
    let d = robot.dim() as f64;
    let mut free = ws.free_volume();
    if robot.is_se2() {
        free *= 2.0 * PI;
    }
    let unit_ball = PI.powf(d / 2.0) / gamma_fn(d / 2.0 + 1.0);
    2.0 * (1.0 + 1.0 / d).powf(1.0 / d) * (free / unit_ball).powf(1.0 / d)
}

// Gamma function at integer and half-integer points.
fn gamma_fn(x: f64) -> f64 {
    if (x - 0.5).abs() < 1e-12 {
        PI.sqrt()
    } else if (x - 1.0).abs() < 1e-12 {
        1.0
    } else {
        (x - 1.0) * gamma_fn(x - 1.0)
    }
}

/// RRT* with choose-parent and rewiring. A node inside the goal region
/// that can steer straight to the goal center is a solution endpoint; the
/// returned path ends at the goal center.
pub fn rrt_star(
    problem: &PlanningProblem,
    sampler: &mut dyn Sampler,
    params: &RrtParams,
    rng: &mut dyn RngCore,
) -> RrtResult {
    let robot = &problem.robot;
    let ws = &*problem.ws;
    let goal = &problem.goal;
    let mut tree = Tree::new(problem.start.clone(), robot);
    let mut stats = RrtStats::default();
    if robot.collides(&problem.start, ws) {
        return RrtResult {
            path: None,
            tree,
            stats,
        };
    }
    let d = robot.dim() as f64;
    let gamma = rrt_gamma(robot, ws);
    let mut goal_nodes: Vec<usize> = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    if robot.in_goal_region(&problem.start, goal)
        && robot.steer_to(&problem.start, goal, ws, params.step)
    {
        goal_nodes.push(0);
        best = Some((0, robot.distance(&problem.start, goal)));
        stats.first_solution_iter = Some(0);
        stats.cost_history.push((0, best.unwrap().1));
    }

    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for iter in 1..=params.max_iters {
        stats.iters = iter;
        if let Some((_, c)) = best {
            if params.stop_on_first || params.cost_target.is_some_and(|t| c <= t) {
                break;
            }
        }
        let ctx = SampleContext {
            best_cost: best.map(|b| b.1),
        };
        let x_rand = sampler.sample(&ctx, rng);
        let nearest = tree.nearest(&x_rand, robot);
        let dist = robot.distance(&tree.nodes[nearest], &x_rand);
        if dist == 0.0 {
            continue;
        }
        let x_new = if dist <= params.eta {
            x_rand
        } else {
            robot
                .interpolate(&tree.nodes[nearest], &x_rand, params.eta / dist)
                .expect("sampler returns configs of the tree's dimension")
        };
        if robot.collides(&x_new, ws) {
            continue;
        }
        let n = (tree.len() + 1) as f64;
        let radius = (gamma * (n.ln() / n).powf(1.0 / d)).min(params.eta);
        let mut neighbors = tree.near(&x_new, radius, robot);
        if !neighbors.contains(&nearest) {
            neighbors.push(nearest);
            neighbors.sort_unstable();
        }
        // cheapest collision-free parent, lowest index on ties
        candidates.clear();
        candidates.extend(
            neighbors
                .iter()
                .map(|&i| (tree.cost[i] + robot.distance(&tree.nodes[i], &x_new), i)),
        );
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some(&(cost, parent)) = candidates
            .iter()
            .find(|(_, i)| robot.steer_to(&tree.nodes[*i], &x_new, ws, params.step))
        else {
            continue;
        };
        let new_idx = tree.add(x_new, parent, cost);
        rewire(&mut tree, new_idx, &neighbors, robot, ws, params.step);

        let x_new = &tree.nodes[new_idx];
        if robot.in_goal_region(x_new, goal) && robot.steer_to(x_new, goal, ws, params.step) {
            goal_nodes.push(new_idx);
        }
        if !goal_nodes.is_empty() {
            let cur = goal_nodes
                .iter()
                .map(|&i| (i, tree.cost[i] + robot.distance(&tree.nodes[i], goal)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            if best.is_none_or(|b| cur.1 < b.1) {
                stats.first_solution_iter.get_or_insert(iter);
                stats.cost_history.push((iter, cur.1));
            }
            best = Some(cur);
        }
    }
    stats.nodes = tree.len();
    let path = best.map(|(i, c)| {
        stats.cost = Some(c);
        let mut p = tree.path_to(i);
        if robot.distance(&tree.nodes[i], goal) > 0.0 {
            p.states.push(goal.clone());
        }
        p
    });
    RrtResult { path, tree, stats }
}

/// RRT* whose sampler switches to the informed ellipsoid once a solution
/// has been found.
pub fn informed_rrt_star(
    problem: &PlanningProblem,
    params: &RrtParams,
    rng: &mut dyn RngCore,
) -> RrtResult {
    let mut sampler = InformedSampler::new(problem);
    rrt_star(problem, &mut sampler, params, rng)
}
