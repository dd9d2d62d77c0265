use std::sync::Arc;

use neuroplan::data::{gen_point_cloud, gen_workspace, EnvKind};
use neuroplan::models::{Architecture, MpnetModel};
use neuroplan::planner::{
    draw_samples, lsc, mpnet_path, random_free_walk, BidirectionalMpnetSampler, Chain,
    MpnetSampler, PlanConfig,
};
use neuroplan::smp::{PlanningProblem, UniformSampler};
use neuroplan::{RobotModel, Workspace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FINE: f64 = 0.05;

fn small_model(ws: &Workspace, cloud_len: usize, seed: u64) -> MpnetModel {
    let arch = Architecture {
        latent_dim: 4,
        enet_hidden: vec![16],
        pnet_hidden: vec![32, 32],
        ..Default::default()
    };
    MpnetModel::new(
        RobotModel::point2d(),
        &ws.bounds,
        cloud_len,
        arch,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn random_problem(ws_seed: u64, rng: &mut ChaCha8Rng) -> PlanningProblem {
    let ws = gen_workspace(EnvKind::Simple2d, ws_seed).unwrap();
    let cloud = Arc::new(gen_point_cloud(&ws, 200, ws_seed));
    let robot = RobotModel::point2d();
    let start = robot.sample_free(&ws, rng).unwrap();
    let goal = robot.sample_free(&ws, rng).unwrap();
    PlanningProblem {
        robot,
        ws: Arc::new(ws),
        start,
        goal,
        cloud,
    }
}

fn empty_problem() -> PlanningProblem {
    let ws = Workspace::empty(2, 20.0);
    PlanningProblem {
        robot: RobotModel::point2d(),
        cloud: Arc::new(gen_point_cloud(&ws, 200, 0)),
        ws: Arc::new(ws),
        start: [-10.0, -10.0].into(),
        goal: [10.0, 10.0].into(),
    }
}

/// Kolmogorov-Smirnov statistic of `xs` against U(lo, hi).
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn lsc_never_increases_cost_or_breaks_feasibility() {
    let robot = RobotModel::point2d();
    for seed in 0..100u64 {
        let ws = gen_workspace(EnvKind::Simple2d, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = 2 + (seed as usize % 9);
        let sigma = random_free_walk(&robot, &ws, len, FINE, &mut rng).unwrap();
        assert!(robot.path_feasible(&sigma, &ws, FINE));
        let out = lsc(&sigma, &robot, &ws, FINE);
        assert!(robot.path_feasible(&out, &ws, FINE), "seed {seed}");
        assert!(
            robot.path_cost(&out) <= robot.path_cost(&sigma) + 1e-9,
            "seed {seed}"
        );
        assert_eq!(out.first(), sigma.first());
        assert_eq!(out.end(), sigma.end());
        // subsequence
        let mut it = sigma.states.iter();
        assert!(out.states.iter().all(|s| it.any(|t| t == s)), "seed {seed}");
    }
}

#[test]
fn lsc_collapses_collinear_path() {
    let robot = RobotModel::point2d();
    let ws = Workspace::empty(2, 20.0);
    let sigma = neuroplan::Path::new((0..5).map(|i| [i as f64, i as f64].into()).collect());
    let out = lsc(&sigma, &robot, &ws, FINE);
    assert_eq!(out.states, vec![[0.0, 0.0].into(), [4.0, 4.0].into()]);
}

#[test]
fn draws_after_neural_budget_are_uniform() {
    let p = empty_problem();
    let model = small_model(&p.ws, p.cloud.points.len(), 1);
    let cfg = PlanConfig::default();
    let mut s = MpnetSampler::new(&model, &p, &cfg).unwrap();
    s.uniform = UniformSampler::new(&p).without_goal_bias();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let _ = draw_samples(&mut s, cfg.n_smp, &mut rng);
    assert!(!s.in_neural_phase());
    let n = 10_000;
    let draws = draw_samples(&mut s, n, &mut rng);
    let critical = 1.628 / (n as f64).sqrt();
    for axis in 0..2 {
        let xs: Vec<f64> = draws.iter().map(|c| c.coords[axis]).collect();
        let d = ks_uniform(xs, -20.0, 20.0);
        assert!(d < critical, "axis {axis}: D = {d}, critical {critical}");
    }
}

#[test]
fn zero_neural_budget_matches_uniform_sampler() {
    let p = empty_problem();
    let model = small_model(&p.ws, p.cloud.points.len(), 1);
    let cfg = PlanConfig {
        n_smp: 0,
        ..Default::default()
    };
    let mut uni = UniformSampler::new(&p);
    let expected = draw_samples(&mut uni, 500, &mut ChaCha8Rng::seed_from_u64(3));
    let mut s = MpnetSampler::new(&model, &p, &cfg).unwrap();
    assert_eq!(
        draw_samples(&mut s, 500, &mut ChaCha8Rng::seed_from_u64(3)),
        expected
    );
    assert_eq!(s.pnet_calls, 0);
    let mut b = BidirectionalMpnetSampler::new(&model, &p, &cfg).unwrap();
    assert_eq!(
        draw_samples(&mut b, 500, &mut ChaCha8Rng::seed_from_u64(3)),
        expected
    );
    assert_eq!(b.pnet_calls, 0);
}

#[test]
fn bidirectional_chains_alternate() {
    let p = empty_problem();
    let model = small_model(&p.ws, p.cloud.points.len(), 4);
    let cfg = PlanConfig::default();
    let mut b = BidirectionalMpnetSampler::new(&model, &p, &cfg).unwrap();
    let _ = draw_samples(&mut b, 400, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(b.origins.len(), cfg.n_smp);
    for (i, o) in b.origins.iter().enumerate() {
        let want = if i % 2 == 0 {
            Chain::Start
        } else {
            Chain::Goal
        };
        assert_eq!(*o, want, "draw {i}");
    }
}

#[test]
fn untrained_sampler_resets_in_goal_region() {
    let p = empty_problem();
    let model = small_model(&p.ws, p.cloud.points.len(), 6);
    let cfg = PlanConfig::default();
    let mut s = MpnetSampler::new(&model, &p, &cfg).unwrap();
    let draws = draw_samples(&mut s, cfg.n_smp, &mut ChaCha8Rng::seed_from_u64(7));
    let in_goal = draws
        .iter()
        .filter(|c| p.robot.in_goal_region(c, &p.goal))
        .count();
    assert_eq!(s.resets, in_goal);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mpnet_path_outputs_are_feasible(ws_seed in 0u64..1_000, seed in 0u64..1_000, oracle in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(ws_seed, &mut rng);
        let model = small_model(&p.ws, p.cloud.points.len(), seed);
        let cfg = PlanConfig { plan_oracle: oracle, oracle_budget: 3_000, ..Default::default() };
        let out = mpnet_path(&model, &p, &cfg, &mut rng).unwrap();
        if let Some(path) = &out.path {
            prop_assert!(p.robot.path_feasible(path, &p.ws, FINE));
            prop_assert_eq!(path.first(), Some(&p.start));
            prop_assert!(p.robot.in_goal_region(path.end().unwrap(), &p.goal));
        }
        if !oracle {
            prop_assert!(!out.stats.oracle_called);
        }
    }
}
