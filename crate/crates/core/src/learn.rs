//! Continual learning for the planning networks: episodic memory with
//! sample-selection policies, a rehearsal buffer, GEM gradient projection,
//! and the continual and active-continual training loops.

use std::io::Write;
use std::path::Path as FsPath;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::cspace::Path;
use crate::error::{Error, Result};
use crate::models::{one_step_samples, Demo, MpnetModel, TrainingSample};
use crate::neuralnet::{AdamState, Dropout, Gradient};
use crate::planner::{mpnet_path, PlanConfig};
use crate::smp::PlanningProblem;

/// Which samples an [`EpisodicMemory`] keeps once it is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Uniform sample of everything offered so far.
    Reservoir,
    /// Highest-loss samples.
    Surprise,
    /// Lowest-loss samples.
    Reward,
    /// Samples spread out in feature space.
    CoverageKnn,
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reservoir" => Ok(Self::Reservoir),
            "surprise" => Ok(Self::Surprise),
            "reward" => Ok(Self::Reward),
            "coverage_knn" | "coverage-knn" => Ok(Self::CoverageKnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown selection policy `{other}`"
            ))),
        }
    }
}

/// Bounded memory of past samples.
#[derive(Debug, Clone)]
pub struct EpisodicMemory<T> {
    pub capacity: usize,
    pub items: Vec<T>,
    /// Loss recorded for each resident when it was offered.
    pub losses: Vec<f64>,
    /// Feature-space key of each resident.
    pub keys: Vec<Vec<f64>>,
    /// Total number of samples offered.
    pub seen_count: usize,
    // nearest resident and its distance, maintained for coverage selection
    nn: Vec<(usize, f64)>,
}

impl<T> EpisodicMemory<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: vec![],
            losses: vec![],
            keys: vec![],
            seen_count: 0,
            nn: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    /// Reservoir sampling: keeps a uniform subset of the stream.
    pub fn reservoir_update<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) -> bool {
        self.select_update(item, 0.0, vec![], SelectionPolicy::Reservoir, rng)
    }

    /// Offers `item` under `policy`. Returns whether it was stored.
    pub fn select_update<R: Rng + ?Sized>(
        &mut self,
        item: T,
        loss: f64,
        key: Vec<f64>,
        policy: SelectionPolicy,
        rng: &mut R,
    ) -> bool {
        self.seen_count += 1;
        if self.capacity == 0 {
            return false;
        }
        if !self.is_full() {
            self.items.push(item);
            self.losses.push(loss);
            self.keys.push(key);
            if policy == SelectionPolicy::CoverageKnn {
                self.refresh_nn(self.items.len() - 1, None);
            }
            return true;
        }
        let slot = match policy {
            SelectionPolicy::Reservoir => {
                let j = rng.gen_range(0..self.seen_count);
                (j < self.capacity).then_some(j)
            }
            SelectionPolicy::Surprise => {
                let (i, &min) = first_extreme(&self.losses, |a, b| a < b);
                (loss > min).then_some(i)
            }
            SelectionPolicy::Reward => {
                let (i, &max) = first_extreme(&self.losses, |a, b| a > b);
                (loss < max).then_some(i)
            }
            SelectionPolicy::CoverageKnn => self.coverage_slot(&key),
        };
        let Some(slot) = slot else {
            return false;
        };
        self.items[slot] = item;
        self.losses[slot] = loss;
        self.keys[slot] = key;
        if policy == SelectionPolicy::CoverageKnn {
            self.refresh_nn(slot, Some(slot));
        }
        true
    }

    fn coverage_slot(&mut self, key: &[f64]) -> Option<usize> {
        if self.nn.len() != self.items.len() {
            self.rebuild_nn();
        }
        let d_new = self
            .keys
            .iter()
            .map(|k| key_distance(k, key))
            .fold(f64::INFINITY, f64::min);
        let mut dists: Vec<f64> = self.nn.iter().map(|p| p.1).collect();
        if d_new < median(&mut dists) {
            return None;
        }
        let (slot, _) = first_extreme(&self.nn.iter().map(|p| p.1).collect::<Vec<_>>(), |a, b| {
            a < b
        });
        Some(slot)
    }

    fn rebuild_nn(&mut self) {
        self.nn = vec![(usize::MAX, f64::INFINITY); self.items.len()];
        for i in 0..self.items.len() {
            self.nn[i] = self.nearest_resident(i);
        }
    }

    fn nearest_resident(&self, i: usize) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, k) in self.keys.iter().enumerate() {
            if j != i {
                let d = key_distance(&self.keys[i], k);
                if d < best.1 {
                    best = (j, d);
                }
            }
        }
        best
    }

    // `slot` holds a new key; `replaced` is set when it overwrote a resident
    fn refresh_nn(&mut self, slot: usize, replaced: Option<usize>) {
        if self.nn.len() + 1 == self.items.len() && replaced.is_none() {
            self.nn.push((usize::MAX, f64::INFINITY));
        } else if self.nn.len() != self.items.len() {
            self.rebuild_nn();
            return;
        }
        for i in 0..self.items.len() {
            if i == slot {
                continue;
            }
            if replaced.is_some() && self.nn[i].0 == slot {
                self.nn[i] = self.nearest_resident(i);
            } else {
                let d = key_distance(&self.keys[i], &self.keys[slot]);
                if d < self.nn[i].1 {
                    self.nn[i] = (slot, d);
                }
            }
        }
        self.nn[slot] = self.nearest_resident(slot);
    }
}

fn first_extreme(v: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, &f64) {
    let mut best = 0;
    for i in 1..v.len() {
        if better(v[i], v[best]) {
            best = i;
        }
    }
    (best, &v[best])
}

fn key_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Append-only rehearsal pool.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub items: Vec<TrainingSample>,
    pub replay_period: usize,
    pub batch_size: usize,
}

impl ReplayBuffer {
    pub fn new(replay_period: usize, batch_size: usize) -> Result<Self> {
        if replay_period == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument(
                "replay period and batch size must be at least 1".into(),
            ));
        }
        Ok(Self {
            items: vec![],
            replay_period,
            batch_size,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `batch_size` distinct residents chosen uniformly.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<TrainingSample> {
        let n = self.batch_size.min(self.items.len());
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

/// Normalized `(c_t, c_T, y)` features of a sample.
pub fn sample_key(model: &MpnetModel, s: &TrainingSample) -> Vec<f64> {
    let mut k = model.features(&s.current);
    k.extend(model.features(&s.goal));
    k.extend(model.features(&s.target));
    k
}

/// Mean loss gradient over the memory, dropout off.
pub fn memory_gradient(
    model: &MpnetModel,
    memory: &[TrainingSample],
    train_enet: bool,
) -> Result<Gradient> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    Ok(model.loss_and_gradient(memory, train_enet, Dropout::Off)?.1)
}

/// Closest gradient to `g` whose inner product with `g_m` is non-negative.
/// Rounding residue of the projection is pushed to the feasible side, so
/// projecting twice gives the same vector.
pub fn gem_project(g: &Gradient, g_m: &Gradient) -> Result<Gradient> {
    crate::error::check_dim(g.len(), g_m.len())?;
    let dot = g.dot(g_m);
    let gm2 = g_m.norm_sq();
    if dot >= 0.0 || gm2 == 0.0 {
        return Ok(g.clone());
    }
    let mut out = g.clone();
    out.axpy(-dot / gm2, g_m);
    let mut nudge = f64::EPSILON * (out.norm_sq() / gm2).sqrt();
    for _ in 0..64 {
        let r = out.dot(g_m);
        if r >= 0.0 {
            break;
        }
        out.axpy((-2.0 * r / gm2).max(nudge), g_m);
        nudge *= 2.0;
    }
    Ok(out)
}

/// Change in success rate on earlier data after further training.
pub fn backward_transfer(success_before: f64, success_after: f64) -> f64 {
    success_after - success_before
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub memory_capacity: usize,
    pub replay_period: usize,
    pub replay_batch: usize,
    /// Problems solved by the expert before the model is tried.
    pub n_c: usize,
    pub policy: SelectionPolicy,
    pub lr: f64,
    pub train_enet: bool,
    pub steps_per_demo: usize,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            memory_capacity: 10_000,
            replay_period: 100,
            replay_batch: 100,
            n_c: 50,
            policy: SelectionPolicy::Reservoir,
            lr: 1e-3,
            train_enet: true,
            steps_per_demo: 1,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: usize,
    pub expert_called: bool,
    pub demo_len: usize,
    pub loss: Option<f64>,
    pub mem_size: usize,
    pub buf_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub loss: f64,
    /// The memory constraint was active and the gradient was projected.
    pub projected: bool,
    /// `<g', g_M>` of the applied update, when a memory gradient existed.
    pub constraint_dot: Option<f64>,
}

/// Model plus all state carried along a training stream.
pub struct ContinualLearner {
    pub model: MpnetModel,
    pub adam: AdamState,
    pub memory: EpisodicMemory<TrainingSample>,
    pub buffer: ReplayBuffer,
    pub cfg: ContinualConfig,
    /// Stream position, counted from 1 once the first problem arrives.
    pub t: usize,
    pub log: Vec<LogRecord>,
}

impl ContinualLearner {
    pub fn new(model: MpnetModel, cfg: ContinualConfig) -> Result<Self> {
        let adam = AdamState::new(model.param_count(), cfg.lr);
        Ok(Self {
            memory: EpisodicMemory::new(cfg.memory_capacity),
            buffer: ReplayBuffer::new(cfg.replay_period, cfg.replay_batch)?,
            model,
            adam,
            cfg,
            t: 0,
            log: vec![],
        })
    }

    /// One GEM-constrained update on `samples` against the current memory.
    pub fn constrained_step(
        &mut self,
        samples: &[TrainingSample],
        rng: &mut dyn RngCore,
    ) -> Result<StepInfo> {
        let g_m = if self.memory.is_empty() {
            None
        } else {
            Some(memory_gradient(
                &self.model,
                &self.memory.items,
                self.cfg.train_enet,
            )?)
        };
        let (loss, g) =
            self.model
                .loss_and_gradient(samples, self.cfg.train_enet, Dropout::Sampled(rng))?;
        let (g, projected, constraint_dot) = match &g_m {
            Some(g_m) => {
                let p = gem_project(&g, g_m)?;
                let dot = p.dot(g_m);
                (p, g.dot(g_m) < 0.0, Some(dot))
            }
            None => (g, false, None),
        };
        self.model.apply_gradient(&g, &mut self.adam)?;
        Ok(StepInfo {
            loss,
            projected,
            constraint_dot,
        })
    }

    /// Learns from one demonstration: constrained step(s) against the
    /// memory as it was before this demo, then stores the demo's samples.
    pub fn continual_step(&mut self, demo: &Demo, rng: &mut dyn RngCore) -> Result<StepInfo> {
        let samples = one_step_samples(&demo.path, &demo.cloud);
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "demonstration has a single state".into(),
            ));
        }
        let mut info = self.constrained_step(&samples, rng)?;
        for _ in 1..self.cfg.steps_per_demo {
            info = self.constrained_step(&samples, rng)?;
        }
        self.store(samples, rng)?;
        Ok(info)
    }

    fn store(&mut self, samples: Vec<TrainingSample>, rng: &mut dyn RngCore) -> Result<()> {
        let policy = self.cfg.policy;
        let needs_loss = matches!(policy, SelectionPolicy::Surprise | SelectionPolicy::Reward);
        for s in samples {
            let loss = if needs_loss {
                self.model.loss(std::slice::from_ref(&s))?
            } else {
                0.0
            };
            let key = if policy == SelectionPolicy::CoverageKnn {
                sample_key(&self.model, &s)
            } else {
                vec![]
            };
            self.buffer.items.push(s.clone());
            self.memory.select_update(s, loss, key, policy, rng);
        }
        Ok(())
    }

    /// Rehearsal on a uniform batch from the buffer, every `replay_period`
    /// stream steps once the buffer holds more than one batch. Returns the
    /// batch loss when a step was taken.
    pub fn rehearse(&mut self, rng: &mut dyn RngCore) -> Result<Option<f64>> {
        if self.t == 0
            || !self.t.is_multiple_of(self.buffer.replay_period)
            || self.buffer.len() <= self.buffer.batch_size
        {
            return Ok(None);
        }
        let batch = self.buffer.sample_batch(rng);
        Ok(Some(self.constrained_step(&batch, rng)?.loss))
    }

    fn record(&mut self, expert_called: bool, demo_len: usize, loss: Option<f64>) {
        self.log.push(LogRecord {
            t: self.t,
            expert_called,
            demo_len,
            loss,
            mem_size: self.memory.len(),
            buf_size: self.buffer.len(),
        });
    }

    /// Continual learning over a stream of demonstrations.
    pub fn continual_loop(&mut self, demos: &[Demo], rng: &mut dyn RngCore) -> Result<()> {
        for demo in demos {
            self.t += 1;
            let info = self.continual_step(demo, rng)?;
            self.rehearse(rng)?;
            self.record(true, demo.path.len(), Some(info.loss));
        }
        Ok(())
    }

    /// Active continual learning: after the first `n_c` problems the model
    /// plans on its own (neural replanning only) and the expert is asked
    /// only when it fails.
    pub fn active_continual_loop(
        &mut self,
        problems: &[PlanningProblem],
        expert: &mut dyn FnMut(&PlanningProblem, &mut dyn RngCore) -> Option<Path>,
        plan_cfg: &PlanConfig,
        rng: &mut dyn RngCore,
    ) -> Result<ActiveReport> {
        let neural_cfg = PlanConfig {
            plan_oracle: false,
            ..*plan_cfg
        };
        let mut report = ActiveReport::default();
        for problem in problems {
            self.t += 1;
            if self.t > self.cfg.n_c {
                let out = mpnet_path(&self.model, problem, &neural_cfg, rng)?;
                if out.path.is_some() {
                    report.model_solved += 1;
                    self.rehearse(rng)?;
                    self.record(false, 0, None);
                    continue;
                }
            }
            report.demo_count += 1;
            let Some(path) = expert(problem, rng) else {
                report.expert_failures += 1;
                self.record(true, 0, None);
                continue;
            };
            let demo = Demo {
                path,
                cloud: problem.cloud.clone(),
            };
            let info = self.continual_step(&demo, rng)?;
            self.rehearse(rng)?;
            self.record(true, demo.path.len(), Some(info.loss));
        }
        Ok(report)
    }

    /// Writes the log as JSON lines.
    pub fn write_log(&self, path: &FsPath) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.log {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveReport {
    /// Expert calls, including failed ones.
    pub demo_count: usize,
    pub model_solved: usize,
    pub expert_failures: usize,
}
