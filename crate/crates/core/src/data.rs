//! Random box workspaces, obstacle point clouds, expert demonstrations,
//! train / seen / unseen corpora and their on-disk format.

use std::fs;
use std::path::Path as FsPath;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cspace::{Aabb, Config, Path, RobotModel, Workspace};
use crate::error::{Error, Result};
use crate::models::{one_step_samples, Demo, PointCloud, TrainingSample};
use crate::planner::lsc;
use crate::smp::{rrt_star, PlanningProblem, RrtParams, UniformSampler};

pub const HALF_WIDTH: f64 = 20.0;
pub const OBSTACLE_SIDE: f64 = 5.0;
/// Placement attempts per obstacle before giving up.
pub const PLACEMENT_RETRIES: usize = 1_000;
/// Minimum start-goal distance of generated problems.
pub const MIN_SEPARATION: f64 = 10.0;
pub const FINE_STEP: f64 = 0.05;

pub const DATASET_FORMAT: &str = "neuroplan-dataset";
pub const DATASET_VERSION: u32 = 1;

const STREAM_WORKSPACE: u64 = 1;
const STREAM_CLOUD: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_SEEN: u64 = 4;
const STREAM_UNSEEN: u64 = 5;
/// Unseen workspaces are numbered from here, so their seeds never collide
/// with training workspaces.
pub const UNSEEN_INDEX_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Simple2d,
    Complex2d,
    Complex3d,
    RigidSe2,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [
        EnvKind::Simple2d,
        EnvKind::Complex2d,
        EnvKind::Complex3d,
        EnvKind::RigidSe2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Simple2d => "simple2d",
            EnvKind::Complex2d => "complex2d",
            EnvKind::Complex3d => "complex3d",
            EnvKind::RigidSe2 => "rigid_se2",
        }
    }

    pub fn workspace_dim(self) -> usize {
        if self == EnvKind::Complex3d {
            3
        } else {
            2
        }
    }

    pub fn obstacle_count(self) -> usize {
        match self {
            EnvKind::Simple2d | EnvKind::RigidSe2 => 7,
            EnvKind::Complex2d | EnvKind::Complex3d => 10,
        }
    }

    pub fn cloud_points(self) -> usize {
        if self.workspace_dim() == 3 {
            500
        } else {
            200
        }
    }

    pub fn robot(self) -> RobotModel {
        match self {
            EnvKind::Simple2d | EnvKind::Complex2d => RobotModel::point2d(),
            EnvKind::Complex3d => RobotModel::point3d(),
            EnvKind::RigidSe2 => {
                RobotModel::rigid_se2(vec![[-1.0, -0.5], [1.0, -0.5], [1.0, 0.5], [-1.0, 0.5]])
                    .expect("rectangle is convex")
            }
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown environment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Seen,
    Unseen,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Independent seed for item `index` of `stream` under a master seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut x = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    for _ in 0..2 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

/// One workspace with non-overlapping cube obstacles placed uniformly.
pub fn gen_workspace(kind: EnvKind, ws_seed: u64) -> Result<Workspace> {
    let m = kind.workspace_dim();
    let half = OBSTACLE_SIDE / 2.0;
    let bounds = Aabb::new(vec![-HALF_WIDTH; m], vec![HALF_WIDTH; m])?;
    let mut rng = ChaCha8Rng::seed_from_u64(ws_seed);
    let mut obstacles: Vec<Aabb> = Vec::with_capacity(kind.obstacle_count());
    for k in 0..kind.obstacle_count() {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let center: Vec<f64> = (0..m)
                .map(|_| rng.gen_range(-HALF_WIDTH + half..=HALF_WIDTH - half))
                .collect();
            let b = Aabb::from_center(&center, &vec![half; m])?;
            if obstacles.iter().all(|o| o.overlap_volume(&b) == 0.0) {
                obstacles.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailed(k));
        }
    }
    Workspace::new(bounds, obstacles)
}

/// `count` workspaces; workspace `i` depends only on `(seed, i)`.
pub fn gen_workspaces(kind: EnvKind, count: usize, seed: u64) -> Result<Vec<Workspace>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "workspace count must be at least 1".into(),
        ));
    }
    (0..count as u64)
        .map(|i| gen_workspace(kind, derive_seed(seed, STREAM_WORKSPACE, i)))
        .collect()
}

/// Points sampled uniformly on obstacle surfaces, ordered by obstacle,
/// then face, then sample. Faces of equal boxes have equal area, so an
/// even split of the budget is uniform over the whole surface.
pub fn gen_point_cloud(ws: &Workspace, n_pc: usize, seed: u64) -> PointCloud {
    let m = ws.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_pc * m);
    let k = ws.obstacles.len();
    if k == 0 {
        points.resize(n_pc * m, 0.0);
        return PointCloud { dim: m, points };
    }
    let faces = 2 * m;
    for (oi, ob) in ws.obstacles.iter().enumerate() {
        let per_ob = n_pc / k + usize::from(oi < n_pc % k);
        for f in 0..faces {
            let per_face = per_ob / faces + usize::from(f < per_ob % faces);
            let axis = f / 2;
            let fixed = if f % 2 == 0 { ob.lo[axis] } else { ob.hi[axis] };
            for _ in 0..per_face {
                for a in 0..m {
                    points.push(if a == axis {
                        fixed
                    } else {
                        rng.gen_range(ob.lo[a]..=ob.hi[a])
                    });
                }
            }
        }
    }
    PointCloud { dim: m, points }
}

/// Random collision-free start and goal at least [`MIN_SEPARATION`] apart.
pub fn gen_endpoints<R: Rng + ?Sized>(
    robot: &RobotModel,
    ws: &Workspace,
    rng: &mut R,
) -> Result<(Config, Config)> {
    for _ in 0..1_000 {
        let a = robot.sample_free(ws, rng)?;
        let b = robot.sample_free(ws, rng)?;
        if a.euclidean(&b) >= MIN_SEPARATION {
            return Ok((a, b));
        }
    }
    Err(Error::FreeSpaceNotFound(1_000))
}

/// Expert demonstration: RRT* for the full budget, contracted, and kept
/// only if it is feasible at the fine step.
pub fn gen_demo<R: Rng>(
    problem: &PlanningProblem,
    expert_budget: usize,
    rng: &mut R,
) -> Option<Path> {
    let params = RrtParams {
        max_iters: expert_budget,
        step: FINE_STEP,
        ..Default::default()
    };
    let path = rrt_star(problem, &mut UniformSampler::new(problem), &params, rng).path?;
    let path = lsc(&path, &problem.robot, &problem.ws, FINE_STEP);
    problem
        .robot
        .path_feasible(&path, &problem.ws, FINE_STEP)
        .then_some(path)
}

#[derive(Debug, Clone)]
pub struct WorkspaceEntry {
    /// Position in the generator's workspace numbering.
    pub index: u64,
    pub seed: u64,
    pub ws: Arc<Workspace>,
    pub cloud: Arc<PointCloud>,
}

impl WorkspaceEntry {
    pub fn generate(kind: EnvKind, master_seed: u64, index: u64) -> Result<Self> {
        let seed = derive_seed(master_seed, STREAM_WORKSPACE, index);
        let ws = gen_workspace(kind, seed)?;
        let cloud = gen_point_cloud(
            &ws,
            kind.cloud_points(),
            derive_seed(master_seed, STREAM_CLOUD, index),
        );
        Ok(Self {
            index,
            seed,
            ws: Arc::new(ws),
            cloud: Arc::new(cloud),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord {
    /// Position in [`Dataset::workspaces`].
    pub workspace: usize,
    pub path: Path,
}

/// Workspaces plus expert paths. For test splits each path doubles as the
/// problem (its endpoints) and the expert reference solution.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub env: EnvKind,
    pub split: Split,
    pub seed: u64,
    pub workspaces: Vec<WorkspaceEntry>,
    pub demos: Vec<DemoRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn problem(&self, i: usize) -> PlanningProblem {
        let d = &self.demos[i];
        let w = &self.workspaces[d.workspace];
        PlanningProblem {
            robot: self.env.robot(),
            ws: Arc::clone(&w.ws),
            start: d.path.first().expect("demos are non-empty").clone(),
            goal: d.path.end().expect("demos are non-empty").clone(),
            cloud: Arc::clone(&w.cloud),
        }
    }

    pub fn problems(&self) -> Vec<PlanningProblem> {
        (0..self.len()).map(|i| self.problem(i)).collect()
    }

    pub fn training_demos(&self) -> Vec<Demo> {
        self.demos
            .iter()
            .map(|d| Demo {
                path: d.path.clone(),
                cloud: Arc::clone(&self.workspaces[d.workspace].cloud),
            })
            .collect()
    }

    pub fn training_samples(&self) -> Vec<TrainingSample> {
        self.training_demos()
            .iter()
            .flat_map(|d| one_step_samples(&d.path, &d.cloud))
            .collect()
    }

    /// The first `n` demos, keeping all workspaces.
    pub fn truncated(&self, n: usize) -> Dataset {
        let mut out = self.clone();
        out.demos.truncate(n);
        out
    }

    /// Interleaves demos across workspaces: first demo of every workspace,
    /// then the second of each, and so on.
    pub fn interleaved(&self) -> Dataset {
        let mut per_ws: Vec<Vec<DemoRecord>> = vec![vec![]; self.workspaces.len()];
        for d in &self.demos {
            per_ws[d.workspace].push(d.clone());
        }
        let mut demos = Vec::with_capacity(self.demos.len());
        let mut round = 0;
        while demos.len() < self.demos.len() {
            for list in &per_ws {
                if let Some(d) = list.get(round) {
                    demos.push(d.clone());
                }
            }
            round += 1;
        }
        Dataset {
            demos,
            ..self.clone()
        }
    }
}

/// Sizes of a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub train_workspaces: usize,
    pub demos_per_workspace: usize,
    /// Seen-test workspaces are the first ones of the training set.
    pub seen_workspaces: usize,
    pub seen_problems: usize,
    pub unseen_workspaces: usize,
    pub unseen_problems: usize,
    pub expert_budget: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            train_workspaces: 40,
            demos_per_workspace: 100,
            seen_workspaces: 10,
            seen_problems: 50,
            unseen_workspaces: 5,
            unseen_problems: 100,
            expert_budget: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Dataset,
    pub seen: Dataset,
    pub unseen: Dataset,
}

/// Demonstrations in the given workspaces, generated in parallel; each
/// workspace has its own random stream so the result does not depend on
/// scheduling.
pub fn gen_dataset(
    kind: EnvKind,
    split: Split,
    indices: &[u64],
    per_workspace: usize,
    expert_budget: usize,
    seed: u64,
) -> Result<Dataset> {
    let stream = match split {
        Split::Train => STREAM_TRAIN,
        Split::Seen => STREAM_SEEN,
        Split::Unseen => STREAM_UNSEEN,
    };
    let robot = kind.robot();
    let per_ws: Vec<(WorkspaceEntry, Vec<Path>)> = indices
        .par_iter()
        .map(|&index| {
            let entry = WorkspaceEntry::generate(kind, seed, index)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index));
            let mut paths = Vec::with_capacity(per_workspace);
            let max_attempts = 10 * per_workspace + 10;
            let mut attempts = 0;
            while paths.len() < per_workspace {
                attempts += 1;
                if attempts > max_attempts {
                    return Err(Error::InvalidGeometry(format!(
                        "workspace {index}: only {} of {per_workspace} demonstrations after {max_attempts} attempts",
                        paths.len()
                    )));
                }
                let (start, goal) = gen_endpoints(&robot, &entry.ws, &mut rng)?;
                let problem = PlanningProblem {
                    robot: robot.clone(),
                    ws: Arc::clone(&entry.ws),
                    start,
                    goal,
                    cloud: Arc::clone(&entry.cloud),
                };
                if let Some(p) = gen_demo(&problem, expert_budget, &mut rng) {
                    paths.push(p);
                }
            }
            Ok((entry, paths))
        })
        .collect::<Result<_>>()?;
    let mut workspaces = Vec::with_capacity(per_ws.len());
    let mut demos = Vec::new();
    for (slot, (entry, paths)) in per_ws.into_iter().enumerate() {
        workspaces.push(entry);
        demos.extend(paths.into_iter().map(|path| DemoRecord {
            workspace: slot,
            path,
        }));
    }
    Ok(Dataset {
        env: kind,
        split,
        seed,
        workspaces,
        demos,
    })
}

pub fn gen_corpus(kind: EnvKind, spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    if spec.seen_workspaces > spec.train_workspaces {
        return Err(Error::InvalidArgument(
            "seen-test workspaces must come from the training set".into(),
        ));
    }
    let train_idx: Vec<u64> = (0..spec.train_workspaces as u64).collect();
    let unseen_idx: Vec<u64> = (0..spec.unseen_workspaces as u64)
        .map(|i| UNSEEN_INDEX_BASE + i)
        .collect();
    Ok(Corpus {
        train: gen_dataset(
            kind,
            Split::Train,
            &train_idx,
            spec.demos_per_workspace,
            spec.expert_budget,
            seed,
        )?,
        seen: gen_dataset(
            kind,
            Split::Seen,
            &train_idx[..spec.seen_workspaces],
            spec.seen_problems,
            spec.expert_budget,
            seed,
        )?,
        unseen: gen_dataset(
            kind,
            Split::Unseen,
            &unseen_idx,
            spec.unseen_problems,
            spec.expert_budget,
            seed,
        )?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    file: String,
    floats: usize,
    crc32: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorkspaceMeta {
    index: u64,
    seed: u64,
    workspace: Workspace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DemoMeta {
    workspace: usize,
    states: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    env: EnvKind,
    split: Split,
    seed: u64,
    workspace_dim: usize,
    config_dim: usize,
    cloud_points: usize,
    workspaces: Vec<WorkspaceMeta>,
    demos: Vec<DemoMeta>,
    blocks: Vec<BlockInfo>,
}

fn write_block(dir: &FsPath, name: &str, values: &[f64]) -> Result<BlockInfo> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let file = format!("{name}.bin");
    fs::write(dir.join(&file), &bytes)?;
    Ok(BlockInfo {
        name: name.into(),
        file,
        floats: values.len(),
        crc32: crc32fast::hash(&bytes),
    })
}

fn read_block(dir: &FsPath, info: &BlockInfo) -> Result<Vec<f64>> {
    let bytes = fs::read(dir.join(&info.file))?;
    if crc32fast::hash(&bytes) != info.crc32 {
        return Err(Error::Checksum(info.file.clone()));
    }
    if bytes.len() != info.floats * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} values",
            info.file, info.floats
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes `manifest.json` plus one little-endian block per array.
pub fn save_dataset(ds: &Dataset, dir: &FsPath) -> Result<()> {
    fs::create_dir_all(dir)?;
    let clouds: Vec<f64> = ds
        .workspaces
        .iter()
        .flat_map(|w| w.cloud.points.iter().copied())
        .collect();
    let paths: Vec<f64> = ds
        .demos
        .iter()
        .flat_map(|d| d.path.states.iter().flat_map(|c| c.coords.iter().copied()))
        .collect();
    let boxes: Vec<f64> = ds
        .workspaces
        .iter()
        .flat_map(|w| std::iter::once(&w.ws.bounds).chain(&w.ws.obstacles))
        .flat_map(|b| b.lo.iter().chain(&b.hi).copied())
        .collect();
    let blocks = vec![
        write_block(dir, "boxes", &boxes)?,
        write_block(dir, "clouds", &clouds)?,
        write_block(dir, "paths", &paths)?,
    ];
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        env: ds.env,
        split: ds.split,
        seed: ds.seed,
        workspace_dim: ds.env.workspace_dim(),
        config_dim: ds.env.robot().dim(),
        cloud_points: ds.env.cloud_points(),
        workspaces: ds
            .workspaces
            .iter()
            .map(|w| WorkspaceMeta {
                index: w.index,
                seed: w.seed,
                workspace: (*w.ws).clone(),
            })
            .collect(),
        demos: ds
            .demos
            .iter()
            .map(|d| DemoMeta {
                workspace: d.workspace,
                states: d.path.len(),
            })
            .collect(),
        blocks,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: &FsPath) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Format(format!(
            "not a dataset manifest: `{}`",
            manifest.format
        )));
    }
    if manifest.version != DATASET_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: DATASET_VERSION,
        });
    }
    let env = manifest.env;
    let (m, d, n_pc) = (env.workspace_dim(), env.robot().dim(), env.cloud_points());
    if (
        manifest.workspace_dim,
        manifest.config_dim,
        manifest.cloud_points,
    ) != (m, d, n_pc)
    {
        return Err(Error::Format(format!(
            "shape header does not match environment {env}"
        )));
    }
    if let Some(w) = manifest.workspaces.iter().find(|w| w.workspace.dim() != m) {
        return Err(Error::Format(format!(
            "workspace {} is {}-dimensional in a {m}-dimensional dataset",
            w.index,
            w.workspace.dim()
        )));
    }
    let block = |name: &str| -> Result<Vec<f64>> {
        let info = manifest
            .blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("block `{name}` missing")))?;
        read_block(dir, info)
    };
    let boxes = block("boxes")?;
    let clouds = block("clouds")?;
    let paths = block("paths")?;
    let box_count: usize = manifest
        .workspaces
        .iter()
        .map(|w| 1 + w.workspace.obstacles.len())
        .sum();
    if boxes.len() != box_count * 2 * m {
        return Err(Error::Format(
            "box block size does not match the workspace list".into(),
        ));
    }
    let per_cloud = n_pc * m;
    if clouds.len() != per_cloud * manifest.workspaces.len() {
        return Err(Error::Format(
            "cloud block size does not match the workspace list".into(),
        ));
    }
    let total_states: usize = manifest.demos.iter().map(|dm| dm.states).sum();
    if paths.len() != total_states * d {
        return Err(Error::Format(
            "path block size does not match the demo list".into(),
        ));
    }
    // exact corners come from the binary block; the JSON copy must agree
    let mut corners = boxes
        .chunks_exact(2 * m)
        .map(|c| Aabb::new(c[..m].to_vec(), c[m..].to_vec()));
    let mut workspaces = Vec::with_capacity(manifest.workspaces.len());
    for (w, pts) in manifest
        .workspaces
        .into_iter()
        .zip(clouds.chunks_exact(per_cloud.max(1)))
    {
        let bounds = corners.next().expect("size checked")?;
        let obstacles = (0..w.workspace.obstacles.len())
            .map(|_| corners.next().expect("size checked"))
            .collect::<Result<Vec<_>>>()?;
        let exact = Workspace::new(bounds, obstacles)?;
        let agrees = std::iter::once((&exact.bounds, &w.workspace.bounds))
            .chain(exact.obstacles.iter().zip(&w.workspace.obstacles))
            .all(|(a, b)| {
                a.lo.iter()
                    .chain(&a.hi)
                    .zip(b.lo.iter().chain(&b.hi))
                    .all(|(x, y)| (x - y).abs() <= 1e-9)
            });
        if !agrees {
            return Err(Error::Format(format!(
                "workspace {}: JSON and box block disagree",
                w.index
            )));
        }
        workspaces.push(WorkspaceEntry {
            index: w.index,
            seed: w.seed,
            ws: Arc::new(exact),
            cloud: Arc::new(PointCloud {
                dim: m,
                points: pts.to_vec(),
            }),
        });
    }
    let mut demos = Vec::with_capacity(manifest.demos.len());
    let mut offset = 0;
    for dm in manifest.demos {
        if dm.workspace >= workspaces.len() || dm.states == 0 {
            return Err(Error::Format(format!(
                "bad demo record for workspace {}",
                dm.workspace
            )));
        }
        let states = (0..dm.states)
            .map(|k| Config::new(paths[offset + k * d..offset + (k + 1) * d].to_vec()))
            .collect();
        offset += dm.states * d;
        demos.push(DemoRecord {
            workspace: dm.workspace,
            path: Path::new(states),
        });
    }
    Ok(Dataset {
        env,
        split: manifest.split,
        seed: manifest.seed,
        workspaces,
        demos,
    })
}
