//! Obstacle encoder and planning network assembled into one model, with
//! configuration normalization, checkpointing and offline training.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path as FsPath;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::cspace::{wrap_angle, Aabb, Config, Path, RobotModel};
use crate::error::{check_dim, Error, Result};
use crate::neuralnet::{
    backward, cae_loss, mse_loss_batch, read_checkpoint, unit_direction_loss, write_checkpoint,
    Activation, AdamState, Dropout, Gradient, Net, NetSpec,
};

/// Obstacle surface points, flattened point by point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    /// Workspace dimension of each point.
    pub dim: usize,
    pub points: Vec<f64>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Obstacle embedding produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

/// Per-axis affine map from the workspace bounds onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn from_bounds(bounds: &Aabb) -> Self {
        Self {
            offset: bounds.center(),
            scale: bounds.half_extents(),
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((v, o), s)| (v - o) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((v, o), s)| v * s + o)
            .collect()
    }
}

/// Layer sizes and regularization of an [`MpnetModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub latent_dim: usize,
    pub enet_hidden: Vec<usize>,
    pub pnet_hidden: Vec<usize>,
    pub pnet_dropout: f64,
    pub activation: Activation,
    /// Weight of the heading term in the rigid-body loss.
    pub beta: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            latent_dim: 28,
            enet_hidden: vec![256],
            pnet_hidden: vec![512, 512, 256, 128],
            pnet_dropout: 0.5,
            activation: Activation::Prelu,
            beta: 1.0,
        }
    }
}

/// One supervised example `(c_t, c_T, x_obs) -> c_{t+1}`.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub current: Config,
    pub goal: Config,
    pub cloud: Arc<PointCloud>,
    pub target: Config,
}

/// Demonstration path together with the cloud of its workspace.
#[derive(Debug, Clone)]
pub struct Demo {
    pub path: Path,
    pub cloud: Arc<PointCloud>,
}

/// Splits a demonstration `{c_0..c_T}` into its `T` one-step examples.
pub fn one_step_samples(path: &Path, cloud: &Arc<PointCloud>) -> Vec<TrainingSample> {
    let Some(goal) = path.end() else {
        return vec![];
    };
    path.states
        .windows(2)
        .map(|w| TrainingSample {
            current: w[0].clone(),
            goal: goal.clone(),
            cloud: Arc::clone(cloud),
            target: w[1].clone(),
        })
        .collect()
}

/// Encoder + planning network + normalization for one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct MpnetModel {
    pub robot: RobotModel,
    pub arch: Architecture,
    pub enet: Net,
    pub pnet: Net,
    /// Decoder used only when the encoder is trained as an autoencoder.
    pub decoder: Option<Net>,
    pub normalizer: Normalizer,
}

impl MpnetModel {
    pub fn new<R: Rng + ?Sized>(
        robot: RobotModel,
        bounds: &Aabb,
        cloud_len: usize,
        arch: Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        check_dim(robot.workspace_dim(), bounds.dim())?;
        let feat = feature_dim(&robot);
        let mut enet_sizes = vec![cloud_len];
        enet_sizes.extend(&arch.enet_hidden);
        enet_sizes.push(arch.latent_dim);
        let mut dec_sizes = enet_sizes.clone();
        dec_sizes.reverse();
        let mut pnet_sizes = vec![arch.latent_dim + 2 * feat];
        pnet_sizes.extend(&arch.pnet_hidden);
        pnet_sizes.push(feat);
        let enet = Net::new(NetSpec::new(enet_sizes, arch.activation, 0.0)?, rng);
        let decoder = Net::new(NetSpec::new(dec_sizes, arch.activation, 0.0)?, rng);
        let pnet = Net::new(
            NetSpec::new(pnet_sizes, arch.activation, arch.pnet_dropout)?,
            rng,
        );
        Ok(Self {
            robot,
            arch,
            enet,
            pnet,
            decoder: Some(decoder),
            normalizer: Normalizer::from_bounds(bounds),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.enet.spec.output_size()
    }

    /// Deterministic obstacle embedding.
    pub fn encode(&self, pc: &PointCloud) -> Result<LatentCode> {
        Ok(LatentCode {
            z: self.enet.eval(&self.cloud_input(pc)?)?,
        })
    }

    /// Encoder input: every point mapped through the normalizer.
    pub fn cloud_input(&self, pc: &PointCloud) -> Result<Vec<f64>> {
        check_dim(self.normalizer.offset.len(), pc.dim)?;
        check_dim(self.enet.spec.input_size(), pc.points.len())?;
        Ok(pc
            .points
            .chunks(pc.dim)
            .flat_map(|p| self.normalizer.normalize(p))
            .collect())
    }

    /// Network features of a configuration: normalized position, plus
    /// `(cos, sin)` of the heading for SE2.
    pub fn features(&self, c: &Config) -> Vec<f64> {
        let m = self.normalizer.offset.len();
        let mut f = self.normalizer.normalize(&c.coords[..m]);
        if self.robot.is_se2() {
            let (s, co) = c.coords[2].sin_cos();
            f.push(co);
            f.push(s);
        }
        f
    }

    /// Inverse of [`Self::features`]; the heading is recovered with atan2
    /// (the `(cos, sin)` pair does not need to be unit length).
    pub fn config_from_features(&self, f: &[f64]) -> Config {
        let m = self.normalizer.offset.len();
        let mut coords = self.normalizer.denormalize(&f[..m]);
        if self.robot.is_se2() {
            coords.push(wrap_angle(f[m + 1].atan2(f[m])));
        }
        Config { coords }
    }

    pub fn pnet_input(&self, z: &LatentCode, current: &Config, goal: &Config) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.pnet.spec.input_size());
        input.extend_from_slice(&z.z);
        input.extend(self.features(current));
        input.extend(self.features(goal));
        input
    }

    /// Next waypoint from `current` towards `goal`; dropout is sampled on
    /// every call so repeated calls give different proposals.
    pub fn predict_next(
        &self,
        z: &LatentCode,
        current: &Config,
        goal: &Config,
        rng: &mut dyn RngCore,
    ) -> Result<Config> {
        self.robot.check_config(current)?;
        self.robot.check_config(goal)?;
        check_dim(self.latent_dim(), z.z.len())?;
        let input = self.pnet_input(z, current, goal);
        let (out, _) = self.pnet.forward(&input, Dropout::Sampled(rng))?;
        Ok(self.config_from_features(&out))
    }

    /// Same as [`Self::predict_next`] with dropout off.
    pub fn predict_next_mean(
        &self,
        z: &LatentCode,
        current: &Config,
        goal: &Config,
    ) -> Result<Config> {
        let input = self.pnet_input(z, current, goal);
        Ok(self.config_from_features(&self.pnet.eval(&input)?))
    }

    pub fn param_count(&self) -> usize {
        self.enet.params.len() + self.pnet.params.len()
    }

    /// Mean one-step loss over `samples` and its gradient with respect to
    /// the concatenated `[enet, pnet]` parameters. With `train_enet` false
    /// the encoder block of the gradient is zero.
    pub fn loss_and_gradient(
        &self,
        samples: &[TrainingSample],
        train_enet: bool,
        dropout: Dropout<'_>,
    ) -> Result<(f64, Gradient)> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        // unique clouds in first-seen order
        let mut slot_of: HashMap<*const PointCloud, usize> = HashMap::new();
        let mut clouds: Vec<&PointCloud> = Vec::new();
        let slots: Vec<usize> = samples
            .iter()
            .map(|s| {
                *slot_of.entry(Arc::as_ptr(&s.cloud)).or_insert_with(|| {
                    clouds.push(&s.cloud);
                    clouds.len() - 1
                })
            })
            .collect();
        let cloud_len = self.enet.spec.input_size();
        let mut x = Array2::zeros((clouds.len(), cloud_len));
        for (i, c) in clouds.iter().enumerate() {
            let input = self.cloud_input(c)?;
            x.row_mut(i).assign(&ArrayView1::from(input.as_slice()));
        }
        let (zs, enet_cache) = self.enet.forward_batch(x.view(), Dropout::Off)?;

        let latent = self.latent_dim();
        let feat = feature_dim(&self.robot);
        let mut input = Array2::zeros((samples.len(), latent + 2 * feat));
        let mut target = Array2::zeros((samples.len(), feat));
        for (i, s) in samples.iter().enumerate() {
            let mut row = input.row_mut(i);
            for (k, v) in zs.row(slots[i]).iter().enumerate() {
                row[k] = *v;
            }
            for (k, v) in self.features(&s.current).into_iter().enumerate() {
                row[latent + k] = v;
            }
            for (k, v) in self.features(&s.goal).into_iter().enumerate() {
                row[latent + feat + k] = v;
            }
            for (k, v) in self.features(&s.target).into_iter().enumerate() {
                target[[i, k]] = v;
            }
        }
        let (pred, pnet_cache) = self.pnet.forward_batch(input.view(), dropout)?;
        let (loss, out_grad) = self.output_loss(&pred, &target)?;
        let pbp = backward(
            &self.pnet.spec,
            &self.pnet.params,
            &pnet_cache,
            out_grad.view(),
        )?;

        let enet_grad = if train_enet {
            let mut dz = Array2::zeros((clouds.len(), latent));
            for (i, slot) in slots.iter().enumerate() {
                for k in 0..latent {
                    dz[[*slot, k]] += pbp.input_grad[[i, k]];
                }
            }
            backward(&self.enet.spec, &self.enet.params, &enet_cache, dz.view())?.grad
        } else {
            Gradient::zeros(self.enet.params.len())
        };
        Ok((loss, Gradient::concat(&[&enet_grad, &pbp.grad])))
    }

    /// Mean squared error on the positional features, plus `beta` times the
    /// normalized heading loss for SE2.
    fn output_loss(&self, pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        if !self.robot.is_se2() {
            return Ok(mse_loss_batch(pred.view(), target.view()));
        }
        let n = pred.nrows() as f64;
        let m = self.normalizer.offset.len();
        let mut grad = Array2::zeros(pred.dim());
        let mut loss = 0.0;
        for i in 0..pred.nrows() {
            for k in 0..m {
                let d = pred[[i, k]] - target[[i, k]];
                loss += d * d / n;
                grad[[i, k]] = 2.0 * d / n;
            }
            let p = [pred[[i, m]], pred[[i, m + 1]]];
            let t = [target[[i, m]], target[[i, m + 1]]];
            let (lq, gq) = unit_direction_loss(&p, &t)?;
            loss += self.arch.beta * lq / n;
            grad[[i, m]] = self.arch.beta * gq[0] / n;
            grad[[i, m + 1]] = self.arch.beta * gq[1] / n;
        }
        Ok((loss, grad))
    }

    /// Mean one-step loss with dropout off.
    pub fn loss(&self, samples: &[TrainingSample]) -> Result<f64> {
        Ok(self.loss_and_gradient(samples, false, Dropout::Off)?.0)
    }

    /// Applies one optimizer step with a `[enet, pnet]` gradient.
    pub fn apply_gradient(&mut self, grad: &Gradient, adam: &mut AdamState) -> Result<()> {
        check_dim(self.param_count(), grad.len())?;
        let ne = self.enet.params.len();
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(&self.enet.params.flat);
        flat.extend_from_slice(&self.pnet.params.flat);
        adam.step(&mut flat, grad)?;
        self.enet.params.flat.copy_from_slice(&flat[..ne]);
        self.pnet.params.flat.copy_from_slice(&flat[ne..]);
        Ok(())
    }

    pub fn save(&self, dir: &FsPath, seed: u64, created: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = BufWriter::new(File::create(dir.join("enet.ckpt"))?);
        write_checkpoint(&mut f, &self.enet, seed, created)?;
        let mut f = BufWriter::new(File::create(dir.join("pnet.ckpt"))?);
        write_checkpoint(&mut f, &self.pnet, seed, created)?;
        if let Some(dec) = &self.decoder {
            let mut f = BufWriter::new(File::create(dir.join("decoder.ckpt"))?);
            write_checkpoint(&mut f, dec, seed, created)?;
        }
        serde_json::to_writer_pretty(File::create(dir.join("normalizer.json"))?, &self.normalizer)?;
        let meta = ModelMeta {
            robot: self.robot.clone(),
            arch: self.arch.clone(),
        };
        serde_json::to_writer_pretty(File::create(dir.join("model.json"))?, &meta)?;
        Ok(())
    }

    pub fn load(dir: &FsPath) -> Result<Self> {
        let (enet, _) = read_checkpoint(&mut BufReader::new(File::open(dir.join("enet.ckpt"))?))?;
        let (pnet, _) = read_checkpoint(&mut BufReader::new(File::open(dir.join("pnet.ckpt"))?))?;
        let dec_path = dir.join("decoder.ckpt");
        let decoder = if dec_path.exists() {
            Some(read_checkpoint(&mut BufReader::new(File::open(dec_path)?))?.0)
        } else {
            None
        };
        let normalizer: Normalizer =
            serde_json::from_reader(BufReader::new(File::open(dir.join("normalizer.json"))?))?;
        let meta: ModelMeta =
            serde_json::from_reader(BufReader::new(File::open(dir.join("model.json"))?))?;
        let feat = feature_dim(&meta.robot);
        check_dim(enet.spec.output_size() + 2 * feat, pnet.spec.input_size())?;
        check_dim(feat, pnet.spec.output_size())?;
        Ok(Self {
            robot: meta.robot,
            arch: meta.arch,
            enet,
            pnet,
            decoder,
            normalizer,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    robot: RobotModel,
    arch: Architecture,
}

/// Width of the network's configuration encoding.
pub fn feature_dim(robot: &RobotModel) -> usize {
    if robot.is_se2() {
        4
    } else {
        robot.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Pnet loss backpropagated through both networks.
    EndToEnd,
    /// Encoder fitted as an autoencoder first, then frozen.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cae_epochs: usize,
    pub cae_lambda: f64,
    pub cae_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            cae_epochs: 200,
            cae_lambda: 1e-3,
            cae_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per planning-network epoch.
    pub loss_curve: Vec<f64>,
    /// Autoencoder loss per epoch (separate mode only).
    pub cae_curve: Vec<f64>,
}

/// Fits the encoder on `clouds` by the autoencoder objective. Returns the
/// mean reconstruction error per epoch.
pub fn train_encoder<R: Rng + ?Sized>(
    model: &mut MpnetModel,
    clouds: &[&PointCloud],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut decoder = match model.decoder.take() {
        Some(d) => d,
        None => {
            let mut sizes = model.enet.spec.layer_sizes.clone();
            sizes.reverse();
            Net::new(NetSpec::new(sizes, model.arch.activation, 0.0)?, rng)
        }
    };
    let ne = model.enet.params.len();
    let mut adam = AdamState::new(ne + decoder.params.len(), cfg.cae_lr);
    let mut curve = Vec::with_capacity(cfg.cae_epochs);
    let clouds: Vec<Vec<f64>> = clouds
        .iter()
        .map(|c| model.cloud_input(c))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    for _ in 0..cfg.cae_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| clouds[i].clone()).collect();
            let out = cae_loss(&model.enet, &decoder, &batch, cfg.cae_lambda)?;
            total += out.reconstruction * chunk.len() as f64;
            let grad = Gradient::concat(&[&out.enc_grad, &out.dec_grad]);
            let mut flat = model.enet.params.flat.clone();
            flat.extend_from_slice(&decoder.params.flat);
            adam.step(&mut flat, &grad)?;
            model.enet.params.flat.copy_from_slice(&flat[..ne]);
            decoder.params.flat.copy_from_slice(&flat[ne..]);
        }
        curve.push(total / clouds.len() as f64);
    }
    model.decoder = Some(decoder);
    Ok(curve)
}

/// Offline batch training on a fixed set of demonstrations.
pub fn train_offline<R: Rng>(
    model: &mut MpnetModel,
    demos: &[Demo],
    mode: TrainMode,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if demos.is_empty() {
        return Err(Error::InvalidArgument(
            "no demonstrations to train on".into(),
        ));
    }
    let mut report = TrainReport::default();
    let train_enet = mode == TrainMode::EndToEnd;
    if mode == TrainMode::Separate {
        let mut seen = std::collections::HashSet::new();
        let clouds: Vec<&PointCloud> = demos
            .iter()
            .filter(|d| seen.insert(Arc::as_ptr(&d.cloud)))
            .map(|d| d.cloud.as_ref())
            .collect();
        report.cae_curve = train_encoder(model, &clouds, cfg, rng)?;
    }
    let samples: Vec<TrainingSample> = demos
        .iter()
        .flat_map(|d| one_step_samples(&d.path, &d.cloud))
        .collect();
    let mut adam = AdamState::new(model.param_count(), cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<TrainingSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grad) =
                model.loss_and_gradient(&batch, train_enet, Dropout::Sampled(rng))?;
            total += loss * chunk.len() as f64;
            model.apply_gradient(&grad, &mut adam)?;
        }
        report.loss_curve.push(total / samples.len() as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cspace::Workspace;
    use crate::neuralnet::NetParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture {
            latent_dim: 4,
            enet_hidden: vec![16],
            pnet_hidden: vec![32, 32],
            pnet_dropout: 0.5,
            activation: Activation::Prelu,
            beta: 1.0,
        }
    }

    fn cloud(n: usize, seed: u64) -> Arc<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arc::new(PointCloud {
            dim: 2,
            points: (0..2 * n).map(|_| rng.gen_range(-20.0..20.0)).collect(),
        })
    }

    fn model(seed: u64) -> MpnetModel {
        let ws = Workspace::empty(2, 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MpnetModel::new(
            RobotModel::point2d(),
            &ws.bounds,
            20,
            small_arch(),
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let m = model(1);
        let pc = cloud(10, 2).as_ref().clone();
        let a = m.encode(&pc).unwrap();
        assert_eq!(a, m.encode(&pc).unwrap());
        assert_eq!(a.z.len(), 4);
        let mut zero = m.clone();
        zero.enet.params = NetParams::zeros(&zero.enet.spec);
        assert!(zero.encode(&pc).unwrap().z.iter().all(|v| *v == 0.0));
        let bad = PointCloud {
            dim: 2,
            points: vec![0.0; 6],
        };
        assert!(m.encode(&bad).is_err());
    }

    #[test]
    fn predict_next_seeded_and_stochastic() {
        let m = model(3);
        let z = m.encode(&cloud(10, 4)).unwrap();
        let c: Config = [-10.0, -10.0].into();
        let g: Config = [10.0, 10.0].into();
        let a = m
            .predict_next(&z, &c, &g, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = m
            .predict_next(&z, &c, &g, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let other = m
            .predict_next(&z, &c, &g, &mut ChaCha8Rng::seed_from_u64(6))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert_eq!(a.dim(), 2);
        assert!(m
            .predict_next(&z, &[1.0].into(), &g, &mut ChaCha8Rng::seed_from_u64(5))
            .is_err());
    }

    #[test]
    fn normalizer_roundtrip() {
        let n = Normalizer::from_bounds(&Aabb::new(vec![-20.0, -5.0], vec![20.0, 15.0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let x = [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)];
            let back = n.denormalize(&n.normalize(&x));
            assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
        }
        assert_eq!(n.normalize(&[20.0, 15.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn one_step_pair_count() {
        let pc = cloud(10, 0);
        for len in 1..7 {
            let p = Path::new((0..len).map(|i| Config::from([i as f64, 0.0])).collect());
            let s = one_step_samples(&p, &pc);
            assert_eq!(s.len(), len - 1);
            if let Some(last) = s.last() {
                assert_eq!(last.target, *p.end().unwrap());
                assert_eq!(last.goal, *p.end().unwrap());
            }
        }
    }

    #[test]
    fn se2_features_roundtrip() {
        let ws = Workspace::empty(2, 20.0);
        let robot = RobotModel::rigid_se2(vec![[-1.0, -0.5], [1.0, -0.5], [1.0, 0.5], [-1.0, 0.5]])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MpnetModel::new(robot, &ws.bounds, 20, small_arch(), &mut rng).unwrap();
        assert_eq!(m.pnet.spec.input_size(), 4 + 8);
        assert_eq!(m.pnet.spec.output_size(), 4);
        let c: Config = [3.0, -7.0, 2.5].into();
        let back = m.config_from_features(&m.features(&c));
        for (a, b) in back.coords.iter().zip(&c.coords) {
            assert!((a - b).abs() < 1e-12);
        }
        let pc = cloud(10, 2);
        let z = m.encode(&pc).unwrap();
        let next = m
            .predict_next(&z, &c, &[0.0, 0.0, 0.0].into(), &mut rng)
            .unwrap();
        assert_eq!(next.dim(), 3);
        assert!(next.coords[2] > -std::f64::consts::PI && next.coords[2] <= std::f64::consts::PI);
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let m = model(7);
        let pc = cloud(10, 8);
        let path = Path::new(vec![
            [-10.0, -5.0].into(),
            [0.0, 3.0].into(),
            [12.0, 8.0].into(),
        ]);
        let samples = one_step_samples(&path, &pc);
        let (_, g) = m.loss_and_gradient(&samples, true, Dropout::Off).unwrap();
        let ne = m.enet.params.len();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in (0..m.param_count()).step_by(7) {
            let mut up = m.clone();
            let mut down = m.clone();
            if idx < ne {
                up.enet.params.flat[idx] += h;
                down.enet.params.flat[idx] -= h;
            } else {
                up.pnet.params.flat[idx - ne] += h;
                down.pnet.params.flat[idx - ne] -= h;
            }
            let num = (up.loss(&samples).unwrap() - down.loss(&samples).unwrap()) / (2.0 * h);
            let rel = (num - g.flat[idx]).abs() / num.abs().max(g.flat[idx].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn checkpoint_dir_roundtrip() {
        let m = model(9);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), 9, 0).unwrap();
        assert_eq!(MpnetModel::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn single_demo_overfits() {
        let mut m = model(10);
        m.pnet.spec.dropout.iter_mut().for_each(|p| *p = 0.0);
        let pc = cloud(10, 11);
        let path = Path::new(vec![
            [-15.0, -15.0].into(),
            [-5.0, -12.0].into(),
            [3.0, 0.0].into(),
            [15.0, 15.0].into(),
        ]);
        let demos = vec![Demo { path, cloud: pc }];
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rep = train_offline(&mut m, &demos, TrainMode::EndToEnd, &cfg, &mut rng).unwrap();
        let first = rep.loss_curve[0];
        let last = *rep.loss_curve.last().unwrap();
        assert!(last < 0.1 * first, "loss {first} -> {last}");
        assert!(train_offline(&mut m, &[], TrainMode::EndToEnd, &cfg, &mut rng).is_err());
    }

    #[test]
    fn separate_mode_reduces_reconstruction_error() {
        let mut m = model(13);
        let clouds: Vec<Arc<PointCloud>> = (0..6).map(|i| cloud(10, 20 + i)).collect();
        let demos: Vec<Demo> = clouds
            .iter()
            .map(|c| Demo {
                path: Path::new(vec![[-10.0, 0.0].into(), [10.0, 0.0].into()]),
                cloud: Arc::clone(c),
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            cae_epochs: 300,
            cae_lambda: 0.01,
            cae_lr: 3e-3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rep = train_offline(&mut m, &demos, TrainMode::Separate, &cfg, &mut rng).unwrap();
        assert!(
            *rep.cae_curve.last().unwrap() <= 0.5 * rep.cae_curve[0],
            "{:?}",
            (rep.cae_curve[0], rep.cae_curve.last())
        );
    }
}
