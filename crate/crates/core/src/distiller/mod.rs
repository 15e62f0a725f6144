//! Learning per-cluster synthetic sets by gradient matching along a training
//! trajectory.
//!
//! In reverse mode the synthetic gradient at `θ_{t+s}` is pushed toward the
//! negated real-cluster gradient at `θ_t`, so that fine-tuning on the synset
//! walks the model back along the cluster's contribution. Forward mode
//! matches `+g_r` at `θ_t`, the classic condensation objective.

mod augment;
mod export;
mod synset;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use augment::Shift;
pub use export::{export_synset_images, read_pnm};
pub use synset::{init_synset, Synset};

use crate::datahub::{ClusterHierarchy, LabeledBatch, LabeledDataset};
use crate::diffcore::{grad_params_weighted, matching_gradient, matching_value, DistanceKind, GradDistance, LossKind};
use crate::error::{Error, Result};
use crate::nets::{Model, ParamVector};
use crate::pool::parallel_map;
use crate::rng;
use crate::trainer::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Reverse,
    Forward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub lr_img: f64,
    pub steps: usize,
    pub step_len: usize,
    pub dist: DistanceKind,
    pub mode: Mode,
    pub augment: bool,
    pub ipc: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lr_img: 0.1,
            steps: 50,
            step_len: 4,
            dist: DistanceKind::LayerwiseCosine,
            mode: Mode::Reverse,
            augment: false,
            ipc: 1,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_img > 0.0 && self.lr_img.is_finite()) {
            return Err(Error::Config(format!("lr_img must be positive, got {}", self.lr_img)));
        }
        if self.step_len == 0 || self.ipc == 0 {
            return Err(Error::Config("step_len and ipc must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Per-iteration record of a distillation run.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub t: usize,
    /// Σ_κ of the matching distance before the update.
    pub loss: f64,
    /// Cluster-segment pairs treated as orthogonal because of a zero norm.
    pub degenerate: usize,
}

/// Cluster `members`' summed contribution to one epoch of SGD at `params`:
/// `(|D_κ| / B) · ∇ mean CE(θ, D_κ)`.
pub fn real_gradient(model: &Model, params: &ParamVector, batch: &LabeledBatch, batch_size: usize) -> Result<ParamVector> {
    grad_params_weighted(model, params, batch, LossKind::CrossEntropy, 1.0 / batch_size as f64).map(|(_, g)| g)
}

/// Epochs `t` with checkpoints at both `t` and `t + s`, and `t + s < τ`.
pub fn start_epochs(traj: &Trajectory, step_len: usize) -> Result<Vec<usize>> {
    if step_len % traj.config.checkpoint_stride != 0 {
        return Err(Error::Config(format!(
            "checkpoint stride {} does not divide step length {step_len}",
            traj.config.checkpoint_stride
        )));
    }
    let ts: Vec<usize> = traj
        .checkpoints
        .iter()
        .map(|(t, _)| *t)
        .filter(|&t| t + step_len < traj.epochs() && traj.get(t + step_len).is_some())
        .collect();
    if ts.is_empty() {
        return Err(Error::Config(format!(
            "no checkpoint pair (t, t+{step_len}) with t+{step_len} < {}",
            traj.epochs()
        )));
    }
    Ok(ts)
}

fn check_inputs(model: &Model, data: &LabeledDataset, hierarchy: &ClusterHierarchy, synset: &Synset) -> Result<()> {
    hierarchy.check_against(data)?;
    if synset.num_clusters() != hierarchy.num_clusters() || synset.image_shape() != data.image_shape() {
        return Err(Error::ShapeMismatch {
            context: "synset vs hierarchy (clusters, image length)".into(),
            expected: vec![hierarchy.num_clusters(), data.image_len()],
            got: vec![synset.num_clusters(), synset.image_len()],
        });
    }
    for k in 0..hierarchy.num_clusters() {
        if synset.class_of(k) != hierarchy.class_of(k) {
            return Err(Error::InvalidArgument(format!("synset cluster {k} has the wrong class")));
        }
    }
    if model.input_len() != data.image_len() {
        return Err(Error::ShapeMismatch {
            context: "model input vs images".into(),
            expected: vec![model.input_len()],
            got: vec![data.image_len()],
        });
    }
    Ok(())
}

/// Parameters at which the synthetic gradient is taken, and the target passed
/// to the matching distance (which compares against `−target`).
fn pairing<'a>(mode: Mode, theta_t: &'a ParamVector, theta_ts: &'a ParamVector, g_r: ParamVector) -> (&'a ParamVector, ParamVector) {
    match mode {
        Mode::Reverse => (theta_ts, g_r),
        Mode::Forward => (theta_t, g_r.scaled(-1.0)),
    }
}

fn shifted_batch(b: &LabeledBatch, shift: Option<Shift>, image_shape: &[usize]) -> LabeledBatch {
    match shift {
        None => b.clone(),
        Some(s) => LabeledBatch {
            inputs: crate::diffcore::Tensor::new(b.inputs.shape().to_vec(), s.apply(b.inputs.data(), image_shape))
                .expect("shift keeps the shape"),
            labels: b.labels.clone(),
        },
    }
}

/// Runs `cfg.steps` reverse (or forward) matching iterations starting from
/// `init`. Every iteration draws one start epoch `t` and updates all clusters.
#[allow(clippy::too_many_arguments)]
pub fn distill(
    model: &Model,
    traj: &Trajectory,
    data: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    init: Synset,
    cfg: &DistillConfig,
    workers: usize,
) -> Result<(Synset, Vec<IterationLog>)> {
    cfg.validate()?;
    check_inputs(model, data, hierarchy, &init)?;
    let mut synset = init;
    synset.mode = cfg.mode;
    synset.traj_hash = traj.hash();
    synset.config_hash = cfg.hash();
    let mut log = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok((synset, log));
    }
    let starts = start_epochs(traj, cfg.step_len)?;
    let dist = GradDistance::new(cfg.dist, model.layout().clone());
    let clusters: Vec<usize> = (0..hierarchy.num_clusters()).collect();
    let batch_size = traj.config.batch_size;
    let real: Vec<LabeledBatch> = clusters.iter().map(|&k| data.batch(hierarchy.cluster(k))).collect();
    for it in 0..cfg.steps {
        let t = starts[rng::substream(cfg.seed, "distill-start", it as u64).random_range(0..starts.len())];
        let theta_t = traj.get(t).expect("start epochs have checkpoints");
        let theta_ts = traj.get(t + cfg.step_len).expect("start epochs have checkpoints");
        let current = &synset;
        let updates = parallel_map(workers, &clusters, |_, &k| -> Result<(f64, usize, Vec<f64>)> {
            let shift = cfg
                .augment
                .then(|| Shift::random(&mut rng::substream(cfg.seed, "augment", (it * clusters.len() + k) as u64)));
            let g_r = real_gradient(model, theta_t, &shifted_batch(&real[k], shift, data.image_shape()), batch_size)?;
            let (at, target) = pairing(cfg.mode, theta_t, theta_ts, g_r);
            let sb = shifted_batch(&current.batch(&[k]), shift, data.image_shape());
            let ig = matching_gradient(model, at, &sb, &target, &dist)?;
            let grad = match shift {
                Some(s) => s.pull_back(ig.grad.data(), data.image_shape()),
                None => ig.grad.into_data(),
            };
            let next = current
                .cluster_pixels(k)
                .iter()
                .zip(&grad)
                .map(|(p, g)| (p - cfg.lr_img * g).clamp(0.0, 1.0))
                .collect();
            Ok((ig.value, ig.degenerate.len(), next))
        });
        let mut loss = 0.0;
        let mut degenerate = 0;
        let mut fresh = Vec::with_capacity(updates.len());
        for u in updates {
            let (v, d, px) = u?;
            loss += v;
            degenerate += d;
            fresh.push(px);
        }
        for (k, px) in fresh.into_iter().enumerate() {
            synset.cluster_pixels_mut(k).copy_from_slice(&px);
        }
        log.push(IterationLog { t, loss, degenerate });
    }
    Ok((synset, log))
}

/// Σ over `starts`, Σ over clusters, of the matching distance of `synset`
/// (without augmentation).
pub fn matching_loss(
    model: &Model,
    traj: &Trajectory,
    data: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    synset: &Synset,
    cfg: &DistillConfig,
    starts: &[usize],
) -> Result<f64> {
    check_inputs(model, data, hierarchy, synset)?;
    let dist = GradDistance::new(cfg.dist, model.layout().clone());
    let mut total = 0.0;
    for &t in starts {
        let missing = || Error::Config(format!("no checkpoint pair at ({t}, {})", t + cfg.step_len));
        let theta_t = traj.get(t).ok_or_else(missing)?;
        let theta_ts = traj.get(t + cfg.step_len).ok_or_else(missing)?;
        for k in 0..hierarchy.num_clusters() {
            let g_r = real_gradient(model, theta_t, &data.batch(hierarchy.cluster(k)), traj.config.batch_size)?;
            let (at, target) = pairing(cfg.mode, theta_t, theta_ts, g_r);
            total += matching_value(model, at, &synset.batch(&[k]), &target, &dist)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{cluster, embed, make_blobs, Extractor};
    use crate::nets::{Activation, Architecture, InitScheme, ModelSpec};
    use crate::trainer::{train, TrainConfig};

    fn micro() -> (Model, LabeledDataset, ClusterHierarchy, Trajectory) {
        let d = make_blobs(2, 16, 2, 5.0, 1).unwrap();
        let h = cluster(&d, &embed(&d, Extractor::RawPixels).unwrap(), 2, 0, 1).unwrap();
        let m = Model::new(ModelSpec {
            architecture: Architecture::Mlp { hidden: vec![6] },
            activation: Activation::Tanh,
            ..ModelSpec::default_mlp(vec![2], 2, 2)
        })
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::new(0.3, 12, 0)
        };
        let t = train(&m, &d, &cfg).unwrap();
        (m, d, h, t)
    }

    #[test]
    fn zero_steps_keep_the_init() {
        let (m, d, h, t) = micro();
        let s0 = init_synset(&d, &h, 1, 0).unwrap();
        let cfg = DistillConfig {
            steps: 0,
            ..Default::default()
        };
        let (s, log) = distill(&m, &t, &d, &h, s0.clone(), &cfg, 1).unwrap();
        assert_eq!(s.pixels(), s0.pixels());
        assert!(log.is_empty());
    }

    #[test]
    fn loss_decreases_and_pixels_stay_clamped() {
        let (m, d, h, t) = micro();
        let s0 = init_synset(&d, &h, 1, 0).unwrap();
        let cfg = DistillConfig {
            steps: 40,
            lr_img: 0.5,
            ..Default::default()
        };
        let starts = start_epochs(&t, cfg.step_len).unwrap();
        let before = matching_loss(&m, &t, &d, &h, &s0, &cfg, &starts).unwrap();
        let (s, _) = distill(&m, &t, &d, &h, s0, &cfg, 2).unwrap();
        let after = matching_loss(&m, &t, &d, &h, &s, &cfg, &starts).unwrap();
        assert!(after < before, "{after} >= {before}");
        assert!(s.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        let forward = DistillConfig {
            mode: Mode::Forward,
            ..cfg.clone()
        };
        let f = matching_loss(&m, &t, &d, &h, &s, &forward, &starts).unwrap();
        assert!((f - after).abs() > 1e-6);
    }

    #[test]
    fn parallel_distill_is_bit_identical() {
        let (m, d, h, t) = micro();
        let s0 = init_synset(&d, &h, 1, 0).unwrap();
        let cfg = DistillConfig {
            steps: 5,
            augment: true,
            ..Default::default()
        };
        let a = distill(&m, &t, &d, &h, s0.clone(), &cfg, 1).unwrap();
        let b = distill(&m, &t, &d, &h, s0, &cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stride_must_divide_step_len() {
        let (m, d, _, _) = micro();
        let cfg = TrainConfig {
            checkpoint_stride: 3,
            ..TrainConfig::new(0.1, 12, 0)
        };
        let t = train(&m, &d, &cfg).unwrap();
        assert!(matches!(start_epochs(&t, 4), Err(Error::Config(_))));
        assert_eq!(start_epochs(&t, 3).unwrap(), vec![0, 3, 6]);
        assert!(matches!(start_epochs(&t, 12), Err(Error::Config(_))));
    }

    #[test]
    fn scalar_case_converges_to_the_closed_form_minimizer() {
        // Linear softmax model on one input feature, one cluster, mse distance.
        // g_s(s) = [s·r(s), r(s)] with r = softmax(w s + b) − e_y; the distilled
        // value must minimize ‖g_s(s) + g_r‖² over [0, 1].
        let spec = ModelSpec {
            architecture: Architecture::Mlp { hidden: vec![] },
            activation: Activation::Relu,
            num_classes: 2,
            input_shape: vec![1],
            init: InitScheme::Normal,
            seed: 0,
        };
        let m = Model::new(spec).unwrap();
        let d = LabeledDataset::new(vec![1], vec![0.9, 0.8, 0.1, 0.2], vec![0, 0, 1, 1], 2).unwrap();
        let h = ClusterHierarchy::from_clusters(vec![vec![0, 1], vec![2, 3]], 1).unwrap();
        let theta = ParamVector::new(vec![1.5, -0.5, 0.2, -0.1], m.layout().clone()).unwrap();
        let traj = Trajectory {
            checkpoints: vec![(0, theta.clone()), (1, theta.clone()), (2, theta.clone())],
            config: TrainConfig {
                batch_size: 2,
                ..TrainConfig::new(0.1, 2, 0)
            },
            spec_hash: m.spec().hash(),
            epoch_loss: vec![],
        };
        let cfg = DistillConfig {
            steps: 3000,
            lr_img: 0.5,
            step_len: 1,
            dist: DistanceKind::Mse,
            ..Default::default()
        };
        let init = Synset::new(vec![1], 1, vec![0.5, 0.5], vec![0, 1], 2).unwrap();
        let (s, _) = distill(&m, &traj, &d, &h, init, &cfg, 1).unwrap();

        let (w, b) = ([1.5, -0.5], [0.2, -0.1]);
        for k in 0..2 {
            let g_r = real_gradient(&m, &theta, &d.batch(h.cluster(k)), 2).unwrap();
            let y = k;
            let objective = |x: f64| {
                let z = [w[0] * x + b[0], w[1] * x + b[1]];
                let mx = z[0].max(z[1]);
                let e = [(z[0] - mx).exp(), (z[1] - mx).exp()];
                let p = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
                let r = [p[0] - (y == 0) as u8 as f64, p[1] - (y == 1) as u8 as f64];
                let gs = [x * r[0], x * r[1], r[0], r[1]];
                gs.iter().zip(g_r.data()).map(|(a, c)| (a + c) * (a + c)).sum::<f64>()
            };
            // Dense grid then golden-section refinement.
            let mut best = 0.0;
            for i in 0..=10_000 {
                let x = i as f64 / 10_000.0;
                if objective(x) < objective(best) {
                    best = x;
                }
            }
            let (mut lo, mut hi) = ((best - 1e-4f64).max(0.0), (best + 1e-4f64).min(1.0));
            for _ in 0..100 {
                let a = lo + 0.382 * (hi - lo);
                let c = lo + 0.618 * (hi - lo);
                if objective(a) < objective(c) {
                    hi = c;
                } else {
                    lo = a;
                }
            }
            let got = s.cluster_pixels(k)[0];
            assert!((got - lo).abs() < 1e-4, "cluster {k}: distilled {got}, oracle {lo}");
        }
    }
}
