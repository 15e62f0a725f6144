//! Plain SGD with trajectory checkpoints, full-batch fine-tuning, and the
//! exact leave-clusters-out retraining oracle.

mod trajectory;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use trajectory::Trajectory;

use crate::datahub::{ClusterHierarchy, LabeledBatch, LabeledDataset};
use crate::diffcore::{grad_params_weighted, LossKind};
use crate::error::{Error, Result};
use crate::nets::{Model, ParamVector};
use crate::pool::parallel_map;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_net: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub checkpoint_stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn default_batch() -> usize {
    64
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(lr_net: f64, epochs: usize, seed: u64) -> Self {
        Self {
            lr_net,
            epochs,
            batch_size: default_batch(),
            checkpoint_stride: 1,
            seed,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_net >= 0.0 && self.lr_net.is_finite()) {
            return Err(Error::Config(format!("lr_net must be finite and >= 0, got {}", self.lr_net)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_stride == 0 {
            return Err(Error::Config("epochs, batch_size and checkpoint_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// How a fine-tuning loss combines the per-sample cross-entropies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Reduction {
    /// Mean over all samples.
    Mean,
    /// Sum over samples divided by `per_group`: every group of `per_group`
    /// samples (one synset cluster) contributes its own mean loss.
    SumPerGroup { per_group: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub reduction: Reduction,
}

fn check_step(epoch: usize, last_finite: usize, r: Result<(f64, ParamVector)>) -> Result<(f64, ParamVector)> {
    match r {
        Err(Error::NumericFailure(_)) => Err(Error::Diverged { epoch, last_finite }),
        other => other,
    }
}

fn sgd_step(params: &mut ParamVector, grad: &ParamVector, lr: f64, epoch: usize, last: usize) -> Result<()> {
    params.axpy(-lr, grad);
    if params.non_finite_segment().is_some() {
        return Err(Error::Diverged {
            epoch,
            last_finite: last,
        });
    }
    Ok(())
}

struct Run {
    checkpoints: Vec<(usize, ParamVector)>,
    epoch_loss: Vec<f64>,
}

fn run_sgd(model: &Model, data: &LabeledDataset, keep: Option<&[bool]>, cfg: &TrainConfig, record: bool) -> Result<Run> {
    cfg.validate()?;
    let mut params = model.init();
    let mut checkpoints = vec![(0, params.clone())];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut last_finite = 0;
    let included = keep.map_or(data.len(), |k| k.iter().filter(|&&b| b).count());
    if included == 0 {
        return Err(Error::InvalidArgument("no training samples left".into()));
    }
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng::substream(cfg.seed, "shuffle", epoch as u64));
        }
        if let Some(k) = keep {
            order.retain(|&i| k[i]);
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk);
            let w = 1.0 / chunk.len() as f64;
            let (loss, g) = check_step(
                epoch,
                last_finite,
                grad_params_weighted(model, &params, &batch, LossKind::CrossEntropy, w),
            )?;
            total += loss * chunk.len() as f64;
            sgd_step(&mut params, &g, cfg.lr_net, epoch, last_finite)?;
        }
        epoch_loss.push(total / order.len() as f64);
        let t = epoch + 1;
        if record && (t % cfg.checkpoint_stride == 0 || t == cfg.epochs) {
            checkpoints.push((t, params.clone()));
            last_finite = t;
        }
    }
    if !record {
        checkpoints = vec![(cfg.epochs, params)];
    }
    Ok(Run {
        checkpoints,
        epoch_loss,
    })
}

/// Trains from `model.init()` by mini-batch SGD, keeping `θ_0`, every
/// `checkpoint_stride`-th epoch, and `θ_τ`.
pub fn train(model: &Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Trajectory> {
    let run = run_sgd(model, data, None, cfg, true)?;
    Ok(Trajectory {
        checkpoints: run.checkpoints,
        config: cfg.clone(),
        spec_hash: model.spec().hash(),
        epoch_loss: run.epoch_loss,
    })
}

/// Full-batch SGD on `samples` for `cfg.epochs` steps from `start`.
pub fn finetune(model: &Model, start: &ParamVector, samples: &LabeledBatch, cfg: &FinetuneConfig) -> Result<ParamVector> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning needs at least one sample".into()));
    }
    model.check_params(start)?;
    let weight = match cfg.reduction {
        Reduction::Mean => 1.0 / samples.len() as f64,
        Reduction::SumPerGroup { per_group } => 1.0 / per_group.max(1) as f64,
    };
    let mut params = start.clone();
    if cfg.lr == 0.0 {
        return Ok(params);
    }
    for epoch in 0..cfg.epochs {
        let (_, g) = check_step(
            epoch,
            0,
            grad_params_weighted(model, &params, samples, LossKind::CrossEntropy, weight),
        )?;
        sgd_step(&mut params, &g, cfg.lr, epoch, 0)?;
    }
    Ok(params)
}

fn keep_mask(data: &LabeledDataset, hierarchy: &ClusterHierarchy, excluded: &[usize]) -> Result<Vec<bool>> {
    if hierarchy.len() != data.len() {
        return Err(Error::ShapeMismatch {
            context: "hierarchy vs dataset size".into(),
            expected: vec![data.len()],
            got: vec![hierarchy.len()],
        });
    }
    let mut keep = vec![true; data.len()];
    for &k in excluded {
        if k >= hierarchy.num_clusters() {
            return Err(Error::InvalidArgument(format!(
                "cluster {k} does not exist (K = {})",
                hierarchy.num_clusters()
            )));
        }
        for &i in hierarchy.cluster(k) {
            keep[i] = false;
        }
    }
    if !keep.iter().any(|&b| b) {
        return Err(Error::InvalidArgument("cannot exclude every cluster".into()));
    }
    Ok(keep)
}

/// `θ_τ` of the same run as [`train`] with the `excluded` clusters' samples
/// skipped inside each epoch's permutation.
pub fn retrain_without(
    model: &Model,
    data: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    excluded: &[usize],
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    let keep = keep_mask(data, hierarchy, excluded)?;
    let run = run_sgd(model, data, Some(&keep), cfg, false)?;
    Ok(run.checkpoints.into_iter().next().expect("final params").1)
}

/// [`retrain_without`] for many exclusion sets on a bounded worker pool.
pub fn retrain_many(
    model: &Model,
    data: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    excluded: &[Vec<usize>],
    cfg: &TrainConfig,
    workers: usize,
) -> Result<Vec<ParamVector>> {
    parallel_map(workers, excluded, |_, ex| retrain_without(model, data, hierarchy, ex, cfg))
        .into_iter()
        .collect()
}

/// Accuracy in `[0, 1]` over the whole dataset.
pub fn accuracy(model: &Model, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0.0;
    for chunk in all.chunks(1024) {
        correct += model.accuracy(params, &data.batch(chunk))? * chunk.len() as f64;
    }
    Ok(correct / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{cluster, make_blobs, Extractor};
    use crate::nets::ModelSpec;

    fn setup() -> (Model, LabeledDataset, ClusterHierarchy) {
        let d = make_blobs(2, 20, 2, 6.0, 3).unwrap();
        let f = crate::datahub::embed(&d, Extractor::RawPixels).unwrap();
        let h = cluster(&d, &f, 2, 0, 1).unwrap();
        let spec = ModelSpec {
            architecture: crate::nets::Architecture::Mlp { hidden: vec![8] },
            ..ModelSpec::default_mlp(vec![2], 2, 4)
        };
        (Model::new(spec).unwrap(), d, h)
    }

    fn cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            ..TrainConfig::new(lr, 30, 1)
        }
    }

    #[test]
    fn zero_lr_keeps_init() {
        let (m, d, _) = setup();
        let t = train(&m, &d, &cfg(0.0)).unwrap();
        assert_eq!(t.last(), t.initial());
        assert_eq!(t.initial(), &m.init());
        assert_eq!(t.checkpoints.len(), 31);
    }

    #[test]
    fn separable_blobs_train_well_and_reproducibly() {
        let (m, d, h) = setup();
        let c = cfg(0.5);
        let t = train(&m, &d, &c).unwrap();
        assert!(accuracy(&m, t.last(), &d).unwrap() > 0.95);
        assert!(m.loss(t.last(), &d.full_batch()).unwrap() < m.loss(t.initial(), &d.full_batch()).unwrap());
        assert_eq!(train(&m, &d, &c).unwrap(), t);
        assert_eq!(&retrain_without(&m, &d, &h, &[], &c).unwrap(), t.last());
    }

    #[test]
    fn excluding_a_class_collapses_predictions() {
        let (m, d, h) = setup();
        let c = cfg(0.5);
        let p = retrain_without(&m, &d, &h, &[2, 3], &c).unwrap();
        let probs = m.predict(&p, &d.full_batch().inputs).unwrap();
        let zeros = probs.rows().filter(|r| crate::nets::argmax(r) == 0).count();
        assert!(zeros as f64 > 0.99 * d.len() as f64);
        assert!(retrain_without(&m, &d, &h, &[0, 1, 2, 3], &c).is_err());
        let one = retrain_without(&m, &d, &h, &[0], &c).unwrap();
        let moved = one.distance(&train(&m, &d, &c).unwrap().last().clone());
        assert!(moved > 0.0 && moved < 100.0);
    }

    #[test]
    fn stride_and_final_checkpoint() {
        let (m, d, _) = setup();
        let c = TrainConfig {
            checkpoint_stride: 4,
            epochs: 10,
            ..cfg(0.1)
        };
        let t = train(&m, &d, &c).unwrap();
        let ep: Vec<usize> = t.checkpoints.iter().map(|c| c.0).collect();
        assert_eq!(ep, vec![0, 4, 8, 10]);
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        assert_eq!(Trajectory::load(dir.path()).unwrap(), t);
    }

    #[test]
    fn finetune_edge_cases() {
        let (m, d, _) = setup();
        let p = m.init();
        let b = d.batch(&[0, 1]);
        let ft = |epochs, lr| FinetuneConfig {
            epochs,
            lr,
            reduction: Reduction::Mean,
        };
        assert_eq!(finetune(&m, &p, &b, &ft(0, 0.1)).unwrap(), p);
        assert_eq!(finetune(&m, &p, &b, &ft(5, 0.0)).unwrap(), p);
        assert_ne!(finetune(&m, &p, &b, &ft(1, 0.1)).unwrap(), p);
    }

    #[test]
    fn divergence_is_reported() {
        let (m, d, _) = setup();
        let err = train(&m, &d, &cfg(1e300)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn parallel_retrains_match_sequential() {
        let (m, d, h) = setup();
        let c = cfg(0.3);
        let sets = vec![vec![0], vec![1], vec![3]];
        let par = retrain_many(&m, &d, &h, &sets, &c, 3).unwrap();
        let seq = retrain_many(&m, &d, &h, &sets, &c, 1).unwrap();
        assert_eq!(par, seq);
    }
}
