use std::sync::atomic::{AtomicUsize, Ordering};

use super::fit::{fit_attribution, AttributionModel, FitDistance, Record};
use super::masks::PerturbationMask;
use crate::diffcore::Tensor;
use crate::distiller::{Mode, Synset};
use crate::error::{Error, Result};
use crate::nets::{Model, ParamVector};
use crate::pool::parallel_map;
use crate::trainer::{finetune, FinetuneConfig};

/// Fine-tunes `θ_τ` on the synthetic samples of the clusters that `mask`
/// deletes. A mask that deletes nothing returns `θ_τ` unchanged.
pub fn perturbed_model(
    model: &Model,
    theta_tau: &ParamVector,
    synset: &Synset,
    mask: &PerturbationMask,
    ft: &FinetuneConfig,
) -> Result<ParamVector> {
    if mask.len() != synset.num_clusters() {
        return Err(Error::ShapeMismatch {
            context: "mask vs synset clusters".into(),
            expected: vec![synset.num_clusters()],
            got: vec![mask.len()],
        });
    }
    let deleted = mask.deleted();
    if deleted.is_empty() {
        return Ok(theta_tau.clone());
    }
    finetune(model, theta_tau, &synset.batch(&deleted), ft)
}

/// Produces perturbed models from a synset and counts the fine-tuning runs.
///
/// Reverse mode fine-tunes `θ_τ` on the deleted clusters' synsets. Forward
/// mode (the plain gradient-matching baseline) trains from `θ_0` on the
/// synsets of every cluster that is kept.
pub struct Unlearner<'a> {
    pub model: &'a Model,
    pub theta_tau: &'a ParamVector,
    theta_0: Option<&'a ParamVector>,
    pub ft: FinetuneConfig,
    pub workers: usize,
    pub fit: FitDistance,
    count: AtomicUsize,
}

impl<'a> Unlearner<'a> {
    pub fn reverse(model: &'a Model, theta_tau: &'a ParamVector, ft: FinetuneConfig) -> Self {
        Self {
            model,
            theta_tau,
            theta_0: None,
            ft,
            workers: 1,
            fit: FitDistance::L2,
            count: AtomicUsize::new(0),
        }
    }

    pub fn forward(model: &'a Model, theta_0: &'a ParamVector, theta_tau: &'a ParamVector, ft: FinetuneConfig) -> Self {
        Self {
            theta_0: Some(theta_0),
            ..Self::reverse(model, theta_tau, ft)
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_fit(mut self, fit: FitDistance) -> Self {
        self.fit = fit;
        self
    }

    pub fn mode(&self) -> Mode {
        if self.theta_0.is_some() {
            Mode::Forward
        } else {
            Mode::Reverse
        }
    }

    /// Fine-tuning (or synset-training) runs so far.
    pub fn finetune_count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }

    /// Model with the given synset entries deleted.
    pub fn without(&self, synset: &Synset, deleted: &[usize]) -> Result<ParamVector> {
        match self.theta_0 {
            None => {
                if deleted.is_empty() {
                    return Ok(self.theta_tau.clone());
                }
                self.count.fetch_add(1, Ordering::Relaxed);
                finetune(self.model, self.theta_tau, &synset.batch(deleted), &self.ft)
            }
            Some(theta_0) => {
                let kept: Vec<usize> = (0..synset.num_clusters()).filter(|k| !deleted.contains(k)).collect();
                if kept.is_empty() {
                    return Ok(theta_0.clone());
                }
                self.count.fetch_add(1, Ordering::Relaxed);
                finetune(self.model, theta_0, &synset.batch(&kept), &self.ft)
            }
        }
    }

    /// Perturbed models for `masks` over the synset entries `clusters`
    /// (mask bit `i` refers to entry `clusters[i]`).
    pub fn perturbed_many(&self, synset: &Synset, clusters: &[usize], masks: &[PerturbationMask]) -> Result<Vec<ParamVector>> {
        if let Some(m) = masks.iter().find(|m| m.len() != clusters.len()) {
            return Err(Error::ShapeMismatch {
                context: "mask length vs clusters".into(),
                expected: vec![clusters.len()],
                got: vec![m.len()],
            });
        }
        parallel_map(self.workers, masks, |_, m| {
            let deleted: Vec<usize> = m.deleted().into_iter().map(|i| clusters[i]).collect();
            self.without(synset, &deleted)
        })
        .into_iter()
        .collect()
    }

    /// Fits the linear datamodel over `clusters` whose outputs are the
    /// perturbed models' class probabilities on `queries`, flattened query-major.
    /// The no-deletion record is always included.
    pub fn attribution(
        &self,
        synset: &Synset,
        clusters: &[usize],
        masks: &[PerturbationMask],
        queries: &Tensor,
    ) -> Result<AttributionModel> {
        let mut all = vec![PerturbationMask::ones(clusters.len())];
        all.extend_from_slice(masks);
        let params = self.perturbed_many(synset, clusters, &all)?;
        let mut records = Vec::with_capacity(all.len());
        for (mask, p) in all.into_iter().zip(&params) {
            let outputs = self.model.predict(p, queries)?.into_data();
            records.push(Record { mask, outputs });
        }
        let betas: Vec<f64> = records.iter().map(|r| r.mask.beta()).collect();
        fit_attribution(&records, &betas, self.fit)
    }
}
