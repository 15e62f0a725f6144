use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attributor::Unlearner;
use crate::datahub::{ClusterHierarchy, LabeledDataset};
use crate::diffcore::{grad_params_weighted, LossKind};
use crate::distiller::{real_gradient, Mode, Synset};
use crate::error::{Error, Result};
use crate::nets::{argmax, Model, ParamVector};
use crate::trainer::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub cluster: usize,
    /// `‖θ̃_τ^κ − θ_τ^κ‖₂` for the synset-unlearned model.
    pub param_l2: f64,
    /// `‖θ_τ − θ_τ^κ‖₂`, the distance before unlearning.
    pub base_param_l2: f64,
    /// Fraction of held-out predictions shared with the oracle.
    pub agreement: f64,
    pub base_agreement: f64,
    /// Accumulated gradient mismatch along the trajectory.
    pub epsilon: f64,
}

fn synset_gradient(model: &Model, params: &ParamVector, synset: &Synset, k: usize) -> Result<ParamVector> {
    let w = 1.0 / synset.ipc() as f64;
    grad_params_weighted(model, params, &synset.batch(&[k]), LossKind::CrossEntropy, w).map(|(_, g)| g)
}

/// `Σ_t ‖∇L(θ_{τ−t}, S_κ) + ∇L(θ_t, D_κ)‖₁` over checkpoints `t` whose
/// mirror `τ − t` is also stored.
pub fn reverse_epsilon(
    model: &Model,
    traj: &Trajectory,
    data: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    synset: &Synset,
    kappa: usize,
) -> Result<f64> {
    let tau = traj.epochs();
    let real = data.batch(hierarchy.cluster(kappa));
    let mut eps = 0.0;
    for (t, theta_t) in &traj.checkpoints {
        let Some(mirror) = traj.get(tau - t) else { continue };
        let mut g = synset_gradient(model, mirror, synset, kappa)?;
        g.axpy(1.0, &real_gradient(model, theta_t, &real, traj.config.batch_size)?);
        eps += g.l1_norm();
    }
    Ok(eps)
}

/// `Σ_t Σ_{k≠κ} ‖∇L(θ_t, X_k) − ∇L(θ_t, D_k)‖₁` over all checkpoints.
pub fn forward_epsilon(
    model: &Model,
    traj: &Trajectory,
    data: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    synset: &Synset,
    kappa: usize,
) -> Result<f64> {
    let mut eps = 0.0;
    for (_, theta_t) in &traj.checkpoints {
        for k in (0..hierarchy.num_clusters()).filter(|&k| k != kappa) {
            let mut g = synset_gradient(model, theta_t, synset, k)?;
            let real = data.batch(hierarchy.cluster(k));
            g.axpy(-1.0, &real_gradient(model, theta_t, &real, traj.config.batch_size)?);
            eps += g.l1_norm();
        }
    }
    Ok(eps)
}

fn predictions(model: &Model, params: &ParamVector, data: &LabeledDataset) -> Result<Vec<usize>> {
    Ok(model.predict(params, &data.full_batch().inputs)?.rows().map(argmax).collect())
}

fn agreement(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len().max(1) as f64
}

/// Compares single-deletion unlearning through `unlearner` with the exact
/// oracles `θ_τ^κ` for every κ in `clusters`.
#[allow(clippy::too_many_arguments)]
pub fn unlearn_fidelity(
    unlearner: &Unlearner<'_>,
    traj: &Trajectory,
    data: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    synset: &Synset,
    oracles: &BTreeMap<usize, ParamVector>,
    clusters: &[usize],
    heldout: &LabeledDataset,
) -> Result<Vec<FidelityRow>> {
    let missing: Vec<usize> = clusters.iter().copied().filter(|k| !oracles.contains_key(k)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingOracle(missing));
    }
    let model = unlearner.model;
    let base = predictions(model, unlearner.theta_tau, heldout)?;
    let mut rows = Vec::with_capacity(clusters.len());
    for &k in clusters {
        let oracle = &oracles[&k];
        let unlearned = unlearner.without(synset, &[k])?;
        let truth = predictions(model, oracle, heldout)?;
        let epsilon = match unlearner.mode() {
            Mode::Reverse => reverse_epsilon(model, traj, data, hierarchy, synset, k)?,
            Mode::Forward => forward_epsilon(model, traj, data, hierarchy, synset, k)?,
        };
        rows.push(FidelityRow {
            cluster: k,
            param_l2: unlearned.distance(oracle),
            base_param_l2: unlearner.theta_tau.distance(oracle),
            agreement: agreement(&predictions(model, &unlearned, heldout)?, &truth),
            base_agreement: agreement(&base, &truth),
            epsilon,
        });
    }
    Ok(rows)
}
