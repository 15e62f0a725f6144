//! Parameter gradients and the gradient-matching input gradient.

use serde::{Deserialize, Serialize};

use super::distance::GradDistance;
use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::datahub::LabeledBatch;
use crate::error::{Error, Result};
use crate::nets::{Model, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy against the integer label.
    CrossEntropy,
    /// Squared error of the raw outputs against the one-hot label, summed over outputs.
    SquaredError,
}

/// `weight × Σ_i loss_i` over the batch, as a scalar node.
pub fn loss_node(g: &mut Graph, logits: NodeId, labels: &[usize], kind: LossKind, weight: f64) -> NodeId {
    let shape = g.shape(logits).to_vec();
    let (n, c) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; n * c];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * c + y] = 1.0;
    }
    let target = g.constant(Tensor::from_parts(shape, onehot));
    match kind {
        LossKind::CrossEntropy => {
            let ls = g.log_softmax_rows(logits);
            let picked = g.dot(ls, target);
            g.scale(picked, -weight)
        }
        LossKind::SquaredError => {
            let d = g.sub(logits, target);
            let sq = g.dot(d, d);
            g.scale(sq, weight)
        }
    }
}

fn collect(g: &Graph, model: &Model, nodes: &[NodeId]) -> ParamVector {
    let mut data = Vec::with_capacity(model.num_params());
    for &n in nodes {
        data.extend_from_slice(g.value(n).data());
    }
    ParamVector::new(data, model.layout().clone()).expect("gradient matches layout")
}

/// Gradient of the mean loss over `batch` with respect to every parameter.
pub fn grad_params(model: &Model, params: &ParamVector, batch: &LabeledBatch, loss: LossKind) -> Result<ParamVector> {
    let w = 1.0 / batch.len().max(1) as f64;
    grad_params_weighted(model, params, batch, loss, w).map(|(_, g)| g)
}

/// Gradient of `weight × Σ loss` over `batch`; also returns the loss value.
pub fn grad_params_weighted(
    model: &Model,
    params: &ParamVector,
    batch: &LabeledBatch,
    loss: LossKind,
    weight: f64,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient of an empty batch".into()));
    }
    model.check_params(params)?;
    model.check_inputs(&batch.inputs)?;
    model.check_labels(&batch.labels)?;
    if let Some(name) = params.non_finite_segment() {
        return Err(Error::NumericFailure(format!("parameters of layer {name}")));
    }
    let mut g = Graph::new();
    let p = model.bind(&mut g, params, true);
    let x = g.constant(batch.inputs.clone());
    let z = model.forward(&mut g, &p, x);
    let l = loss_node(&mut g, z, &batch.labels, loss, weight);
    let value = g.value(l).item();
    let grads = g.grad(l, &p)?;
    let out = collect(&g, model, &grads);
    if !value.is_finite() {
        let layer = out.non_finite_segment().unwrap_or("out.weight");
        return Err(Error::NumericFailure(format!("loss (first non-finite gradient in layer {layer})")));
    }
    if let Some(name) = out.non_finite_segment() {
        return Err(Error::NumericFailure(format!("gradient of layer {name}")));
    }
    Ok((value, out))
}

/// Result of differentiating a gradient-matching distance with respect to
/// the synthetic inputs.
#[derive(Clone, Debug)]
pub struct InputGradient {
    /// Distance value at the current inputs.
    pub value: f64,
    /// `∂ distance / ∂ inputs`, same shape as the synthetic inputs.
    pub grad: Tensor,
    /// Cosine segments treated as orthogonal because a side had ~zero norm.
    pub degenerate: Vec<String>,
}

fn matching_graph(
    model: &Model,
    params: &ParamVector,
    synth: &LabeledBatch,
    target_grad: &ParamVector,
    dist: &GradDistance,
) -> Result<(Graph, NodeId, NodeId, Vec<String>)> {
    if synth.is_empty() {
        return Err(Error::InvalidArgument("empty synthetic batch".into()));
    }
    model.check_params(params)?;
    model.check_params(target_grad)?;
    model.check_inputs(&synth.inputs)?;
    model.check_labels(&synth.labels)?;
    if !synth.inputs.is_finite() {
        return Err(Error::NumericFailure("synthetic inputs".into()));
    }
    let mut g = Graph::new();
    let p = model.bind(&mut g, params, true);
    let x = g.param(synth.inputs.clone());
    let z = model.forward(&mut g, &p, x);
    let l = loss_node(&mut g, z, &synth.labels, LossKind::CrossEntropy, 1.0 / synth.len() as f64);
    let gs = g.grad(l, &p)?;
    let neg_target: Vec<NodeId> = model
        .layout()
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let v = target_grad.segment(i).iter().map(|v| -v).collect();
            g.constant(Tensor::from_parts(seg.shape.clone(), v))
        })
        .collect();
    let (d, degenerate) = dist.build(&mut g, &gs, &neg_target);
    Ok((g, x, d, degenerate))
}

/// `dist(∇_θ L(θ, S), −target_grad)` without differentiating it.
pub fn matching_value(
    model: &Model,
    params: &ParamVector,
    synth: &LabeledBatch,
    target_grad: &ParamVector,
    dist: &GradDistance,
) -> Result<f64> {
    let (g, _, d, _) = matching_graph(model, params, synth, target_grad, dist)?;
    Ok(g.value(d).item())
}

/// `∂/∂S dist(∇_θ L(θ, S), −target_grad)`, treating degenerate cosine
/// segments as constant distance 1 and listing them.
pub fn matching_gradient(
    model: &Model,
    params: &ParamVector,
    synth: &LabeledBatch,
    target_grad: &ParamVector,
    dist: &GradDistance,
) -> Result<InputGradient> {
    let (mut g, x, d, degenerate) = matching_graph(model, params, synth, target_grad, dist)?;
    let value = g.value(d).item();
    let gx = g.grad(d, &[x])?[0];
    let grad = g.value(gx).clone();
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::NumericFailure("matching loss gradient".into()));
    }
    Ok(InputGradient {
        value,
        grad,
        degenerate,
    })
}

/// Like [`matching_gradient`], but a degenerate cosine segment is an error.
pub fn grad_synthetic(
    model: &Model,
    params: &ParamVector,
    synth: &LabeledBatch,
    target_grad: &ParamVector,
    dist: &GradDistance,
) -> Result<InputGradient> {
    let out = matching_gradient(model, params, synth, target_grad, dist)?;
    if !out.degenerate.is_empty() {
        return Err(Error::DegenerateSegment(out.degenerate));
    }
    Ok(out)
}

/// Central-difference estimate of `∇f(x)`.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    try_finite_diff(|v| Ok(f(v)), x, eps).expect("infallible")
}

/// [`finite_diff`] for fallible functions; the first evaluation error is returned.
pub fn try_finite_diff(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = f(&probe)?;
        probe[i] = x[i] - eps;
        let lo = f(&probe)?;
        probe[i] = x[i];
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(out)
}
