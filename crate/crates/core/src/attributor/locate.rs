use std::collections::HashMap;

use super::masks::{sample_masks, PerturbationMask};
use super::scores::{influence_scores, ObjectiveKind, Reference};
use super::unlearn::Unlearner;
use crate::diffcore::Tensor;
use crate::distiller::Synset;
use crate::error::{Error, Result};
use crate::nets::argmax;

/// A located cluster: its class and its global id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Located {
    pub class: usize,
    pub cluster: usize,
}

fn query_tensor(inputs: &[Vec<f64>], image_shape: &[usize]) -> Result<Tensor> {
    let mut shape = vec![inputs.len()];
    shape.extend_from_slice(image_shape);
    Tensor::new(shape, inputs.concat())
}

fn scores_per_query(
    unlearner: &Unlearner<'_>,
    synset: &Synset,
    clusters: &[usize],
    masks: &[PerturbationMask],
    kind: ObjectiveKind,
    queries: &Tensor,
    labels: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let model = unlearner.attribution(synset, clusters, masks, queries)?;
    let original = unlearner.model.predict(unlearner.theta_tau, queries)?;
    let l = unlearner.model.num_classes();
    original
        .rows()
        .enumerate()
        .map(|(q, row)| {
            let sub = model.slice(q * l..(q + 1) * l);
            influence_scores(
                &sub,
                kind,
                Reference {
                    prediction: Some(row),
                    label: Some(labels[q]),
                },
            )
        })
        .collect()
}

/// Attributes every query over all `K` clusters of `synset` at once and
/// returns each query's argmax cluster. Costs one fine-tune per mask.
pub fn locate_flat(
    unlearner: &Unlearner<'_>,
    synset: &Synset,
    masks: &[PerturbationMask],
    kind: ObjectiveKind,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<Vec<Located>> {
    let clusters: Vec<usize> = (0..synset.num_clusters()).collect();
    let q = query_tensor(inputs, synset.image_shape())?;
    let per_class = synset.num_clusters() / synset.class_count();
    Ok(scores_per_query(unlearner, synset, &clusters, masks, kind, &q, labels)?
        .iter()
        .map(|s| {
            let k = argmax(s);
            Located {
                class: k / per_class.max(1),
                cluster: k,
            }
        })
        .collect())
}

/// Two-level search: the argmax class over the class-level synset (`K = L`),
/// then the argmax cluster over that class's `C` cluster synsets. Perturbed
/// models are shared between queries, so one query costs `L + C` fine-tunes.
/// Ties go to the lowest index.
pub fn locate_hierarchical(
    unlearner: &Unlearner<'_>,
    class_synset: &Synset,
    cluster_synset: &Synset,
    kind: ObjectiveKind,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<Vec<Located>> {
    let l = class_synset.num_clusters();
    if cluster_synset.num_clusters() % l != 0 {
        return Err(Error::ShapeMismatch {
            context: "cluster synset vs class synset".into(),
            expected: vec![l],
            got: vec![cluster_synset.num_clusters()],
        });
    }
    let c = cluster_synset.num_clusters() / l;
    let q = query_tensor(inputs, class_synset.image_shape())?;
    let classes: Vec<usize> = (0..l).collect();
    let class_masks = sample_masks(l, l, 0)?;
    let class_scores = scores_per_query(unlearner, class_synset, &classes, &class_masks, kind, &q, labels)?;
    let chosen: Vec<usize> = class_scores.iter().map(|s| argmax(s)).collect();

    let mut by_class: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &cls) in chosen.iter().enumerate() {
        by_class.entry(cls).or_default().push(i);
    }
    let mut out = vec![Located { class: 0, cluster: 0 }; inputs.len()];
    let mut order: Vec<usize> = by_class.keys().copied().collect();
    order.sort_unstable();
    for cls in order {
        let members = &by_class[&cls];
        let clusters: Vec<usize> = (cls * c..(cls + 1) * c).collect();
        let picks: Vec<usize> = if c == 1 {
            vec![0; members.len()]
        } else {
            let sub_inputs: Vec<Vec<f64>> = members.iter().map(|&i| inputs[i].clone()).collect();
            let sub_labels: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
            let sq = query_tensor(&sub_inputs, cluster_synset.image_shape())?;
            let masks = sample_masks(c, c, 0)?;
            scores_per_query(unlearner, cluster_synset, &clusters, &masks, kind, &sq, &sub_labels)?
                .iter()
                .map(|s| argmax(s))
                .collect()
        };
        for (&i, p) in members.iter().zip(picks) {
            out[i] = Located {
                class: cls,
                cluster: clusters[p],
            };
        }
    }
    Ok(out)
}
