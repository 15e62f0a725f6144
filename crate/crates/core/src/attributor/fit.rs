use serde::{Deserialize, Serialize};

use super::lstsq::weighted_lstsq;
use super::masks::PerturbationMask;
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};

/// Observed outcome of one perturbation: the mask and the perturbed model's
/// output vector (e.g. class probabilities for one or more queries).
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub mask: PerturbationMask,
    pub outputs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDistance {
    /// Weighted least squares, solved exactly.
    L2,
    /// Weighted cross-entropy of `softmax(W d + b)` against each record's
    /// output vector, fitted by gradient descent.
    CrossEntropy,
}

/// Linear datamodel `ŷ(d) = Wᵀ d + b` over deletion indicators `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionModel {
    /// `K` rows of `m` outputs.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub fit_residual: f64,
    pub objective: FitDistance,
}

pub const GD_ITERS: usize = 3000;
pub const GD_LR: f64 = 0.5;

fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl AttributionModel {
    pub fn num_clusters(&self) -> usize {
        self.w.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.b.len()
    }

    /// Predicted outcome when exactly the `deleted` clusters are removed.
    pub fn outcome(&self, deleted: &[usize]) -> Vec<f64> {
        let mut z = self.b.clone();
        for &k in deleted {
            for (a, w) in z.iter_mut().zip(&self.w[k]) {
                *a += w;
            }
        }
        match self.objective {
            FitDistance::L2 => z,
            FitDistance::CrossEntropy => softmax(&z),
        }
    }

    /// Outcome when nothing is deleted.
    pub fn baseline(&self) -> Vec<f64> {
        self.outcome(&[])
    }

    /// The sub-model for outputs `range` (e.g. one query out of many fitted jointly).
    pub fn slice(&self, range: std::ops::Range<usize>) -> AttributionModel {
        AttributionModel {
            w: self.w.iter().map(|r| r[range.clone()].to_vec()).collect(),
            b: self.b[range].to_vec(),
            fit_residual: self.fit_residual,
            objective: self.objective,
        }
    }
}

fn validate(records: &[Record], betas: &[f64]) -> Result<(usize, usize)> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no records to fit".into()))?;
    let (k, m) = (first.mask.len(), first.outputs.len());
    if betas.len() != records.len() {
        return Err(Error::ShapeMismatch {
            context: "regression weights vs records".into(),
            expected: vec![records.len()],
            got: vec![betas.len()],
        });
    }
    if let Some(r) = records.iter().find(|r| r.mask.len() != k || r.outputs.len() != m) {
        return Err(Error::ShapeMismatch {
            context: "record (mask length, outputs)".into(),
            expected: vec![k, m],
            got: vec![r.mask.len(), r.outputs.len()],
        });
    }
    if records.len() < k + 1 {
        return Err(Error::RankDeficient {
            rank: records.len(),
            needed: k + 1,
        });
    }
    Ok((k, m))
}

/// Fits `W`, `b` to `records` with per-record weights `betas`.
pub fn fit_attribution(records: &[Record], betas: &[f64], fit: FitDistance) -> Result<AttributionModel> {
    let (k, m) = validate(records, betas)?;
    let n = records.len();
    let mut x = Vec::with_capacity(n * (k + 1));
    let mut y = Vec::with_capacity(n * m);
    for r in records {
        x.extend(r.mask.deletion_vector());
        x.push(1.0);
        y.extend_from_slice(&r.outputs);
    }
    let (coef, residual) = weighted_lstsq(&x, n, k + 1, &y, m, betas)?;
    let rows: Vec<Vec<f64>> = coef.chunks(m).map(<[f64]>::to_vec).collect();
    let mut model = AttributionModel {
        w: rows[..k].to_vec(),
        b: rows[k].clone(),
        fit_residual: residual,
        objective: FitDistance::L2,
    };
    if fit == FitDistance::CrossEntropy {
        model = fit_cross_entropy(records, betas, k, m, &x, GD_ITERS, GD_LR)?;
    }
    Ok(model)
}

fn fit_cross_entropy(
    records: &[Record],
    betas: &[f64],
    k: usize,
    m: usize,
    design: &[f64],
    iters: usize,
    lr: f64,
) -> Result<AttributionModel> {
    let n = records.len();
    let total_beta: f64 = betas.iter().sum();
    let mut target = Vec::with_capacity(n * m);
    for (r, &beta) in records.iter().zip(betas) {
        target.extend(r.outputs.iter().map(|v| -v * beta / total_beta));
    }
    let x = Tensor::new(vec![n, k + 1], design.to_vec())?;
    let t = Tensor::new(vec![n, m], target)?;
    let mut coef = vec![0.0; (k + 1) * m];
    let mut last = f64::NAN;
    for _ in 0..iters {
        let mut g = Graph::new();
        let c = g.param(Tensor::new(vec![k + 1, m], coef.clone())?);
        let xn = g.constant(x.clone());
        let tn = g.constant(t.clone());
        let z = g.matmul(xn, c);
        let ls = g.log_softmax_rows(z);
        let loss = g.dot(ls, tn);
        last = g.value(loss).item();
        let grad = g.grad(loss, &[c])?[0];
        for (a, d) in coef.iter_mut().zip(g.value(grad).data()) {
            *a -= lr * d;
        }
    }
    if !last.is_finite() || coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("cross-entropy attribution fit".into()));
    }
    let rows: Vec<Vec<f64>> = coef.chunks(m).map(<[f64]>::to_vec).collect();
    Ok(AttributionModel {
        w: rows[..k].to_vec(),
        b: rows[k].clone(),
        fit_residual: last * total_beta,
        objective: FitDistance::CrossEntropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributor::masks::sample_masks;
    use proptest::prelude::*;

    fn planted(k: usize, m: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let w = (0..k).map(|i| (0..m).map(|j| ((i * 3 + j * 5) % 7) as f64 - 3.0).collect()).collect();
        let b = (0..m).map(|j| j as f64 * 0.5).collect();
        (w, b)
    }

    fn records_for(masks: &[PerturbationMask], w: &[Vec<f64>], b: &[f64]) -> Vec<Record> {
        let model = AttributionModel {
            w: w.to_vec(),
            b: b.to_vec(),
            fit_residual: 0.0,
            objective: FitDistance::L2,
        };
        let mut all = vec![PerturbationMask::ones(w.len())];
        all.extend_from_slice(masks);
        all.into_iter()
            .map(|mask| Record {
                outputs: model.outcome(&mask.deleted()),
                mask,
            })
            .collect()
    }

    #[test]
    fn recovers_a_planted_model() {
        let (w, b) = planted(5, 3);
        let masks = sample_masks(5, 9, 1).unwrap();
        let recs = records_for(&masks, &w, &b);
        let betas: Vec<f64> = recs.iter().map(|r| r.mask.beta()).collect();
        let fit = fit_attribution(&recs, &betas, FitDistance::L2).unwrap();
        for (a, e) in fit.w.iter().flatten().chain(&fit.b).zip(w.iter().flatten().chain(&b)) {
            assert!((a - e).abs() < 1e-8);
        }
        assert!(fit.fit_residual < 1e-16);
    }

    #[test]
    fn duplicates_equal_doubled_weight() {
        let masks = sample_masks(3, 5, 2).unwrap();
        let mut recs = records_for(&masks, &planted(3, 2).0, &[0.0, 0.0]);
        for (i, r) in recs.iter_mut().enumerate() {
            r.outputs[0] += (i as f64 * 1.7).sin();
        }
        let betas: Vec<f64> = recs.iter().map(|r| r.mask.beta()).collect();
        let mut dup = recs.clone();
        dup.push(recs[2].clone());
        let mut dup_betas = betas.clone();
        dup_betas.push(betas[2]);
        let mut doubled = betas.clone();
        doubled[2] *= 2.0;
        let a = fit_attribution(&dup, &dup_betas, FitDistance::L2).unwrap();
        let b = fit_attribution(&recs, &doubled, FitDistance::L2).unwrap();
        for (x, y) in a.w.iter().flatten().chain(&a.b).zip(b.w.iter().flatten().chain(&b.b)) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_records_are_rank_deficient() {
        let masks = sample_masks(3, 3, 0).unwrap();
        let recs = records_for(&masks[..2], &planted(3, 1).0, &[0.0]);
        let err = fit_attribution(&recs, &[1.0; 3], FitDistance::L2).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn cross_entropy_fit_reproduces_distributions() {
        let masks = sample_masks(3, 3, 0).unwrap();
        let mut recs = vec![Record {
            mask: PerturbationMask::ones(3),
            outputs: vec![0.7, 0.2, 0.1],
        }];
        for (i, m) in masks.into_iter().enumerate() {
            let mut o = vec![0.2; 3];
            o[i] = 0.6;
            recs.push(Record { mask: m, outputs: o });
        }
        let fit = fit_attribution(&recs, &[1.0; 4], FitDistance::CrossEntropy).unwrap();
        for r in &recs {
            let got = fit.outcome(&r.mask.deleted());
            for (a, b) in got.iter().zip(&r.outputs) {
                assert!((a - b).abs() < 1e-2, "{got:?} vs {:?}", r.outputs);
            }
        }
    }

    proptest! {
        #[test]
        fn positive_beta_scaling_changes_nothing(scale in 0.01f64..100.0, seed in 0u64..100) {
            let masks = sample_masks(4, 8, seed).unwrap();
            let mut recs = records_for(&masks, &planted(4, 2).0, &[0.3, -0.2]);
            for (i, r) in recs.iter_mut().enumerate() {
                r.outputs[1] += ((i as f64 + seed as f64) * 2.3).sin();
            }
            let betas: Vec<f64> = recs.iter().map(|r| r.mask.beta()).collect();
            let scaled: Vec<f64> = betas.iter().map(|b| b * scale).collect();
            let a = fit_attribution(&recs, &betas, FitDistance::L2).unwrap();
            let b = fit_attribution(&recs, &scaled, FitDistance::L2).unwrap();
            for (x, y) in a.w.iter().flatten().chain(&a.b).zip(b.w.iter().flatten().chain(&b.b)) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
            }
            let col = |m: &AttributionModel| crate::nets::argmax(&m.w.iter().map(|r| r[1]).collect::<Vec<_>>());
            prop_assert_eq!(col(&a), col(&b));
        }
    }
}
