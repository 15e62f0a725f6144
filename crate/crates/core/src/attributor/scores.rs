use serde::{Deserialize, Serialize};

use super::fit::AttributionModel;
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `‖ŷ − ref‖²`: most influential on the prediction.
    Dist1L2,
    /// `−ln ŷ[y]`: most influential on being correct.
    Dist2Ce,
    /// `1 / (1 + ‖ŷ − ref‖²)`: least influential.
    Dist3Inverse,
    /// `Σ_v (ŷ[v] − b[v])` for outputs holding per-sample validation losses:
    /// the summed change of validation loss caused by the deletion.
    ValSumCe,
    /// `KL(ref ‖ ŷ)`.
    Kl,
}

impl ObjectiveKind {
    pub const LOCATING: [ObjectiveKind; 3] = [Self::Dist1L2, Self::Dist2Ce, Self::Dist3Inverse];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dist1L2 => "dist1",
            Self::Dist2Ce => "dist2",
            Self::Dist3Inverse => "dist3",
            Self::ValSumCe => "val_sum_ce",
            Self::Kl => "kl",
        }
    }
}

/// What a scored outcome is compared against. A missing prediction falls back
/// to the model's own no-deletion outcome.
#[derive(Clone, Copy, Debug, Default)]
pub struct Reference<'a> {
    pub prediction: Option<&'a [f64]>,
    pub label: Option<usize>,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance of outcome `y` from the reference under `kind`.
pub fn objective_value(kind: ObjectiveKind, y: &[f64], reference: &[f64], label: Option<usize>) -> Result<f64> {
    Ok(match kind {
        ObjectiveKind::Dist1L2 => sq(y, reference),
        ObjectiveKind::Dist3Inverse => 1.0 / (1.0 + sq(y, reference)),
        ObjectiveKind::Dist2Ce => {
            let l = label.ok_or_else(|| Error::MissingReference("dist2 (ground-truth label)".into()))?;
            let p = *y
                .get(l)
                .ok_or_else(|| Error::InvalidArgument(format!("label {l} outside {} outputs", y.len())))?;
            -p.max(PROB_FLOOR).ln()
        }
        ObjectiveKind::ValSumCe => y.iter().zip(reference).map(|(a, b)| a - b).sum(),
        ObjectiveKind::Kl => reference
            .iter()
            .zip(y)
            .filter(|(r, _)| **r > 0.0)
            .map(|(r, q)| r * (r.max(PROB_FLOOR) / q.max(PROB_FLOOR)).ln())
            .sum(),
    })
}

/// Score of every cluster: the objective evaluated at the single-deletion
/// outcome `ŷ = W·e_κ + b`.
pub fn influence_scores(model: &AttributionModel, kind: ObjectiveKind, reference: Reference<'_>) -> Result<Vec<f64>> {
    let base = model.baseline();
    let r = match kind {
        ObjectiveKind::ValSumCe => &base,
        _ => reference.prediction.unwrap_or(&base),
    };
    if r.len() != model.num_outputs() {
        return Err(Error::ShapeMismatch {
            context: "reference prediction".into(),
            expected: vec![model.num_outputs()],
            got: vec![r.len()],
        });
    }
    (0..model.num_clusters())
        .map(|k| objective_value(kind, &model.outcome(&[k]), r, reference.label))
        .collect()
}

/// `‖W_κ‖₂` per cluster: the objective-free reading of "argmax W_κ".
pub fn weight_norm_scores(model: &AttributionModel) -> Vec<f64> {
    model.w.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// One query's outcome under the located cluster's exact unlearning.
#[derive(Clone, Debug, PartialEq)]
pub struct DistSample {
    /// `ỹ_t`, the target model's prediction.
    pub original: Vec<f64>,
    /// `y_t^u`, the prediction after exactly removing the located cluster.
    pub unlearned: Vec<f64>,
    pub label: usize,
}

/// Mean over samples of Dist1, Dist2 or Dist3.
pub fn avg_dist(kind: ObjectiveKind, samples: &[DistSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("avg_dist over zero samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += objective_value(kind, &s.unlearned, &s.original, Some(s.label))?;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributor::fit::FitDistance;

    fn model(w: Vec<Vec<f64>>, b: Vec<f64>) -> AttributionModel {
        AttributionModel {
            w,
            b,
            fit_residual: 0.0,
            objective: FitDistance::L2,
        }
    }

    #[test]
    fn zero_row_scores() {
        let m = model(vec![vec![0.0, 0.0], vec![0.3, -0.3]], vec![0.6, 0.4]);
        let s1 = influence_scores(&m, ObjectiveKind::Dist1L2, Reference::default()).unwrap();
        assert_eq!(s1[0], 0.0);
        assert!((s1[1] - 0.18).abs() < 1e-12);
        let s3 = influence_scores(&m, ObjectiveKind::Dist3Inverse, Reference::default()).unwrap();
        assert_eq!(s3[0], 1.0);
        assert!(s3[1] < 1.0);
        let sv = influence_scores(&m, ObjectiveKind::ValSumCe, Reference::default()).unwrap();
        assert_eq!(sv[0], 0.0);
    }

    #[test]
    fn dist2_needs_a_label() {
        let m = model(vec![vec![0.1, -0.1]], vec![0.5, 0.5]);
        assert!(matches!(
            influence_scores(&m, ObjectiveKind::Dist2Ce, Reference::default()),
            Err(Error::MissingReference(_))
        ));
        let s = influence_scores(&m, ObjectiveKind::Dist2Ce, Reference { prediction: None, label: Some(1) }).unwrap();
        assert!((s[0] - (-(0.4f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn identical_outcomes_give_extreme_averages() {
        let s = DistSample {
            original: vec![0.2, 0.8],
            unlearned: vec![0.2, 0.8],
            label: 1,
        };
        assert_eq!(avg_dist(ObjectiveKind::Dist1L2, &[s.clone(), s.clone()]).unwrap(), 0.0);
        assert_eq!(avg_dist(ObjectiveKind::Dist3Inverse, &[s.clone()]).unwrap(), 1.0);
        assert!((avg_dist(ObjectiveKind::Kl, &[s]).unwrap()).abs() < 1e-15);
    }
}
