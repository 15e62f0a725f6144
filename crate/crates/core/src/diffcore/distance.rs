use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use crate::nets::{ParamVector, Segment};

/// Added to the product of norms in the cosine denominator.
pub const NORM_EPS: f64 = 1e-12;
/// Segments with a smaller L2 norm count as orthogonal (distance 1).
pub const DEGENERATE_NORM: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Σ over segments of `1 - cos(a_seg, b_seg)`.
    LayerwiseCosine,
    /// Σ of squared differences.
    Mse,
}

/// Distance between two gradients that share a segment layout.
#[derive(Clone, Debug)]
pub struct GradDistance {
    pub kind: DistanceKind,
    pub layer_map: Arc<Vec<Segment>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GradDistance {
    pub fn new(kind: DistanceKind, layer_map: Arc<Vec<Segment>>) -> Self {
        Self { kind, layer_map }
    }

    pub fn eval(&self, a: &ParamVector, b: &ParamVector) -> f64 {
        match self.kind {
            DistanceKind::Mse => a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum(),
            DistanceKind::LayerwiseCosine => (0..self.layer_map.len())
                .map(|i| {
                    let (sa, sb) = (a.segment(i), b.segment(i));
                    let (na, nb) = (dot(sa, sa).sqrt(), dot(sb, sb).sqrt());
                    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
                        1.0
                    } else {
                        1.0 - dot(sa, sb) / (na * nb + NORM_EPS)
                    }
                })
                .sum(),
        }
    }

    /// Names of segments where either side is (numerically) zero.
    pub fn degenerate_segments(&self, a: &ParamVector, b: &ParamVector) -> Vec<String> {
        if self.kind != DistanceKind::LayerwiseCosine {
            return Vec::new();
        }
        self.layer_map
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let (sa, sb) = (a.segment(*i), b.segment(*i));
                dot(sa, sa).sqrt() < DEGENERATE_NORM || dot(sb, sb).sqrt() < DEGENERATE_NORM
            })
            .map(|(_, s)| s.name.clone())
            .collect()
    }

    /// Distance between per-segment nodes `a` and `b`, recorded on `g`.
    /// Returns the scalar node and the names of degenerate segments.
    pub fn build(&self, g: &mut Graph, a: &[NodeId], b: &[NodeId]) -> (NodeId, Vec<String>) {
        assert_eq!(a.len(), self.layer_map.len());
        assert_eq!(b.len(), self.layer_map.len());
        let mut degenerate = Vec::new();
        let mut total: Option<NodeId> = None;
        for (i, seg) in self.layer_map.iter().enumerate() {
            let term = match self.kind {
                DistanceKind::Mse => {
                    let d = g.sub(a[i], b[i]);
                    g.dot(d, d)
                }
                DistanceKind::LayerwiseCosine => {
                    let aa = g.dot(a[i], a[i]);
                    let bb = g.dot(b[i], b[i]);
                    let (na, nb) = (g.value(aa).item().sqrt(), g.value(bb).item().sqrt());
                    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
                        degenerate.push(seg.name.clone());
                        g.constant(crate::diffcore::Tensor::scalar(1.0))
                    } else {
                        let ab = g.dot(a[i], b[i]);
                        let na = g.sqrt(aa);
                        let nb = g.sqrt(bb);
                        let den = g.mul(na, nb);
                        let den = g.add_scalar(den, NORM_EPS);
                        let inv = g.recip(den);
                        let cos = g.mul(ab, inv);
                        let ncos = g.neg(cos);
                        g.add_scalar(ncos, 1.0)
                    }
                }
            };
            total = Some(match total {
                None => term,
                Some(t) => g.add(t, term),
            });
        }
        let total = total.unwrap_or_else(|| g.constant(crate::diffcore::Tensor::scalar(0.0)));
        (total, degenerate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<Vec<Segment>> {
        Arc::new(vec![
            Segment {
                name: "w".into(),
                shape: vec![3],
                offset: 0,
                len: 3,
            },
            Segment {
                name: "b".into(),
                shape: vec![2],
                offset: 3,
                len: 2,
            },
        ])
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec(), layout()).unwrap()
    }

    fn rescale(p: &ParamVector, s: [f64; 2]) -> ParamVector {
        let mut out = p.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= if i < 3 { s[0] } else { s[1] };
        }
        out
    }

    #[test]
    fn cosine_of_identical_nonzero_gradients_is_zero() {
        let d = GradDistance::new(DistanceKind::LayerwiseCosine, layout());
        let a = pv(&[1.0, -2.0, 0.5, 3.0, 4.0]);
        assert!(d.eval(&a, &a).abs() < 1e-12);
        assert!((d.eval(&a, &a.scaled(-1.0)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_segment_counts_as_orthogonal() {
        let d = GradDistance::new(DistanceKind::LayerwiseCosine, layout());
        let a = pv(&[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert!((d.eval(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(d.degenerate_segments(&a, &a), vec!["b".to_string()]);
    }

    proptest! {
        #[test]
        fn cosine_is_rescaling_invariant_and_bounded(
            a in proptest::collection::vec(-1.0f64..1.0, 5),
            b in proptest::collection::vec(-1.0f64..1.0, 5),
            s in 0.1f64..10.0,
            t in 0.1f64..10.0,
        ) {
            let (a, b) = (pv(&a), pv(&b));
            prop_assume!(d_ok(&a) && d_ok(&b));
            let cos = GradDistance::new(DistanceKind::LayerwiseCosine, layout());
            let base = cos.eval(&a, &b);
            prop_assert!((0.0..=4.0 + 1e-12).contains(&base));
            let moved = cos.eval(&rescale(&a, [s, t]), &rescale(&b, [t, s]));
            prop_assert!((base - moved).abs() < 1e-9);

            let mse = GradDistance::new(DistanceKind::Mse, layout());
            prop_assert!(mse.eval(&a, &b) >= 0.0);
            let scaled = mse.eval(&rescale(&a, [s, s]), &rescale(&b, [s, s]));
            let expected = s * s * mse.eval(&a, &b);
            prop_assert!((scaled - expected).abs() <= 1e-9 * expected.max(1.0));
        }
    }

    fn d_ok(p: &ParamVector) -> bool {
        (0..2).all(|i| p.segment(i).iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-3)
    }

    #[test]
    fn mse_is_not_rescaling_invariant() {
        let mse = GradDistance::new(DistanceKind::Mse, layout());
        let a = pv(&[1.0, 0.0, 0.0, 1.0, 0.0]);
        let b = pv(&[0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!((mse.eval(&a, &b) - 4.0).abs() < 1e-12);
        assert!((mse.eval(&a.scaled(2.0), &b.scaled(2.0)) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn graph_and_numeric_forms_agree() {
        for kind in [DistanceKind::LayerwiseCosine, DistanceKind::Mse] {
            let d = GradDistance::new(kind, layout());
            let a = pv(&[0.3, -0.2, 0.9, 0.1, -0.4]);
            let b = pv(&[-0.5, 0.25, 0.7, 0.3, 0.2]);
            let mut g = Graph::new();
            let an: Vec<_> = (0..2).map(|i| g.constant(crate::diffcore::Tensor::vector(a.segment(i).to_vec()))).collect();
            let bn: Vec<_> = (0..2).map(|i| g.constant(crate::diffcore::Tensor::vector(b.segment(i).to_vec()))).collect();
            let (node, deg) = d.build(&mut g, &an, &bn);
            assert!(deg.is_empty());
            assert!((g.value(node).item() - d.eval(&a, &b)).abs() < 1e-14);
        }
    }
}
