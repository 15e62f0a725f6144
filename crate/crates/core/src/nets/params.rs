use std::sync::Arc;

use crate::error::{Error, Result};

/// One named parameter tensor inside a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Flat view of every model parameter with a per-layer segment table.
///
/// The segment table is shared between copies; only the values are cloned.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    segments: Arc<Vec<Segment>>,
}

impl ParamVector {
    /// Builds a vector after checking that `segments` tile `data` exactly.
    pub fn new(data: Vec<f64>, segments: Arc<Vec<Segment>>) -> Result<Self> {
        let mut cursor = 0;
        for s in segments.iter() {
            if s.offset != cursor || s.shape.iter().product::<usize>() != s.len {
                return Err(Error::Config(format!(
                    "segment {} does not tile the parameter vector (offset {}, expected {})",
                    s.name, s.offset, cursor
                )));
            }
            cursor += s.len;
        }
        if cursor != data.len() {
            return Err(Error::ShapeMismatch {
                context: "parameter vector".into(),
                expected: vec![cursor],
                got: vec![data.len()],
            });
        }
        Ok(Self { data, segments })
    }

    pub fn zeros(segments: Arc<Vec<Segment>>) -> Self {
        let n = segments.iter().map(|s| s.len).sum();
        Self {
            data: vec![0.0; n],
            segments,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.segments.clone())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segments(&self) -> &Arc<Vec<Segment>> {
        &self.segments
    }

    pub fn segment(&self, i: usize) -> &[f64] {
        let s = &self.segments[i];
        &self.data[s.offset..s.offset + s.len]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.segments, &other.segments) || self.segments == other.segments
    }

    pub(crate) fn check_layout(&self, other: &ParamVector, context: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                context: format!("{context}: segment maps differ"),
                expected: self.segments.iter().map(|s| s.len).collect(),
                got: other.segments.iter().map(|s| s.len).collect(),
            })
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        Self {
            data: self.data.iter().map(|v| v * alpha).collect(),
            segments: self.segments.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first segment holding a NaN or infinity.
    pub fn non_finite_segment(&self) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| self.data[s.offset..s.offset + s.len].iter().any(|v| !v.is_finite()))
            .map(|s| s.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Vec<Segment>> {
        Arc::new(vec![
            Segment {
                name: "a".into(),
                shape: vec![2, 2],
                offset: 0,
                len: 4,
            },
            Segment {
                name: "b".into(),
                shape: vec![2],
                offset: 4,
                len: 2,
            },
        ])
    }

    #[test]
    fn segments_must_tile() {
        assert!(ParamVector::new(vec![0.0; 6], layout()).is_ok());
        assert!(ParamVector::new(vec![0.0; 7], layout()).is_err());
        let gap = Arc::new(vec![Segment {
            name: "a".into(),
            shape: vec![2],
            offset: 1,
            len: 2,
        }]);
        assert!(ParamVector::new(vec![0.0; 3], gap).is_err());
    }

    #[test]
    fn names_non_finite_segment() {
        let mut p = ParamVector::zeros(layout());
        assert_eq!(p.non_finite_segment(), None);
        p.data_mut()[5] = f64::NAN;
        assert_eq!(p.non_finite_segment(), Some("b"));
    }
}
