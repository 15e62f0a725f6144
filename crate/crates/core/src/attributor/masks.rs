use rand::seq::index::sample;
use rand::Rng as _;

use super::lstsq::rank;
use crate::error::{Error, Result};
use crate::rng;

const MAX_RETRIES: usize = 64;

/// Which of `K` clusters stay in the training set (`true`) or are deleted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PerturbationMask {
    bits: Vec<bool>,
}

impl PerturbationMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("a mask must keep at least one cluster".into()));
        }
        Ok(Self { bits })
    }

    pub fn ones(k: usize) -> Self {
        Self { bits: vec![true; k] }
    }

    /// All clusters kept except `deleted`.
    pub fn deleting(k: usize, deleted: &[usize]) -> Result<Self> {
        let mut bits = vec![true; k];
        for &d in deleted {
            *bits
                .get_mut(d)
                .ok_or_else(|| Error::InvalidArgument(format!("cluster {d} out of range for K = {k}")))? = false;
        }
        Self::new(bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|&&b| !b).count()
    }

    pub fn deleted(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| !self.bits[i]).collect()
    }

    pub fn kept(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    /// Deletion indicators `d = 1 − p`.
    pub fn deletion_vector(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect()
    }

    /// Regression weight: 1 for no or one deletion, `1 / zeros` otherwise.
    pub fn beta(&self) -> f64 {
        match self.zeros() {
            0 | 1 => 1.0,
            z => 1.0 / z as f64,
        }
    }
}

/// Rank of the design `[d | 1]` over `masks` plus the implicit no-deletion record.
pub fn design_rank(masks: &[PerturbationMask]) -> usize {
    let k = masks.first().map_or(0, PerturbationMask::len);
    let mut rows = vec![0.0; k];
    rows.push(1.0);
    for m in masks {
        rows.extend(m.deletion_vector());
        rows.push(1.0);
    }
    rank(&rows, masks.len() + 1, k + 1)
}

/// The `K` single-deletion masks followed by `count − K` random masks with
/// 1–3 deleted clusters. Together with the no-deletion record, the design
/// `[d | 1]` has full column rank `K + 1`.
pub fn sample_masks(k: usize, count: usize, seed: u64) -> Result<Vec<PerturbationMask>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 clusters to perturb, got {k}")));
    }
    if count < k {
        return Err(Error::InvalidArgument(format!("need at least K = {k} masks, got {count}")));
    }
    let max_zeros = 3.min(k - 1);
    for attempt in 0..MAX_RETRIES {
        let mut masks: Vec<PerturbationMask> =
            (0..k).map(|i| PerturbationMask::deleting(k, &[i]).expect("k >= 2")).collect();
        let mut r = rng::substream(seed, "masks", attempt as u64);
        while masks.len() < count {
            let z = r.random_range(1..=max_zeros);
            let deleted = sample(&mut r, k, z).into_vec();
            masks.push(PerturbationMask::deleting(k, &deleted)?);
        }
        if design_rank(&masks) == k + 1 {
            return Ok(masks);
        }
    }
    Err(Error::RankDeficient { rank: 0, needed: k + 1 })
}
