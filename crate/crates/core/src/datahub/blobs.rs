use rand_distr::{Distribution, StandardNormal};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// One Gaussian component of a synthetic mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobComponent {
    pub center: Vec<f64>,
    pub class: usize,
    pub count: usize,
}

/// Samples an isotropic Gaussian mixture with unit within-component standard
/// deviation, then maps every coordinate into `[0, 1]` with one shared affine
/// map. Distances keep their ratios, so separations stay meaningful in units
/// of the component standard deviation.
///
/// Samples are emitted component by component, in the given order.
pub fn make_mixture(components: &[BlobComponent], class_count: usize, seed: u64) -> Result<LabeledDataset> {
    let dim = components.first().map_or(0, |c| c.center.len());
    if dim == 0 || components.iter().any(|c| c.center.len() != dim || c.count == 0) {
        return Err(Error::InvalidArgument(
            "mixture components need a common positive dimension and positive counts".into(),
        ));
    }
    let mut r = rng::substream(seed, "blobs", 0);
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for c in components {
        for _ in 0..c.count {
            raw.extend(c.center.iter().map(|m| {
                let z: f64 = StandardNormal.sample(&mut r);
                m + z
            }));
            labels.push(c.class);
        }
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let pixels = raw.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    LabeledDataset::new(vec![dim], pixels, labels, class_count)
}

/// `classes` Gaussian blobs of `per_class` points in `dim` dimensions whose
/// means are `separation` apart. Means sit on scaled coordinate axes when
/// `dim >= classes` (all pairs equidistant), otherwise on a line.
pub fn make_blobs(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument("make_blobs needs positive classes, per_class and dim".into()));
    }
    let components: Vec<BlobComponent> = (0..classes)
        .map(|l| {
            let mut center = vec![0.0; dim];
            if dim >= classes {
                center[l] = separation / std::f64::consts::SQRT_2;
            } else {
                center[0] = separation * l as f64;
            }
            BlobComponent {
                center,
                class: l,
                count: per_class,
            }
        })
        .collect();
    make_mixture(&components, classes.max(2), seed)
}
