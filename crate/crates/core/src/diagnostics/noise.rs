use rand::seq::index::sample;
use rand::Rng;

use crate::datahub::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Which samples were corrupted and how to undo it.
#[derive(Clone, Debug, PartialEq)]
pub struct Corruption {
    pub mask: Vec<bool>,
    /// Per corrupted image, `image_len` values with `corrupted − delta == original` exactly.
    pub deltas: Vec<Vec<f64>>,
    /// Original labels of relabeled samples, by index.
    pub labels: Vec<(usize, usize)>,
}

fn pick(n: usize, fraction: f64, seed: u64, name: &str) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("corruption fraction must be in (0, 1], got {fraction}")));
    }
    let count = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut idx = sample(&mut rng::substream(seed, name, 0), n, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// A delta `d` with `fl(y − d) == x`.
fn exact_delta(x: f64, y: f64) -> f64 {
    let mut d = y - x;
    for _ in 0..64 {
        let back = y - d;
        if back == x {
            break;
        }
        d = if back > x { d.next_up() } else { d.next_down() };
    }
    d
}

/// Adds uniform noise in `[−norm, norm]` to a random `fraction` of images,
/// with one pixel forced to `±norm` so the L∞ perturbation equals `norm`
/// before clamping to `[0, 1]`.
pub fn inject_noise(data: &LabeledDataset, fraction: f64, norm: f64, seed: u64) -> Result<(LabeledDataset, Corruption)> {
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise norm must be positive, got {norm}")));
    }
    let chosen = pick(data.len(), fraction, seed, "noise")?;
    let mut out = data.clone();
    let n = data.image_len();
    let mut mask = vec![false; data.len()];
    let mut deltas = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        let mut r = rng::substream(seed, "noise-pixels", i as u64);
        let peak = r.random_range(0..n);
        let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let px = &mut out.pixels_mut()[i * n..(i + 1) * n];
        let mut d = Vec::with_capacity(n);
        for (j, p) in px.iter_mut().enumerate() {
            let u = if j == peak { sign * norm } else { r.random_range(-norm..=norm) };
            let x = *p;
            *p = (x + u).clamp(0.0, 1.0);
            d.push(exact_delta(x, *p));
        }
        mask[i] = true;
        deltas.push(d);
    }
    Ok((
        out,
        Corruption {
            mask,
            deltas,
            labels: Vec::new(),
        },
    ))
}

/// Replaces the label of a random `fraction` of samples with a different,
/// uniformly drawn class.
pub fn flip_labels(data: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, Corruption)> {
    let chosen = pick(data.len(), fraction, seed, "label-flip")?;
    let l = data.class_count();
    let mut out = data.clone();
    let mut mask = vec![false; data.len()];
    let mut labels = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        let old = data.label(i);
        let step = rng::substream(seed, "label-flip", 1 + i as u64).random_range(1..l);
        out.labels_mut()[i] = (old + step) % l;
        mask[i] = true;
        labels.push((i, old));
    }
    Ok((
        out,
        Corruption {
            mask,
            deltas: Vec::new(),
            labels,
        },
    ))
}

/// Undoes [`inject_noise`] or [`flip_labels`] bit-exactly.
pub fn restore(corrupted: &LabeledDataset, c: &Corruption) -> Result<LabeledDataset> {
    if c.mask.len() != corrupted.len() {
        return Err(Error::ShapeMismatch {
            context: "corruption mask".into(),
            expected: vec![corrupted.len()],
            got: vec![c.mask.len()],
        });
    }
    let mut out = corrupted.clone();
    let n = out.image_len();
    if !c.deltas.is_empty() {
        let idx: Vec<usize> = (0..c.mask.len()).filter(|&i| c.mask[i]).collect();
        for (&i, d) in idx.iter().zip(&c.deltas) {
            for (p, dv) in out.pixels_mut()[i * n..(i + 1) * n].iter_mut().zip(d) {
                *p -= dv;
            }
        }
    }
    for &(i, l) in &c.labels {
        out.labels_mut()[i] = l;
    }
    Ok(out)
}
