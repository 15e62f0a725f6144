use std::path::Path;

use rand::seq::index::sample;

use super::Mode;
use crate::datahub::{ClusterHierarchy, LabeledBatch, LabeledDataset};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::nets::checkpoint::{put_f64s, put_string, Reader};
use crate::rng;

const MAGIC: &[u8; 8] = b"DDMSYN01";

/// `ipc` synthetic samples for each of `K` clusters, stored cluster-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Synset {
    image_shape: Vec<usize>,
    ipc: usize,
    pixels: Vec<f64>,
    labels: Vec<usize>,
    class_count: usize,
    pub mode: Mode,
    pub traj_hash: String,
    pub config_hash: String,
}

impl Synset {
    pub fn new(
        image_shape: Vec<usize>,
        ipc: usize,
        pixels: Vec<f64>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let per: usize = image_shape.iter().product();
        if ipc == 0 || labels.is_empty() || labels.len() % ipc != 0 || pixels.len() != per * labels.len() {
            return Err(Error::ShapeMismatch {
                context: "synset (ipc, labels, pixels)".into(),
                expected: vec![ipc.max(1), labels.len(), per * labels.len()],
                got: vec![ipc, labels.len(), pixels.len()],
            });
        }
        if labels.chunks(ipc).any(|c| c.iter().any(|&l| l != c[0])) {
            return Err(Error::InvalidArgument("samples of one cluster must share its class".into()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::InvalidLabel {
                index,
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            image_shape,
            ipc,
            pixels,
            labels,
            class_count,
            mode: Mode::Reverse,
            traj_hash: String::new(),
            config_hash: String::new(),
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.len() / self.ipc
    }

    pub fn ipc(&self) -> usize {
        self.ipc
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn class_of(&self, k: usize) -> usize {
        self.labels[k * self.ipc]
    }

    /// Pixels of cluster `k`, `ipc × image_len` values.
    pub fn cluster_pixels(&self, k: usize) -> &[f64] {
        let n = self.ipc * self.image_len();
        &self.pixels[k * n..(k + 1) * n]
    }

    pub fn cluster_pixels_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.ipc * self.image_len();
        &mut self.pixels[k * n..(k + 1) * n]
    }

    /// The synthetic samples of the given clusters, in the given order.
    pub fn batch(&self, clusters: &[usize]) -> LabeledBatch {
        let mut data = Vec::with_capacity(clusters.len() * self.ipc * self.image_len());
        let mut labels = Vec::with_capacity(clusters.len() * self.ipc);
        for &k in clusters {
            data.extend_from_slice(self.cluster_pixels(k));
            labels.extend_from_slice(&self.labels[k * self.ipc..(k + 1) * self.ipc]);
        }
        let mut shape = vec![labels.len()];
        shape.extend_from_slice(&self.image_shape);
        LabeledBatch {
            inputs: Tensor::from_parts(shape, data),
            labels,
        }
    }

    pub fn full_batch(&self) -> LabeledBatch {
        let all: Vec<usize> = (0..self.num_clusters()).collect();
        self.batch(&all)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.pixels.len() * 8);
        out.extend_from_slice(MAGIC);
        for v in [self.num_clusters(), self.ipc, self.class_count] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(self.image_shape.len() as u8);
        for &d in &self.image_shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(match self.mode {
            Mode::Reverse => 0,
            Mode::Forward => 1,
        });
        put_string(&mut out, &self.traj_hash);
        put_string(&mut out, &self.config_hash);
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        put_f64s(&mut out, &self.pixels);
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(8)? != MAGIC {
            return Err(Error::format(origin, "not a synset file (bad magic)"));
        }
        let k = r.u64()? as usize;
        let ipc = r.u64()? as usize;
        let classes = r.u64()? as usize;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let mode = match r.u8()? {
            0 => Mode::Reverse,
            1 => Mode::Forward,
            m => return Err(Error::format(origin, format!("unknown mode tag {m}"))),
        };
        let traj_hash = r.string()?;
        let config_hash = r.string()?;
        let n = k.checked_mul(ipc).ok_or_else(|| Error::format(origin, "size overflow"))?;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u32()? as usize);
        }
        let pixels = r.f64s(n * shape.iter().product::<usize>())?;
        r.finish()?;
        let mut s = Synset::new(shape, ipc, pixels, labels, classes)?;
        s.mode = mode;
        s.traj_hash = traj_hash;
        s.config_hash = config_hash;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::decode(&std::fs::read(path)?, path)
    }
}

/// Copies `ipc` distinct, uniformly drawn members of every cluster.
pub fn init_synset(data: &LabeledDataset, hierarchy: &ClusterHierarchy, ipc: usize, seed: u64) -> Result<Synset> {
    if ipc == 0 {
        return Err(Error::InvalidArgument("ipc must be >= 1".into()));
    }
    let mut pixels = Vec::with_capacity(hierarchy.num_clusters() * ipc * data.image_len());
    let mut labels = Vec::with_capacity(hierarchy.num_clusters() * ipc);
    for (k, members) in hierarchy.clusters().iter().enumerate() {
        if members.len() < ipc {
            return Err(Error::ClusterTooSmall {
                cluster: k,
                size: members.len(),
                needed: ipc,
            });
        }
        let mut r = rng::substream(seed, "synset-init", k as u64);
        let mut picks: Vec<usize> = sample(&mut r, members.len(), ipc).into_iter().map(|j| members[j]).collect();
        picks.sort_unstable();
        for i in picks {
            pixels.extend_from_slice(data.image(i));
            labels.push(data.label(i));
        }
    }
    Synset::new(data.image_shape().to_vec(), ipc, pixels, labels, data.class_count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (LabeledDataset, ClusterHierarchy) {
        let d = LabeledDataset::new(vec![2], (0..12).map(|v| v as f64 / 12.0).collect(), vec![0, 0, 1, 1, 0, 1], 2).unwrap();
        let h = ClusterHierarchy::from_clusters(vec![vec![0], vec![1, 4], vec![2, 3], vec![5]], 2).unwrap();
        (d, h)
    }

    #[test]
    fn singleton_clusters_give_the_dataset() {
        let (d, _) = toy();
        let order = [0, 1, 4, 2, 3, 5];
        let h = ClusterHierarchy::from_clusters(order.iter().map(|&i| vec![i]).collect(), 3).unwrap();
        let s = init_synset(&d, &h, 1, 7).unwrap();
        assert_eq!(s.full_batch(), d.batch(&order));
        assert_eq!(s, init_synset(&d, &h, 1, 7).unwrap());
    }

    #[test]
    fn too_small_cluster_is_rejected() {
        let (d, h) = toy();
        assert!(matches!(init_synset(&d, &h, 2, 0), Err(Error::ClusterTooSmall { cluster: 0, .. })));
    }

    #[test]
    fn file_round_trip() {
        let (d, h) = toy();
        let mut s = init_synset(&d, &h, 1, 3).unwrap();
        s.mode = Mode::Forward;
        s.traj_hash = "abc".into();
        let back = Synset::decode(&s.encode(), Path::new("mem")).unwrap();
        assert_eq!(back, s);
        let bytes = s.encode();
        assert!(matches!(Synset::decode(&bytes[..bytes.len() - 1], Path::new("m")), Err(Error::Truncated { .. })));
    }
}
