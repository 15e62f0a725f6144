//! Per-class K-means and the resulting two-level partition of a dataset.

use rand::Rng as _;

use super::dataset::LabeledDataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::pool::parallel_map;
use crate::rng::{self, Rng};

pub const MAX_LLOYD_ITERS: usize = 100;
pub const SHIFT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// Centroid index per point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(points: &[&[f64]], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[next]));
        }
    }
    chosen.iter().map(|&i| points[i].to_vec()).collect()
}

/// K-means with k-means++ seeding. Stops after [`MAX_LLOYD_ITERS`] rounds or
/// once no centroid moves more than [`SHIFT_TOL`]. A centroid left without
/// points takes over the point farthest from its own centroid.
pub fn kmeans(points: &[&[f64]], k: usize, rng: &mut Rng) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("k-means with k={k} on {n} points")));
    }
    let mut centroids = plus_plus(points, k, rng);
    let mut assignment = vec![0; n];
    let mut objective = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut dist = vec![0.0; n];
        let mut sizes = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignment[i] = j;
            dist[i] = d;
            sizes[j] += 1;
        }
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[assignment[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                })
                .expect("n >= k leaves a cluster with two points");
            sizes[assignment[far]] -= 1;
            assignment[far] = j;
            sizes[j] = 1;
            dist[far] = 0.0;
            centroids[j] = points[far].to_vec();
        }
        objective.push(dist.iter().sum());

        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, p) in points.iter().enumerate() {
            for (s, v) in sums[assignment[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (j, s) in sums.iter_mut().enumerate() {
            for v in s.iter_mut() {
                *v /= sizes[j] as f64;
            }
            shift = shift.max(sq_dist(s, &centroids[j]).sqrt());
        }
        centroids = sums;
        if shift < SHIFT_TOL {
            break;
        }
    }
    Ok(KMeans {
        assignment,
        centroids,
        objective,
    })
}

/// Class-level and cluster-level partitions of `[0, N)`.
///
/// Cluster `κ` belongs to class `κ / C`; within a class, clusters are ordered
/// by their smallest member index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterHierarchy {
    clusters: Vec<Vec<usize>>,
    classes: Vec<Vec<usize>>,
    per_class: usize,
}

impl ClusterHierarchy {
    /// Validates that the clusters are nonempty, disjoint and cover `[0, N)`.
    pub fn from_clusters(mut clusters: Vec<Vec<usize>>, per_class: usize) -> Result<Self> {
        if per_class == 0 || clusters.is_empty() || clusters.len() % per_class != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} clusters cannot split into groups of {per_class}",
                clusters.len()
            )));
        }
        let n: usize = clusters.iter().map(Vec::len).sum();
        let mut seen = vec![false; n];
        for (k, c) in clusters.iter_mut().enumerate() {
            if c.is_empty() {
                return Err(Error::ClusterTooSmall {
                    cluster: k,
                    size: 0,
                    needed: 1,
                });
            }
            c.sort_unstable();
            for &i in c.iter() {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidArgument(format!(
                        "clusters do not partition [0, {n}): index {i} repeated or out of range"
                    )));
                }
            }
        }
        let classes = clusters
            .chunks(per_class)
            .map(|g| {
                let mut v: Vec<usize> = g.concat();
                v.sort_unstable();
                v
            })
            .collect();
        Ok(Self {
            clusters,
            classes,
            per_class,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn clusters_per_class(&self) -> usize {
        self.per_class
    }

    /// Total number of samples.
    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn cluster(&self, k: usize) -> &[usize] {
        &self.clusters[k]
    }

    pub fn class_partition(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn class_of(&self, k: usize) -> usize {
        k / self.per_class
    }

    /// Global ids of the clusters of class `l`.
    pub fn clusters_of_class(&self, l: usize) -> std::ops::Range<usize> {
        l * self.per_class..(l + 1) * self.per_class
    }

    /// The same data with one cluster per class.
    pub fn class_level(&self) -> ClusterHierarchy {
        Self {
            clusters: self.classes.clone(),
            classes: self.classes.clone(),
            per_class: 1,
        }
    }

    /// Sorted sample indices of all clusters not in `excluded`.
    pub fn remaining(&self, excluded: &[usize]) -> Vec<usize> {
        let mut keep: Vec<usize> = (0..self.num_clusters())
            .filter(|k| !excluded.contains(k))
            .flat_map(|k| self.clusters[k].iter().copied())
            .collect();
        keep.sort_unstable();
        keep
    }

    /// Checks that class `l` of the partition holds exactly the samples labeled `l`.
    pub fn check_against(&self, data: &LabeledDataset) -> Result<()> {
        if self.len() != data.len() || self.num_classes() != data.class_count() {
            return Err(Error::ShapeMismatch {
                context: "cluster hierarchy vs dataset (samples, classes)".into(),
                expected: vec![data.len(), data.class_count()],
                got: vec![self.len(), self.num_classes()],
            });
        }
        if self.classes != data.class_indices() {
            return Err(Error::InvalidArgument("cluster hierarchy disagrees with dataset labels".into()));
        }
        Ok(())
    }
}

/// Runs K-means with `per_class` centroids inside every class of `data`,
/// using `features` rows (one per sample).
pub fn cluster(
    data: &LabeledDataset,
    features: &Tensor,
    per_class: usize,
    seed: u64,
    workers: usize,
) -> Result<ClusterHierarchy> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("clusters per class must be >= 1".into()));
    }
    let shape = features.shape();
    if shape.len() != 2 || shape[0] != data.len() {
        return Err(Error::ShapeMismatch {
            context: "cluster features".into(),
            expected: vec![data.len(), shape.get(1).copied().unwrap_or(0)],
            got: shape.to_vec(),
        });
    }
    let by_class = data.class_indices();
    for (class, idx) in by_class.iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::ClassTooSmall {
                class,
                size: idx.len(),
                needed: per_class,
            });
        }
    }
    let rows: Vec<&[f64]> = features.rows().collect();
    let per_class_result = parallel_map(workers, &by_class, |l, idx| -> Result<Vec<Vec<usize>>> {
        let pts: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
        let km = kmeans(&pts, per_class, &mut rng::substream(seed, "cluster", l as u64))?;
        let mut groups = vec![Vec::new(); per_class];
        for (p, &c) in km.assignment.iter().enumerate() {
            groups[c].push(idx[p]);
        }
        groups.sort_by_key(|g| g[0]);
        Ok(groups)
    });
    let mut clusters = Vec::with_capacity(per_class * by_class.len());
    for r in per_class_result {
        clusters.extend(r?);
    }
    ClusterHierarchy::from_clusters(clusters, per_class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::blobs::{make_mixture, BlobComponent};
    use proptest::prelude::*;

    fn raw(d: &LabeledDataset) -> Tensor {
        Tensor::new(vec![d.len(), d.image_len()], d.pixels().to_vec()).unwrap()
    }

    #[test]
    fn one_cluster_per_class_is_the_class_partition() {
        let d = crate::datahub::make_blobs(3, 7, 2, 4.0, 2).unwrap();
        let h = cluster(&d, &raw(&d), 1, 0, 1).unwrap();
        assert_eq!(h.clusters(), d.class_indices().as_slice());
        assert_eq!(h.class_level(), h);
    }

    #[test]
    fn class_too_small_names_the_class() {
        let d = LabeledDataset::new(vec![1], vec![0.0, 0.1, 0.2], vec![0, 0, 1], 2).unwrap();
        let err = cluster(&d, &raw(&d), 2, 0, 1).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { class: 1, size: 1, needed: 2 }));
    }

    /// Best 2-partition by exhaustive search over all assignments.
    fn brute_force_two(points: &[&[f64]]) -> Vec<usize> {
        let n = points.len();
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1..(1u32 << (n - 1)) {
            let mut cost = 0.0;
            for side in [0, 1] {
                let members: Vec<&[f64]> = (0..n).filter(|&i| (mask >> i) & 1 == side).map(|i| points[i]).collect();
                let mut mean = vec![0.0; points[0].len()];
                for m in &members {
                    for (a, b) in mean.iter_mut().zip(m.iter()) {
                        *a += b / members.len() as f64;
                    }
                }
                cost += members.iter().map(|m| sq_dist(m, &mean)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        (0..n).map(|i| ((best.1 >> i) & 1) as usize).collect()
    }

    #[test]
    fn separated_sub_blobs_are_recovered_exactly() {
        let comp = |c: [f64; 2], class, count| BlobComponent {
            center: c.to_vec(),
            class,
            count,
        };
        let d = make_mixture(
            &[
                comp([0.0, 0.0], 0, 6),
                comp([12.0, 0.0], 0, 6),
                comp([0.0, 30.0], 1, 5),
                comp([12.0, 30.0], 1, 7),
            ],
            2,
            4,
        )
        .unwrap();
        let h = cluster(&d, &raw(&d), 2, 11, 2).unwrap();
        assert_eq!(h.num_clusters(), 4);
        for l in 0..2 {
            let idx = &d.class_indices()[l];
            let pts: Vec<&[f64]> = idx.iter().map(|&i| d.image(i)).collect();
            let bf = brute_force_two(&pts);
            let group0: Vec<usize> = idx.iter().zip(&bf).filter(|(_, &s)| s == bf[0]).map(|(&i, _)| i).collect();
            assert_eq!(h.cluster(l * 2), group0.as_slice());
            // The brute-force optimum is also the generating split.
            let generating: Vec<usize> = if l == 0 { (0..6).collect() } else { (12..17).collect() };
            assert_eq!(group0, generating);
        }
    }

    proptest! {
        #[test]
        fn kmeans_invariants(values in proptest::collection::vec(0.0f64..1.0, 6..60), k in 1usize..4, seed in 0u64..1000) {
            let pts: Vec<&[f64]> = values.chunks_exact(2).collect();
            prop_assume!(pts.len() >= k);
            let a = kmeans(&pts, k, &mut rng::substream(seed, "t", 0)).unwrap();
            let b = kmeans(&pts, k, &mut rng::substream(seed, "t", 0)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.objective.len() <= MAX_LLOYD_ITERS);
            for w in a.objective.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
            }
            let mut sizes = vec![0; k];
            for &c in &a.assignment { sizes[c] += 1; }
            prop_assert!(sizes.iter().all(|&s| s > 0));
        }

        #[test]
        fn hierarchy_partitions_the_dataset(seed in 0u64..200, c in 1usize..4) {
            let d = crate::datahub::make_blobs(3, 8, 3, 3.0, seed).unwrap();
            let h = cluster(&d, &raw(&d), c, seed, 1).unwrap();
            prop_assert_eq!(h.num_clusters(), 3 * c);
            let mut all: Vec<usize> = h.clusters().concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
            for k in 0..h.num_clusters() {
                prop_assert!(h.cluster(k).iter().all(|&i| d.label(i) == h.class_of(k)));
            }
            h.check_against(&d).unwrap();
        }
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let v = [0.5, 0.5];
        let pts: Vec<&[f64]> = vec![&v; 5];
        let km = kmeans(&pts, 3, &mut rng::substream(0, "t", 0)).unwrap();
        let mut sizes = [0; 3];
        for &c in &km.assignment {
            sizes[c] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0));
    }
}
