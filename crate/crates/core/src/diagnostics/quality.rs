use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::attributor::{
    fit_attribution, influence_scores, AttributionModel, FitDistance, ObjectiveKind, PerturbationMask, Record,
    Reference, Unlearner, PROB_FLOOR,
};
use crate::datahub::{ClusterHierarchy, LabeledDataset};
use crate::distiller::Synset;
use crate::error::{Error, Result};
use crate::nets::{Model, ParamVector};
use crate::rng;
use crate::trainer::{accuracy, retrain_many, TrainConfig};

/// Cross-entropy of every validation sample.
pub fn validation_losses(model: &Model, params: &ParamVector, val: &LabeledDataset) -> Result<Vec<f64>> {
    let probs = model.predict(params, &val.full_batch().inputs)?;
    Ok(probs
        .rows()
        .zip(val.labels())
        .map(|(p, &y)| -p[y].max(PROB_FLOOR).ln())
        .collect())
}

/// Datamodel whose outputs are the perturbed models' per-sample validation losses.
pub fn quality_attribution(
    unlearner: &Unlearner<'_>,
    synset: &Synset,
    masks: &[PerturbationMask],
    val: &LabeledDataset,
) -> Result<AttributionModel> {
    let clusters: Vec<usize> = (0..synset.num_clusters()).collect();
    let mut all = vec![PerturbationMask::ones(clusters.len())];
    all.extend_from_slice(masks);
    let params = unlearner.perturbed_many(synset, &clusters, &all)?;
    let mut records = Vec::with_capacity(all.len());
    for (mask, p) in all.into_iter().zip(&params) {
        records.push(Record {
            outputs: validation_losses(unlearner.model, p, val)?,
            mask,
        });
    }
    let betas: Vec<f64> = records.iter().map(|r| r.mask.beta()).collect();
    fit_attribution(&records, &betas, FitDistance::L2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCluster {
    pub cluster: usize,
    /// Predicted change of summed validation loss when the cluster is deleted.
    pub score: f64,
}

/// Clusters ordered from least to most useful. Deleting a harmful cluster
/// lowers validation loss, so the lowest score comes first; ties keep id order.
pub fn rank_quality(model: &AttributionModel) -> Result<Vec<RankedCluster>> {
    if model.num_outputs() == 0 {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let scores = influence_scores(model, ObjectiveKind::ValSumCe, Reference::default())?;
    let mut ranked: Vec<RankedCluster> = scores
        .into_iter()
        .enumerate()
        .map(|(cluster, score)| RankedCluster { cluster, score })
        .collect();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.cluster.cmp(&b.cluster)));
    Ok(ranked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub percentages: Vec<f64>,
    pub random_trials: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            percentages: vec![0.0, 10.0, 20.0, 50.0],
            random_trials: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub percent: f64,
    pub deleted: usize,
    /// Test accuracy in percent after deleting the lowest-ranked clusters.
    pub ddm: f64,
    /// Mean test accuracy in percent over random deletions of the same size.
    pub random: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub ranking: Vec<RankedCluster>,
    pub rows: Vec<SweepRow>,
    /// Free-form notes, e.g. the noise model.
    pub notes: Vec<String>,
}

/// Exact retraining without the bottom `p%` of `ranking`, paired with
/// random deletions of the same count.
#[allow(clippy::too_many_arguments)]
pub fn deletion_sweep(
    model: &Model,
    train: &LabeledDataset,
    hierarchy: &ClusterHierarchy,
    test: &LabeledDataset,
    ranking: &[RankedCluster],
    sweep: &SweepConfig,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<QualityReport> {
    let k = hierarchy.num_clusters();
    let mut seen: Vec<usize> = ranking.iter().map(|r| r.cluster).collect();
    seen.sort_unstable();
    if seen != (0..k).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!("ranking must list each of the {k} clusters once")));
    }
    if sweep.random_trials == 0 {
        return Err(Error::Config("random_trials must be >= 1".into()));
    }
    let mut counts = Vec::with_capacity(sweep.percentages.len());
    for &p in &sweep.percentages {
        if !(0.0..100.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("deletion percentage must be in [0, 100), got {p}")));
        }
        counts.push(((p / 100.0) * k as f64).round() as usize);
    }
    let mut jobs: Vec<Vec<usize>> = Vec::new();
    for (pi, &n) in counts.iter().enumerate() {
        jobs.push(ranking[..n].iter().map(|r| r.cluster).collect());
        for trial in 0..sweep.random_trials {
            let mut r = rng::substream(sweep.seed, "sweep", (pi * sweep.random_trials + trial) as u64);
            let mut pick = sample(&mut r, k, n).into_vec();
            pick.sort_unstable();
            jobs.push(pick);
        }
    }
    let mut unique = jobs.clone();
    unique.sort();
    unique.dedup();
    let params = retrain_many(model, train, hierarchy, &unique, cfg, workers)?;
    let n = test.len();
    let correct: Vec<usize> = params
        .iter()
        .map(|p| accuracy(model, p, test).map(|a| (a * n as f64).round() as usize))
        .collect::<Result<_>>()?;
    let correct_of = |ex: &Vec<usize>| correct[unique.binary_search(ex).expect("job was retrained")];
    let per = 1 + sweep.random_trials;
    let rows = sweep
        .percentages
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(pi, (&percent, &deleted))| {
            let block = &jobs[pi * per..(pi + 1) * per];
            SweepRow {
                percent,
                deleted,
                ddm: 100.0 * (correct_of(&block[0]) as f64 / n as f64),
                random: 100.0
                    * (block[1..].iter().map(correct_of).sum::<usize>() as f64
                        / (sweep.random_trials * n) as f64),
            }
        })
        .collect();
    Ok(QualityReport {
        ranking: ranking.to_vec(),
        rows,
        notes: Vec::new(),
    })
}

impl QualityReport {
    /// `percent,deleted,ddm_acc,random_acc` rows after `#` header lines.
    pub fn to_csv(&self, header: &str) -> String {
        let mut s = format!("# {header}\n");
        for n in &self.notes {
            let _ = writeln!(s, "# {n}");
        }
        s.push_str("percent,deleted,ddm_acc,random_acc\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.percent, r.deleted, r.ddm, r.random);
        }
        s
    }

    /// `rank,cluster,score` rows, worst first.
    pub fn ranking_csv(&self, header: &str) -> String {
        let mut s = format!("# {header}\nrank,cluster,score\n");
        for (i, r) in self.ranking.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{}", r.cluster, r.score);
        }
        s
    }

    /// Methods as rows, deletion percentages as columns.
    pub fn table(&self) -> String {
        let mut s = format!("{:<8}", "method");
        for r in &self.rows {
            let _ = write!(s, "{:>9}", format!("{}%", r.percent));
        }
        s.push('\n');
        for (name, pick) in [("random", 0), ("ddm", 1)] {
            let _ = write!(s, "{name:<8}");
            for r in &self.rows {
                let _ = write!(s, "{:>9.1}", if pick == 0 { r.random } else { r.ddm });
            }
            s.push('\n');
        }
        s
    }
}
