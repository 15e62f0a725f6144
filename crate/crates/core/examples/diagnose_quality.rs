//! Flips 20% of the labels in a blob set, ranks clusters by their predicted
//! effect on validation loss, and compares removal of the worst-ranked
//! clusters against random removal.

use ddm::attributor::{sample_masks, Unlearner};
use ddm::datahub::{cluster, embed, make_blobs, Extractor};
use ddm::diagnostics::{deletion_sweep, flip_labels, quality_attribution, rank_quality, SweepConfig};
use ddm::distiller::{distill, init_synset, DistillConfig};
use ddm::nets::{Model, ModelSpec};
use ddm::trainer::{train, FinetuneConfig, Reduction, TrainConfig};

fn main() -> ddm::Result<()> {
    let all = make_blobs(3, 100, 3, 3.0, 2)?;
    let (clean, rest) = all.stratified_split(60)?;
    let (val, test) = rest.split_at(60)?;
    let (train_set, corruption) = flip_labels(&clean, 0.2, 2)?;
    let h = cluster(&train_set, &embed(&train_set, Extractor::RawPixels)?, 5, 2, 1)?;
    let model = Model::new(ModelSpec::default_mlp(vec![3], 3, 2))?;
    let cfg = TrainConfig::new(0.1, 20, 2);
    let traj = train(&model, &train_set, &cfg)?;
    let (synset, _) = distill(&model, &traj, &train_set, &h, init_synset(&train_set, &h, 1, 2)?, &DistillConfig::default(), 1)?;
    let u = Unlearner::reverse(
        &model,
        traj.last(),
        FinetuneConfig {
            epochs: cfg.epochs,
            lr: cfg.lr_net,
            reduction: Reduction::SumPerGroup { per_group: 1 },
        },
    );
    let k = h.num_clusters();
    let ranking = rank_quality(&quality_attribution(&u, &synset, &sample_masks(k, k, 2)?, &val)?)?;
    let flipped = |c: usize| h.cluster(c).iter().filter(|&&i| corruption.mask[i]).count();
    for r in ranking.iter().take(3) {
        println!(
            "worst cluster {:>2}: score {:+.4}, {}/{} flipped",
            r.cluster,
            r.score,
            flipped(r.cluster),
            h.cluster(r.cluster).len()
        );
    }
    let sweep = SweepConfig {
        percentages: vec![0.0, 10.0, 20.0],
        random_trials: 3,
        seed: 2,
    };
    let report = deletion_sweep(&model, &train_set, &h, &test, &ranking, &sweep, &cfg, 1)?;
    print!("{}", report.table());
    Ok(())
}
