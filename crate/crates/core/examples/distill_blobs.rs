//! Reverse gradient matching on a 4-cluster blob set. Prints the matching
//! loss and how far each synset moves the model toward its exact retrain.

use ddm::datahub::{cluster, embed, make_blobs, Extractor};
use ddm::distiller::{distill, init_synset, DistillConfig};
use ddm::nets::{Activation, Architecture, InitScheme, Model, ModelSpec};
use ddm::trainer::{finetune, retrain_without, train, FinetuneConfig, Reduction, TrainConfig};

fn main() -> ddm::Result<()> {
    let data = make_blobs(2, 40, 4, 3.0, 0)?;
    let h = cluster(&data, &embed(&data, Extractor::RawPixels)?, 2, 0, 1)?;
    let model = Model::new(ModelSpec {
        architecture: Architecture::Mlp { hidden: vec![16] },
        activation: Activation::Relu,
        num_classes: 2,
        input_shape: vec![4],
        init: InitScheme::Kaiming,
        seed: 0,
    })?;
    let cfg = TrainConfig {
        batch_size: data.len(),
        ..TrainConfig::new(0.1, 20, 0)
    };
    let traj = train(&model, &data, &cfg)?;
    let dcfg = DistillConfig::default();
    let (synset, log) = distill(&model, &traj, &data, &h, init_synset(&data, &h, 1, 0)?, &dcfg, 1)?;
    println!(
        "matching loss: first {:.4}, last {:.4} over {} iterations",
        log[0].loss,
        log.last().map_or(f64::NAN, |r| r.loss),
        log.len()
    );
    let ft = FinetuneConfig {
        epochs: cfg.epochs,
        lr: cfg.lr_net,
        reduction: Reduction::SumPerGroup { per_group: 1 },
    };
    for k in 0..h.num_clusters() {
        let oracle = retrain_without(&model, &data, &h, &[k], &cfg)?;
        let unlearned = finetune(&model, traj.last(), &synset.batch(&[k]), &ft)?;
        println!(
            "cluster {k} (class {}): |theta_tau - oracle| {:.4}, |finetuned - oracle| {:.4}",
            h.class_of(k),
            traj.last().distance(&oracle),
            unlearned.distance(&oracle)
        );
    }
    Ok(())
}
