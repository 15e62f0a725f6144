//! Fits the linear datamodel over synset deletions and locates the most
//! influential cluster per query, flat and hierarchically.

use ddm::attributor::{locate_flat, locate_hierarchical, sample_masks, ObjectiveKind, Unlearner};
use ddm::datahub::{cluster, embed, make_blobs, Extractor};
use ddm::distiller::{distill, init_synset, DistillConfig};
use ddm::nets::{Model, ModelSpec};
use ddm::trainer::{train, FinetuneConfig, Reduction, TrainConfig};

fn main() -> ddm::Result<()> {
    let all = make_blobs(3, 50, 3, 4.0, 1)?;
    let (data, test) = all.stratified_split(40)?;
    let h = cluster(&data, &embed(&data, Extractor::RawPixels)?, 2, 1, 1)?;
    let model = Model::new(ModelSpec::default_mlp(vec![3], 3, 1))?;
    let cfg = TrainConfig::new(0.1, 20, 1);
    let traj = train(&model, &data, &cfg)?;
    let dcfg = DistillConfig::default();
    let (synset, _) = distill(&model, &traj, &data, &h, init_synset(&data, &h, 1, 1)?, &dcfg, 1)?;
    let (class_synset, _) = distill(
        &model,
        &traj,
        &data,
        &h.class_level(),
        init_synset(&data, &h.class_level(), 1, 1)?,
        &dcfg,
        1,
    )?;
    let ft = FinetuneConfig {
        epochs: cfg.epochs,
        lr: cfg.lr_net,
        reduction: Reduction::SumPerGroup { per_group: 1 },
    };
    let inputs: Vec<Vec<f64>> = (0..5).map(|i| test.image(i).to_vec()).collect();
    let labels: Vec<usize> = (0..5).map(|i| test.label(i)).collect();

    let flat = Unlearner::reverse(&model, traj.last(), ft.clone());
    let masks = sample_masks(h.num_clusters(), 2 * h.num_clusters(), 1)?;
    let a = locate_flat(&flat, &synset, &masks, ObjectiveKind::Dist1L2, &inputs, &labels)?;
    let hier = Unlearner::reverse(&model, traj.last(), ft);
    let b = locate_hierarchical(&hier, &class_synset, &synset, ObjectiveKind::Dist1L2, &inputs, &labels)?;
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        println!("query {i} (label {}): flat -> cluster {}, hierarchical -> cluster {}", labels[i], x.cluster, y.cluster);
    }
    println!("fine-tunes: flat {}, hierarchical {}", flat.finetune_count(), hier.finetune_count());
    Ok(())
}
