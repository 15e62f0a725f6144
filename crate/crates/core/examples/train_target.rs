//! Trains the target MLP on the MNIST subset and records its trajectory.

use std::path::Path;

use ddm::datahub::load_idx;
use ddm::nets::{Model, ModelSpec};
use ddm::trainer::{accuracy, train, TrainConfig};

fn main() -> ddm::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/mnist-subset");
    let train_set = load_idx(&dir.join("train-images-idx3-ubyte.gz"), &dir.join("train-labels-idx1-ubyte.gz"))?;
    let test_set = load_idx(&dir.join("t10k-images-idx3-ubyte.gz"), &dir.join("t10k-labels-idx1-ubyte.gz"))?;
    let model = Model::new(ModelSpec::default_mlp(vec![1, 28, 28], 10, 0))?;
    let traj = train(&model, &train_set, &TrainConfig::new(0.2, 30, 0))?;
    for (t, p) in traj.checkpoints.iter().step_by(5) {
        println!("epoch {t:>2}: test accuracy {:.2}%", 100.0 * accuracy(&model, p, &test_set)?);
    }
    println!(
        "theta_tau: {:.2}%, {} checkpoints, trajectory hash {}",
        100.0 * accuracy(&model, traj.last(), &test_set)?,
        traj.checkpoints.len(),
        &traj.hash()[..12]
    );
    let out = std::env::temp_dir().join("ddm-example-traj");
    traj.save(&out)?;
    println!("saved to {}", out.display());
    Ok(())
}
