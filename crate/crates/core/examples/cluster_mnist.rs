//! Per-class K-means on the bundled MNIST subset.

use std::path::Path;

use ddm::datahub::{cluster, embed, load_idx, Extractor};

fn main() -> ddm::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/mnist-subset");
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte.gz"),
        &dir.join("train-labels-idx1-ubyte.gz"),
    )?;
    let per_class = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let h = cluster(&train, &embed(&train, Extractor::RawPixels)?, per_class, 0, 1)?;
    println!(
        "{} images, {} classes, C = {per_class} -> K = {} clusters",
        train.len(),
        h.num_classes(),
        h.num_clusters()
    );
    for l in 0..h.num_classes() {
        let sizes: Vec<usize> = h.clusters_of_class(l).map(|k| h.cluster(k).len()).collect();
        println!("class {l}: sizes {sizes:?}");
    }
    Ok(())
}
