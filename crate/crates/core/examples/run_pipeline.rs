//! Drives every pipeline stage from a JSON config and prints the report.
//!
//! `cargo run --example run_pipeline -- configs/mnist.json`

use std::path::PathBuf;

use ddm::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage};

fn main() -> ddm::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/blobs.json"));
    let cfg = PipelineConfig::load(&path)?;
    let out = std::env::temp_dir().join("ddm-example-pipeline");
    let p = Pipeline::new(
        cfg,
        RunOptions {
            out: out.clone(),
            force: true,
            workers: 1,
        },
    )?;
    for stage in Stage::ALL {
        if stage == Stage::Diagnose && p.cfg.diagnostics.validation == 0 {
            continue;
        }
        let t = std::time::Instant::now();
        p.run(stage)?;
        println!("{:<9} {:>7.2}s", stage.name(), t.elapsed().as_secs_f64());
    }
    ddm::pipeline::report(&out)?;
    print!("{}", std::fs::read_to_string(out.join("report/summary.txt"))?);
    Ok(())
}
