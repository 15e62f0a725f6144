//! Low-quality data detection, deletion sweeps, noise injection and
//! unlearning-fidelity analysis.

mod fidelity;
mod noise;
mod quality;

pub use fidelity::{reverse_epsilon, forward_epsilon, unlearn_fidelity, FidelityRow};
pub use noise::{flip_labels, inject_noise, restore, Corruption};
pub use quality::{
    deletion_sweep, quality_attribution, rank_quality, validation_losses, QualityReport, RankedCluster, SweepConfig,
    SweepRow,
};
