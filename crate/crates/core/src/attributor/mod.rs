//! Cluster-level attribution: perturbation masks, perturbed models obtained
//! by synset fine-tuning, a linear datamodel over deletion indicators, and
//! influence scores used to locate the responsible cluster.

mod export;
mod fit;
mod locate;
mod lstsq;
mod masks;
mod scores;
mod unlearn;

pub use export::{write_scores_csv, write_weights_csv};
pub use fit::{fit_attribution, AttributionModel, FitDistance, Record, GD_ITERS, GD_LR};
pub use locate::{locate_flat, locate_hierarchical, Located};
pub use lstsq::{rank, weighted_lstsq};
pub use masks::{design_rank, sample_masks, PerturbationMask};
pub use scores::{avg_dist, influence_scores, objective_value, weight_norm_scores, DistSample, ObjectiveKind, Reference, PROB_FLOOR};
pub use unlearn::{perturbed_model, Unlearner};
