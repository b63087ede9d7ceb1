//! Graph convolutional classifiers, posteriors, and the reference models.

mod gcn;
mod local;
mod posterior;
mod train;

pub use gcn::{
    gcn_forward, unit_coefficients, weighted_coefficients, Aggregation, Coefficients, GcnStack,
    Propagation,
};
pub use local::{LayerPlan, LocalBatch};
pub use posterior::{
    accuracy, classification_loss, nll_loss, posterior_dump, read_posteriors, write_posteriors,
    Posterior, PosteriorRecord, PROB_FLOOR,
};
pub use train::{
    baseline_gcn_train, gcn_ib_train, gcn_pl_train, gcn_step, receptive_field, train_gcn,
    GcnModel, TrainedGcn,
};
