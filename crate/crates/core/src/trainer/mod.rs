//! The graph information bottleneck objective and its two-stage training.

mod fit;
mod gib;
mod info;
mod pseudo;
mod stages;

pub use fit::{fit, loss_curve_csv, write_loss_curve, EpochRecord, FitOutcome, LossBreakdown, Selection};
pub use gib::{
    gib_forward, gib_loss, gib_posteriors, gib_step, gib_terms, step_seed, Draws, GibForward,
    GibTerms, Masking, RmGibModel,
};
pub use info::{discrete_mi, verify_ib_inequality, IbReport, JointDistribution, Var3};
pub use pseudo::{LabelSource, PseudoLabelSet};
pub use stages::{
    all_posteriors, collect_pseudo_labels, stage1_train, stage2_train, train_rmgib, train_stage,
    write_run_dir, StageResult, TrainedRmGib, Variant,
};
