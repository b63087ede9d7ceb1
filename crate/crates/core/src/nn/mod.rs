//! Minimal differentiable-computation substrate.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use mlp::Mlp;
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, Gradients, ParamSet};
pub use tape::{Index, Tape, Var};
