//! Attribute and neighbor information bottlenecks.

mod attribute;
mod neighbor;

pub use attribute::*;
pub use neighbor::*;
