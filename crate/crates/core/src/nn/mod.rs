//! Differentiable compute core and the two-layer GCN.

pub mod adam;
pub mod checkpoint;
pub mod gcn;
pub mod math;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use gcn::{
    dropout_mask, gcn_forward, glorot_init, l2_penalty, masked_cross_entropy,
    masked_cross_entropy_mean, GcnParams, GcnVars,
};
pub use tape::{Gradients, Mat, Tape, Var};
