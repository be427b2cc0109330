//! Minimal reverse-mode gradient engine and MLP building blocks.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use checkpoint::{ParamRecord, ParamsCheckpoint, PARAMS_FORMAT, PARAMS_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, ABS_FLOOR, FD_STEP};
pub use layers::{mlp_forward, Activation, LinearLayer, Mlp};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::{ParamId, ParamStore, Tensor};
