//! Differentiable function core: matrices, a reverse-mode tape, MLPs, Adam
//! and a finite-difference gradient checker. Everything runs in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{mlp_apply, mlp_eval, mlp_forward, Activation, MlpSpec};
pub use params::{LayerShape, ParamVector};
pub use tape::{CustomOp, Gradients, ParamVars, Tape, Var};
