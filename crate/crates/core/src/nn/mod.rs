//! Dense neural building blocks with reverse-mode gradients.

pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{gru_tape, mlp_tape, Activation, DenseLayer, GruCell, GruVars, LayerVars, Mlp};
pub use params::{glorot_uniform, GnnHyper, GnnParams, ParamLayout, ParamSpec};
pub use tape::{Gradients, Stage, StageCounters, Tape, Var};
pub use tensor::Tensor;
