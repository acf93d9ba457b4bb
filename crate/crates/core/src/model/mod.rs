//! Model evaluation: tensors, model structure, the reference network and
//! the backend trait through which any model participates.

pub mod backend;
pub mod network;
pub mod spec;
pub mod table;
pub mod tensor;

pub use backend::{batch_gradient, input_gradient, unit_activation, BatchGradient, ModelBackend, Objective};
pub use network::{reference_cnn, Network, Op, REFERENCE_MODEL_ID};
pub use spec::{LayerKind, LayerSpec, ModelSpec, UnitAddress};
pub use table::{record_activation_table, ActivationTable};
pub use tensor::{spatial_mean, Tensor};
