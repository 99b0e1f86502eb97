pub mod layers;
pub mod network;
pub mod spec;

pub use layers::{LayerParams, PoolWindow};
pub use network::{Gradients, HeadGradients, Init, LossComponents, Network, Output, ParamInfo, Trace};
pub use spec::{LayerSpec, NetworkSpec, REFERENCE_SPEC};
