//! From-scratch differentiable layers and the two-stage DOA network.
//!
//! Layers are stateless descriptions; all weights live in a [`ParamStore`]
//! keyed by layer name, which keeps the Adam update, serialization, and
//! finite-difference checking uniform. Everything is generic over [`Scalar`]
//! so training runs in `f32` while gradient checks run in `f64`.

mod gru;
mod layers;
mod model;
mod params;
mod tensor;
#[cfg(test)]
pub(crate) mod testutil;
mod train;

pub use gru::BiGru;
pub use layers::{
    losses, BatchNorm, Conv2d, Dense, DenseActivation, Dropout, EdgePadFreq, LossValues,
    MaxPoolFreq,
};
pub use model::{
    ConvBlockConfig, DoaNet, ForwardCache, ForwardOutput, NetworkConfig, Phase, Stage1Config,
    Stage2Config,
};
pub use params::{Grads, ParamBlock, ParamStore, StatsUpdate};
pub use tensor::Tensor;
pub use train::{
    infer, select_directions, train, write_history_csv, EpochRecord, InMemoryStore, InferMode,
    InferOutput, SequenceStore, TrainConfig, TrainSequence,
};

/// Float type the network is generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for constant conversion into the active scalar type.
#[inline]
pub fn scalar<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}
