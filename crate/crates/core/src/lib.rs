//! Spiking-network kernels: bit-packed spike tensors, LIF neurons,
//! spike-driven Hamming attention with its space-time layouts, a
//! spike-driven video backbone, FLOPs/energy accounting, and a small
//! reverse-mode autodiff used for surrogate-gradient training.

pub mod attention;
pub mod autodiff;
pub mod blocks;
pub mod config;
pub mod cost;
pub mod embedding;
pub mod error;
pub mod neuron;
pub mod rng;
pub mod svt1;
pub mod tensor;
pub mod train;
pub mod verify;

pub use attention::{AttentionSpec, Score, Variant};
pub use blocks::BackboneConfig;
pub use config::WorkbenchConfig;
pub use cost::{CostReport, EnergyConstants};
pub use error::{Error, Result};
pub use neuron::{LifState, NeuronConfig, Surrogate, SurrogateKind, TemporalMode};
pub use tensor::{IntTensor, RealTensor, Shape, SpikeTensor};
