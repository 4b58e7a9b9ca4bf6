//! AMP-aided graph neural network detection for OTFS delay-Doppler links.
//!
//! The crate covers channel synthesis ([`channel`]), frame generation
//! ([`frames`]), the AMP recursions ([`amp`]), the MRF graph network
//! ([`gnn`]), detector orchestration ([`detect`]), unrolled training
//! ([`train`]), operation counting ([`complexity`]) and BER sweeps ([`sweep`]).
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`).

pub mod amp;
pub mod channel;
pub mod complexity;
pub mod detect;
pub mod error;
pub mod frames;
pub mod gnn;
pub mod graph;
pub mod nn;
pub mod real;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod sweep;
pub mod train;

pub use channel::{build_effective_channel, sample_channel, ChannelRealization, EffectiveChannel, OtfsConfig, PathTap};
pub use error::{Error, Result};
pub use frames::{Constellation, Frame};
pub use nn::{GnnHyper, GnnParams};
pub use real::RealChannel;
pub use scalar::Scalar;
pub use sparse::CsrMatrix;

pub type RealChannelF64 = RealChannel<f64>;
pub type RealChannelF32 = RealChannel<f32>;
pub type GnnParamsF64 = GnnParams<f64>;
pub type GnnParamsF32 = GnnParams<f32>;
