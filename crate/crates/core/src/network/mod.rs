//! Convolutional occupancy network.
//!
//! A ResNet point encoder with intermediate grid pooling scatters per-point
//! features into a feature volume `V0`; a 3D U-Net maps it to `V`; the decoder
//! reads `V` by trilinear interpolation at a query `q` and maps `[q, f(q)]` to
//! an occupancy logit.
//!
//! Encoder inputs are point positions relative to the center of their grid
//! cell, so `V` is equivariant to whole-cell translations of the cloud. The
//! decoder sees `q` in unit-cube coordinates.

mod init;
mod lattice;
mod model;

pub use init::{InitMode, GEOMETRIC_SLOPE};
pub use lattice::{FeatureVolume, Lattice};
pub use model::{is_decoder_param, Binding, BoundParams, ConvOccNet, NetConfig};
