//! Train-free embeddings of 3D volumes.
//!
//! A cubic volume is sliced along its three axes, each slice is turned into a
//! `p × p` grid of `d`-dimensional patch tokens, the tokens are averaged over
//! the slice direction, and every averaged token is reduced to `K` values by
//! one seeded Gaussian matrix. The concatenation over axes is the embedding.

pub mod analysis;
pub mod encoders;
pub mod experiments;
pub mod heads;
pub mod idx;
pub mod par;
pub mod reduction;
pub mod rng;
pub mod simlab;
pub mod store;
pub mod volumes;
