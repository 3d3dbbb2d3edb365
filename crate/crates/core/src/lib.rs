//! Hyperspectral unmixing under the multilinear mixing model.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! cube and map data model with its file formats ([`hsi`], [`io`]), a
//! synthetic scene generator ([`scene`]), vertex component analysis
//! ([`vca`]), the classic per-pixel and block-coordinate solvers
//! ([`classic`]), the 1-D and 3-D convolutional autoencoders ([`model`]) and
//! the evaluation metrics ([`metrics`]).

pub mod classic;
pub mod error;
pub mod hsi;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scene;
pub mod vca;
pub mod tensor;

pub use error::{Error, Result};
