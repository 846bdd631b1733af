//! Core library for the sedimask toolkit: synthetic scene generation,
//! quality-mask inference (rule-based and learned), solar geometry and
//! terrain-shadow casting, mask fusion, and suspended-sediment
//! concentration (SSC) estimation over the fused water pixels.
//!
//! Everything here is deterministic: all randomness flows from explicit
//! 64-bit seeds through [`rng::CounterRng`], training runs single-threaded
//! with a fixed summation order, and file writers emit byte-identical
//! output for identical inputs.

pub mod baselines;
pub mod bench;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod net;
pub mod plane;
pub mod raster;
pub mod rng;
pub mod solar;
pub mod ssc;

pub use error::Error;
pub use plane::{MaskPlane, Plane};
pub use raster::{Band, Dem, MaskKind, MaskSet, SceneConfig, TileStack};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
