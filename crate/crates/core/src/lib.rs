//! Stochastic neural-ODE dynamic mode decomposition.
//!
//! Sparse, noisy snapshots of a spatiotemporal field are explained by a
//! small set of continuous spatial modes (a coordinate network) whose
//! complex coefficients follow a latent SDE: linear DMD dynamics plus a
//! learned residual drift and Brownian diffusion. Uncertainty is carried
//! through the integration and decoded into per-point predictive variance.
//!
//! The crate also contains the benchmark generators, an exact-DMD baseline
//! and the evaluation metrics.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod nets;
pub mod rng;
pub mod sde;
pub mod sim;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use model::{FieldPrediction, Model, ModelConfig, RolloutMode, RolloutResult};
pub use nets::{EigenParams, NetConfig, PosEncConfig};
pub use sde::{LatentGaussian, SdeConfig};
pub use types::{
    linspace_closed, linspace_periodic, ComplexMat, ComplexVec, Coord, CoordSet, Dataset,
    DatasetMeta, Field, Spectrum,
};
