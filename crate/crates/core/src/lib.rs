//! Lie algebrized Gaussian (LAG) supervectors for sets of local features.
//!
//! A universal background model is MAP-adapted to each item, every adapted
//! component is mapped into the tangent space at its background component,
//! and the weighted tangent vectors are stacked into one fixed-length vector.
//! Two baselines (reduced LAG and KLVec), nuisance attribute projection, a
//! nearest-centroid classifier and a seeded synthetic benchmark complete the
//! toolkit.

pub mod classify;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod gmm;
pub mod io;
pub mod lie;
pub mod manifest;
pub mod pipeline;
pub mod synth;
pub mod vectorize;

pub use classify::{CentroidModel, EvalReport, NapModel};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use gmm::{AdaptationConfig, DiagonalGmm, EmConfig, SufficientStats};
pub use lie::{TangentVector, UtdatDiag};
pub use manifest::DatasetManifest;
pub use pipeline::{PatchSet, PcaModel, PyramidLayout};
pub use synth::SyntheticSpec;
pub use vectorize::{Method, SupervectorBundle};
