//! Hyperbolic dataset distillation.
//!
//! The crate condenses a labeled image dataset into a small synthetic set by
//! matching per-class feature distributions *in hyperbolic space*: encoder
//! features are lifted onto the Lorentz hyperboloid, each class is summarized
//! by a hyperbolic centroid, and the synthetic images are optimized so their
//! centroids meet the real ones under the geodesic distance. All gradients
//! are analytic (no autodiff), every geometric map has a closed form, and a
//! finite-difference oracle can re-verify the whole gradient chain at any
//! time.
//!
//! Module map:
//! - [`lorentz`]: the hyperboloid model — points, tangents, exp/log maps,
//!   Poincare-ball bijection.
//! - [`centroid`]: exact (Fréchet) and closed-form approximate hyperbolic
//!   means, hierarchy weights.
//! - [`encoder`]: deterministic random feature encoders and their exact
//!   input-gradient (VJP) passes.
//! - [`engine`]: the distillation loss, its analytic gradient, the
//!   optimization loop, and linear-probe evaluation.
//! - [`pruning`]: radius profiles, hierarchy-aware pruning, stability
//!   analysis, Poincare exports.
//! - [`io`]: tensor container files, dataset loading, run manifests.
//! - [`toy`]: synthetic fixture datasets.
//! - [`config`]: flat key=value run configuration.
//! - [`gradcheck`]: finite-difference verification suites for every analytic
//!   gradient in the crate.

pub mod centroid;
pub mod config;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod lorentz;
pub mod pruning;
pub mod toy;
pub mod util;

pub use error::{HddError, Result};
