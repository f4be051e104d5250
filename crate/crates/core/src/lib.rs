//! Reliability-based collapse assessment of wind-excited steel frames.
//!
//! The crate chains a directional wind hazard model, a spectral-representation
//! wind load simulator, a fiber-discretized corotational frame solver with
//! low-cycle fatigue, and a stratified Monte Carlo estimator of annual
//! exceedance rates, reliability indices and fragility functions.

pub mod dynamics;
pub mod error;
pub mod frame;
pub mod hazard;
pub mod linalg;
pub mod material;
pub mod pipeline;
pub mod reliability;
pub mod stream;
pub mod uncertainty;
pub mod windsim;

pub use error::{Error, Result};
