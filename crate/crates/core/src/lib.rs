//! Linear combinations of Gaussians for heralded continuous-variable optics.
//!
//! States are sums `Σ_j e^{c_j} G_{μ_j, σ_j}` of complex-weighted Gaussians
//! with `ℏ = 2`, so the vacuum covariance is the identity and phase-space
//! vectors interleave `(x_1, p_1, x_2, p_2, …)`.

pub mod characterize;
pub mod error;
pub mod gbs;
pub mod grad;
pub mod lcog_state;
pub mod measure;
pub mod numeric;
pub mod optimize;
pub mod phase_space;
pub mod povm;
pub mod stellar;

pub use error::{Error, Result};
pub use lcog_state::{CoherentSuperposition, Covariances, LcogState};
