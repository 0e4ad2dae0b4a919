//! Minimal-sample q-space sampling design and band-limited reconstruction of
//! diffusion MRI signals.
//!
//! The crate provides:
//! - iso-latitude single-shell sampling grids and Gauss-Laguerre multi-shell
//!   grids whose sample counts equal the degrees of freedom of the bases
//!   ([`sampling`]);
//! - the order-recursive spherical harmonic transform with Laplace-Beltrami
//!   regularization, least-squares baselines, and the separable
//!   spherical-polar-Fourier transform ([`transforms`]);
//! - Rician / non-central-Chi likelihood machinery and the majorize-minimize
//!   penalized-maximum-likelihood denoiser ([`noise`]);
//! - Gaussian-mixture synthetic phantoms and quadrature-oracle coefficient
//!   references ([`phantom`]);
//! - NRMSE metrics and the Monte-Carlo benchmark harness ([`metrics`],
//!   [`bench`]).

pub mod bench;
pub mod coeffs;
pub mod error;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod sampling;
pub mod sph;
pub mod transforms;

pub use error::{QspaceError, Result};

pub use num_complex;
