//! Numerical laboratory for the spectral theory of hyperbolic flows.
//!
//! The crate builds two exactly solvable Anosov-flow models (suspensions of
//! hyperbolic toral automorphisms and an analytic constant-curvature rate
//! model), lifts the generator to vector bundles via connection matrices,
//! and computes the quantities that control where the associated
//! transfer-operator resolvent continues:
//!
//! * [`flows`] — model systems, flow maps, Jacobian cocycles, the cotangent
//!   (Hamiltonian) flow, and stable/unstable splittings with their duals;
//! * [`lifts`] — bundle lifts, parallel transport, and the Koopman action on
//!   sections;
//! * [`thresholds`] — finite-horizon growth-factor estimation with
//!   Richardson-style extrapolation;
//! * [`symbols`] — escape-weight construction on the cosphere bundle and
//!   Hermitian multiplier symbols with verified definiteness margins;
//! * [`resolvent`] — correlations, resolvent quadrature, and resonance pole
//!   extraction by adaptive rational fitting;
//! * [`cli`] — JSON experiment configs, deterministic reports, and the task
//!   runner behind the `ruelle-lab` binary.

pub mod cli;
pub mod error;
pub mod flows;
pub mod lifts;
pub mod ratfit;
pub mod resolvent;
pub mod sampling;
pub mod symbols;
pub mod thresholds;
pub mod trig;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
