//! Velocity fields on the periodic 3-torus.
//!
//! A velocity is stored as Fourier coefficients `c(k)` with
//! `u(x) = Σ_k c(k) e^{iκ·x}`, `κ = 2πk/L`. Physical quadrature uses the
//! uniform `n^3` grid; `L^2`-type norms of spectral fields follow from
//! Parseval, `∫|u|^2 = L^3 Σ|c(k)|^2`.

mod grid;
mod norms;
pub mod snapshot;
mod velocity;

pub use grid::{is_positive_half, wavenumber, Grid, GridSpec};
pub use norms::{compute_norms, grad_magnitude_power_field, lp_norm, NormReport};
pub(crate) use norms::{check_beta, compute_norms_with};
pub use velocity::{
    forward_transform, inverse_transform, leray_project, project_physical, CVec3, FieldEval,
    PhysicalVelocity, SpectralField, SpectralVelocity,
};
