//! Divergence-free Fourier-Galerkin simulator for the 3D stochastic
//! Navier-Stokes equations with nonlinear damping `α|u|^{β-1}u` on the
//! periodic torus.
//!
//! The crate is organised bottom-up:
//!
//! * [`fields`] – grids, spectral/physical velocity fields, transforms,
//!   Leray projection, norms and the binary snapshot format.
//! * [`operators`] – Stokes operator, dealiased convection, trilinear form,
//!   damping nonlinearity and its Jacobian.
//! * [`noise`] – finite-mode Q-Wiener increments, diffusion coefficients and
//!   hypothesis validators.
//! * [`integrator`] – semi-implicit (optionally tamed) time stepping for the
//!   Galerkin system, the small-time rescaled system, the diffusion-only
//!   process and twin runs driven by shared noise.
//! * [`diagnostics`] – energy ledgers, moment and gradient estimates,
//!   energy-ball functionals, exit times and weighted twin differences.
//! * [`ldp`] – tail-probability Monte Carlo and rate-function evaluation.
//! * [`config`], [`app`] – run configuration, admissibility gates and the
//!   experiment drivers behind the `dampns` binary.
//!
//! Ensembles are evaluated through [`exec::Execution`], which uses rayon when
//! the `parallel` feature is enabled and a plain sequential loop otherwise.
//! Both paths produce bit-identical results.

pub mod app;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod fields;
pub mod integrator;
pub mod ldp;
pub mod noise;
pub mod operators;
pub mod properties;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use fields::{Grid, GridSpec, NormReport, PhysicalVelocity, SpectralField, SpectralVelocity};
