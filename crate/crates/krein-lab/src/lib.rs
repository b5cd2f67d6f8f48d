//! Positive self-adjoint and m-sectorial extensions of singular
//! Sturm-Liouville operators: classification, Krein-Vishik-Birman
//! extension families, spectra, and quadratic-form diagnostics.

pub mod classify;
pub mod cli;
pub mod expr;
pub mod extensions;
pub mod forms;
pub mod ode;
pub mod oracle;
pub mod problem;
pub mod quad;
pub mod spectral;
