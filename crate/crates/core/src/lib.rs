//! Radial fast diffusion `u_t = Δu^m`: Barenblatt profiles, an implicit solver,
//! similarity rescalings, self-similar profiles and extinction diagnostics.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod profiles;
pub mod rescaling;
pub mod selfsimilar;
pub mod solver;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{Integral, RadialField, RadialGrid, Tail, Weight};
pub use profiles::{derive_params, Barenblatt, ProblemParams, Regime, RescaledBarenblatt};
