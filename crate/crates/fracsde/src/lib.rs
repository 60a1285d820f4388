//! Numerics for SDEs driven by fractional Brownian motion with singular
//! drift: path generation coupled to the driving Wiener process, fractional
//! calculus operators, Girsanov reweighting, mollified-drift solutions,
//! Jacobian and Malliavin fields, and numerical checkers for the associated
//! estimates.

pub mod config;
pub mod drift;
pub mod error;
pub mod fbm;
pub mod frac_calc;
pub mod girsanov;
pub mod io;
pub mod mc;
pub mod quad;
pub mod regimes;
pub mod run;
pub mod special;
pub mod verify;

pub use error::{Error, Result};
