//! Certified capacity bounds for discrete and continuous-input channels,
//! maximum entropy estimation under noisy moment constraints, and a
//! zero-information moment closure for reversible dimerization.
//!
//! All information quantities are in bits.

pub mod cli;
pub mod closure;
pub mod cont;
pub mod dmc;
pub mod error;
pub mod maxent;
pub mod numkit;

pub use error::{Error, Result};
