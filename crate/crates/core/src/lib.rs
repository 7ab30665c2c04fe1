//! Unitarization of state-preparation oracles.

pub mod basis;
pub mod circuit;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod instance;
pub mod linalg;
pub mod oracle;
pub mod orthogonalize;
pub mod sim;
pub mod unitarize;

pub use error::{Error, Result};
