pub mod benchmarks;
pub mod ccp;
pub mod cli;
pub mod distributions;
pub mod dynamics;
pub mod error;
pub mod inversion;
pub mod problem;
pub mod problem_file;
pub mod program;
pub mod pwa;
pub mod qp;
pub mod quadrature;
pub mod solve;
pub mod validation;

pub use error::{Error, Result};
