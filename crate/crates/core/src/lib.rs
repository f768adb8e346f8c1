//! Finite element toolkit for tethered elastic networks with a second-gradient
//! regularization discretized by a symmetric interior penalty method.

pub mod basis;
pub mod error;
pub mod config;
pub mod energy;
pub mod geometry;
pub mod io;
pub mod material;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
