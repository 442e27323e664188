//! Two-path semi-supervised CNN text classifier.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod network;
pub mod objective;
pub mod optim;
pub mod seed;
pub mod synthetic;
pub mod train;
pub mod verify;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{Error, Result};
