//! Cartesian rank-2 tensor message-passing potential with total-charge,
//! spin and per-atom attribute conditioning.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod keyvalue;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
