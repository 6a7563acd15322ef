pub mod data;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lipschitz;
pub mod model;
pub mod ntk;
pub mod spectral;

pub use data::Dataset;
pub use error::{Error, Result};
