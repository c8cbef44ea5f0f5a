pub mod autodiff;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod loss;
pub mod renderer;
pub mod synthworld;
pub mod trainer;

pub use error::{Error, Result};
