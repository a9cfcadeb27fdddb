pub mod data_io;
pub mod error;
pub mod fairness;
pub mod fpca;
pub mod learners;
pub mod linalg;
pub mod sdp;

pub use error::{Error, Result};
