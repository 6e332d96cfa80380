pub mod autodiff;
pub mod geometry;
pub mod network;
pub mod meshing;
pub mod pipeline;
pub mod eval;
pub mod scene;
pub mod io;
pub mod error;

pub use error::{Error, Result};
