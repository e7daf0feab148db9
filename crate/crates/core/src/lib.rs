pub mod error;
pub mod estimate;
pub mod exec;
pub mod io;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod synth;
pub mod tol;
pub mod verify;
pub mod zeros;

pub use error::{Error, Result};
pub use tol::Tolerances;
