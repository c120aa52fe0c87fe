pub mod autograd;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod float;
pub mod gradcheck;
pub mod imaging;
pub mod losses;
pub mod networks;
pub mod training;

pub use error::{Error, Result};
pub use float::Float;
