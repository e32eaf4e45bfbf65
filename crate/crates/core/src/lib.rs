pub mod cli;
pub mod error;
pub mod experiments;
pub mod inhibition;
pub mod io;
pub mod network;
pub mod saliency;
pub mod sanity;
pub mod tensor;

pub use error::{Error, Result};
