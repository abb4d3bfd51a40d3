pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod fedsim;
pub mod fsutil;
pub mod modality;
pub mod numerics;
pub mod privacy;

pub use error::{Error, Result};
