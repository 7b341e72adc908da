pub mod bits;
pub mod codec;
pub mod container;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod payload;
pub mod positions;
pub mod predictor;
pub mod protocol;
pub mod recon;
pub mod text;

pub use error::{Error, Result};
