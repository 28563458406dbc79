pub mod conic;
pub mod crlb;
pub mod error;
pub mod frames;
pub mod harness;
pub mod measurement;
pub mod refine;
pub mod scenario;
pub mod sdp_init;

pub use error::{Error, Result};
