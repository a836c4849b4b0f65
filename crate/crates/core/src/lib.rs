//! Near-field computational imaging with virtual masks generated by a
//! reconfigurable intelligent surface.

pub mod em;
pub mod error;
pub mod experiment;
pub mod masks;
pub mod measurement;
pub mod reconstruct;
pub mod scene;
pub mod synthesis;
pub mod targets;

pub use error::{Error, Result};
pub use num_complex::Complex64;
