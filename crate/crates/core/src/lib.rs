//! Trace-minimization SDP and Burer-Monteiro factorization side by side on
//! matrix sensing and completion instances.

pub mod bm;
pub mod certificates;
pub mod completer;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod rip;
pub mod sdp;

pub use error::{Error, Result};
