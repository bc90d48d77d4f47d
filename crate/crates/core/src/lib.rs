//! Probabilistic movement primitives for reaching a target fruit through a
//! cluster, pushing occluding neighbours aside on the way up.

pub mod basis;
pub mod cli;
pub mod demos;
pub mod error;
pub mod geometry;
pub mod iplanner;
pub mod promp;
pub mod scene;
pub mod sim;
pub mod sip;

pub use error::{Error, ErrorKind, Result};
