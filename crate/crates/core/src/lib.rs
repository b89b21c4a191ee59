//! Entanglement costs of spreading (distributed encoding) and concentrating
//! (distributed decoding) quantum information over tree networks, with the
//! exact LOCC protocols that achieve them and exhaustive simulation to check
//! every measurement branch.

pub mod code;
pub mod error;
pub mod harness;
pub mod io;
pub mod ki;
pub mod linalg;
pub mod merge;
pub mod network;
pub mod par;
pub mod protocols;
pub mod relative;
pub mod split;
pub mod trace;
pub mod tensor;

pub use error::{Error, Result};
