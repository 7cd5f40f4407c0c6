//! Movable-antenna cell-free radar-communication design with robustness to
//! inter-AP carrier frequency offsets.

pub mod channel;
pub mod cli;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod mrl;
pub mod robust_cfo;
pub mod scenario;
pub mod signal;
