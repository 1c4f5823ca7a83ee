//! Byzantine-robust vector consensus with reputation-weighted averaging.
//!
//! Each honest node scores its neighbors by how far their messages sit from a
//! robust center of the received multiset, accumulates those losses with a
//! forgetting factor, and turns the accumulated losses into averaging weights
//! through a sparse simplex projection.

pub type NodeId = usize;

pub mod adversary;
pub mod centers;
pub mod config;
pub mod engine;
pub mod error;
pub mod output;
pub mod protocol;
pub mod reputation;
pub mod seed;
pub mod simplex;
pub mod state;
pub mod topology;
#[cfg(unix)]
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use state::{NeighborStates, StateVector};
