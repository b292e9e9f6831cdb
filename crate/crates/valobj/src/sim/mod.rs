//! Deterministic single-threaded simulator: a kernel that interleaves actor
//! steps, ledger message deliveries, broadcast deliveries, and crashes, with
//! seeded random runs and exhaustive exploration over the same state space.

pub mod consensus;
pub mod kernel;
pub mod regular;
pub mod scenario;
pub mod total;
