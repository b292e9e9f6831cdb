//! Validated shared objects: consistency definitions, brute-force checkers,
//! crash-tolerant implementations over ledgers and atomic broadcast, a
//! consensus reduction for objects whose validity is not persistent, and a
//! deterministic simulator to drive them.

pub mod apps;
pub mod checkers;
pub mod dlo;
pub mod history;
pub mod registers;
pub mod object;
pub mod ordered;
pub mod sim;
pub mod types;
pub mod wire;
