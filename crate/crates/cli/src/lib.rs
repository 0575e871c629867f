//! Operator commands and the simulation harness behind the `bdl` binary.

pub mod client;
pub mod scenario;
