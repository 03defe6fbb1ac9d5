//! Library surface of the scenario runner (the binary is a thin wrapper,
//! and the integration tests drive these modules directly).

pub mod config;
pub mod outputs;
pub mod pipeline;
pub mod plot;
pub mod tasks;
