//! Live teleoperation service and command line tools.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod session;
