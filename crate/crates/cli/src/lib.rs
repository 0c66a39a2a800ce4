//! Library surface of the experiment runner, used by the `adept` binary and
//! by the acceptance suite.

pub mod config;
pub mod harness;
pub mod verify;
