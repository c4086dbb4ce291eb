//! Standard-library companion to [`rocp_core`]: binary tensor, model and
//! state files, the streaming benchmark harness, and the `rocp` command
//! line tool.

pub mod bench;
pub mod cli;
mod error;
pub mod io;
pub mod presets;

pub use error::{Result, RocpError};
pub use rocp_core;
