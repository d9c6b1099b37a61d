//! The live controller and its network protocol.

pub mod controller;
pub mod library;
pub mod protocol;
pub mod transport;

pub use controller::{parse_script, run_script, Controller, ControllerConfig, ScriptEntry};
pub use library::RoutineLibrary;
pub use protocol::{Command, Reply, Request, ServerEvent, TelemetryFrame};
pub use transport::{BoundPorts, Server, ServerConfig, ShutdownHandle};
