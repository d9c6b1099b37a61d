//! Control suite for a passive two-degree-of-freedom wrist rehabilitation
//! device: unit transforms and the gravity model, routine recording and
//! storage, kinematic/kinetic analysis with motor sizing, the safety envelope
//! and mode machine, a simulated stepper/potentiometer plant, and the
//! controller with its line-delimited JSON protocol.

pub mod analysis;
pub mod model;
pub mod safety;
pub mod service;
pub mod sim;
pub mod trajectory;

pub use model::{AdcCalibration, Axis, DeviceParams, JointPose, MotorSpec};
pub use safety::SafetyEnvelope;
pub use trajectory::{Routine, RoutineSample};
