//! Safety envelope, controller mode machine and routine admission.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, AnalysisReport};
use crate::model::{Axis, DeviceParams, JointPose, MotorSpec};
use crate::trajectory::Routine;

/// Soft cap on jog speed, joint side.
pub const DEFAULT_JOG_SPEED_DEG_S: f64 = 200.0;

/// Range-of-motion, speed and torque limits enforced on every commanded pose
/// and every routine admitted for playback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyEnvelope {
    pub dp_min: f64,
    pub dp_max: f64,
    pub cr_min: f64,
    pub cr_max: f64,
    pub max_joint_speed_deg_s: f64,
    pub max_motor_torque_nmm: f64,
}

impl Default for SafetyEnvelope {
    fn default() -> Self {
        Self {
            dp_min: -50.0,
            dp_max: 50.0,
            cr_min: -15.0,
            cr_max: 15.0,
            // motor rating 3600 °/s through the 4:1 gear
            max_joint_speed_deg_s: 900.0,
            max_motor_torque_nmm: 480.18,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid envelope: {0}")]
pub struct EnvelopeError(pub String);

impl SafetyEnvelope {
    pub fn validate(&self) -> Result<(), EnvelopeError> {
        for (axis, lo, hi) in [
            (Axis::Dp, self.dp_min, self.dp_max),
            (Axis::Cr, self.cr_min, self.cr_max),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(EnvelopeError(format!(
                    "{axis} bounds must be finite with min < max, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.max_joint_speed_deg_s.is_finite() && self.max_joint_speed_deg_s > 0.0) {
            return Err(EnvelopeError("speed limit must be positive".into()));
        }
        if !(self.max_motor_torque_nmm.is_finite() && self.max_motor_torque_nmm > 0.0) {
            return Err(EnvelopeError("torque limit must be positive".into()));
        }
        Ok(())
    }

    pub fn bounds(&self, axis: Axis) -> (f64, f64) {
        match axis {
            Axis::Dp => (self.dp_min, self.dp_max),
            Axis::Cr => (self.cr_min, self.cr_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("{axis} angle {value}° beyond bound {bound}°")]
pub struct RomViolation {
    pub axis: Axis,
    pub value: f64,
    pub bound: f64,
}

/// Ok iff both axes lie within the closed bounds. A non-finite angle is
/// reported as a violation of the lower bound.
pub fn check_pose(pose: &JointPose, env: &SafetyEnvelope) -> Result<(), RomViolation> {
    for axis in Axis::ALL {
        let (lo, hi) = env.bounds(axis);
        let value = pose.get(axis);
        if value > hi {
            return Err(RomViolation {
                axis,
                value,
                bound: hi,
            });
        }
        if value.is_nan() || value < lo {
            return Err(RomViolation {
                axis,
                value,
                bound: lo,
            });
        }
    }
    Ok(())
}

pub fn clamp_pose(pose: &JointPose, env: &SafetyEnvelope) -> JointPose {
    let mut out = *pose;
    for axis in Axis::ALL {
        let (lo, hi) = env.bounds(axis);
        let v = pose.get(axis);
        out.set(
            axis,
            if v.is_nan() {
                lo.max(0.0f64.min(hi))
            } else {
                v.clamp(lo, hi)
            },
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Disconnected,
    Idle,
    Jog,
    Recording,
    Playback,
    EStop,
    Fault,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Disconnected,
        Mode::Idle,
        Mode::Jog,
        Mode::Recording,
        Mode::Playback,
        Mode::EStop,
        Mode::Fault,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Disconnected => "disconnected",
            Mode::Idle => "idle",
            Mode::Jog => "jog",
            Mode::Recording => "recording",
            Mode::Playback => "playback",
            Mode::EStop => "estop",
            Mode::Fault => "fault",
        }
    }

    /// EStop and Fault hold until an explicit reset.
    pub fn is_latched(self) -> bool {
        matches!(self, Mode::EStop | Mode::Fault)
    }

    /// Modes in which the controller may issue motion commands.
    pub fn allows_motion(self) -> bool {
        matches!(
            self,
            Mode::Idle | Mode::Jog | Mode::Recording | Mode::Playback
        )
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Proof that a routine passed [`validate_routine`]; the only way to build a
/// playback event.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackTicket {
    routine: String,
}

impl PlaybackTicket {
    pub fn routine(&self) -> &str {
        &self.routine
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Connect,
    Disconnect,
    EnterJog,
    /// Leaves Jog, Recording or Playback.
    Stop,
    StartRecord,
    StartPlayback(PlaybackTicket),
    PlaybackComplete,
    EStop,
    /// Honoured only when the plant reports zero commanded velocity.
    Reset {
        plant_at_rest: bool,
    },
    SensorFault,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Connect => "connect",
            Event::Disconnect => "disconnect",
            Event::EnterJog => "jog",
            Event::Stop => "stop",
            Event::StartRecord => "start_record",
            Event::StartPlayback(_) => "start_playback",
            Event::PlaybackComplete => "playback_complete",
            Event::EStop => "estop",
            Event::Reset { .. } => "reset",
            Event::SensorFault => "sensor_fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlaybackInfo {
    pub routine: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ControllerState {
    pub mode: Mode,
    /// Session time at which this mode was entered.
    pub entered_ms: u64,
    pub playback: Option<PlaybackInfo>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self::new(Mode::Disconnected, 0)
    }
}

impl ControllerState {
    pub fn new(mode: Mode, entered_ms: u64) -> Self {
        Self {
            mode,
            entered_ms,
            playback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{event} rejected in {mode}: {reason}")]
pub struct Rejection {
    pub mode: Mode,
    pub event: &'static str,
    pub reason: String,
}

/// The controller's mode table. Total over every (state, event) pair; a
/// rejection leaves the caller's state untouched.
pub fn transition(
    state: &ControllerState,
    event: &Event,
    now_ms: u64,
) -> Result<ControllerState, Rejection> {
    use Mode::*;
    let reject = |reason: &str| Rejection {
        mode: state.mode,
        event: event.name(),
        reason: reason.to_string(),
    };
    let to = |mode: Mode| Ok(ControllerState::new(mode, now_ms));

    match (state.mode, event) {
        (Disconnected, Event::Connect) => to(Idle),
        (Disconnected, _) => Err(reject("not connected")),

        (_, Event::EStop) => to(EStop),

        (Fault, Event::SensorFault) => Err(reject("already faulted")),
        (_, Event::SensorFault) => to(Fault),

        (
            EStop | Fault,
            Event::Reset {
                plant_at_rest: true,
            },
        ) => to(Idle),
        (
            EStop | Fault,
            Event::Reset {
                plant_at_rest: false,
            },
        ) => Err(reject("plant still has commanded motion")),
        (_, Event::Reset { .. }) => Err(reject("reset only clears EStop or Fault")),
        (EStop | Fault, _) => Err(reject("latched; reset first")),

        (_, Event::Connect) => Err(reject("already connected")),

        (Idle, Event::Disconnect) => to(Disconnected),
        (Idle, Event::EnterJog) => to(Jog),
        (Idle, Event::StartRecord) => to(Recording),
        (Idle, Event::StartPlayback(ticket)) => Ok(ControllerState {
            mode: Playback,
            entered_ms: now_ms,
            playback: Some(PlaybackInfo {
                routine: ticket.routine.clone(),
                elapsed_ms: 0,
            }),
        }),
        (Idle, _) => Err(reject("nothing to stop")),

        (Jog | Recording | Playback, Event::Stop) => to(Idle),
        (Playback, Event::PlaybackComplete) => to(Idle),
        (Jog | Recording | Playback, Event::Disconnect) => Err(reject("stop motion first")),
        (Jog | Recording | Playback, _) => Err(reject("busy; stop first")),
    }
}

/// Why a routine may not be played back.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub reasons: Vec<String>,
    pub analysis: Option<Box<AnalysisReport>>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "routine rejected: {}", self.reasons.join("; "))
    }
}

impl std::error::Error for ValidationReport {}

impl From<AnalysisError> for ValidationReport {
    fn from(e: AnalysisError) -> Self {
        Self {
            reasons: vec![e.to_string()],
            analysis: None,
        }
    }
}

/// Admits a routine for playback iff it stays inside the envelope, its speed
/// and torque demands are within the envelope limits, and the motor can
/// deliver them.
pub fn validate_routine(
    routine: &Routine,
    env: &SafetyEnvelope,
    params: &DeviceParams,
    motor: &MotorSpec,
) -> Result<PlaybackTicket, ValidationReport> {
    let uniform = analysis::prepare_uniform(routine, None)?;
    let report = analysis::analyze(&uniform, env, params, motor)?;
    // ROM is judged on the stored samples, not the resampled grid.
    let rom = analysis::count_rom_violations(routine, env);

    let mut reasons = Vec::new();
    if rom.count > 0 {
        reasons.push(format!(
            "{} sample(s) outside the range of motion, first at {} ms",
            rom.count,
            rom.first_t_ms.unwrap_or(0)
        ));
    }
    for axis in Axis::ALL {
        let a = report.axis(axis);
        if a.max_joint_speed_deg_s > env.max_joint_speed_deg_s {
            reasons.push(format!(
                "{axis} joint speed {:.2} °/s exceeds limit {} °/s",
                a.max_joint_speed_deg_s, env.max_joint_speed_deg_s
            ));
        }
        if a.max_motor_torque_nmm > env.max_motor_torque_nmm {
            reasons.push(format!(
                "{axis} motor torque {:.2} N·mm exceeds limit {} N·mm",
                a.max_motor_torque_nmm, env.max_motor_torque_nmm
            ));
        }
        if !a.motor_adequate {
            reasons.push(format!("{axis} demand exceeds motor {}", motor.name));
        }
    }
    if reasons.is_empty() {
        Ok(PlaybackTicket {
            routine: routine.name().to_string(),
        })
    } else {
        Err(ValidationReport {
            reasons,
            analysis: Some(Box::new(report)),
        })
    }
}
