//! The control loop. One `Controller` owns the plant, the mode machine, the
//! recorder and the playback cursor; commands are applied between ticks.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{self, AdcCalibration, Axis, DeviceParams, JointPose, MotorSpec};
use crate::safety::{
    self, clamp_pose, ControllerState, Event, Mode, Rejection, SafetyEnvelope,
    DEFAULT_JOG_SPEED_DEG_S,
};
use crate::service::library::{self, RoutineLibrary};
use crate::service::protocol::{Command, Reply, Request, ServerEvent, TelemetryFrame};
use crate::sim::{HardwarePort, SensorReading, SimConfig, SimulatedPlant};
use crate::trajectory::{Routine, RoutineSample};

pub const MAX_PLAYBACK_SPEED: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid controller config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub tick_hz: u32,
    pub record_hz: u32,
    /// Telemetry is emitted every `telemetry_divisor` ticks.
    pub telemetry_divisor: u32,
    pub jog_speed_deg_s: f64,
    pub envelope: SafetyEnvelope,
    pub params: DeviceParams,
    pub motor: MotorSpec,
    pub calibration: AdcCalibration,
    pub data_dir: PathBuf,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            tick_hz: 100,
            record_hz: 50,
            telemetry_divisor: 5,
            jog_speed_deg_s: DEFAULT_JOG_SPEED_DEG_S,
            envelope: SafetyEnvelope::default(),
            params: DeviceParams::default(),
            motor: MotorSpec::default(),
            calibration: AdcCalibration::default(),
            data_dir: PathBuf::from("routines"),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |s: String| Err(ConfigError(s));
        if !(1..=1000).contains(&self.tick_hz) {
            return err(format!(
                "tick rate must be 1..=1000 Hz, got {}",
                self.tick_hz
            ));
        }
        if self.record_hz == 0
            || self.record_hz > self.tick_hz
            || !self.tick_hz.is_multiple_of(self.record_hz)
        {
            return err(format!(
                "recording rate {} Hz must divide the tick rate {} Hz",
                self.record_hz, self.tick_hz
            ));
        }
        if self.telemetry_divisor == 0 {
            return err("telemetry divisor must be at least 1".into());
        }
        if !(self.jog_speed_deg_s > 0.0
            && self.jog_speed_deg_s <= self.envelope.max_joint_speed_deg_s)
        {
            return err(format!(
                "jog speed must be in (0, {}] °/s",
                self.envelope.max_joint_speed_deg_s
            ));
        }
        self.envelope
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.params
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.motor
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.calibration
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    pub fn record_divisor(&self) -> u64 {
        u64::from(self.tick_hz / self.record_hz)
    }

    /// Plant configuration consistent with this controller.
    pub fn sim_config(&self, noise_sigma_counts: f64, seed: u64) -> SimConfig {
        SimConfig {
            tick_hz: self.tick_hz,
            adc_noise_sigma_counts: noise_sigma_counts,
            seed,
            ..SimConfig::for_motor(&self.motor, &self.params)
        }
    }
}

#[derive(Debug)]
struct Recorder {
    routine: Routine,
    start_tick: u64,
}

#[derive(Debug)]
struct ActivePlayback {
    routine: Routine,
    speed: f64,
    /// Routine time of the next target, already scaled by `speed`.
    cursor_ms: f64,
    /// The final pose has been commanded.
    finished: bool,
}

pub struct Controller<P: HardwarePort = SimulatedPlant> {
    config: ControllerConfig,
    port: P,
    library: RoutineLibrary,
    state: ControllerState,
    tick: u64,
    reading: SensorReading,
    /// Last pose sent to the port; also the hold pose.
    target: JointPose,
    /// Operator slider setpoint, already clamped.
    slider: JointPose,
    jog_speed: f64,
    recorder: Option<Recorder>,
    /// Temporary store: the most recent recording.
    last_recording: Option<Routine>,
    /// Routines loaded from the library this session.
    loaded: BTreeMap<String, Routine>,
    playback: Option<ActivePlayback>,
    moved_last_tick: bool,
    /// Playback targets that had to be clamped into the envelope.
    clamped_targets: u64,
    outbox: Vec<ServerEvent>,
}

impl Controller<SimulatedPlant> {
    /// Controller over a fresh simulated plant.
    pub fn simulated(
        config: ControllerConfig,
        noise_sigma_counts: f64,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let plant = SimulatedPlant::new(
            config.params.clone(),
            config.calibration.clone(),
            config.sim_config(noise_sigma_counts, seed),
        )
        .map_err(|e| ConfigError(e.to_string()))?;
        Self::new(config, plant)
    }
}

impl<P: HardwarePort> Controller<P> {
    pub fn new(config: ControllerConfig, mut port: P) -> Result<Self, ConfigError> {
        config.validate()?;
        let reading = port.sync_read();
        let library = RoutineLibrary::new(config.data_dir.clone());
        Ok(Self {
            jog_speed: config.jog_speed_deg_s,
            config,
            port,
            library,
            state: ControllerState::default(),
            tick: 0,
            reading,
            target: JointPose::ZERO,
            slider: JointPose::ZERO,
            recorder: None,
            last_recording: None,
            loaded: BTreeMap::new(),
            playback: None,
            moved_last_tick: false,
            clamped_targets: 0,
            outbox: Vec::new(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn port(&self) -> &P {
        &self.port
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Session time at the start of the next tick.
    pub fn now_ms(&self) -> u64 {
        self.tick * 1000 / u64::from(self.config.tick_hz)
    }

    pub fn target(&self) -> JointPose {
        self.target
    }

    pub fn reading(&self) -> &SensorReading {
        &self.reading
    }

    pub fn last_recording(&self) -> Option<&Routine> {
        self.last_recording.as_ref()
    }

    pub fn clamped_targets(&self) -> u64 {
        self.clamped_targets
    }

    pub fn library(&self) -> &RoutineLibrary {
        &self.library
    }

    pub fn drain_events(&mut self) -> Vec<ServerEvent> {
        std::mem::take(&mut self.outbox)
    }

    fn apply(&mut self, event: Event) -> Result<(), Rejection> {
        let from = self.state.mode;
        let next = safety::transition(&self.state, &event, self.now_ms())?;
        let to = next.mode;
        if from == Mode::Recording && to != Mode::Recording {
            self.finish_recording();
        }
        if from == Mode::Playback && to != Mode::Playback {
            self.playback = None;
        }
        if matches!(to, Mode::Jog | Mode::Recording | Mode::Idle) {
            self.slider = self.target;
        }
        // a repeated estop keeps the original entry time
        if !(from == Mode::EStop && to == Mode::EStop) {
            self.state = next;
        }
        if from != to {
            self.outbox.push(ServerEvent::State {
                t_ms: self.now_ms(),
                from,
                to,
            });
        }
        Ok(())
    }

    fn finish_recording(&mut self) {
        if let Some(rec) = self.recorder.take() {
            if !rec.routine.is_empty() {
                self.last_recording = Some(rec.routine);
            }
        }
    }

    fn find_routine(&mut self, name: &str) -> Result<Routine, String> {
        if let Some(r) = self.last_recording.as_ref().filter(|r| r.name() == name) {
            return Ok(r.clone());
        }
        if let Some(r) = self.loaded.get(name) {
            return Ok(r.clone());
        }
        let r = self.library.load(name).map_err(|e| e.to_string())?;
        self.loaded.insert(name.to_string(), r.clone());
        Ok(r)
    }

    /// Applies one command between ticks. Motion effects show up on the
    /// next tick.
    pub fn handle(&mut self, request: Request) -> Reply {
        let id = request.id.clone();
        match self.execute(request.command) {
            Ok(data) => Reply::ok(id, data),
            Err(reason) => Reply::rejected(id, reason),
        }
    }

    pub fn handle_command(&mut self, command: Command) -> Reply {
        self.handle(Request::new(command))
    }

    fn state_data(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("state".into(), json!(self.state.mode));
        m
    }

    fn execute(&mut self, command: Command) -> Result<Map<String, Value>, String> {
        let reject = |r: Rejection| r.to_string();
        match command {
            Command::Connect => self.apply(Event::Connect).map_err(reject)?,
            Command::Disconnect => self.apply(Event::Disconnect).map_err(reject)?,
            Command::Jog { dp, cr } => {
                let pose = JointPose::new(dp, cr);
                if !pose.is_finite() {
                    return Err("jog pose must be finite".into());
                }
                match self.state.mode {
                    Mode::Jog | Mode::Recording => {}
                    _ => self.apply(Event::EnterJog).map_err(reject)?,
                }
                self.slider = clamp_pose(&pose, &self.config.envelope);
                let mut m = self.state_data();
                m.insert("dp".into(), json!(self.slider.theta_dp));
                m.insert("cr".into(), json!(self.slider.theta_cr));
                return Ok(m);
            }
            Command::SetJogSpeed { deg_s } => {
                let cap = self.config.envelope.max_joint_speed_deg_s;
                if !(deg_s > 0.0 && deg_s <= cap) {
                    return Err(format!("jog speed must be in (0, {cap}] °/s"));
                }
                self.jog_speed = deg_s;
            }
            Command::StartRecord { name } => {
                library::validate_name(&name).map_err(|e| e.to_string())?;
                self.apply(Event::StartRecord).map_err(reject)?;
                let mut routine = Routine::new(name);
                routine.set_meta("record_hz", self.config.record_hz.to_string());
                self.recorder = Some(Recorder {
                    routine,
                    start_tick: self.tick,
                });
            }
            Command::StopRecord => {
                if self.state.mode != Mode::Recording {
                    return Err(format!(
                        "stop_record rejected in {}: not recording",
                        self.state.mode
                    ));
                }
                self.apply(Event::Stop).map_err(reject)?;
                let mut m = self.state_data();
                if let Some(r) = &self.last_recording {
                    m.insert("name".into(), json!(r.name()));
                    m.insert("samples".into(), json!(r.len()));
                    m.insert("duration_ms".into(), json!(r.duration_ms()));
                }
                return Ok(m);
            }
            Command::StartPlayback { name, speed } => {
                if !(speed > 0.0 && speed <= MAX_PLAYBACK_SPEED) {
                    return Err(format!(
                        "playback speed must be in (0, {MAX_PLAYBACK_SPEED}], got {speed}"
                    ));
                }
                if self.state.mode != Mode::Idle {
                    return Err(format!(
                        "start_playback rejected in {}: busy",
                        self.state.mode
                    ));
                }
                let routine = self.find_routine(&name)?;
                let ticket = safety::validate_routine(
                    &routine,
                    &self.config.envelope,
                    &self.config.params,
                    &self.config.motor,
                )
                .map_err(|report| report.to_string())?;
                self.apply(Event::StartPlayback(ticket)).map_err(reject)?;
                let mut m = self.state_data();
                m.insert("duration_ms".into(), json!(routine.duration_ms()));
                self.playback = Some(ActivePlayback {
                    cursor_ms: routine.start_ms() as f64,
                    routine,
                    speed,
                    finished: false,
                });
                return Ok(m);
            }
            Command::Stop => self.apply(Event::Stop).map_err(reject)?,
            Command::Estop => self.apply(Event::EStop).map_err(reject)?,
            Command::Reset => self
                .apply(Event::Reset {
                    plant_at_rest: !self.moved_last_tick,
                })
                .map_err(reject)?,
            Command::SaveRoutine { name, overwrite } => {
                let Some(recording) = &self.last_recording else {
                    return Err("nothing recorded to save".into());
                };
                let stored = self
                    .library
                    .save(&name, recording, overwrite)
                    .map_err(|e| e.to_string())?;
                self.loaded.insert(name.clone(), stored);
                let mut m = Map::new();
                m.insert("name".into(), json!(name));
                return Ok(m);
            }
            Command::LoadRoutine { name } => {
                let routine = self.library.load(&name).map_err(|e| e.to_string())?;
                safety::validate_routine(
                    &routine,
                    &self.config.envelope,
                    &self.config.params,
                    &self.config.motor,
                )
                .map_err(|report| report.to_string())?;
                let mut m = Map::new();
                m.insert("name".into(), json!(name));
                m.insert("samples".into(), json!(routine.len()));
                m.insert("duration_ms".into(), json!(routine.duration_ms()));
                self.loaded.insert(name, routine);
                return Ok(m);
            }
            Command::ListRoutines => {
                let names = self.library.list().map_err(|e| e.to_string())?;
                let mut m = Map::new();
                m.insert("routines".into(), json!(names));
                return Ok(m);
            }
            Command::InjectFault { axis, kind } => {
                self.port
                    .inject_fault(axis, kind)
                    .map_err(|e| e.to_string())?;
            }
        }
        Ok(self.state_data())
    }

    fn step_towards(&self, from: JointPose, to: JointPose) -> JointPose {
        let max_step = self.jog_speed / f64::from(self.config.tick_hz);
        let mut out = from;
        for axis in Axis::ALL {
            let gap = to.get(axis) - from.get(axis);
            out.set(
                axis,
                if gap.abs() <= max_step {
                    to.get(axis)
                } else {
                    from.get(axis) + max_step.copysign(gap)
                },
            );
        }
        out
    }

    /// One control period: sense, supervise, plan, command, advance the
    /// plant, record, publish.
    pub fn control_tick(&mut self) {
        let now = self.now_ms();
        let reading = self.reading;

        if reading.is_faulted() && !matches!(self.state.mode, Mode::Disconnected | Mode::Fault) {
            let _ = self.apply(Event::SensorFault);
        }

        let planned = match self.state.mode {
            Mode::Jog | Mode::Recording => Some(self.step_towards(self.target, self.slider)),
            Mode::Playback => Some(self.playback_target()),
            Mode::Idle => Some(self.target),
            Mode::Disconnected | Mode::EStop | Mode::Fault => None,
        };

        let previous = self.target;
        if let Some(pose) = planned {
            let safe = clamp_pose(&pose, &self.config.envelope);
            if self.port.command_target(safe).is_ok() {
                self.target = safe;
            }
        }
        self.moved_last_tick = planned.is_some() && self.target != previous;

        self.reading = self.port.sync_read();

        if let Some(rec) = &mut self.recorder {
            let since = self.tick - rec.start_tick;
            if since.is_multiple_of(self.config.record_divisor()) {
                let t_ms = since * 1000 / u64::from(self.config.tick_hz);
                // timestamps are strictly increasing by construction
                let _ = rec.routine.push(RoutineSample {
                    t_ms,
                    pose: reading.pose,
                });
            }
        }

        if self
            .tick
            .is_multiple_of(u64::from(self.config.telemetry_divisor))
        {
            self.outbox
                .push(ServerEvent::Telemetry(self.frame(now, &reading)));
        }

        self.tick += 1;
        if self.playback.as_ref().is_some_and(|pb| pb.finished) {
            let _ = self.apply(Event::PlaybackComplete);
        }
    }

    fn playback_target(&mut self) -> JointPose {
        let tick_ms = 1000.0 / f64::from(self.config.tick_hz);
        let Some(pb) = &mut self.playback else {
            return self.target;
        };
        let pose = pb.routine.sample_at(pb.cursor_ms).unwrap_or(self.target);
        let end = (pb.routine.start_ms() + pb.routine.duration_ms()) as f64;
        let elapsed = (pb.cursor_ms - pb.routine.start_ms() as f64).max(0.0);
        pb.finished = pb.cursor_ms >= end;
        pb.cursor_ms = (pb.cursor_ms + tick_ms * pb.speed).min(end);
        if let Some(info) = &mut self.state.playback {
            info.elapsed_ms = elapsed as u64;
        }
        if safety::check_pose(&pose, &self.config.envelope).is_err() {
            self.clamped_targets += 1;
        }
        pose
    }

    fn frame(&self, now: u64, reading: &SensorReading) -> TelemetryFrame {
        let progress = match &self.playback {
            Some(pb) if pb.routine.duration_ms() > 0 => {
                ((pb.cursor_ms - pb.routine.start_ms() as f64) / pb.routine.duration_ms() as f64)
                    .clamp(0.0, 1.0)
            }
            _ => 0.0,
        };
        let motor = |v: f64| model::joint_to_motor(v, &self.config.params).unwrap_or(f64::NAN);
        TelemetryFrame {
            t_ms: now,
            state: self.state.mode,
            dp: reading.pose.theta_dp,
            cr: reading.pose.theta_cr,
            target_dp: self.target.theta_dp,
            target_cr: self.target.theta_cr,
            motor_dp: motor(reading.pose.theta_dp),
            motor_cr: motor(reading.pose.theta_cr),
            recording: self.recorder.is_some(),
            progress,
            timer_ms: now.saturating_sub(self.state.entered_ms),
        }
    }

    /// Runs ticks until the session clock reaches `until_ms`.
    pub fn run_until(&mut self, until_ms: u64) {
        while self.now_ms() < until_ms {
            self.control_tick();
        }
    }
}

/// One line of a command script: a request applied just before the first
/// tick at or after `at_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub at_ms: u64,
    pub request: Request,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("script line {line}: {reason}")]
pub struct ScriptError {
    pub line: usize,
    pub reason: String,
}

/// Parses a JSONL command script. Each line is a protocol command with an
/// optional `"at_ms"` field; blank lines and `#` comments are skipped.
pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, ScriptError> {
    let mut out: Vec<ScriptEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut value: Value = serde_json::from_str(trimmed).map_err(|e| ScriptError {
            line: line_no,
            reason: e.to_string(),
        })?;
        let at_ms = match value.as_object_mut().and_then(|o| o.remove("at_ms")) {
            Some(v) => v.as_u64().ok_or_else(|| ScriptError {
                line: line_no,
                reason: "at_ms must be a non-negative integer".into(),
            })?,
            None => out.last().map_or(0, |e| e.at_ms),
        };
        if out.last().is_some_and(|e| at_ms < e.at_ms) {
            return Err(ScriptError {
                line: line_no,
                reason: "at_ms must not decrease".into(),
            });
        }
        let request = Request::parse(&value.to_string()).map_err(|e| ScriptError {
            line: line_no,
            reason: e.reason,
        })?;
        out.push(ScriptEntry { at_ms, request });
    }
    Ok(out)
}

/// Replays a script against the controller in simulated time and returns
/// every outbound line (replies and events) in emission order.
pub fn run_script<P: HardwarePort>(
    controller: &mut Controller<P>,
    script: &[ScriptEntry],
    until_ms: u64,
) -> Vec<String> {
    let mut log = Vec::new();
    let mut next = 0;
    while controller.now_ms() < until_ms {
        let now = controller.now_ms();
        while next < script.len() && script[next].at_ms <= now {
            let reply = controller.handle(script[next].request.clone());
            log.extend(controller.drain_events().iter().map(ServerEvent::to_line));
            log.push(reply.to_line());
            next += 1;
        }
        controller.control_tick();
        log.extend(controller.drain_events().iter().map(ServerEvent::to_line));
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::FaultKind;
    use crate::trajectory::generate_demo;

    fn controller() -> (Controller, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let config = ControllerConfig {
            data_dir: dir.path().to_path_buf(),
            ..ControllerConfig::default()
        };
        (Controller::simulated(config, 0.0, 0).unwrap(), dir)
    }

    #[test]
    fn connect_goes_idle() {
        let (mut c, _d) = controller();
        assert_eq!(c.mode(), Mode::Disconnected);
        let reply = c.handle_command(Command::Connect);
        assert!(reply.is_ok());
        assert_eq!(c.mode(), Mode::Idle);
        let events = c.drain_events();
        assert_eq!(
            events,
            vec![ServerEvent::State {
                t_ms: 0,
                from: Mode::Disconnected,
                to: Mode::Idle
            }]
        );
        assert!(!c.handle_command(Command::Connect).is_ok());
    }

    #[test]
    fn idle_tick_holds_without_recording() {
        let (mut c, _d) = controller();
        c.handle_command(Command::Connect);
        let before = c.target();
        c.control_tick();
        assert_eq!(c.target(), before);
        assert!(c.last_recording().is_none());
    }

    #[test]
    fn recording_appends_every_second_tick() {
        let (mut c, _d) = controller();
        c.handle_command(Command::Connect);
        assert!(c
            .handle_command(Command::StartRecord { name: "r".into() })
            .is_ok());
        for _ in 0..100 {
            c.control_tick();
        }
        c.handle_command(Command::StopRecord);
        let r = c.last_recording().unwrap();
        assert_eq!(r.len(), 50);
        assert_eq!(r.uniform_period_ms(), Some(20));
        assert_eq!(r.first().unwrap().t_ms, 0);
    }

    #[test]
    fn jog_is_clamped_and_rate_limited() {
        let (mut c, _d) = controller();
        c.handle_command(Command::Connect);
        let reply = c.handle_command(Command::Jog {
            dp: 80.0,
            cr: -40.0,
        });
        assert!(reply.is_ok());
        assert_eq!(c.mode(), Mode::Jog);
        c.control_tick();
        // 200 °/s at 100 Hz
        assert!((c.target().theta_dp - 2.0).abs() < 1e-12);
        assert!((c.target().theta_cr + 2.0).abs() < 1e-12);
        for _ in 0..100 {
            c.control_tick();
        }
        assert_eq!(c.target(), JointPose::new(50.0, -15.0));
        assert!(c
            .handle_command(Command::SetJogSpeed { deg_s: 1000.0 })
            .reason()
            .is_some());
        assert!(c
            .handle_command(Command::SetJogSpeed { deg_s: 50.0 })
            .is_ok());
    }

    #[test]
    fn estop_freezes_commands_until_reset() {
        let (mut c, dir) = controller();
        let demo = generate_demo(5_000, 0.5, &SafetyEnvelope::default()).unwrap();
        RoutineLibrary::new(dir.path())
            .save("demo", &demo, false)
            .unwrap();
        c.handle_command(Command::Connect);
        let reply = c.handle_command(Command::StartPlayback {
            name: "demo".into(),
            speed: 1.0,
        });
        assert!(reply.is_ok(), "{reply:?}");
        for _ in 0..50 {
            c.control_tick();
        }
        c.handle_command(Command::Estop);
        assert_eq!(c.mode(), Mode::EStop);
        // a reset right away is refused: the plant moved on the last tick
        assert!(!c.handle_command(Command::Reset).is_ok());
        let frozen = c.port().state().commanded_steps();
        for _ in 0..30 {
            c.control_tick();
            assert_eq!(c.port().state().commanded_steps(), frozen);
        }
        assert!(c.handle_command(Command::Reset).is_ok());
        assert_eq!(c.mode(), Mode::Idle);
    }

    #[test]
    fn playback_completes_back_to_idle() {
        let (mut c, dir) = controller();
        let demo = generate_demo(1_000, 0.5, &SafetyEnvelope::default()).unwrap();
        RoutineLibrary::new(dir.path())
            .save("short", &demo, false)
            .unwrap();
        c.handle_command(Command::Connect);
        assert!(c
            .handle_command(Command::StartPlayback {
                name: "short".into(),
                speed: 2.0
            })
            .is_ok());
        c.drain_events();
        // cursor visits 0, 20, ..., 1000 ms: 51 targets
        for _ in 0..50 {
            c.control_tick();
        }
        assert_eq!(c.mode(), Mode::Playback);
        c.control_tick();
        assert_eq!(c.mode(), Mode::Idle);
        assert_eq!(c.target(), demo.last().unwrap().pose);
    }

    #[test]
    fn invalid_playback_is_rejected() {
        let (mut c, dir) = controller();
        let mut bad = Routine::new("bad");
        for i in 0..20u64 {
            bad.push(RoutineSample::new(
                i * 20,
                if i == 10 { 60.0 } else { 0.0 },
                0.0,
            ))
            .unwrap();
        }
        std::fs::write(dir.path().join("bad.csv"), bad.serialize()).unwrap();
        c.handle_command(Command::Connect);
        let reply = c.handle_command(Command::StartPlayback {
            name: "bad".into(),
            speed: 1.0,
        });
        assert!(
            reply.reason().unwrap().contains("range of motion"),
            "{reply:?}"
        );
        assert_eq!(c.mode(), Mode::Idle);
        assert!(!c
            .handle_command(Command::LoadRoutine { name: "bad".into() })
            .is_ok());
        let reply = c.handle_command(Command::StartPlayback {
            name: "bad".into(),
            speed: 3.0,
        });
        assert!(reply.reason().unwrap().contains("speed"));
    }

    #[test]
    fn sensor_fault_latches() {
        let (mut c, _d) = controller();
        c.handle_command(Command::Connect);
        c.handle_command(Command::Jog { dp: 10.0, cr: 0.0 });
        c.control_tick();
        c.handle_command(Command::InjectFault {
            axis: Axis::Dp,
            kind: Some(FaultKind::Disconnect),
        });
        c.control_tick();
        c.control_tick();
        assert_eq!(c.mode(), Mode::Fault);
        let frozen = c.port().state().commanded_steps();
        c.control_tick();
        assert_eq!(c.port().state().commanded_steps(), frozen);
        c.handle_command(Command::InjectFault {
            axis: Axis::Dp,
            kind: None,
        });
        c.control_tick();
        assert!(c.handle_command(Command::Reset).is_ok());
        c.control_tick();
        assert_eq!(c.mode(), Mode::Idle);
    }

    #[test]
    fn save_requires_a_recording() {
        let (mut c, _d) = controller();
        c.handle_command(Command::Connect);
        assert!(!c
            .handle_command(Command::SaveRoutine {
                name: "x".into(),
                overwrite: false
            })
            .is_ok());
        c.handle_command(Command::StartRecord { name: "x".into() });
        for _ in 0..10 {
            c.control_tick();
        }
        c.handle_command(Command::Stop);
        assert!(c
            .handle_command(Command::SaveRoutine {
                name: "x".into(),
                overwrite: false
            })
            .is_ok());
        let reply = c.handle_command(Command::SaveRoutine {
            name: "x".into(),
            overwrite: false,
        });
        assert!(reply.reason().unwrap().contains("exists"));
        let list = c.handle_command(Command::ListRoutines);
        assert_eq!(list.outcome.unwrap()["routines"], json!(["x"]));
        assert!(!c
            .handle_command(Command::LoadRoutine {
                name: "../x".into()
            })
            .is_ok());
    }

    #[test]
    fn telemetry_cadence() {
        let (mut c, _d) = controller();
        c.handle_command(Command::Connect);
        c.drain_events();
        c.run_until(1_000);
        let frames: Vec<u64> = c
            .drain_events()
            .into_iter()
            .filter_map(|e| match e {
                ServerEvent::Telemetry(f) => Some(f.t_ms),
                _ => None,
            })
            .collect();
        assert_eq!(frames.len(), 20);
        assert!(frames.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut ControllerConfig)| {
            let mut c = ControllerConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(ControllerConfig::default().validate().is_ok());
        assert!(bad(|c| c.tick_hz = 0));
        assert!(bad(|c| c.record_hz = 30));
        assert!(bad(|c| c.telemetry_divisor = 0));
        assert!(bad(|c| c.jog_speed_deg_s = 0.0));
    }

    #[test]
    fn script_parsing() {
        let text = "# comment\n{\"cmd\":\"connect\"}\n\n{\"cmd\":\"jog\",\"dp\":5,\"cr\":0,\"at_ms\":100}\n{\"cmd\":\"stop\"}\n";
        let s = parse_script(text).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].at_ms, 0);
        assert_eq!(s[1].at_ms, 100);
        assert_eq!(s[2].at_ms, 100);
        let err =
            parse_script("{\"cmd\":\"connect\",\"at_ms\":50}\n{\"cmd\":\"stop\",\"at_ms\":10}\n")
                .unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(parse_script("{\"cmd\":\"nope\"}").unwrap_err().line, 1);
    }
}
