//! Deterministic stand-in for the stepper/potentiometer hardware.
//!
//! Each axis is a rate-limited stepper behind the gear, read back through a
//! potentiometer and a quantizing ADC with optional seeded Gaussian noise.
//! Faults can be injected per axis to exercise the controller's fault path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, AdcCalibration, Axis, DeviceParams, JointPose, ModelError, MotorSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PortError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("operation not supported by this port: {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid simulator config: {0}")]
pub struct SimConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub tick_hz: u32,
    /// Motor-side microsteps per second.
    pub max_step_rate: f64,
    pub adc_noise_sigma_counts: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::for_motor(&MotorSpec::default(), &DeviceParams::default())
    }
}

impl SimConfig {
    /// Step rate matching the motor's speed rating at the device's step size.
    pub fn for_motor(motor: &MotorSpec, params: &DeviceParams) -> Self {
        Self {
            tick_hz: 100,
            max_step_rate: motor.max_speed_deg_s / params.step_deg(),
            adc_noise_sigma_counts: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimConfigError> {
        if self.tick_hz < 1 {
            return Err(SimConfigError("tick_hz must be at least 1".into()));
        }
        if !(self.max_step_rate.is_finite() && self.max_step_rate > 0.0) {
            return Err(SimConfigError("max_step_rate must be positive".into()));
        }
        if !(self.adc_noise_sigma_counts.is_finite() && self.adc_noise_sigma_counts >= 0.0) {
            return Err(SimConfigError("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    /// Reads freeze at the count present when the fault was injected.
    Stuck,
    /// Reads drop to count 0.
    Disconnect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisState {
    pub commanded_steps: i64,
    pub actual_motor_deg: f64,
    pub adc_counts: u32,
    pub fault: Option<FaultKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantState {
    pub dp: AxisState,
    pub cr: AxisState,
}

impl PlantState {
    pub fn axis(&self, axis: Axis) -> &AxisState {
        match axis {
            Axis::Dp => &self.dp,
            Axis::Cr => &self.cr,
        }
    }

    fn axis_mut(&mut self, axis: Axis) -> &mut AxisState {
        match axis {
            Axis::Dp => &mut self.dp,
            Axis::Cr => &mut self.cr,
        }
    }

    pub fn commanded_steps(&self) -> [i64; 2] {
        [self.dp.commanded_steps, self.cr.commanded_steps]
    }
}

/// One tick-synchronized sensor read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensorReading {
    pub pose: JointPose,
    pub counts: [u32; 2],
    /// Axes whose read comes from a faulted sensor.
    pub faulted: [bool; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("sensor fault on {axis} (count {counts})")]
pub struct SensorFault {
    pub axis: Axis,
    pub counts: u32,
    pub pose: JointPose,
}

impl SensorReading {
    pub fn is_faulted(&self) -> bool {
        self.faulted.iter().any(|f| *f)
    }

    pub fn checked(&self) -> Result<JointPose, SensorFault> {
        match Axis::ALL.into_iter().find(|a| self.faulted[a.index()]) {
            Some(axis) => Err(SensorFault {
                axis,
                counts: self.counts[axis.index()],
                pose: self.pose,
            }),
            None => Ok(self.pose),
        }
    }
}

/// What the controller needs from a device, simulated or real.
pub trait HardwarePort {
    /// Sets the joint-side target for both axes.
    fn command_target(&mut self, pose: JointPose) -> Result<(), PortError>;

    /// Completes the current control period and returns the reading latched
    /// at its end.
    fn sync_read(&mut self) -> SensorReading;

    fn fault_status(&self) -> [Option<FaultKind>; 2];

    /// Test hook for ports that can fake sensor faults.
    fn inject_fault(&mut self, _axis: Axis, _kind: Option<FaultKind>) -> Result<(), PortError> {
        Err(PortError::Unsupported("fault injection"))
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    params: DeviceParams,
    calib: AdcCalibration,
    config: SimConfig,
    state: PlantState,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl SimulatedPlant {
    /// Plant at rest in the neutral pose.
    pub fn new(
        params: DeviceParams,
        calib: AdcCalibration,
        config: SimConfig,
    ) -> Result<Self, SimConfigError> {
        params
            .validate()
            .map_err(|e| SimConfigError(e.to_string()))?;
        calib
            .validate()
            .map_err(|e| SimConfigError(e.to_string()))?;
        config.validate()?;
        let noise = (config.adc_noise_sigma_counts > 0.0)
            .then(|| Normal::new(0.0, config.adc_noise_sigma_counts).expect("validated sigma"));
        let rest = AxisState {
            commanded_steps: 0,
            actual_motor_deg: 0.0,
            adc_counts: 0,
            fault: None,
        };
        let mut plant = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params,
            calib,
            config,
            state: PlantState { dp: rest, cr: rest },
            noise,
        };
        for axis in Axis::ALL {
            plant.state.axis_mut(axis).adc_counts = plant.noiseless_counts(axis);
        }
        Ok(plant)
    }

    pub fn with_defaults() -> Self {
        Self::new(
            DeviceParams::default(),
            AdcCalibration::default(),
            SimConfig::default(),
        )
        .expect("defaults are valid")
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn params(&self) -> &DeviceParams {
        &self.params
    }

    pub fn calibration(&self) -> &AdcCalibration {
        &self.calib
    }

    /// Largest motor-side move in one tick.
    pub fn max_move_per_tick_deg(&self) -> f64 {
        self.config.max_step_rate * self.params.step_deg() / f64::from(self.config.tick_hz)
    }

    /// Converts the joint-side target into commanded microsteps per axis.
    pub fn command_target(&mut self, pose: JointPose) -> Result<(), ModelError> {
        let mut steps = [0i64; 2];
        for axis in Axis::ALL {
            let motor = model::joint_to_motor(pose.get(axis), &self.params)?;
            steps[axis.index()] = model::angle_to_steps(motor, &self.params)?;
        }
        self.state.dp.commanded_steps = steps[0];
        self.state.cr.commanded_steps = steps[1];
        Ok(())
    }

    /// Advances one control period: rate-limited tracking, then sensing.
    pub fn tick(&mut self) {
        let max_move = self.max_move_per_tick_deg();
        for axis in Axis::ALL {
            let target = model::steps_to_angle(self.state.axis(axis).commanded_steps, &self.params);
            let a = self.state.axis_mut(axis);
            let gap = target - a.actual_motor_deg;
            if gap.abs() <= max_move {
                a.actual_motor_deg = target;
            } else {
                a.actual_motor_deg += max_move.copysign(gap);
            }
        }
        for axis in Axis::ALL {
            let counts = match self.state.axis(axis).fault {
                Some(FaultKind::Stuck) => self.state.axis(axis).adc_counts,
                Some(FaultKind::Disconnect) => 0,
                None => self.sensed_counts(axis),
            };
            self.state.axis_mut(axis).adc_counts = counts;
        }
    }

    fn joint_angle(&self, axis: Axis) -> f64 {
        self.state.axis(axis).actual_motor_deg / self.params.gear_ratio
    }

    fn clamp_counts(&self, raw: f64) -> u32 {
        raw.round().clamp(0.0, f64::from(self.calib.counts_max)) as u32
    }

    fn noiseless_counts(&self, axis: Axis) -> u32 {
        self.clamp_counts(self.calib.raw_counts(self.joint_angle(axis)))
    }

    fn sensed_counts(&mut self, axis: Axis) -> u32 {
        let raw = self.calib.raw_counts(self.joint_angle(axis));
        let noise = match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        self.clamp_counts(raw + noise)
    }

    pub fn read_sensors(&self) -> SensorReading {
        let mut angles = [0.0; 2];
        let mut counts = [0u32; 2];
        let mut faulted = [false; 2];
        for axis in Axis::ALL {
            let a = self.state.axis(axis);
            let i = axis.index();
            counts[i] = a.adc_counts;
            faulted[i] = a.fault.is_some();
            angles[i] = model::adc_to_angle(i64::from(a.adc_counts), &self.calib)
                .expect("plant keeps counts in range");
        }
        SensorReading {
            pose: JointPose::from_array(angles),
            counts,
            faulted,
        }
    }

    /// `None` clears the fault; the next tick restores live reads.
    pub fn inject_fault(&mut self, axis: Axis, kind: Option<FaultKind>) {
        let a = self.state.axis_mut(axis);
        a.fault = kind;
        if kind == Some(FaultKind::Disconnect) {
            a.adc_counts = 0;
        }
    }
}

impl HardwarePort for SimulatedPlant {
    fn command_target(&mut self, pose: JointPose) -> Result<(), PortError> {
        Ok(SimulatedPlant::command_target(self, pose)?)
    }

    fn sync_read(&mut self) -> SensorReading {
        self.tick();
        self.read_sensors()
    }

    fn fault_status(&self) -> [Option<FaultKind>; 2] {
        [self.state.dp.fault, self.state.cr.fault]
    }

    fn inject_fault(&mut self, axis: Axis, kind: Option<FaultKind>) -> Result<(), PortError> {
        SimulatedPlant::inject_fault(self, axis, kind);
        Ok(())
    }
}
