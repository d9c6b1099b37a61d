//! Device parameters, unit conventions and the pure transforms between joint
//! space, motor space, stepper counts and potentiometer ADC counts.
//!
//! Units are fixed across the crate: degrees, milliseconds, N·mm, kg and mm.
//! Every conversion to SI happens inside the function that needs it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("step count for {angle_deg}° does not fit a 64-bit signed counter")]
    StepOverflow { angle_deg: f64 },
    #[error("sensor count {counts} outside [0, {counts_max}]")]
    SensorRange { counts: i64, counts_max: u32 },
    #[error("angle {angle_deg}° outside the sensor span [{min_deg}, {max_deg}]")]
    OutsideSpan {
        angle_deg: f64,
        min_deg: f64,
        max_deg: f64,
    },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NonFinite { what, value })
    }
}

/// The two rotational degrees of freedom of the wrist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Dorsal-palmar flexion, positive towards dorsal.
    Dp,
    /// Cubital-radial deviation, positive towards radial.
    Cr,
}

impl Axis {
    pub const ALL: [Axis; 2] = [Axis::Dp, Axis::Cr];

    pub fn index(self) -> usize {
        match self {
            Axis::Dp => 0,
            Axis::Cr => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Dp => "dp",
            Axis::Cr => "cr",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Joint-side wrist pose in degrees. Range limits are enforced by the safety
/// envelope, not here.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointPose {
    pub theta_dp: f64,
    pub theta_cr: f64,
}

impl JointPose {
    pub const ZERO: JointPose = JointPose {
        theta_dp: 0.0,
        theta_cr: 0.0,
    };

    pub fn new(theta_dp: f64, theta_cr: f64) -> Self {
        Self { theta_dp, theta_cr }
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Dp => self.theta_dp,
            Axis::Cr => self.theta_cr,
        }
    }

    pub fn set(&mut self, axis: Axis, value: f64) {
        match axis {
            Axis::Dp => self.theta_dp = value,
            Axis::Cr => self.theta_cr = value,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta_dp.is_finite() && self.theta_cr.is_finite()
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.theta_dp, self.theta_cr]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

/// Mechanical and anthropometric parameters of the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Motor degrees per joint degree.
    pub gear_ratio: f64,
    /// Motor-side degrees per full step.
    pub full_step_deg: f64,
    pub microsteps: u32,
    pub hand_mass_kg: f64,
    /// Distance from the wrist axis to the hand's centre of mass.
    pub lever_mm: f64,
    pub device_inertia_dp: f64,
    pub device_inertia_cr: f64,
    pub gravity_mps2: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            gear_ratio: 4.0,
            full_step_deg: 1.8,
            microsteps: 8,
            hand_mass_kg: 0.5,
            lever_mm: 71.1,
            device_inertia_dp: 0.0005,
            device_inertia_cr: 0.0005,
            gravity_mps2: 9.81,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ModelError::InvalidParam {
                    name,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        let non_negative = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ModelError::InvalidParam {
                    name,
                    reason: format!("must be non-negative, got {v}"),
                })
            }
        };
        positive("gear_ratio", self.gear_ratio)?;
        positive("full_step_deg", self.full_step_deg)?;
        if self.microsteps == 0 {
            return Err(ModelError::InvalidParam {
                name: "microsteps",
                reason: "must be at least 1".into(),
            });
        }
        non_negative("hand_mass_kg", self.hand_mass_kg)?;
        non_negative("lever_mm", self.lever_mm)?;
        non_negative("device_inertia_dp", self.device_inertia_dp)?;
        non_negative("device_inertia_cr", self.device_inertia_cr)?;
        non_negative("gravity_mps2", self.gravity_mps2)?;
        Ok(())
    }

    /// Motor-side degrees per microstep.
    pub fn step_deg(&self) -> f64 {
        self.full_step_deg / f64::from(self.microsteps)
    }

    pub fn device_inertia(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Dp => self.device_inertia_dp,
            Axis::Cr => self.device_inertia_cr,
        }
    }

    /// Inertia about `axis` seen at the joint: device plus point-mass hand, kg·m².
    pub fn effective_inertia(&self, axis: Axis) -> f64 {
        let lever_m = self.lever_mm / 1000.0;
        self.device_inertia(axis) + self.hand_mass_kg * lever_m * lever_m
    }
}

/// Linear potentiometer-to-ADC mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcCalibration {
    pub counts_max: u32,
    pub span_deg: f64,
    /// Joint angle read at count 0.
    pub offset_deg: f64,
}

impl Default for AdcCalibration {
    fn default() -> Self {
        Self {
            counts_max: 1023,
            span_deg: 270.0,
            offset_deg: -135.0,
        }
    }
}

impl AdcCalibration {
    pub fn validate(&self) -> Result<()> {
        if self.counts_max < 1 {
            return Err(ModelError::InvalidParam {
                name: "counts_max",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.span_deg.is_finite() && self.span_deg > 0.0) {
            return Err(ModelError::InvalidParam {
                name: "span_deg",
                reason: format!("must be positive, got {}", self.span_deg),
            });
        }
        finite("offset_deg", self.offset_deg)?;
        Ok(())
    }

    /// Angle represented by one count.
    pub fn lsb_deg(&self) -> f64 {
        self.span_deg / f64::from(self.counts_max)
    }

    pub fn max_deg(&self) -> f64 {
        self.offset_deg + self.span_deg
    }

    /// Continuous (unrounded) count for an angle, unbounded.
    pub(crate) fn raw_counts(&self, theta: f64) -> f64 {
        (theta - self.offset_deg) * f64::from(self.counts_max) / self.span_deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorSpec {
    pub name: String,
    /// Motor-side speed rating.
    pub max_speed_deg_s: f64,
    pub rated_torque_nmm: f64,
}

impl Default for MotorSpec {
    fn default() -> Self {
        Self {
            name: "STM17".into(),
            max_speed_deg_s: 3600.0,
            rated_torque_nmm: 480.18,
        }
    }
}

impl MotorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_speed_deg_s", self.max_speed_deg_s),
            ("rated_torque_nmm", self.rated_torque_nmm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParam {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }
}

pub fn joint_to_motor(theta: f64, params: &DeviceParams) -> Result<f64> {
    Ok(params.gear_ratio * finite("joint angle", theta)?)
}

pub fn motor_to_joint(theta_motor: f64, params: &DeviceParams) -> Result<f64> {
    Ok(finite("motor angle", theta_motor)? / params.gear_ratio)
}

/// Nearest microstep count for a motor-side angle. Halves round away from zero.
pub fn angle_to_steps(theta_motor: f64, params: &DeviceParams) -> Result<i64> {
    let steps = (finite("motor angle", theta_motor)? / params.step_deg()).round();
    // i64::MAX as f64 rounds up to 2^63, which itself does not fit.
    if steps >= -(i64::MIN as f64) || steps < i64::MIN as f64 {
        return Err(ModelError::StepOverflow {
            angle_deg: theta_motor,
        });
    }
    Ok(steps as i64)
}

pub fn steps_to_angle(steps: i64, params: &DeviceParams) -> f64 {
    steps as f64 * params.full_step_deg / f64::from(params.microsteps)
}

pub fn adc_to_angle(counts: i64, calib: &AdcCalibration) -> Result<f64> {
    if counts < 0 || counts > i64::from(calib.counts_max) {
        return Err(ModelError::SensorRange {
            counts,
            counts_max: calib.counts_max,
        });
    }
    Ok(calib.offset_deg + calib.span_deg * counts as f64 / f64::from(calib.counts_max))
}

pub fn angle_to_adc(theta: f64, calib: &AdcCalibration) -> Result<u32> {
    let theta = finite("joint angle", theta)?;
    if theta < calib.offset_deg || theta > calib.max_deg() {
        return Err(ModelError::OutsideSpan {
            angle_deg: theta,
            min_deg: calib.offset_deg,
            max_deg: calib.max_deg(),
        });
    }
    let counts = calib.raw_counts(theta).round();
    Ok(counts.clamp(0.0, f64::from(calib.counts_max)) as u32)
}

/// Static torque the hand's weight exerts about the dorsal-palmar axis, N·mm.
///
/// `m · g · L · cos θ`; the maximum at θ = 0 is the minimum moment the device
/// must overcome to move a relaxed hand.
pub fn gravity_torque(theta_dp: f64, params: &DeviceParams) -> Result<f64> {
    let theta = finite("dorsal-palmar angle", theta_dp)?;
    let lever_m = params.lever_mm / 1000.0;
    Ok(params.hand_mass_kg * params.gravity_mps2 * lever_m * theta.to_radians().cos() * 1000.0)
}

/// Gravity torque at the neutral pose reflected through the gear to the motor.
pub fn static_min_motor_torque(params: &DeviceParams) -> Result<f64> {
    if params.gear_ratio.is_nan() || params.gear_ratio <= 0.0 {
        return Err(ModelError::InvalidParam {
            name: "gear_ratio",
            reason: format!("must be positive, got {}", params.gear_ratio),
        });
    }
    Ok(gravity_torque(0.0, params)? / params.gear_ratio)
}
