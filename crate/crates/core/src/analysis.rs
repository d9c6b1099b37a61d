//! Kinematic/kinetic analysis of a routine: finite-difference velocities and
//! accelerations, per-axis inverse dynamics and the motor-adequacy verdict.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::model::{self, Axis, DeviceParams, ModelError, MotorSpec};
use crate::safety::{check_pose, SafetyEnvelope};
use crate::trajectory::{Routine, TrajectoryError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("routine is not on a uniform time grid; resample it first")]
    NonUniform,
    #[error("differentiation needs at least 3 samples, routine has {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Per-axis arrays indexed by [`Axis::index`].
pub type PerAxis<T> = [T; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicProfile {
    pub t_ms: Vec<u64>,
    /// Joint-side, °/s.
    pub velocity: PerAxis<Vec<f64>>,
    /// Joint-side, °/s².
    pub acceleration: PerAxis<Vec<f64>>,
}

impl KinematicProfile {
    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorqueProfile {
    pub t_ms: Vec<u64>,
    pub joint: PerAxis<Vec<f64>>,
    pub motor: PerAxis<Vec<f64>>,
}

/// Second-order finite differences on a uniform grid: central in the
/// interior, one-sided at both ends.
pub fn differentiate(routine: &Routine) -> Result<KinematicProfile> {
    let n = routine.len();
    if n < 3 {
        return Err(AnalysisError::TooFewSamples(n));
    }
    let dt_ms = routine
        .uniform_period_ms()
        .ok_or(AnalysisError::NonUniform)?;
    let h = dt_ms as f64 / 1000.0;
    let t_ms = routine.samples().iter().map(|s| s.t_ms).collect();
    let mut velocity: PerAxis<Vec<f64>> = Default::default();
    let mut acceleration: PerAxis<Vec<f64>> = Default::default();
    for axis in Axis::ALL {
        let x: Vec<f64> = routine.axis_values(axis).collect();
        velocity[axis.index()] = first_derivative(&x, h);
        acceleration[axis.index()] = second_derivative(&x, h);
    }
    Ok(KinematicProfile {
        t_ms,
        velocity,
        acceleration,
    })
}

fn first_derivative(x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (x[i + 1] - x[i - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * h);
    d
}

fn second_derivative(x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let h2 = h * h;
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (x[i + 1] - 2.0 * x[i] + x[i - 1]) / h2;
    }
    if n >= 4 {
        d[0] = (2.0 * x[0] - 5.0 * x[1] + 4.0 * x[2] - x[3]) / h2;
        d[n - 1] = (2.0 * x[n - 1] - 5.0 * x[n - 2] + 4.0 * x[n - 3] - x[n - 4]) / h2;
    } else {
        // three points: only the first-order end stencil exists
        d[0] = d[1];
        d[n - 1] = d[1];
    }
    d
}

pub fn inverse_dynamics(routine: &Routine, params: &DeviceParams) -> Result<TorqueProfile> {
    let kin = differentiate(routine)?;
    torques_from_kinematics(routine, &kin, params)
}

/// Two decoupled rigid bodies: (I_device + m·L²)·α plus, on the dorsal-palmar
/// axis only, the hand's gravity moment. Motor torque is joint torque divided
/// by the gear ratio.
pub fn torques_from_kinematics(
    routine: &Routine,
    kin: &KinematicProfile,
    params: &DeviceParams,
) -> Result<TorqueProfile> {
    let mut joint: PerAxis<Vec<f64>> = Default::default();
    let mut motor: PerAxis<Vec<f64>> = Default::default();
    for axis in Axis::ALL {
        let inertia = params.effective_inertia(axis);
        let acc = &kin.acceleration[axis.index()];
        let tau: Vec<f64> = routine
            .axis_values(axis)
            .zip(acc)
            .map(|(theta, &a)| {
                let inertial = inertia * a.to_radians() * 1000.0;
                let gravity = match axis {
                    Axis::Dp => model::gravity_torque(theta, params)?,
                    Axis::Cr => 0.0,
                };
                Ok(inertial + gravity)
            })
            .collect::<Result<_>>()?;
        motor[axis.index()] = tau.iter().map(|t| t / params.gear_ratio).collect();
        joint[axis.index()] = tau;
    }
    Ok(TorqueProfile {
        t_ms: kin.t_ms.clone(),
        joint,
        motor,
    })
}

/// What a routine asks of one motor, motor side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotorDemand {
    pub torque_nmm: f64,
    pub speed_deg_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotorVerdict {
    pub adequate: bool,
    /// Rated torque over demanded torque; `None` when nothing is demanded.
    pub torque_margin: Option<f64>,
    pub speed_margin: Option<f64>,
}

pub fn assess_motor(demand: MotorDemand, motor: &MotorSpec) -> MotorVerdict {
    let torque = demand.torque_nmm.abs();
    let speed = demand.speed_deg_s.abs();
    let margin = |rating: f64, need: f64| (need > 0.0).then(|| rating / need);
    MotorVerdict {
        adequate: speed <= motor.max_speed_deg_s && torque <= motor.rated_torque_nmm,
        torque_margin: margin(motor.rated_torque_nmm, torque),
        speed_margin: margin(motor.max_speed_deg_s, speed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisReport {
    pub max_joint_speed_deg_s: f64,
    pub max_motor_speed_deg_s: f64,
    pub max_joint_accel_deg_s2: f64,
    pub max_joint_torque_nmm: f64,
    pub max_motor_torque_nmm: f64,
    pub motor_adequate: bool,
    pub torque_margin: Option<f64>,
    pub speed_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RomViolations {
    /// Samples with at least one axis outside the envelope.
    pub count: usize,
    pub first_t_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub routine: String,
    pub samples: usize,
    pub dt_ms: u64,
    pub duration_ms: u64,
    pub motor: String,
    pub dp: AxisReport,
    pub cr: AxisReport,
    pub rom_violations: RomViolations,
    pub motor_adequate: bool,
}

impl AnalysisReport {
    pub fn axis(&self, axis: Axis) -> &AxisReport {
        match axis {
            Axis::Dp => &self.dp,
            Axis::Cr => &self.cr,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "routine `{}`: {} samples, dt {} ms, duration {} ms, motor {}",
            self.routine, self.samples, self.dt_ms, self.duration_ms, self.motor
        );
        let _ = writeln!(
            out,
            "{:<4} {:>12} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9} {:>8}",
            "axis",
            "v_joint°/s",
            "v_motor°/s",
            "a_joint°/s²",
            "τ_joint N·mm",
            "τ_motor N·mm",
            "τ margin",
            "v margin",
            "adequate"
        );
        for axis in Axis::ALL {
            let a = self.axis(axis);
            let margin = |m: Option<f64>| m.map_or_else(|| "-".to_string(), |m| format!("{m:.2}"));
            let _ = writeln!(
                out,
                "{:<4} {:>12.2} {:>12.2} {:>12.1} {:>12.2} {:>12.2} {:>9} {:>9} {:>8}",
                axis.name(),
                a.max_joint_speed_deg_s,
                a.max_motor_speed_deg_s,
                a.max_joint_accel_deg_s2,
                a.max_joint_torque_nmm,
                a.max_motor_torque_nmm,
                margin(a.torque_margin),
                margin(a.speed_margin),
                if a.motor_adequate { "yes" } else { "NO" }
            );
        }
        match self.rom_violations.first_t_ms {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "ROM violations: {} (first at {} ms)",
                    self.rom_violations.count, t
                );
            }
            None => out.push_str("ROM violations: 0\n"),
        }
        let _ = writeln!(
            out,
            "verdict: {}",
            if self.motor_adequate && self.rom_violations.count == 0 {
                "OK"
            } else {
                "FAIL"
            }
        );
        out
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn count_rom_violations(routine: &Routine, envelope: &SafetyEnvelope) -> RomViolations {
    let mut count = 0;
    let mut first_t_ms = None;
    for s in routine.samples() {
        if check_pose(&s.pose, envelope).is_err() {
            count += 1;
            first_t_ms.get_or_insert(s.t_ms);
        }
    }
    RomViolations { count, first_t_ms }
}

/// Full analysis of a uniformly sampled routine.
pub fn analyze(
    routine: &Routine,
    envelope: &SafetyEnvelope,
    params: &DeviceParams,
    motor: &MotorSpec,
) -> Result<AnalysisReport> {
    let kin = differentiate(routine)?;
    let torques = torques_from_kinematics(routine, &kin, params)?;
    Ok(report_from_profiles(
        routine, &kin, &torques, envelope, params, motor,
    ))
}

pub fn report_from_profiles(
    routine: &Routine,
    kin: &KinematicProfile,
    torques: &TorqueProfile,
    envelope: &SafetyEnvelope,
    params: &DeviceParams,
    motor: &MotorSpec,
) -> AnalysisReport {
    let axis_report = |axis: Axis| {
        let i = axis.index();
        let joint_speed = max_abs(&kin.velocity[i]);
        let motor_speed = joint_speed * params.gear_ratio;
        let motor_torque = max_abs(&torques.motor[i]);
        let verdict = assess_motor(
            MotorDemand {
                torque_nmm: motor_torque,
                speed_deg_s: motor_speed,
            },
            motor,
        );
        AxisReport {
            max_joint_speed_deg_s: joint_speed,
            max_motor_speed_deg_s: motor_speed,
            max_joint_accel_deg_s2: max_abs(&kin.acceleration[i]),
            max_joint_torque_nmm: max_abs(&torques.joint[i]),
            max_motor_torque_nmm: motor_torque,
            motor_adequate: verdict.adequate,
            torque_margin: verdict.torque_margin,
            speed_margin: verdict.speed_margin,
        }
    };
    let dp = axis_report(Axis::Dp);
    let cr = axis_report(Axis::Cr);
    AnalysisReport {
        routine: routine.name().to_string(),
        samples: routine.len(),
        dt_ms: routine.uniform_period_ms().unwrap_or(0),
        duration_ms: routine.duration_ms(),
        motor: motor.name.clone(),
        motor_adequate: dp.motor_adequate && cr.motor_adequate,
        dp,
        cr,
        rom_violations: count_rom_violations(routine, envelope),
    }
}

/// Brings an arbitrary playable routine onto a uniform grid with at least
/// three samples. Already-uniform routines pass through untouched; otherwise
/// the routine is resampled at `dt_ms` (default: its shortest interval) and a
/// trailing partial interval is dropped.
pub fn prepare_uniform(routine: &Routine, dt_ms: Option<u64>) -> Result<Routine> {
    routine.ensure_playable()?;
    if dt_ms.is_none() && routine.len() >= 3 && routine.uniform_period_ms().is_some() {
        return Ok(routine.clone());
    }
    let shortest = routine
        .samples()
        .windows(2)
        .map(|w| w[1].t_ms - w[0].t_ms)
        .min()
        .unwrap_or(1);
    let mut dt = dt_ms.unwrap_or(shortest).max(1);
    if routine.duration_ms() / dt < 2 {
        dt = (routine.duration_ms() / 2).max(1);
    }
    let mut uniform = routine.resample(dt)?;
    if uniform.uniform_period_ms().is_none() {
        let kept: Vec<_> = uniform.samples()[..uniform.len() - 1].to_vec();
        let mut trimmed = Routine::from_samples(uniform.name(), kept)?;
        for (k, v) in uniform.meta() {
            trimmed.set_meta(k.clone(), v.clone());
        }
        uniform = trimmed;
    }
    if uniform.len() < 3 {
        return Err(AnalysisError::TooFewSamples(uniform.len()));
    }
    Ok(uniform)
}

/// `t_ms,v_dp,v_cr,a_dp,a_cr,tau_motor_dp,tau_motor_cr` rows for plotting.
pub fn plot_csv(kin: &KinematicProfile, torques: &TorqueProfile) -> String {
    let mut out = String::from("t_ms,v_dp,v_cr,a_dp,a_cr,tau_motor_dp,tau_motor_cr\n");
    for i in 0..kin.len() {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            kin.t_ms[i],
            kin.velocity[0][i],
            kin.velocity[1][i],
            kin.acceleration[0][i],
            kin.acceleration[1][i],
            torques.motor[0][i],
            torques.motor[1][i]
        );
    }
    out
}
