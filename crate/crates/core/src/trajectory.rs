//! Therapy routines: recording, interpolation, resampling, smoothing, demo
//! synthesis and the on-disk CSV format.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{Axis, JointPose};
use crate::safety::SafetyEnvelope;

/// Default recording period (50 Hz).
pub const DEFAULT_RECORD_PERIOD_MS: u64 = 20;

pub const FORMAT_MAGIC: &str = "# wristlab-routine v1";
pub const CSV_HEADER: &str = "t_ms,theta_dp_deg,theta_cr_deg";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("timestamp {t_ms} ms is not after the previous sample at {last_ms} ms")]
    NonMonotonic { t_ms: u64, last_ms: u64 },
    #[error("sample at {t_ms} ms has a non-finite pose")]
    NonFinitePose { t_ms: u64 },
    #[error("routine has {len} sample(s); at least 2 are needed for playback")]
    NotPlayable { len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {cause}")]
    Parse { line: usize, cause: String },
}

pub type Result<T> = std::result::Result<T, TrajectoryError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutineSample {
    pub t_ms: u64,
    pub pose: JointPose,
}

impl RoutineSample {
    pub fn new(t_ms: u64, theta_dp: f64, theta_cr: f64) -> Self {
        Self {
            t_ms,
            pose: JointPose::new(theta_dp, theta_cr),
        }
    }
}

/// A named, time-stamped pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Routine {
    name: String,
    samples: Vec<RoutineSample>,
    meta: Vec<(String, String)>,
}

impl Routine {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            samples: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn from_samples(
        name: impl Into<String>,
        samples: impl IntoIterator<Item = RoutineSample>,
    ) -> Result<Self> {
        let mut routine = Self::new(name);
        for s in samples {
            routine.push(s)?;
        }
        Ok(routine)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn samples(&self) -> &[RoutineSample] {
        &self.samples
    }

    pub fn meta(&self) -> &[(String, String)] {
        &self.meta
    }

    /// Sets a metadata entry, replacing an existing key in place.
    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&RoutineSample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&RoutineSample> {
        self.samples.last()
    }

    pub fn start_ms(&self) -> u64 {
        self.samples.first().map_or(0, |s| s.t_ms)
    }

    pub fn duration_ms(&self) -> u64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t_ms - a.t_ms,
            _ => 0,
        }
    }

    /// Appends a sample; timestamps must be strictly increasing.
    pub fn push(&mut self, sample: RoutineSample) -> Result<()> {
        if !sample.pose.is_finite() {
            return Err(TrajectoryError::NonFinitePose { t_ms: sample.t_ms });
        }
        if let Some(last) = self.samples.last() {
            if sample.t_ms <= last.t_ms {
                return Err(TrajectoryError::NonMonotonic {
                    t_ms: sample.t_ms,
                    last_ms: last.t_ms,
                });
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Value-style append: returns the extended routine.
    pub fn append_sample(mut self, sample: RoutineSample) -> Result<Self> {
        self.push(sample)?;
        Ok(self)
    }

    /// Shifts timestamps so the first sample sits at t = 0.
    pub fn normalized(mut self) -> Self {
        let t0 = self.start_ms();
        for s in &mut self.samples {
            s.t_ms -= t0;
        }
        self
    }

    pub fn ensure_playable(&self) -> Result<()> {
        if self.samples.len() < 2 {
            Err(TrajectoryError::NotPlayable {
                len: self.samples.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Common sample spacing, if every interval is identical.
    pub fn uniform_period_ms(&self) -> Option<u64> {
        let mut intervals = self.samples.windows(2).map(|w| w[1].t_ms - w[0].t_ms);
        let first = intervals.next()?;
        intervals.all(|d| d == first).then_some(first)
    }

    /// Pose at `t_ms` by linear interpolation between bracketing samples,
    /// clamped to the first/last pose outside the recorded span. Exact on
    /// stored timestamps.
    pub fn sample_at(&self, t_ms: f64) -> Result<JointPose> {
        self.ensure_playable()?;
        let first = &self.samples[0];
        let last = &self.samples[self.samples.len() - 1];
        if t_ms.is_nan() {
            return Err(TrajectoryError::InvalidArgument("time is NaN".into()));
        }
        if t_ms <= first.t_ms as f64 {
            return Ok(first.pose);
        }
        if t_ms >= last.t_ms as f64 {
            return Ok(last.pose);
        }
        // first index whose time is >= t
        let hi = self.samples.partition_point(|s| (s.t_ms as f64) < t_ms);
        let b = &self.samples[hi];
        if b.t_ms as f64 == t_ms {
            return Ok(b.pose);
        }
        let a = &self.samples[hi - 1];
        let frac = (t_ms - a.t_ms as f64) / (b.t_ms - a.t_ms) as f64;
        Ok(JointPose::new(
            lerp(a.pose.theta_dp, b.pose.theta_dp, frac),
            lerp(a.pose.theta_cr, b.pose.theta_cr, frac),
        ))
    }

    /// Resamples onto `start, start+dt, …`. The last recorded instant is
    /// always kept, so when the duration is not a multiple of `dt` the final
    /// interval is shorter than `dt`.
    pub fn resample(&self, dt_ms: u64) -> Result<Routine> {
        if dt_ms < 1 {
            return Err(TrajectoryError::InvalidArgument(
                "resample period must be at least 1 ms".into(),
            ));
        }
        self.ensure_playable()?;
        let start = self.start_ms();
        let end = start + self.duration_ms();
        let mut out = Routine {
            name: self.name.clone(),
            samples: Vec::with_capacity((self.duration_ms() / dt_ms) as usize + 2),
            meta: self.meta.clone(),
        };
        let mut t = start;
        while t <= end {
            out.samples.push(RoutineSample {
                t_ms: t,
                pose: self.sample_at(t as f64)?,
            });
            t += dt_ms;
        }
        if out.samples.last().map(|s| s.t_ms) != Some(end) {
            out.samples.push(*self.last().expect("playable routine"));
        }
        Ok(out)
    }

    /// Centered moving average per axis. Near the ends the window shrinks
    /// symmetrically so it stays centered; the endpoints are left untouched.
    pub fn smooth(&self, window: usize) -> Result<Routine> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(TrajectoryError::InvalidArgument(format!(
                "smoothing window must be odd and positive, got {window}"
            )));
        }
        let n = self.samples.len();
        let half = window / 2;
        let samples = (0..n)
            .map(|i| {
                let h = half.min(i).min(n - 1 - i);
                let slice = &self.samples[i - h..=i + h];
                let k = slice.len() as f64;
                let (dp, cr) = slice.iter().fold((0.0, 0.0), |(dp, cr), s| {
                    (dp + s.pose.theta_dp, cr + s.pose.theta_cr)
                });
                let pose = if h == 0 {
                    self.samples[i].pose
                } else {
                    JointPose::new(dp / k, cr / k)
                };
                RoutineSample {
                    t_ms: self.samples[i].t_ms,
                    pose,
                }
            })
            .collect();
        Ok(Routine {
            name: self.name.clone(),
            samples,
            meta: self.meta.clone(),
        })
    }

    /// Rounds every angle to the file format's four decimals, so that the
    /// routine survives a save/load cycle unchanged.
    pub fn canonicalized(mut self) -> Self {
        for s in &mut self.samples {
            s.pose.theta_dp = round_to_file_precision(s.pose.theta_dp);
            s.pose.theta_cr = round_to_file_precision(s.pose.theta_cr);
        }
        self
    }

    pub fn serialize(&self) -> String {
        let mut out = String::with_capacity(64 + self.samples.len() * 24);
        out.push_str(FORMAT_MAGIC);
        out.push('\n');
        let _ = writeln!(out, "# name={}", one_line(&self.name));
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {}={}", one_line(k).replace('=', "_"), one_line(v));
        }
        out.push_str(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4}",
                s.t_ms, s.pose.theta_dp, s.pose.theta_cr
            );
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.serialize().into_bytes()
    }

    pub fn parse(text: &str) -> Result<Routine> {
        let err = |line: usize, cause: String| TrajectoryError::Parse { line, cause };
        let mut it = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();

        match it.next() {
            Some((_, l)) if l.trim_end() == FORMAT_MAGIC => {}
            Some((no, l)) => {
                return Err(err(
                    no,
                    format!("bad header: expected `{FORMAT_MAGIC}`, found `{l}`"),
                ))
            }
            None => return Err(err(1, "empty file".into())),
        }

        let mut routine = Routine::new("");
        let mut saw_name = false;
        while let Some(&(no, l)) = it.peek() {
            let Some(rest) = l.strip_prefix('#') else {
                break;
            };
            it.next();
            let rest = rest.strip_prefix(' ').unwrap_or(rest);
            let Some((k, v)) = rest.split_once('=') else {
                return Err(err(no, format!("metadata line without `=`: `{l}`")));
            };
            if k == "name" && !saw_name {
                routine.name = v.to_string();
                saw_name = true;
            } else {
                routine.meta.push((k.to_string(), v.to_string()));
            }
        }

        match it.next() {
            Some((_, l)) if l.trim() == CSV_HEADER => {}
            Some((no, l)) => {
                return Err(err(
                    no,
                    format!("bad header: expected `{CSV_HEADER}`, found `{l}`"),
                ))
            }
            None => return Err(err(0, "missing column header".into())),
        }

        for (no, l) in it {
            if l.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(
                    no,
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            }
            let t_ms: u64 = fields[0]
                .parse()
                .map_err(|_| err(no, format!("non-numeric t_ms `{}`", fields[0])))?;
            let angle = |s: &str, col: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(no, format!("non-numeric {col} `{s}`")))
            };
            let dp = angle(fields[1], "theta_dp_deg")?;
            let cr = angle(fields[2], "theta_cr_deg")?;
            routine
                .push(RoutineSample::new(t_ms, dp, cr))
                .map_err(|e| err(no, e.to_string()))?;
        }
        Ok(routine)
    }

    pub fn parse_bytes(bytes: &[u8]) -> Result<Routine> {
        let text = std::str::from_utf8(bytes).map_err(|e| TrajectoryError::Parse {
            line: 1 + bytes[..e.valid_up_to()]
                .iter()
                .filter(|b| **b == b'\n')
                .count(),
            cause: "invalid UTF-8".into(),
        })?;
        Self::parse(text)
    }

    pub fn axis_values(&self, axis: Axis) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(move |s| s.pose.get(axis))
    }
}

fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    a + (b - a) * frac
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

pub fn round_to_file_precision(v: f64) -> f64 {
    format!("{v:.4}").parse().expect("formatted float parses")
}

/// Growing circular-arc demo routine sampled at the default recording rate.
pub fn generate_demo(duration_ms: u64, freq_hz: f64, rom: &SafetyEnvelope) -> Result<Routine> {
    generate_demo_with_period(duration_ms, freq_hz, rom, DEFAULT_RECORD_PERIOD_MS)
}

/// Combined dorsal-palmar / cubital-radial circular motion whose amplitude
/// grows linearly from 10 % to 100 % of each axis' half-range, centred in the
/// envelope. Values are rounded to file precision without leaving the envelope.
pub fn generate_demo_with_period(
    duration_ms: u64,
    freq_hz: f64,
    rom: &SafetyEnvelope,
    period_ms: u64,
) -> Result<Routine> {
    if duration_ms == 0 {
        return Err(TrajectoryError::InvalidArgument(
            "duration must be positive".into(),
        ));
    }
    if !(freq_hz.is_finite() && freq_hz > 0.0) {
        return Err(TrajectoryError::InvalidArgument(format!(
            "frequency must be positive, got {freq_hz}"
        )));
    }
    if period_ms == 0 {
        return Err(TrajectoryError::InvalidArgument(
            "sample period must be at least 1 ms".into(),
        ));
    }
    rom.validate()
        .map_err(|e| TrajectoryError::InvalidArgument(e.to_string()))?;

    let (dp_lo, dp_hi) = (rom.dp_min, rom.dp_max);
    let (cr_lo, cr_hi) = (rom.cr_min, rom.cr_max);
    let dp_c = 0.5 * (dp_lo + dp_hi);
    let cr_c = 0.5 * (cr_lo + cr_hi);
    let dp_half = 0.5 * (dp_hi - dp_lo);
    let cr_half = 0.5 * (cr_hi - cr_lo);

    let duration = duration_ms as f64;
    let mut routine = Routine::new("demo");
    routine.set_meta("generator", "growing-arc");
    routine.set_meta("freq_hz", format!("{freq_hz}"));
    let mut t = 0;
    loop {
        let ramp = 0.1 + 0.9 * (t as f64 / duration);
        let phase = TAU * freq_hz * (t as f64 / 1000.0);
        let dp = dp_c + ramp * dp_half * phase.sin();
        let cr = cr_c + ramp * cr_half * phase.cos();
        routine.samples.push(RoutineSample::new(
            t,
            quantize_within(dp, dp_lo, dp_hi),
            quantize_within(cr, cr_lo, cr_hi),
        ));
        if t == duration_ms {
            break;
        }
        t = (t + period_ms).min(duration_ms);
    }
    Ok(routine)
}

fn quantize_within(v: f64, lo: f64, hi: f64) -> f64 {
    let q = round_to_file_precision(v);
    if q > hi {
        (hi * 1e4).floor() / 1e4
    } else if q < lo {
        (lo * 1e4).ceil() / 1e4
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::safety::check_pose;
    use proptest::prelude::*;

    fn ramp(n: u64, dt: u64) -> Routine {
        Routine::from_samples(
            "ramp",
            (0..n).map(|i| RoutineSample::new(i * dt, i as f64 * 0.5, -(i as f64) * 0.25)),
        )
        .unwrap()
    }

    #[test]
    fn append_examples() {
        let r = Routine::new("r")
            .append_sample(RoutineSample::new(0, 0.0, 0.0))
            .unwrap()
            .append_sample(RoutineSample::new(20, 1.0, 0.0))
            .unwrap();
        assert_eq!(r.len(), 2);
        let err = r
            .clone()
            .append_sample(RoutineSample::new(20, 2.0, 0.0))
            .unwrap_err();
        assert!(matches!(
            err,
            TrajectoryError::NonMonotonic { t_ms: 20, .. }
        ));
        assert!(Routine::new("x")
            .append_sample(RoutineSample::new(0, f64::NAN, 0.0))
            .is_err());
    }

    #[test]
    fn fifty_hz_for_ten_seconds() {
        let mut r = Routine::new("rec");
        let mut t = 0;
        while t <= 10_000 {
            r.push(RoutineSample::new(t, 0.0, 0.0)).unwrap();
            t += 20;
        }
        assert_eq!(r.len(), 501);
        assert_eq!(r.uniform_period_ms(), Some(20));
    }

    #[test]
    fn sample_at_examples() {
        let r = Routine::from_samples(
            "m",
            [
                RoutineSample::new(0, 0.0, 0.0),
                RoutineSample::new(100, 10.0, -4.0),
            ],
        )
        .unwrap();
        assert_eq!(r.sample_at(50.0).unwrap(), JointPose::new(5.0, -2.0));
        assert_eq!(r.sample_at(100.0).unwrap(), JointPose::new(10.0, -4.0));
        assert_eq!(r.sample_at(1e6).unwrap(), JointPose::new(10.0, -4.0));
        assert_eq!(r.sample_at(-5.0).unwrap(), JointPose::ZERO);
        let single = Routine::from_samples("s", [RoutineSample::new(0, 1.0, 1.0)]).unwrap();
        assert!(matches!(
            single.sample_at(0.0),
            Err(TrajectoryError::NotPlayable { len: 1 })
        ));
    }

    #[test]
    fn sample_at_exact_on_nodes() {
        let r = generate_demo(2_000, 0.5, &SafetyEnvelope::default()).unwrap();
        for s in r.samples() {
            assert_eq!(r.sample_at(s.t_ms as f64).unwrap(), s.pose);
        }
    }

    #[test]
    fn resample_examples() {
        let r = ramp(6, 20);
        assert_eq!(r.resample(20).unwrap(), r);
        let coarse = r.resample(50).unwrap();
        let times: Vec<u64> = coarse.samples().iter().map(|s| s.t_ms).collect();
        assert_eq!(times, vec![0, 50, 100]);
        for dt in [1, 3, 7, 30] {
            let rs = r.resample(dt).unwrap();
            for s in rs.samples() {
                let expected = s.t_ms as f64 / 20.0 * 0.5;
                assert!((s.pose.theta_dp - expected).abs() < 1e-12);
            }
            assert_eq!(rs.duration_ms(), r.duration_ms());
            assert_eq!(rs.last().unwrap().pose, r.last().unwrap().pose);
        }
        assert!(r.resample(0).is_err());
    }

    #[test]
    fn smooth_examples() {
        let r = ramp(7, 10);
        assert_eq!(r.smooth(1).unwrap(), r);
        let flat = Routine::from_samples(
            "flat",
            (0..9).map(|i| RoutineSample::new(i * 10, 3.25, -7.5)),
        )
        .unwrap();
        assert_eq!(flat.smooth(5).unwrap(), flat);
        let impulse = Routine::from_samples(
            "imp",
            (0..5).map(|i| RoutineSample::new(i * 10, if i == 2 { 9.0 } else { 0.0 }, 0.0)),
        )
        .unwrap();
        assert_eq!(impulse.smooth(3).unwrap().samples()[2].pose.theta_dp, 3.0);
        assert!(r.smooth(2).is_err());
        assert!(r.smooth(0).is_err());
    }

    #[test]
    fn demo_examples() {
        let env = SafetyEnvelope::default();
        let r = generate_demo(30_000, 0.5, &env).unwrap();
        assert_eq!(r.first().unwrap().pose, JointPose::new(0.0, 1.5));
        assert_eq!(r.duration_ms(), 30_000);
        assert_eq!(r.uniform_period_ms(), Some(20));
        // brute-force scan of every sample
        let max_dp = r.axis_values(Axis::Dp).fold(0.0f64, |m, v| m.max(v.abs()));
        let max_cr = r.axis_values(Axis::Cr).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_dp <= 50.0 && max_dp > 49.0, "{max_dp}");
        assert!(max_cr <= 15.0 && max_cr > 14.5, "{max_cr}");
        assert!(r
            .samples()
            .iter()
            .all(|s| check_pose(&s.pose, &env).is_ok()));
        assert!(generate_demo(0, 0.5, &env).is_err());
        assert!(generate_demo(1000, 0.0, &env).is_err());
    }

    #[test]
    fn demo_amplitude_endpoints() {
        // At t = 0 and t = D the cosine term exposes B directly.
        let env = SafetyEnvelope::default();
        let r = generate_demo(10_000, 1.0, &env).unwrap();
        assert_eq!(r.first().unwrap().pose.theta_cr, 1.5);
        assert_eq!(r.last().unwrap().pose.theta_cr, 15.0);
        // quarter period at 1 Hz is 250 ms: sin = 1 exposes A(250 ms)
        let fine = generate_demo_with_period(10_000, 1.0, &env, 10).unwrap();
        let a = fine.sample_at(250.0).unwrap().theta_dp;
        assert!((a - 50.0 * (0.1 + 0.9 * 0.025)).abs() < 1e-4, "{a}");
    }

    #[test]
    fn serialize_layout() {
        let r = Routine::from_samples(
            "",
            [
                RoutineSample::new(0, 0.0, 1.5),
                RoutineSample::new(20, -2.25, 0.123456),
            ],
        )
        .unwrap();
        let text = r.serialize();
        assert_eq!(
            text,
            "# wristlab-routine v1\n# name=\nt_ms,theta_dp_deg,theta_cr_deg\n0,0.0000,1.5000\n20,-2.2500,0.1235\n"
        );
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let bad_magic = "hello\n";
        assert!(matches!(
            Routine::parse(bad_magic),
            Err(TrajectoryError::Parse { line: 1, .. })
        ));
        let decreasing =
            "# wristlab-routine v1\n# name=x\nt_ms,theta_dp_deg,theta_cr_deg\n0,0,0\n40,1,1\n20,2,2\n";
        match Routine::parse(decreasing) {
            Err(TrajectoryError::Parse { line, cause }) => {
                assert_eq!(line, 6);
                assert!(cause.contains("not after"), "{cause}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let nonnumeric =
            "# wristlab-routine v1\n# name=x\nt_ms,theta_dp_deg,theta_cr_deg\n0,abc,0\n";
        assert!(matches!(
            Routine::parse(nonnumeric),
            Err(TrajectoryError::Parse { line: 4, .. })
        ));
        let bad_cols = "# wristlab-routine v1\n# name=x\nt,dp,cr\n";
        assert!(matches!(
            Routine::parse(bad_cols),
            Err(TrajectoryError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn parse_accepts_extra_meta_and_precision() {
        let text = "# wristlab-routine v1\n# name=wave\n# therapist=Dr. R\n# percentile=P50\nt_ms,theta_dp_deg,theta_cr_deg\n0,1.123456789,-2\n10,2.5,3.25\n";
        let r = Routine::parse(text).unwrap();
        assert_eq!(r.name(), "wave");
        assert_eq!(r.meta().len(), 2);
        assert_eq!(r.samples()[0].pose.theta_dp, 1.123456789);
        assert_eq!(r.samples()[1].pose, JointPose::new(2.5, 3.25));
    }

    #[test]
    fn demo_round_trips() {
        let r = generate_demo(30_000, 0.5, &SafetyEnvelope::default()).unwrap();
        let text = r.serialize();
        let back = Routine::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.serialize(), text);
    }

    fn arb_routine() -> impl Strategy<Value = Routine> {
        (
            "[a-zA-Z0-9 _-]{0,12}",
            prop::collection::vec((1u64..500, -200.0f64..200.0, -200.0f64..200.0), 0..40),
        )
            .prop_map(|(name, steps)| {
                let mut t = 0;
                let samples = steps.into_iter().map(|(dt, dp, cr)| {
                    t += dt;
                    RoutineSample::new(t, dp, cr)
                });
                Routine::from_samples(name, samples).unwrap()
            })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(r in arb_routine()) {
            let canonical = r.canonicalized();
            let text = canonical.serialize();
            let parsed = Routine::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &canonical);
            prop_assert_eq!(parsed.serialize(), text);
        }

        #[test]
        fn smooth_stays_within_bounds(r in arb_routine(), half in 0usize..5) {
            let s = r.smooth(2 * half + 1).unwrap();
            for axis in Axis::ALL {
                let lo = r.axis_values(axis).fold(f64::INFINITY, f64::min);
                let hi = r.axis_values(axis).fold(f64::NEG_INFINITY, f64::max);
                for v in s.axis_values(axis) {
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }
        }

        #[test]
        fn sample_at_is_continuous(r in arb_routine(), frac in 0.0f64..1.0) {
            prop_assume!(r.len() >= 2);
            let t = r.start_ms() as f64 + frac * r.duration_ms() as f64;
            let a = r.sample_at(t).unwrap();
            let b = r.sample_at(t + 1e-6).unwrap();
            prop_assert!((a.theta_dp - b.theta_dp).abs() < 1e-3);
            prop_assert!((a.theta_cr - b.theta_cr).abs() < 1e-3);
        }

        #[test]
        fn refining_a_grid_loses_nothing(r in arb_routine(), k in 1u64..5) {
            prop_assume!(r.len() >= 2);
            // resample onto a 1 ms grid (a refinement of every integer grid)
            let fine = r.resample(1).unwrap();
            prop_assert_eq!(fine.duration_ms(), r.duration_ms());
            for s in r.samples() {
                let f = fine.sample_at(s.t_ms as f64).unwrap();
                prop_assert!((f.theta_dp - s.pose.theta_dp).abs() < 1e-9);
                prop_assert!((f.theta_cr - s.pose.theta_cr).abs() < 1e-9);
            }
            let coarse = r.resample(k).unwrap();
            prop_assert_eq!(coarse.first().unwrap().pose, r.first().unwrap().pose);
            prop_assert_eq!(coarse.last().unwrap().pose, r.last().unwrap().pose);
        }

        #[test]
        fn demo_never_violates_rom(
            lo_dp in 1.0f64..80.0, hi_dp in 1.0f64..80.0,
            lo_cr in 1.0f64..30.0, hi_cr in 1.0f64..30.0,
            freq in 0.05f64..3.0, dur in 1u64..20_000,
        ) {
            let env = SafetyEnvelope {
                dp_min: -lo_dp, dp_max: hi_dp, cr_min: -lo_cr, cr_max: hi_cr,
                ..SafetyEnvelope::default()
            };
            let r = generate_demo(dur, freq, &env).unwrap();
            for s in r.samples() {
                prop_assert!(check_pose(&s.pose, &env).is_ok(), "{:?}", s);
            }
        }
    }
}
