//! Fastest and slowest traversal of a single zone for a double integrator
//! with bounded speed and acceleration.
//!
//! Both bounds are bang-bang: the release profile accelerates at `u_max` and
//! brakes at `u_min` (with an optional cruise at `v_max` in between), the
//! deadline profile does the opposite (cruising at `v_min` when the dip would
//! otherwise go below it). Everything here is closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boundary conditions satisfiable within this many meters are accepted.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("zone end {end} m is not ahead of zone start {start} m")]
    NonPositiveDistance { start: f64, end: f64 },
    #[error("boundary speed {speed} m/s outside [{v_min}, {v_max}]")]
    SpeedOutOfRange { speed: f64, v_min: f64, v_max: f64 },
    #[error("no bang-bang trajectory joins {from:?} to {to:?}: switch point {switch_point} m outside the zone")]
    InfeasibleBoundary {
        from: BoundaryState,
        to: BoundaryState,
        switch_point: f64,
    },
}

/// Control and speed bounds shared by every vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Limits {
    pub fn new(u_min: f64, u_max: f64, v_min: f64, v_max: f64) -> Result<Self, KinematicsError> {
        let lim = Self {
            u_min,
            u_max,
            v_min,
            v_max,
        };
        lim.validate()?;
        Ok(lim)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.u_min < 0.0 && self.u_max > 0.0) {
            return Err(KinematicsError::InvalidLimits(format!(
                "need u_min < 0 < u_max, got u_min = {}, u_max = {}",
                self.u_min, self.u_max
            )));
        }
        if !(self.v_min >= 0.0 && self.v_max > self.v_min && self.v_max.is_finite()) {
            return Err(KinematicsError::InvalidLimits(format!(
                "need 0 <= v_min < v_max, got v_min = {}, v_max = {}",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    fn check_speed(&self, speed: f64) -> Result<(), KinematicsError> {
        if speed < self.v_min - FEASIBILITY_TOL
            || speed > self.v_max + FEASIBILITY_TOL
            || !speed.is_finite()
        {
            return Err(KinematicsError::SpeedOutOfRange {
                speed,
                v_min: self.v_min,
                v_max: self.v_max,
            });
        }
        Ok(())
    }
}

/// Position (meters from control-zone entry) and speed at a zone boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub position: f64,
    pub speed: f64,
}

impl BoundaryState {
    pub fn new(position: f64, speed: f64) -> Self {
        Self { position, speed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub accel: f64,
    pub duration: f64,
}

/// Piecewise-constant acceleration starting from a known state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelProfile {
    pub start: BoundaryState,
    pub segments: Vec<Segment>,
}

impl AccelProfile {
    pub fn new(start: BoundaryState) -> Self {
        Self {
            start,
            segments: Vec::new(),
        }
    }

    /// Appends a segment; zero-length segments are dropped.
    pub fn push(&mut self, accel: f64, duration: f64) {
        let duration = duration.max(0.0);
        if duration > 0.0 {
            self.segments.push(Segment { accel, duration });
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn end_state(&self) -> BoundaryState {
        let (p, v, _) = self.state_at(self.duration());
        BoundaryState::new(p, v)
    }

    /// Position, speed and acceleration at `t` seconds after the profile
    /// starts. Times past the end extrapolate with the last acceleration.
    pub fn state_at(&self, t: f64) -> (f64, f64, f64) {
        let mut p = self.start.position;
        let mut v = self.start.speed;
        let mut elapsed = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            let last = k + 1 == self.segments.len();
            if t <= elapsed + seg.duration || last {
                let s = (t - elapsed).max(0.0);
                return (
                    p + v * s + 0.5 * seg.accel * s * s,
                    v + seg.accel * s,
                    seg.accel,
                );
            }
            p += v * seg.duration + 0.5 * seg.accel * seg.duration * seg.duration;
            v += seg.accel * seg.duration;
            elapsed += seg.duration;
        }
        let s = (t - elapsed).max(0.0);
        (p + v * s, v, 0.0)
    }

    /// Smallest and largest speed reached. Speed is piecewise linear, so the
    /// extremes sit at segment joints.
    pub fn speed_range(&self) -> (f64, f64) {
        let mut v = self.start.speed;
        let (mut lo, mut hi) = (v, v);
        for seg in &self.segments {
            v += seg.accel * seg.duration;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub p: f64,
    pub v: f64,
}

/// Samples a profile every `dt` seconds from its start, always including the
/// exact end point. Evaluation is closed form per segment.
pub fn integrate_profile(profile: &AccelProfile, dt: f64) -> Vec<Sample> {
    assert!(dt > 0.0, "sample step must be positive");
    let total = profile.duration();
    let steps = (total / dt).floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    for k in 0..=steps {
        let t = k as f64 * dt;
        if t > total {
            break;
        }
        let (p, v, _) = profile.state_at(t);
        out.push(Sample { t, p, v });
    }
    if out.last().is_none_or(|s| total - s.t > 1e-12) {
        let end = profile.end_state();
        out.push(Sample {
            t: total,
            p: end.position,
            v: end.speed,
        });
    }
    out
}

/// Fastest traversal of a zone.
#[derive(Debug, Clone, PartialEq)]
pub struct Release {
    pub time: f64,
    pub profile: AccelProfile,
    /// True when the profile cruises at `v_max`.
    pub speed_limited: bool,
}

/// Slowest traversal of a zone. `Unbounded` when the vehicle may come to a
/// standstill (`v_min = 0`) and so can wait arbitrarily long.
#[derive(Debug, Clone, PartialEq)]
pub enum Deadline {
    Finite {
        time: f64,
        profile: AccelProfile,
        speed_limited: bool,
    },
    Unbounded,
}

impl Deadline {
    pub fn time(&self) -> Option<f64> {
        match self {
            Deadline::Finite { time, .. } => Some(*time),
            Deadline::Unbounded => None,
        }
    }

    pub fn profile(&self) -> Option<&AccelProfile> {
        match self {
            Deadline::Finite { profile, .. } => Some(profile),
            Deadline::Unbounded => None,
        }
    }
}

fn check_inputs(
    start: &BoundaryState,
    end: &BoundaryState,
    lim: &Limits,
) -> Result<(), KinematicsError> {
    lim.validate()?;
    if !(end.position > start.position) {
        return Err(KinematicsError::NonPositiveDistance {
            start: start.position,
            end: end.position,
        });
    }
    lim.check_speed(start.speed)?;
    lim.check_speed(end.speed)
}

/// Switch point of the accelerate-then-brake profile.
fn release_switch_point(start: &BoundaryState, end: &BoundaryState, lim: &Limits) -> f64 {
    (end.speed.powi(2) - start.speed.powi(2)
        + 2.0 * (lim.u_max * start.position - lim.u_min * end.position))
        / (2.0 * (lim.u_max - lim.u_min))
}

/// Which denominator sign the brake-then-accelerate switch point uses.
/// `Flipped` is wrong on purpose and exists so the validation suite can show
/// that it catches the mistake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwitchFormula {
    #[default]
    Consistent,
    Flipped,
}

fn deadline_switch_point(
    start: &BoundaryState,
    end: &BoundaryState,
    lim: &Limits,
    formula: SwitchFormula,
) -> f64 {
    let num = end.speed.powi(2) - start.speed.powi(2)
        + 2.0 * (lim.u_min * start.position - lim.u_max * end.position);
    match formula {
        SwitchFormula::Consistent => num / (2.0 * (lim.u_min - lim.u_max)),
        SwitchFormula::Flipped => num / (2.0 * (lim.u_max - lim.u_min)),
    }
}

/// Shortest time to cross the zone from `start` to `end`.
pub fn release_time(
    start: BoundaryState,
    end: BoundaryState,
    lim: &Limits,
) -> Result<Release, KinematicsError> {
    check_inputs(&start, &end, lim)?;
    let p_c = release_switch_point(&start, &end, lim);
    if p_c < start.position - FEASIBILITY_TOL || p_c > end.position + FEASIBILITY_TOL {
        return Err(KinematicsError::InfeasibleBoundary {
            from: start,
            to: end,
            switch_point: p_c,
        });
    }
    let p_c = p_c.clamp(start.position, end.position);
    let v_c = (start.speed.powi(2) + 2.0 * lim.u_max * (p_c - start.position)).sqrt();

    let mut profile = AccelProfile::new(start);
    if v_c <= lim.v_max {
        let up = (v_c - start.speed) / lim.u_max;
        let down = (end.speed - v_c) / lim.u_min;
        profile.push(lim.u_max, up);
        profile.push(lim.u_min, down);
        Ok(Release {
            time: up.max(0.0) + down.max(0.0),
            profile,
            speed_limited: false,
        })
    } else {
        let (vs, ve, vm) = (start.speed, end.speed, lim.v_max);
        let (umin, umax) = (lim.u_min, lim.u_max);
        let up = (vm - vs) / umax;
        let down = (ve - vm) / umin;
        let d_up = (vm * vm - vs * vs) / (2.0 * umax);
        let d_down = (ve * ve - vm * vm) / (2.0 * umin);
        let cruise = (end.position - start.position - d_up - d_down) / vm;
        profile.push(umax, up);
        profile.push(0.0, cruise);
        profile.push(umin, down);

        let a = vs * vs * umin - ve * ve * umax + (umin - umax) * vm * vm;
        let b = 2.0 * umin * umax * (end.position - start.position)
            + 2.0 * vm * (ve * umax - vs * umin);
        Ok(Release {
            time: (a + b) / (2.0 * umin * umax * vm),
            profile,
            speed_limited: true,
        })
    }
}

/// Longest time to cross the zone from `start` to `end`.
pub fn deadline(
    start: BoundaryState,
    end: BoundaryState,
    lim: &Limits,
) -> Result<Deadline, KinematicsError> {
    deadline_with(start, end, lim, SwitchFormula::Consistent)
}

pub fn deadline_with(
    start: BoundaryState,
    end: BoundaryState,
    lim: &Limits,
    formula: SwitchFormula,
) -> Result<Deadline, KinematicsError> {
    check_inputs(&start, &end, lim)?;
    let p_c = deadline_switch_point(&start, &end, lim, formula);
    if p_c < start.position - FEASIBILITY_TOL || p_c > end.position + FEASIBILITY_TOL {
        return Err(KinematicsError::InfeasibleBoundary {
            from: start,
            to: end,
            switch_point: p_c,
        });
    }
    let p_c = p_c.clamp(start.position, end.position);
    let v_c_sq = start.speed.powi(2) + 2.0 * lim.u_min * (p_c - start.position);

    let (vs, ve) = (start.speed, end.speed);
    let (umin, umax) = (lim.u_min, lim.u_max);
    let mut profile = AccelProfile::new(start);

    if v_c_sq >= lim.v_min * lim.v_min && v_c_sq > 0.0 {
        let v_c = v_c_sq.sqrt();
        let down = (v_c - vs) / umin;
        let up = (ve - v_c) / umax;
        profile.push(umin, down);
        profile.push(umax, up);
        return Ok(Deadline::Finite {
            time: down.max(0.0) + up.max(0.0),
            profile,
            speed_limited: false,
        });
    }
    if lim.v_min <= 0.0 {
        return Ok(Deadline::Unbounded);
    }

    let vm = lim.v_min;
    let t_s = 0.0;
    let tau1 = (vm - vs) / umin + t_s;
    let p_tau1 = (vm * vm - vs * vs) / (2.0 * umin) + start.position;
    let p_tau2 = (vm * vm - ve * ve) / (2.0 * umax) + end.position;
    let tau2 = (p_tau2 - p_tau1) / vm + tau1;
    let time = (ve - vm) / umax + tau2 - t_s;

    profile.push(umin, tau1 - t_s);
    profile.push(0.0, tau2 - tau1);
    profile.push(umax, (ve - vm) / umax);
    Ok(Deadline::Finite {
        time,
        profile,
        speed_limited: true,
    })
}

/// Value of the worst-case headway quadratic: distance the leader covers in
/// `h` seconds while braking at `u_min`, minus the speed-dependent gap the
/// follower needs on entry.
pub fn headway_margin(
    h: f64,
    v_lead_entry: f64,
    v_follow_entry: f64,
    gamma: f64,
    phi: f64,
    u_min: f64,
) -> f64 {
    0.5 * u_min * h * h + v_lead_entry * h - phi * v_follow_entry - gamma
}

/// Whether headway `h` keeps the rear-end constraint inactive at zone entry
/// for the given entry speeds.
pub fn headway_is_safe(
    h: f64,
    v_lead_entry: f64,
    v_follow_entry: f64,
    gamma: f64,
    phi: f64,
    u_min: f64,
) -> bool {
    h > 0.0 && headway_margin(h, v_lead_entry, v_follow_entry, gamma, phi, u_min) > 0.0
}
