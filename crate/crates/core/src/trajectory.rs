//! Energy-minimal motion through one zone between scheduled boundary times,
//! with bounded control and speed, plus the car-following arc used when the
//! rear-end constraint becomes active.
//!
//! Unconstrained windows are solved by a cubic in position. When the cubic
//! breaks a limit, the violated constraint is pieced in:
//! - control only: `u = clamp(alpha + beta * s)`, with `(alpha, beta)` found
//!   by nested one-dimensional root finding on the speed and position gaps;
//! - speed: approach arc, cruise on the bound, departure arc, the two arcs
//!   sharing one control slope `k` (the position costate is constant), with
//!   `k` found by root finding on the position gap.
//!
//! Windows at the release time or deadline reuse the bang-bang profiles.

use roots::{find_root_brent, Convergency};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{self, AccelProfile, BoundaryState, Limits};
use crate::network::ZoneId;

/// Windows this close to a bound are treated as the bound itself.
pub const BOUND_TOL: f64 = 1e-7;
/// Iteration cap for every one-dimensional root solve.
pub const MAX_ROOT_ITER: usize = 50;
/// Step of the follow-arc integrator and of its exit test.
pub const FOLLOW_STEP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("window of {0} s is too short to solve")]
    SingularWindow(f64),
    #[error("zone {zone}: junction root finding did not converge ({detail})")]
    PiecingDiverged { zone: ZoneId, detail: String },
    #[error("zone {zone}: window {window} s outside [{release}, {deadline}]")]
    WindowOutOfBounds {
        zone: ZoneId,
        window: f64,
        release: f64,
        deadline: f64,
    },
    #[error("follow arc found no exit before {horizon} s")]
    NoExitFound { horizon: f64 },
    #[error(transparent)]
    Kinematics(#[from] kinematics::KinematicsError),
}

/// Boundary value problem for one zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneBvp {
    pub zone: ZoneId,
    pub t_start: f64,
    pub t_end: f64,
    pub start: BoundaryState,
    pub end: BoundaryState,
    pub limits: Limits,
}

impl ZoneBvp {
    pub fn window(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowSample {
    pub t: f64,
    pub p: f64,
    pub v: f64,
    pub u: f64,
}

/// Arc shapes. Polynomial coefficients use time `s` measured from the arc
/// start: `u = a s + b`, `v = a s²/2 + b s + c`, `p = a s³/6 + b s²/2 + c s + d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArcKind {
    Cubic { a: f64, b: f64, c: f64, d: f64 },
    ConstAccel { u: f64, p0: f64, v0: f64 },
    Cruise { v: f64, p0: f64 },
    Follow { samples: Vec<FollowSample> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub t0: f64,
    pub t1: f64,
    #[serde(flatten)]
    pub kind: ArcKind,
}

impl Arc {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Position, speed and control at absolute time `t` (clamped to the arc).
    pub fn state_at(&self, t: f64) -> (f64, f64, f64) {
        let s = (t - self.t0).clamp(0.0, self.duration());
        match &self.kind {
            ArcKind::Cubic { a, b, c, d } => (
                a * s * s * s / 6.0 + b * s * s / 2.0 + c * s + d,
                a * s * s / 2.0 + b * s + c,
                a * s + b,
            ),
            ArcKind::ConstAccel { u, p0, v0 } => (p0 + v0 * s + 0.5 * u * s * s, v0 + u * s, *u),
            ArcKind::Cruise { v, p0 } => (p0 + v * s, *v, 0.0),
            ArcKind::Follow { samples } => hermite(samples, self.t0 + s),
        }
    }

    /// ½∫u² over the arc.
    pub fn energy(&self) -> f64 {
        let l = self.duration();
        match &self.kind {
            ArcKind::Cubic { a, b, .. } => {
                0.5 * (a * a * l.powi(3) / 3.0 + a * b * l * l + b * b * l)
            }
            ArcKind::ConstAccel { u, .. } => 0.5 * u * u * l,
            ArcKind::Cruise { .. } => 0.0,
            ArcKind::Follow { samples } => samples
                .windows(2)
                .map(|w| {
                    let dt = w[1].t - w[0].t;
                    // u is close to linear over one step
                    0.5 * dt * (w[0].u * w[0].u + w[0].u * w[1].u + w[1].u * w[1].u) / 3.0
                })
                .sum(),
        }
    }

    /// The same arc cut short at `t`.
    pub fn until(&self, t: f64) -> Arc {
        let t1 = t.clamp(self.t0, self.t1);
        let kind = match &self.kind {
            ArcKind::Follow { samples } => {
                let mut kept: Vec<FollowSample> =
                    samples.iter().copied().filter(|s| s.t < t1).collect();
                let (p, v, u) = self.state_at(t1);
                kept.push(FollowSample { t: t1, p, v, u });
                ArcKind::Follow { samples: kept }
            }
            k => k.clone(),
        };
        Arc {
            t0: self.t0,
            t1,
            kind,
        }
    }

    /// Smallest and largest speed and control over the arc.
    pub fn extremes(&self) -> ((f64, f64), (f64, f64)) {
        match &self.kind {
            ArcKind::Cubic { a, b, c, .. } => cubic_extremes(*a, *b, *c, self.duration()),
            ArcKind::Follow { samples } => {
                let mut v = (f64::INFINITY, f64::NEG_INFINITY);
                let mut u = v;
                for s in samples {
                    v = (v.0.min(s.v), v.1.max(s.v));
                    u = (u.0.min(s.u), u.1.max(s.u));
                }
                (v, u)
            }
            _ => {
                let (_, v0, u) = self.state_at(self.t0);
                let (_, v1, _) = self.state_at(self.t1);
                ((v0.min(v1), v0.max(v1)), (u, u))
            }
        }
    }
}

fn hermite(samples: &[FollowSample], t: f64) -> (f64, f64, f64) {
    let k = samples
        .partition_point(|s| s.t <= t)
        .clamp(1, samples.len() - 1);
    let (a, b) = (&samples[k - 1], &samples[k]);
    let dt = b.t - a.t;
    let x = ((t - a.t) / dt).clamp(0.0, 1.0);
    let h00 = 2.0 * x.powi(3) - 3.0 * x * x + 1.0;
    let h10 = x.powi(3) - 2.0 * x * x + x;
    let h01 = -2.0 * x.powi(3) + 3.0 * x * x;
    let h11 = x.powi(3) - x * x;
    let p = h00 * a.p + h10 * dt * a.v + h01 * b.p + h11 * dt * b.v;
    let v = h00 * a.v + h10 * dt * a.u + h01 * b.v + h11 * dt * b.u;
    let u = a.u + (b.u - a.u) * x;
    (p, v, u)
}

/// Closed-form extremes of `v = a s²/2 + b s + c` and `u = a s + b` on `[0, l]`.
fn cubic_extremes(a: f64, b: f64, c: f64, l: f64) -> ((f64, f64), (f64, f64)) {
    let v = |s: f64| a * s * s / 2.0 + b * s + c;
    let (v0, v1) = (v(0.0), v(l));
    let (mut lo, mut hi) = (v0.min(v1), v0.max(v1));
    if a != 0.0 {
        let s = -b / a;
        if s > 0.0 && s < l {
            lo = lo.min(v(s));
            hi = hi.max(v(s));
        }
    }
    let (u0, u1) = (b, a * l + b);
    ((lo, hi), (u0.min(u1), u0.max(u1)))
}

/// Energy-minimal trajectory through one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneTrajectory {
    pub zone: ZoneId,
    pub arcs: Vec<Arc>,
    pub energy: f64,
}

impl ZoneTrajectory {
    pub fn new(zone: ZoneId, arcs: Vec<Arc>) -> Self {
        let energy = arcs.iter().map(Arc::energy).sum();
        Self { zone, arcs, energy }
    }

    pub fn t_start(&self) -> f64 {
        self.arcs[0].t0
    }

    pub fn t_end(&self) -> f64 {
        self.arcs[self.arcs.len() - 1].t1
    }

    pub fn state_at(&self, t: f64) -> (f64, f64, f64) {
        let k = self
            .arcs
            .partition_point(|a| a.t1 < t)
            .min(self.arcs.len() - 1);
        self.arcs[k].state_at(t)
    }

    pub fn speed_range(&self) -> (f64, f64) {
        self.arcs
            .iter()
            .map(|a| a.extremes().0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, r| {
                (acc.0.min(r.0), acc.1.max(r.1))
            })
    }

    pub fn control_range(&self) -> (f64, f64) {
        self.arcs
            .iter()
            .map(|a| a.extremes().1)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, r| {
                (acc.0.min(r.0), acc.1.max(r.1))
            })
    }
}

/// Cubic meeting all four boundary values.
pub fn solve_unconstrained(bvp: &ZoneBvp) -> Result<Arc, TrajectoryError> {
    let t = bvp.window();
    if !(t >= 1e-9) {
        return Err(TrajectoryError::SingularWindow(t));
    }
    // Rows at s = 0 fix c and d; the two rows at s = t leave a 2x2 system.
    let (c, d) = (bvp.start.speed, bvp.start.position);
    let dv = bvp.end.speed - c;
    let dp = bvp.end.position - d - c * t;
    let a = 6.0 * dv / (t * t) - 12.0 * dp / (t * t * t);
    let b = 6.0 * dp / (t * t) - 2.0 * dv / t;
    Ok(Arc {
        t0: bvp.t_start,
        t1: bvp.t_end,
        kind: ArcKind::Cubic { a, b, c, d },
    })
}

/// Release and deadline of the zone, for the dispatch in [`solve_zone`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneBounds {
    pub release: f64,
    pub deadline: Option<f64>,
}

impl ZoneBounds {
    pub fn of(bvp: &ZoneBvp) -> Result<Self, TrajectoryError> {
        Ok(Self {
            release: kinematics::release_time(bvp.start, bvp.end, &bvp.limits)?.time,
            deadline: kinematics::deadline(bvp.start, bvp.end, &bvp.limits)?.time(),
        })
    }
}

pub fn solve_zone(bvp: &ZoneBvp, bounds: ZoneBounds) -> Result<ZoneTrajectory, TrajectoryError> {
    let t = bvp.window();
    let deadline = bounds.deadline.unwrap_or(f64::INFINITY);
    if t < bounds.release - BOUND_TOL || t > deadline + BOUND_TOL {
        return Err(TrajectoryError::WindowOutOfBounds {
            zone: bvp.zone,
            window: t,
            release: bounds.release,
            deadline,
        });
    }
    let lim = &bvp.limits;
    if (t - bounds.release).abs() <= BOUND_TOL {
        let r = kinematics::release_time(bvp.start, bvp.end, lim)?;
        return Ok(ZoneTrajectory::new(
            bvp.zone,
            bound_arcs(bvp, &r.profile, lim.u_max, lim.u_min),
        ));
    }
    if (t - deadline).abs() <= BOUND_TOL {
        let d = kinematics::deadline(bvp.start, bvp.end, lim)?;
        let profile = d.profile().expect("finite deadline has a profile");
        return Ok(ZoneTrajectory::new(
            bvp.zone,
            bound_arcs(bvp, profile, lim.u_min, lim.u_max),
        ));
    }

    let cubic = solve_unconstrained(bvp)?;
    let ((vlo, vhi), (ulo, uhi)) = cubic.extremes();
    let speed_ok = |lo: f64, hi: f64| lo >= lim.v_min - BOUND_TOL && hi <= lim.v_max + BOUND_TOL;
    let control_ok = ulo >= lim.u_min - BOUND_TOL && uhi <= lim.u_max + BOUND_TOL;
    if speed_ok(vlo, vhi) && control_ok {
        return Ok(ZoneTrajectory::new(bvp.zone, vec![cubic]));
    }
    if !control_ok {
        let arcs = saturated_linear(bvp)?;
        let traj = ZoneTrajectory::new(bvp.zone, arcs);
        let (lo, hi) = traj.speed_range();
        if speed_ok(lo, hi) {
            return Ok(traj);
        }
        return speed_pieced(bvp, if hi > lim.v_max { lim.v_max } else { lim.v_min });
    }
    speed_pieced(
        bvp,
        if vhi > lim.v_max {
            lim.v_max
        } else {
            lim.v_min
        },
    )
}

/// Arcs for a window at (or within `BOUND_TOL` of) a bound. An exact match
/// reuses the bang-bang profile; otherwise the profile is refitted as
/// `a1` to a peak speed, coast, `a2` to the end speed, so the boundary is met
/// exactly instead of stretching the last arc.
fn bound_arcs(bvp: &ZoneBvp, profile: &AccelProfile, a1: f64, a2: f64) -> Vec<Arc> {
    let t = bvp.window();
    if t != profile.duration() {
        // A profile whose second arc has (nearly) vanished is refitted with
        // the same acceleration on both sides.
        for (b1, b2) in [(a1, a2), (a1, a1), (a2, a2)] {
            if let Some(fit) = coast_fit(bvp, b1, b2, profile.speed_range()) {
                return profile_arcs(&fit, bvp.t_start, bvp.t_end);
            }
        }
    }
    profile_arcs(profile, bvp.t_start, bvp.t_end)
}

fn coast_fit(bvp: &ZoneBvp, a1: f64, a2: f64, (v_lo, v_hi): (f64, f64)) -> Option<AccelProfile> {
    let (v0, ve, t) = (bvp.start.speed, bvp.end.speed, bvp.window());
    let len = bvp.end.position - bvp.start.position;
    let peak = if a1 > 0.0 { v_hi } else { v_lo };
    let qa = 1.0 / (2.0 * a2) - 1.0 / (2.0 * a1);
    let qb = t + v0 / a1 - ve / a2;
    let qc = ve * ve / (2.0 * a2) - v0 * v0 / (2.0 * a1) - len;
    let roots = if qa == 0.0 {
        vec![-qc / qb]
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        vec![
            (-qb + disc.sqrt()) / (2.0 * qa),
            (-qb - disc.sqrt()) / (2.0 * qa),
        ]
    };
    let lim = &bvp.limits;
    let (_, up, coast, down) = roots
        .into_iter()
        .map(|w| {
            let up = (w - v0) / a1;
            let down = (ve - w) / a2;
            (w, up, t - up - down, down)
        })
        .filter(|&(w, up, coast, down)| {
            up >= -1e-9
                && down >= -1e-9
                && coast >= -1e-9
                && w >= lim.v_min - BOUND_TOL
                && w <= lim.v_max + BOUND_TOL
        })
        .min_by(|x, y| (x.0 - peak).abs().total_cmp(&(y.0 - peak).abs()))?;
    let mut fit = AccelProfile::new(bvp.start);
    fit.push(a1, up);
    fit.push(0.0, coast);
    fit.push(a2, down);
    Some(fit)
}

/// Turns a bang-bang profile into arcs starting at `t0`; the last arc is
/// stretched to end exactly at `t1`.
fn profile_arcs(profile: &AccelProfile, t0: f64, t1: f64) -> Vec<Arc> {
    let mut arcs = Vec::new();
    let (mut p, mut v, mut t) = (profile.start.position, profile.start.speed, t0);
    for seg in &profile.segments {
        let kind = if seg.accel == 0.0 {
            ArcKind::Cruise { v, p0: p }
        } else {
            ArcKind::ConstAccel {
                u: seg.accel,
                p0: p,
                v0: v,
            }
        };
        arcs.push(Arc {
            t0: t,
            t1: t + seg.duration,
            kind,
        });
        p += v * seg.duration + 0.5 * seg.accel * seg.duration * seg.duration;
        v += seg.accel * seg.duration;
        t += seg.duration;
    }
    match arcs.last_mut() {
        Some(last) => last.t1 = t1,
        None => arcs.push(Arc {
            t0,
            t1,
            kind: ArcKind::Cruise { v, p0: p },
        }),
    }
    arcs
}

struct Tol {
    x: f64,
    y: f64,
    max_iter: usize,
}

impl Convergency<f64> for Tol {
    fn is_root_found(&mut self, y: f64) -> bool {
        y.abs() <= self.y
    }

    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= self.x * x1.abs().max(x2.abs()).max(1.0)
    }

    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= self.max_iter
    }
}

fn root(f: impl FnMut(f64) -> f64, lo: f64, hi: f64, ytol: f64) -> Option<f64> {
    let mut tol = Tol {
        x: 1e-15,
        y: ytol,
        max_iter: MAX_ROOT_ITER,
    };
    find_root_brent(lo, hi, f, &mut tol).ok()
}

/// A piece with linearly varying control.
#[derive(Debug, Clone, Copy)]
struct Piece {
    u0: f64,
    u1: f64,
    len: f64,
}

fn advance(p: f64, v: f64, piece: &Piece) -> (f64, f64) {
    let l = piece.len;
    (
        p + v * l + piece.u0 * l * l / 2.0 + (piece.u1 - piece.u0) * l * l / 6.0,
        v + 0.5 * (piece.u0 + piece.u1) * l,
    )
}

fn pieces_to_arcs(
    pieces: &[Piece],
    t0: f64,
    t1: f64,
    start: BoundaryState,
    lim: &Limits,
) -> Vec<Arc> {
    let mut arcs = Vec::new();
    let (mut p, mut v, mut t) = (start.position, start.speed, t0);
    for piece in pieces.iter().filter(|x| x.len > 0.0) {
        let kind = if piece.u0 == piece.u1 && piece.u0 == 0.0 {
            ArcKind::Cruise { v, p0: p }
        } else if piece.u0 == piece.u1 && (piece.u0 == lim.u_min || piece.u0 == lim.u_max) {
            ArcKind::ConstAccel {
                u: piece.u0,
                p0: p,
                v0: v,
            }
        } else {
            ArcKind::Cubic {
                a: (piece.u1 - piece.u0) / piece.len,
                b: piece.u0,
                c: v,
                d: p,
            }
        };
        arcs.push(Arc {
            t0: t,
            t1: t + piece.len,
            kind,
        });
        (p, v) = advance(p, v, piece);
        t += piece.len;
    }
    if let Some(last) = arcs.last_mut() {
        last.t1 = t1;
    }
    arcs
}

/// Pieces of `clamp(alpha + beta s, u_min, u_max)` on `[0, t]`.
fn saturated_pieces(alpha: f64, beta: f64, t: f64, lim: &Limits) -> Vec<Piece> {
    let u = |s: f64| (alpha + beta * s).clamp(lim.u_min, lim.u_max);
    let mut cuts = vec![0.0, t];
    if beta != 0.0 {
        for bound in [lim.u_min, lim.u_max] {
            let s = (bound - alpha) / beta;
            if s > 0.0 && s < t {
                cuts.push(s);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .map(|w| {
            let mid = u(0.5 * (w[0] + w[1]));
            let (u0, u1) = if mid <= lim.u_min || mid >= lim.u_max {
                (mid, mid)
            } else {
                (alpha + beta * w[0], alpha + beta * w[1])
            };
            Piece {
                u0,
                u1,
                len: w[1] - w[0],
            }
        })
        .collect()
}

fn end_of(pieces: &[Piece], start: BoundaryState) -> (f64, f64) {
    pieces
        .iter()
        .fold((start.position, start.speed), |(p, v), piece| {
            advance(p, v, piece)
        })
}

/// Control-limited piecing: `u = clamp(alpha + beta s)`.
fn saturated_linear(bvp: &ZoneBvp) -> Result<Vec<Arc>, TrajectoryError> {
    let lim = &bvp.limits;
    let t = bvp.window();
    let diverged = |detail: &str| TrajectoryError::PiecingDiverged {
        zone: bvp.zone,
        detail: detail.to_string(),
    };
    // For a given slope, the intercept that lands on the end speed.
    let alpha_for = |beta: f64| {
        let reach = lim.u_max - lim.u_min + beta.abs() * t + 1.0;
        root(
            |alpha| end_of(&saturated_pieces(alpha, beta, t, lim), bvp.start).1 - bvp.end.speed,
            -reach,
            reach,
            1e-13,
        )
    };
    let gap = |beta: f64| match alpha_for(beta) {
        Some(alpha) => {
            end_of(&saturated_pieces(alpha, beta, t, lim), bvp.start).0 - bvp.end.position
        }
        None => f64::NAN,
    };
    let mut span = (lim.u_max - lim.u_min) / t;
    let mut bracket = None;
    for _ in 0..80 {
        let (lo, hi) = (gap(-span), gap(span));
        if lo.is_nan() || hi.is_nan() {
            return Err(diverged("end speed unreachable"));
        }
        if lo * hi <= 0.0 {
            bracket = Some((-span, span));
            break;
        }
        span *= 2.0;
    }
    let (lo, hi) = bracket.ok_or_else(|| diverged("no slope brackets the end position"))?;
    let beta = root(gap, lo, hi, 1e-11).ok_or_else(|| diverged("slope search"))?;
    let alpha = alpha_for(beta).ok_or_else(|| diverged("intercept search"))?;
    Ok(pieces_to_arcs(
        &saturated_pieces(alpha, beta, t, lim),
        bvp.t_start,
        bvp.t_end,
        bvp.start,
        lim,
    ))
}

/// Pieces that change speed by `dv` with control magnitude `min(cap, k r)`,
/// `r` being the time left to (approach) or since (departure) the bound.
fn ramp(dv: f64, k: f64, lim: &Limits, approach: bool) -> Vec<Piece> {
    if dv == 0.0 {
        return Vec::new();
    }
    let sign = dv.signum();
    let cap = if dv > 0.0 { lim.u_max } else { -lim.u_min };
    let w = dv.abs();
    let (flat, slope_len) = if w <= cap * cap / (2.0 * k) {
        (0.0, (2.0 * w / k).sqrt())
    } else {
        ((w - cap * cap / (2.0 * k)) / cap, cap / k)
    };
    let peak = sign * (k * slope_len).min(cap);
    let flat = Piece {
        u0: sign * cap,
        u1: sign * cap,
        len: flat,
    };
    let slope = |u0, u1| Piece {
        u0,
        u1,
        len: slope_len,
    };
    if approach {
        vec![flat, slope(peak, 0.0)]
    } else {
        vec![slope(0.0, peak), flat]
    }
}

fn ramp_len(pieces: &[Piece]) -> f64 {
    pieces.iter().map(|p| p.len).sum()
}

/// Speed-limited piecing: approach arc, cruise at `bound`, departure arc.
fn speed_pieced(bvp: &ZoneBvp, bound: f64) -> Result<ZoneTrajectory, TrajectoryError> {
    let lim = &bvp.limits;
    let t = bvp.window();
    let dv1 = bound - bvp.start.speed;
    let dv2 = bvp.end.speed - bound;
    let diverged = |detail: &str| TrajectoryError::PiecingDiverged {
        zone: bvp.zone,
        detail: detail.to_string(),
    };
    let build = |ln_k: f64| {
        let k = ln_k.exp();
        let up = ramp(dv1, k, lim, true);
        let down = ramp(dv2, k, lim, false);
        let cruise = t - ramp_len(&up) - ramp_len(&down);
        let mut pieces = up;
        pieces.push(Piece {
            u0: 0.0,
            u1: 0.0,
            len: cruise.max(0.0),
        });
        pieces.extend(down);
        (pieces, cruise)
    };
    // Smallest slope that still leaves room for a cruise.
    let (lo_k, hi_k) = (-60.0, 60.0);
    if build(hi_k).1 < 0.0 {
        return Err(diverged("ramps do not fit in the window"));
    }
    let k_min = if build(lo_k).1 >= 0.0 {
        lo_k
    } else {
        root(|x| build(x).1, lo_k, hi_k, 1e-13).ok_or_else(|| diverged("cruise length"))?
    };
    let gap = |x: f64| end_of(&build(x).0, bvp.start).0 - bvp.end.position;
    let (g_lo, g_hi) = (gap(k_min), gap(hi_k));
    if g_lo * g_hi > 0.0 {
        return Err(diverged("no slope brackets the end position"));
    }
    let ln_k = root(gap, k_min, hi_k, 1e-11).ok_or_else(|| diverged("slope search"))?;
    let (pieces, _) = build(ln_k);
    Ok(ZoneTrajectory::new(
        bvp.zone,
        pieces_to_arcs(&pieces, bvp.t_start, bvp.t_end, bvp.start, lim),
    ))
}

/// A vehicle's trajectory over its whole path, in path coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrajectory {
    pub vehicle: u64,
    pub zones: Vec<ZoneTrajectory>,
}

impl VehicleTrajectory {
    pub fn t_start(&self) -> f64 {
        self.zones[0].t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.zones[self.zones.len() - 1].t_end()
    }

    /// Index of the zone occupied at `t` (the last one whose window started).
    pub fn zone_index_at(&self, t: f64) -> usize {
        self.zones
            .partition_point(|z| z.t_end() < t)
            .min(self.zones.len() - 1)
    }

    pub fn state_at(&self, t: f64) -> (f64, f64, f64) {
        self.zones[self.zone_index_at(t)].state_at(t)
    }

    pub fn energy(&self) -> f64 {
        self.zones.iter().map(|z| z.energy).sum()
    }
}

/// Gap the follower must keep behind the leader.
pub fn required_gap(v_follow: f64, gamma: f64, phi: f64) -> f64 {
    gamma + phi * v_follow
}

/// Intervals of `[from, to]` where the follower is closer to the leader than
/// `gamma + phi v`. Positions are compared after subtracting each vehicle's
/// offset, so a shared stretch of road can sit at different path positions.
#[allow(clippy::too_many_arguments)]
pub fn check_rear_end(
    follower: &VehicleTrajectory,
    follower_offset: f64,
    leader: &VehicleTrajectory,
    leader_offset: f64,
    window: (f64, f64),
    gamma: f64,
    phi: f64,
    dt: f64,
) -> Vec<(f64, f64)> {
    let margin = |t: f64| {
        let (pf, vf, _) = follower.state_at(t);
        let (pl, _, _) = leader.state_at(t);
        (pl - leader_offset) - (pf - follower_offset) - required_gap(vf, gamma, phi)
    };
    sample_violations(margin, window, dt)
}

fn sample_violations(
    margin: impl Fn(f64) -> f64,
    (from, to): (f64, f64),
    dt: f64,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if !(to >= from) {
        return out;
    }
    let steps = ((to - from) / dt).ceil().max(1.0) as usize;
    let mut open: Option<f64> = None;
    for k in 0..=steps {
        let t = (from + k as f64 * dt).min(to);
        let bad = margin(t) < -1e-6;
        match (bad, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        out.push((s, to));
    }
    out
}

/// Car-following arc: `u' = (u_k - u) / phi`, started from the control that
/// keeps the gap's derivative at zero, `u = (v_k - v) / phi`.
///
/// From every grid point the remainder of the zone is re-solved to `end`
/// at `t_end`; the arc stops at the first point where that remainder
/// respects the limits and keeps the gap (`gap_ok`). Returns the arc and
/// the remainder. Costate jump conditions at entry and exit are not
/// enforced.
#[allow(clippy::too_many_arguments)]
pub fn follow_arc(
    zone: ZoneId,
    start: FollowSample,
    leader: impl Fn(f64) -> (f64, f64, f64),
    phi: f64,
    t_end: f64,
    end: BoundaryState,
    limits: &Limits,
    gap_ok: impl Fn(&ZoneTrajectory) -> bool,
) -> Result<(Arc, ZoneTrajectory), TrajectoryError> {
    let (_, v_lead, _) = leader(start.t);
    let mut cur = FollowSample {
        u: (v_lead - start.v) / phi,
        ..start
    };
    let mut samples = vec![cur];
    let steps = ((t_end - start.t) / FOLLOW_STEP).floor() as usize;
    for k in 1..steps {
        cur = rk4(cur, &leader, phi, start.t + k as f64 * FOLLOW_STEP);
        samples.push(cur);
        let rest = ZoneBvp {
            zone,
            t_start: cur.t,
            t_end,
            start: BoundaryState::new(cur.p, cur.v),
            end,
            limits: *limits,
        };
        let Some(rest) = remainder(&rest) else {
            continue;
        };
        if gap_ok(&rest) {
            let arc = Arc {
                t0: start.t,
                t1: cur.t,
                kind: ArcKind::Follow { samples },
            };
            return Ok((arc, rest));
        }
    }
    Err(TrajectoryError::NoExitFound { horizon: t_end })
}

/// Rest of a zone after leaving a following arc: the plain cubic when it
/// stays inside the limits, else the constrained solution if one exists.
fn remainder(bvp: &ZoneBvp) -> Option<ZoneTrajectory> {
    let lim = &bvp.limits;
    let cubic = solve_unconstrained(bvp).ok()?;
    let ((vlo, vhi), (ulo, uhi)) = cubic.extremes();
    if vlo >= lim.v_min - BOUND_TOL
        && vhi <= lim.v_max + BOUND_TOL
        && ulo >= lim.u_min - BOUND_TOL
        && uhi <= lim.u_max + BOUND_TOL
    {
        return Some(ZoneTrajectory::new(bvp.zone, vec![cubic]));
    }
    let bounds = ZoneBounds::of(bvp).ok()?;
    solve_zone(bvp, bounds).ok()
}

/// Integrates the following dynamics from `start` (its `u` is used as is)
/// on the `FOLLOW_STEP` grid up to `until`.
pub fn integrate_follow(
    start: FollowSample,
    leader: impl Fn(f64) -> (f64, f64, f64),
    phi: f64,
    until: f64,
) -> Vec<FollowSample> {
    let steps = ((until - start.t) / FOLLOW_STEP).floor() as usize;
    let mut out = vec![start];
    for k in 1..=steps {
        let next = rk4(out[k - 1], &leader, phi, start.t + k as f64 * FOLLOW_STEP);
        out.push(next);
    }
    out
}

fn rk4(
    s: FollowSample,
    leader: &impl Fn(f64) -> (f64, f64, f64),
    phi: f64,
    t_next: f64,
) -> FollowSample {
    let h = t_next - s.t;
    let f = |t: f64, v: f64, u: f64| {
        let (_, _, uk) = leader(t);
        (v, u, (uk - u) / phi)
    };
    let k1 = f(s.t, s.v, s.u);
    let k2 = f(s.t + h / 2.0, s.v + h / 2.0 * k1.1, s.u + h / 2.0 * k1.2);
    let k3 = f(s.t + h / 2.0, s.v + h / 2.0 * k2.1, s.u + h / 2.0 * k2.2);
    let k4 = f(t_next, s.v + h * k3.1, s.u + h * k3.2);
    FollowSample {
        t: t_next,
        p: s.p + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        v: s.v + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        u: s.u + h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
    }
}
