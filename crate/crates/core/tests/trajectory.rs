use std::f64::consts::PI;

use corridor_core::kinematics::{release_time, BoundaryState, Limits};
use corridor_core::trajectory::{
    solve_unconstrained, solve_zone, ArcKind, ZoneBounds, ZoneBvp, ZoneTrajectory,
};
use proptest::prelude::*;

const LIM: Limits = Limits {
    u_min: -1.0,
    u_max: 1.0,
    v_min: 5.0,
    v_max: 25.0,
};

fn reachable(vs: f64, ve: f64, len: f64) -> bool {
    let d = ve * ve - vs * vs;
    d.abs() <= 2.0 * len
}

/// A random BVP with its window somewhere between release and deadline.
fn bvp() -> impl Strategy<Value = (ZoneBvp, ZoneBounds)> {
    (
        5.0f64..=25.0,
        5.0f64..=25.0,
        10.0f64..400.0,
        0.0f64..=1.0,
        0.0f64..100.0,
    )
        .prop_filter("reachable", |(vs, ve, len, _, _)| reachable(*vs, *ve, *len))
        .prop_map(|(vs, ve, len, frac, t0)| {
            let mut b = ZoneBvp {
                zone: 1,
                t_start: t0,
                t_end: t0 + 1.0,
                start: BoundaryState::new(0.0, vs),
                end: BoundaryState::new(len, ve),
                limits: LIM,
            };
            let bounds = ZoneBounds::of(&b).unwrap();
            let d = bounds.deadline.unwrap();
            b.t_end = t0 + bounds.release + frac * (d - bounds.release);
            (b, bounds)
        })
}

fn check(traj: &ZoneTrajectory, b: &ZoneBvp) -> Result<(), TestCaseError> {
    let first = &traj.arcs[0];
    let last = &traj.arcs[traj.arcs.len() - 1];
    prop_assert!((first.t0 - b.t_start).abs() <= 1e-7 && (last.t1 - b.t_end).abs() <= 1e-7);
    let (p, v, _) = first.state_at(first.t0);
    prop_assert!((p - b.start.position).abs() <= 1e-7 && (v - b.start.speed).abs() <= 1e-7);
    let (p, v, _) = last.state_at(last.t1);
    prop_assert!(
        (p - b.end.position).abs() <= 1e-7,
        "end p {p} vs {}",
        b.end.position
    );
    prop_assert!(
        (v - b.end.speed).abs() <= 1e-7,
        "end v {v} vs {}",
        b.end.speed
    );
    for w in traj.arcs.windows(2) {
        let (p0, v0, _) = w[0].state_at(w[0].t1);
        let (p1, v1, _) = w[1].state_at(w[1].t0);
        prop_assert!((w[0].t1 - w[1].t0).abs() <= 1e-7);
        prop_assert!(
            (p0 - p1).abs() <= 1e-7 && (v0 - v1).abs() <= 1e-7,
            "joint at {}",
            w[0].t1
        );
    }
    // Dense sampling, independent of the arcs' own extreme-value logic.
    let n = 400;
    for k in 0..=n {
        let t = b.t_start + (b.t_end - b.t_start) * k as f64 / n as f64;
        let (_, v, u) = traj.state_at(t);
        prop_assert!(
            v >= LIM.v_min - 1e-7 && v <= LIM.v_max + 1e-7,
            "v {v} at {t}"
        );
        prop_assert!(
            u >= LIM.u_min - 1e-7 && u <= LIM.u_max + 1e-7,
            "u {u} at {t}"
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn solutions_meet_boundaries_and_limits((b, bounds) in bvp()) {
        let traj = solve_zone(&b, bounds).unwrap();
        check(&traj, &b)?;
    }
}

/// Simpson's rule over [0, t] with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, t: f64, n: usize) -> f64 {
    let h = t / n as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

/// Bump `ε sin(kπs/T) sin(πs/T)` and its first two derivatives. It and
/// its slope vanish at both ends, so adding it keeps all four boundary
/// values.
fn bump(eps: f64, k: f64, t: f64, s: f64) -> (f64, f64, f64) {
    let (a, b) = (k * PI / t, PI / t);
    let (f, g) = ((a * s).sin(), (b * s).sin());
    let (fp, gp) = (a * (a * s).cos(), b * (b * s).cos());
    let (fpp, gpp) = (-a * a * f, -b * b * g);
    (
        eps * f * g,
        eps * (fp * g + f * gp),
        eps * (fpp * g + 2.0 * fp * gp + f * gpp),
    )
}

#[test]
fn cubic_beats_every_boundary_preserving_bump() {
    let windows = [
        (10.0, 15.0, 300.0, 25.0),
        (14.0, 12.0, 100.0, 9.0),
        (8.0, 16.0, 150.0, 14.0),
    ];
    for (vs, ve, len, t) in windows {
        let b = ZoneBvp {
            zone: 1,
            t_start: 0.0,
            t_end: t,
            start: BoundaryState::new(0.0, vs),
            end: BoundaryState::new(len, ve),
            limits: LIM,
        };
        let cubic = solve_unconstrained(&b).unwrap();
        let ArcKind::Cubic { a, b: b0, .. } = cubic.kind else {
            unreachable!()
        };
        let u = |s: f64| a * s + b0;
        let base = simpson(|s| 0.5 * u(s).powi(2), t, 4000);
        assert!((base - cubic.energy()).abs() < 1e-9);
        for k in 1..=4 {
            for eps in [1e-3, -1e-3, 0.05, -0.05, 1.0] {
                let (p0, v0, _) = bump(eps, k as f64, t, 0.0);
                let (p1, v1, _) = bump(eps, k as f64, t, t);
                assert!(p0.abs() < 1e-12 && v0.abs() < 1e-12);
                assert!(p1.abs() < 1e-9 && v1.abs() < 1e-9);
                let e = simpson(
                    |s| 0.5 * (u(s) + bump(eps, k as f64, t, s).2).powi(2),
                    t,
                    4000,
                );
                assert!(e >= base - 1e-12, "k {k}, eps {eps}: {e} < {base}");
            }
        }
    }
}

#[test]
fn dispatch_switches_at_release() {
    let mut b = ZoneBvp {
        zone: 1,
        t_start: 0.0,
        t_end: 0.0,
        start: BoundaryState::new(0.0, 15.0),
        end: BoundaryState::new(300.0, 15.0),
        limits: LIM,
    };
    let r = release_time(b.start, b.end, &LIM).unwrap().time;
    let bounds = ZoneBounds::of(&b).unwrap();

    b.t_end = r - 1e-6;
    assert!(solve_zone(&b, bounds).is_err());

    b.t_end = r + 1e-6;
    let ArcKind::Cubic { a, b: b0, .. } = solve_unconstrained(&b).unwrap().kind else {
        unreachable!()
    };
    let peak = b0.abs().max((a * b.t_end + b0).abs());
    assert!(peak > LIM.u_max, "cubic peak {peak} should break the bound");
    let traj = solve_zone(&b, bounds).unwrap();
    assert!(traj.arcs.len() > 1);
    let (lo, hi) = traj.control_range();
    assert!(lo >= LIM.u_min - 1e-7 && hi <= LIM.u_max + 1e-7);

    // Comfortably inside the window the plain cubic is used.
    b.t_end = 25.0;
    let traj = solve_zone(&b, bounds).unwrap();
    assert!(matches!(traj.arcs[..], [ref c] if matches!(c.kind, ArcKind::Cubic { .. })));
}

#[test]
fn cubic_energy_is_minimal_among_solutions_for_the_same_window() {
    // An interior window is solved by the cubic, whose energy has the
    // closed form 2(3Δp² − 3Δp·ΣvT + (vs² + vs·ve + ve²)T²)/T³ with
    // Δp measured from the start.
    let (vs, ve, len, t) = (12.0, 14.0, 200.0, 16.0);
    let b = ZoneBvp {
        zone: 1,
        t_start: 0.0,
        t_end: t,
        start: BoundaryState::new(0.0, vs),
        end: BoundaryState::new(len, ve),
        limits: LIM,
    };
    let traj = solve_zone(&b, ZoneBounds::of(&b).unwrap()).unwrap();
    let oracle = 2.0
        * (3.0 * len * len - 3.0 * len * (vs + ve) * t + (vs * vs + vs * ve + ve * ve) * t * t)
        / t.powi(3);
    assert!(
        (traj.energy - oracle).abs() < 1e-9,
        "{} vs {oracle}",
        traj.energy
    );
}
