//! Self-checks against independent oracles, reported suite by suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::kinematics::{
    deadline_with, release_time, AccelProfile, BoundaryState, Deadline, Limits, SwitchFormula,
};
use crate::network::{build_network, Geometry};
use crate::scheduler::stn::{Graph, Order};
use crate::scheduler::{
    joint_model, solve, solve_centralized, CentralVehicle, DisjunctiveModel, ModelRun,
    SchedulerParams,
};
use crate::trajectory::{solve_zone, ZoneBounds, ZoneBvp};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "lowercase")]
pub enum SuiteStatus {
    Pass,
    Fail(String),
    /// Not run to completion; the reason is always given.
    Skip(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub status: SuiteStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Random cases per suite.
    pub cases: usize,
    /// Switch-point formula handed to the deadline suite.
    pub deadline_formula: SwitchFormula,
    /// Node cap for the centralized search.
    pub central_node_budget: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            cases: 2000,
            deadline_formula: SwitchFormula::Consistent,
            central_node_budget: 1_000_000,
        }
    }
}

pub fn run_all(opts: &ValidateOptions) -> Vec<SuiteReport> {
    vec![
        release_suite(opts),
        deadline_suite(opts),
        scheduler_suite(opts),
        centralized_suite(opts),
        trajectory_suite(opts),
    ]
}

fn reference_limits() -> Limits {
    Limits {
        u_min: -1.0,
        u_max: 1.0,
        v_min: 5.0,
        v_max: 25.0,
    }
}

/// A boundary pair on a zone of random length, with random speeds.
fn random_pair(rng: &mut ChaCha8Rng, lim: &Limits) -> (BoundaryState, BoundaryState) {
    let len = rng.gen_range(10.0..400.0);
    let start = BoundaryState::new(0.0, rng.gen_range(lim.v_min..=lim.v_max));
    let end = BoundaryState::new(len, rng.gen_range(lim.v_min..=lim.v_max));
    (start, end)
}

/// Whether any admissible trajectory joins the pair: the speed change must
/// fit in the zone at full acceleration or braking.
fn reachable(start: &BoundaryState, end: &BoundaryState, lim: &Limits) -> bool {
    let len = end.position - start.position;
    let dv2 = end.speed.powi(2) - start.speed.powi(2);
    if dv2 >= 0.0 {
        dv2 <= 2.0 * lim.u_max * len + 1e-9
    } else {
        -dv2 <= -2.0 * lim.u_min * len + 1e-9
    }
}

/// Closed-form replay of a profile's end point, segment by segment.
fn endpoint_error(profile: &AccelProfile, end: &BoundaryState) -> f64 {
    let (mut p, mut v) = (profile.start.position, profile.start.speed);
    for seg in &profile.segments {
        p += v * seg.duration + 0.5 * seg.accel * seg.duration * seg.duration;
        v += seg.accel * seg.duration;
    }
    (p - end.position).abs().max((v - end.speed).abs())
}

fn first_failure(cases: usize, mut check: impl FnMut(usize) -> Result<(), String>) -> SuiteStatus {
    for i in 0..cases {
        if let Err(msg) = check(i) {
            return SuiteStatus::Fail(format!("case {i}: {msg}"));
        }
    }
    SuiteStatus::Pass
}

fn release_suite(opts: &ValidateOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lim = reference_limits();
    let worked = [
        (
            BoundaryState::new(0.0, 15.0),
            BoundaryState::new(300.0, 15.0),
            lim,
            2.0 * (525f64.sqrt() - 15.0),
        ),
        (
            BoundaryState::new(0.0, 15.0),
            BoundaryState::new(300.0, 15.0),
            Limits { v_max: 20.0, ..lim },
            16.25,
        ),
    ];
    for (start, end, l, want) in worked {
        match release_time(start, end, &l) {
            Ok(r) if (r.time - want).abs() <= 1e-9 => {}
            other => {
                return SuiteReport {
                    name: "release",
                    cases: 0,
                    status: SuiteStatus::Fail(format!(
                        "worked case {start:?} -> {end:?}: expected {want}, got {other:?}"
                    )),
                }
            }
        }
    }
    let status = first_failure(opts.cases, |_| {
        let (start, end) = random_pair(&mut rng, &lim);
        match release_time(start, end, &lim) {
            Ok(r) => {
                let err = endpoint_error(&r.profile, &end);
                if err > 1e-9 {
                    return Err(format!("{start:?} -> {end:?}: end point off by {err:e}"));
                }
                if (r.profile.duration() - r.time).abs() > 1e-9 {
                    return Err(format!(
                        "{start:?} -> {end:?}: duration disagrees with time"
                    ));
                }
                Ok(())
            }
            Err(e) if reachable(&start, &end, &lim) => Err(format!(
                "{start:?} -> {end:?}: reachable but rejected ({e})"
            )),
            Err(_) => Ok(()),
        }
    });
    SuiteReport {
        name: "release",
        cases: opts.cases + 2,
        status,
    }
}

fn deadline_suite(opts: &ValidateOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let lim = reference_limits();
    let f = opts.deadline_formula;
    let (start, end) = (
        BoundaryState::new(0.0, 15.0),
        BoundaryState::new(300.0, 15.0),
    );
    match deadline_with(start, end, &lim, f) {
        Ok(d) if d.time().is_some_and(|t| (t - 40.0).abs() <= 1e-9) => {}
        other => {
            return SuiteReport {
                name: "deadline",
                cases: 0,
                status: SuiteStatus::Fail(format!(
                    "worked case {start:?} -> {end:?}: expected 40, got {:?}",
                    other.map(|d| d.time())
                )),
            }
        }
    }
    let status = first_failure(opts.cases, |_| {
        let (start, end) = random_pair(&mut rng, &lim);
        match deadline_with(start, end, &lim, f) {
            Ok(Deadline::Finite { time, profile, .. }) => {
                let err = endpoint_error(&profile, &end);
                if err > 1e-9 {
                    return Err(format!("{start:?} -> {end:?}: end point off by {err:e}"));
                }
                let (lo, _) = profile.speed_range();
                if lo < lim.v_min - 1e-9 {
                    return Err(format!("{start:?} -> {end:?}: dips to {lo} m/s"));
                }
                if (profile.duration() - time).abs() > 1e-9 {
                    return Err(format!(
                        "{start:?} -> {end:?}: duration disagrees with time"
                    ));
                }
                Ok(())
            }
            Ok(Deadline::Unbounded) => {
                Err(format!("{start:?} -> {end:?}: unbounded with v_min > 0"))
            }
            Err(e) if reachable(&start, &end, &lim) => Err(format!(
                "{start:?} -> {end:?}: reachable but rejected ({e})"
            )),
            Err(_) => Ok(()),
        }
    });
    SuiteReport {
        name: "deadline",
        cases: opts.cases + 1,
        status,
    }
}

/// Random single-vehicle program: a chain of zones with a handful of
/// other vehicles' arrival times to dodge.
fn random_model(rng: &mut ChaCha8Rng) -> DisjunctiveModel {
    let zones = rng.gen_range(2..=7);
    let mut windows = Vec::with_capacity(zones);
    for _ in 0..zones {
        let lo = rng.gen_range(0.5..15.0);
        windows.push((lo, lo + rng.gen_range(0.0..20.0)));
    }
    let t0 = rng.gen_range(0.0..5.0);
    let reach: f64 = t0 + windows.iter().map(|w| w.1).sum::<f64>();
    let free = rng.gen_range(0..=12);
    let mut runs = Vec::new();
    for r in 0..free + rng.gen_range(0..3) {
        let first = rng.gen_range(1..zones);
        let len = rng.gen_range(1..=(zones - first).min(3));
        let nodes: Vec<usize> = (first..first + len).map(|k| k + 1).collect();
        let mut t = rng.gen_range(t0..reach);
        let other_times = nodes
            .iter()
            .map(|_| {
                let now = t;
                t += rng.gen_range(0.5..5.0);
                now
            })
            .collect();
        runs.push(ModelRun {
            other: r as u64 + 100,
            zones: nodes.iter().map(|&n| n as u32).collect(),
            nodes,
            other_times,
            fixed: (r >= free).then_some(Order::After),
        });
    }
    let big_m = reach.max(
        runs.iter()
            .flat_map(|r| r.other_times.iter().copied())
            .fold(0.0, f64::max),
    ) + 1.5;
    DisjunctiveModel {
        vehicle: 0,
        zones: (0..zones as u32).collect(),
        t0,
        speeds: vec![15.0; zones + 1],
        windows,
        runs,
        h: 1.5,
        big_m,
    }
}

/// Earliest chain schedule for fixed orders by repeated forward and
/// backward interval sweeps. `None` if the intervals cross.
pub fn chain_earliest(model: &DisjunctiveModel, orders: &[Order]) -> Option<Vec<f64>> {
    let n = model.zones.len() + 1;
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    lo[0] = model.t0;
    hi[0] = model.t0;
    for (r, o) in model.runs.iter().zip(orders) {
        for (node, t) in r.nodes.iter().zip(&r.other_times) {
            let k = node - 1;
            match o {
                Order::After => lo[k] = lo[k].max(t + model.h),
                Order::Before => hi[k] = hi[k].min(t - model.h),
            }
        }
    }
    for _ in 0..=2 * n {
        let mut changed = false;
        for k in 0..n - 1 {
            let (r, d) = model.windows[k];
            let (a, b) = (lo[k + 1].max(lo[k] + r), hi[k + 1].min(hi[k] + d));
            changed |= a > lo[k + 1] + 1e-12 || b < hi[k + 1] - 1e-12;
            lo[k + 1] = a;
            hi[k + 1] = b;
        }
        for k in (0..n - 1).rev() {
            let (r, d) = model.windows[k];
            let (a, b) = (lo[k].max(lo[k + 1] - d), hi[k].min(hi[k + 1] - r));
            changed |= a > lo[k] + 1e-12 || b < hi[k] - 1e-12;
            lo[k] = a;
            hi[k] = b;
        }
        if lo.iter().zip(&hi).any(|(l, h)| *l > *h + 1e-9) {
            return None;
        }
        if !changed {
            return Some(lo);
        }
    }
    None
}

/// Best exit time over every assignment of the free orders.
pub fn enumerate_exit(model: &DisjunctiveModel) -> Option<f64> {
    let free: Vec<usize> = (0..model.runs.len())
        .filter(|&i| model.runs[i].fixed.is_none())
        .collect();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << free.len()) {
        let mut orders: Vec<Order> = model
            .runs
            .iter()
            .map(|r| r.fixed.unwrap_or(Order::After))
            .collect();
        for (bit, &i) in free.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                orders[i] = Order::Before;
            }
        }
        if let Some(x) = chain_earliest(model, &orders) {
            let exit = x[x.len() - 1];
            best = Some(best.map_or(exit, |b: f64| b.min(exit)));
        }
    }
    best
}

fn scheduler_suite(opts: &ValidateOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let cases = opts.cases.min(1000);
    let status = first_failure(cases, |_| {
        let model = random_model(&mut rng);
        let oracle = enumerate_exit(&model);
        match (solve(&model), oracle) {
            (Err(_), None) => Ok(()),
            (Ok((tuple, stats)), Some(best)) => {
                if (tuple.exit_time - best).abs() > 1e-9 {
                    return Err(format!(
                        "exit {} but enumeration gives {best}",
                        tuple.exit_time
                    ));
                }
                let x: Vec<f64> = std::iter::once(0.0).chain(tuple.boundary_times()).collect();
                let slack = model.min_slack(&x, &stats.binaries);
                if slack < -1e-9 {
                    return Err(format!("big-M slack {slack}"));
                }
                Ok(())
            }
            (got, want) => Err(format!(
                "solver says {:?}, enumeration says {want:?}",
                got.map(|t| t.0.exit_time)
            )),
        }
    });
    SuiteReport {
        name: "scheduler",
        cases,
        status,
    }
}

fn centralized_suite(opts: &ValidateOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let network = build_network(Geometry::default()).expect("default network");
    let paths = network.all_paths();
    let params = SchedulerParams::default();
    let cases = (opts.cases / 20).max(1);
    let mut skipped = 0;
    let mut checked = 0;
    for i in 0..cases {
        let n = rng.gen_range(2..=4);
        let mut t = 0.0;
        let vehicles: Vec<CentralVehicle> = (0..n)
            .map(|id| {
                t += rng.gen_range(0.0..2.0);
                let path = paths[rng.gen_range(0..paths.len())].clone();
                let mut speeds = vec![params.v_merge; path.len() + 1];
                speeds[0] = rng.gen_range(13.0..16.0);
                CentralVehicle {
                    id,
                    path,
                    t0: t,
                    speeds,
                }
            })
            .collect();
        let Ok(model) = joint_model(&vehicles, &network, &params) else {
            continue;
        };
        let free: Vec<usize> = (0..model.disjunctions.len())
            .filter(|&k| model.disjunctions[k].fixed.is_none())
            .collect();
        if free.len() > 14 {
            continue;
        }
        checked += 1;
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << free.len()) {
            let mut g = Graph::new(model.nodes);
            for e in &model.base {
                g.push(*e);
            }
            for (k, d) in model.disjunctions.iter().enumerate() {
                let order = match free.iter().position(|&f| f == k) {
                    Some(bit) if mask >> bit & 1 == 1 => Order::Before,
                    Some(_) => Order::After,
                    None => d.fixed.unwrap_or(Order::After),
                };
                for e in d.side(order) {
                    g.push(*e);
                }
            }
            if let Some(x) = g.earliest() {
                let v: f64 = model.exits.iter().map(|&k| x[k]).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        match solve_centralized(
            &vehicles,
            &network,
            &params,
            None,
            Some(opts.central_node_budget),
        ) {
            Ok(out) if !out.stats.optimal => skipped += 1,
            Ok(out) => {
                let got: f64 = out.schedules.iter().map(|s| s.exit_time).sum();
                match best {
                    Some(b) if (got - b).abs() <= 1e-9 => {}
                    _ => {
                        return SuiteReport {
                            name: "centralized",
                            cases,
                            status: SuiteStatus::Fail(format!(
                                "case {i}: search gives {got}, enumeration {best:?}"
                            )),
                        }
                    }
                }
            }
            Err(crate::scheduler::SchedulerError::NodeBudgetExceeded) => skipped += 1,
            Err(e) if best.is_some() => {
                return SuiteReport {
                    name: "centralized",
                    cases,
                    status: SuiteStatus::Fail(format!(
                        "case {i}: {e} but enumeration found {best:?}"
                    )),
                }
            }
            Err(_) => {}
        }
    }
    let status = if skipped > 0 {
        SuiteStatus::Skip(format!(
            "budget: {skipped} of {cases} searches stopped at {} nodes",
            opts.central_node_budget
        ))
    } else {
        SuiteStatus::Pass
    };
    SuiteReport {
        name: "centralized",
        cases: checked,
        status,
    }
}

fn trajectory_suite(opts: &ValidateOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(4));
    let lim = reference_limits();
    let mut done = 0;
    let status = first_failure(opts.cases, |_| {
        let (start, end) = random_pair(&mut rng, &lim);
        let probe = ZoneBvp {
            zone: 0,
            t_start: 0.0,
            t_end: 1.0,
            start,
            end,
            limits: lim,
        };
        let Ok(bounds) = ZoneBounds::of(&probe) else {
            return Ok(());
        };
        let hi = bounds.deadline.unwrap_or(bounds.release + 60.0);
        let window = rng.gen_range(bounds.release..=hi);
        let bvp = ZoneBvp {
            t_end: window,
            ..probe
        };
        done += 1;
        let traj = solve_zone(&bvp, bounds).map_err(|e| format!("{bvp:?}: {e}"))?;
        let (p, v, _) = traj.arcs[traj.arcs.len() - 1].state_at(window);
        if (p - end.position).abs() > 1e-7 || (v - end.speed).abs() > 1e-7 {
            return Err(format!("{bvp:?}: ends at ({p}, {v})"));
        }
        for w in traj.arcs.windows(2) {
            let (p0, v0, _) = w[0].state_at(w[0].t1);
            let (p1, v1, _) = w[1].state_at(w[1].t0);
            if (p0 - p1).abs() > 1e-7 || (v0 - v1).abs() > 1e-7 || (w[0].t1 - w[1].t0).abs() > 1e-7
            {
                return Err(format!("{bvp:?}: jump at t = {}", w[0].t1));
            }
        }
        let (vlo, vhi) = traj.speed_range();
        let (ulo, uhi) = traj.control_range();
        if vlo < lim.v_min - 1e-7
            || vhi > lim.v_max + 1e-7
            || ulo < lim.u_min - 1e-7
            || uhi > lim.u_max + 1e-7
        {
            return Err(format!("{bvp:?}: leaves the limits"));
        }
        Ok(())
    });
    SuiteReport {
        name: "trajectory",
        cases: done,
        status,
    }
}
