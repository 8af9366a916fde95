//! Event-driven simulation: arrivals, queueing, scheduling, trajectory
//! synthesis, safety monitoring and metrics.

pub mod arrivals;
pub mod config;
pub mod fuel;
pub mod metrics;
pub mod output;

use std::time::Instant;

use thiserror::Error;

pub use arrivals::{generate_arrivals, Arrival};
pub use config::{ArrivalModel, PathChoice, Policy, SimConfig};
pub use fuel::{fuel_rate, FuelCoefficients};
pub use metrics::MetricsReport;

use crate::kinematics::BoundaryState;
use crate::network::{NetworkError, PathSpec, Relation, ZoneNetwork};
use crate::scheduler::{
    build_instance, solve, solve_centralized, solve_fifo, to_model, CentralVehicle,
    CommittedVehicle, ScheduleTuple, SchedulerError, SchedulerParams, SolveStats, VehicleId,
    VehicleRequest,
};
use crate::trajectory::{
    follow_arc, required_gap, solve_zone, Arc, FollowSample, TrajectoryError, VehicleTrajectory,
    ZoneBounds, ZoneBvp, ZoneTrajectory, FOLLOW_STEP,
};

/// Rear-end gaps below `-GAP_TOL` count as violations.
pub const GAP_TOL: f64 = 1e-6;
const MAX_REPAIRS: usize = 64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("unsafe headway: a leader entering at {v_lead} m/s and a follower at {v_follow} m/s cannot keep the safe gap")]
    UnsafeHeadway { v_lead: f64, v_follow: f64 },
    #[error("vehicle {vehicle}: {source}")]
    Scheduler {
        vehicle: VehicleId,
        #[source]
        source: SchedulerError,
    },
    #[error("vehicle {vehicle}: {source}")]
    Trajectory {
        vehicle: VehicleId,
        #[source]
        source: TrajectoryError,
    },
    #[error("safety violation: {0}")]
    SafetyViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: VehicleId,
    /// Position in the active queue on arrival, counting from 1.
    pub queue_index: usize,
    pub path: PathSpec,
    pub t0: f64,
    pub entry_speed: f64,
    /// Merge speed actually used, after any fallback.
    pub v_merge: f64,
    pub schedule: ScheduleTuple,
    pub trajectory: VehicleTrajectory,
    pub travel_time: f64,
    pub fuel_l: f64,
    pub solver: SolveStats,
    /// Scheduling wall time including fallback attempts.
    pub solver_ms: f64,
    pub follow_arcs: usize,
}

impl VehicleRecord {
    fn committed(&self) -> CommittedVehicle {
        CommittedVehicle {
            id: self.id,
            path: self.path.clone(),
            schedule: self.schedule.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub policy: Policy,
    pub seed: u64,
    pub records: Vec<VehicleRecord>,
    /// Vehicles for which no merge speed was feasible.
    pub saturated: Vec<VehicleId>,
    /// Vehicles scheduled below the configured merge speed.
    pub fallbacks: usize,
    /// Joint search statistics for the centralized policy.
    pub central: Option<SolveStats>,
    pub metrics: MetricsReport,
}

/// Runs the configured experiment and rejects it if any safety check fails.
pub fn run(config: &SimConfig) -> Result<SimOutcome, SimError> {
    let out = simulate(config)?;
    if out.metrics.safety_violations > 0 {
        return Err(SimError::SafetyViolation(format!(
            "{} lateral and {} rear-end violations",
            out.metrics.lateral_violations, out.metrics.rear_end_violations
        )));
    }
    Ok(out)
}

/// Runs the configured experiment and reports safety in the metrics.
pub fn simulate(config: &SimConfig) -> Result<SimOutcome, SimError> {
    config.validate()?;
    let network = config.build_network()?;
    let arrivals = generate_arrivals(config, &network)?;
    simulate_arrivals(config, &network, &arrivals)
}

/// Runs `config.policy` on a fixed arrival list.
pub fn simulate_arrivals(
    config: &SimConfig,
    network: &ZoneNetwork,
    arrivals: &[Arrival],
) -> Result<SimOutcome, SimError> {
    let seq = sequential(config, network, arrivals, config.policy == Policy::Fifo)?;
    let (records, central) = match config.policy {
        Policy::Centralized => {
            let (r, s) = centralized(config, network, seq.records)?;
            (r, Some(s))
        }
        _ => (seq.records, None),
    };
    let metrics = metrics::evaluate(
        config,
        network,
        &records,
        seq.saturated.len(),
        central.as_ref(),
    );
    Ok(SimOutcome {
        policy: config.policy,
        seed: config.seed,
        records,
        saturated: seq.saturated,
        fallbacks: seq.fallbacks,
        central,
        metrics,
    })
}

struct Sequential {
    records: Vec<VehicleRecord>,
    saturated: Vec<VehicleId>,
    fallbacks: usize,
}

/// Merge speeds to try: the configured one, then downward in steps.
fn speed_ladder(config: &SimConfig) -> Vec<f64> {
    let mut out = vec![config.v_merge];
    let floor = config.limits.v_min + config.fallback_step;
    for k in 1.. {
        let v = config.v_merge - k as f64 * config.fallback_step;
        if v < floor - 1e-9 {
            break;
        }
        out.push(v);
    }
    out
}

fn sequential(
    config: &SimConfig,
    network: &ZoneNetwork,
    arrivals: &[Arrival],
    fifo: bool,
) -> Result<Sequential, SimError> {
    let mut records: Vec<VehicleRecord> = Vec::with_capacity(arrivals.len());
    let mut saturated = Vec::new();
    let mut fallbacks = 0;
    for a in arrivals {
        let active: Vec<&VehicleRecord> = records
            .iter()
            .filter(|r| r.schedule.exit_time > a.t0)
            .collect();
        // An empty queue restarts numbering at 1.
        let queue_index = active.len() + 1;
        let committed: Vec<CommittedVehicle> = records
            .iter()
            .filter(|r| r.schedule.exit_time + config.h > a.t0)
            .map(VehicleRecord::committed)
            .collect();
        let request = VehicleRequest {
            id: a.id,
            path: a.path.clone(),
            t0: a.t0,
            entry_speed: a.entry_speed,
        };
        let mut spent = 0.0;
        let mut accepted = None;
        for v_merge in speed_ladder(config) {
            let params = SchedulerParams {
                v_merge,
                ..config.scheduler_params()
            };
            let clock = Instant::now();
            let attempt = build_instance(&request, network, &committed, &params)
                .and_then(|inst| to_model(&inst))
                .and_then(|m| if fifo { solve_fifo(&m) } else { solve(&m) });
            spent += clock.elapsed().as_secs_f64() * 1e3;
            let (tuple, stats) = match attempt {
                Ok(x) => x,
                Err(
                    SchedulerError::Kinematics { .. }
                    | SchedulerError::Infeasible
                    | SchedulerError::UnsafeHeadway { .. },
                ) => continue,
                Err(source) => {
                    return Err(SimError::Scheduler {
                        vehicle: a.id,
                        source,
                    })
                }
            };
            match realize(config, network, a.id, &a.path, &tuple, &active) {
                Ok((trajectory, follow_arcs)) => {
                    accepted = Some((v_merge, tuple, stats, trajectory, follow_arcs));
                    break;
                }
                Err(Realize::Unsafe(_)) => continue,
                Err(Realize::Trajectory(source)) => {
                    return Err(SimError::Trajectory {
                        vehicle: a.id,
                        source,
                    })
                }
            }
        }
        let Some((v_merge, schedule, solver, trajectory, follow_arcs)) = accepted else {
            saturated.push(a.id);
            continue;
        };
        if v_merge < config.v_merge {
            fallbacks += 1;
        }
        records.push(record(
            config,
            a,
            queue_index,
            v_merge,
            schedule,
            trajectory,
            solver,
            spent,
            follow_arcs,
        ));
    }
    Ok(Sequential {
        records,
        saturated,
        fallbacks,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    config: &SimConfig,
    a: &Arrival,
    queue_index: usize,
    v_merge: f64,
    schedule: ScheduleTuple,
    trajectory: VehicleTrajectory,
    solver: SolveStats,
    solver_ms: f64,
    follow_arcs: usize,
) -> VehicleRecord {
    let fuel_l = metrics::fuel_ml(&trajectory, &config.fuel, config.rear_end_step) / 1000.0;
    VehicleRecord {
        id: a.id,
        queue_index,
        path: a.path.clone(),
        t0: a.t0,
        entry_speed: a.entry_speed,
        v_merge,
        travel_time: schedule.exit_time - a.t0,
        schedule,
        trajectory,
        fuel_l,
        solver,
        solver_ms,
        follow_arcs,
    }
}

/// Re-solves the accepted vehicles jointly, keeping each one's boundary
/// speeds and using the sequential schedules as the starting bound.
fn centralized(
    config: &SimConfig,
    network: &ZoneNetwork,
    seq: Vec<VehicleRecord>,
) -> Result<(Vec<VehicleRecord>, SolveStats), SimError> {
    let vehicles: Vec<CentralVehicle> = seq
        .iter()
        .map(|r| CentralVehicle {
            id: r.id,
            path: r.path.clone(),
            t0: r.t0,
            speeds: r.schedule.speeds.clone(),
        })
        .collect();
    let incumbent: Vec<ScheduleTuple> = seq.iter().map(|r| r.schedule.clone()).collect();
    let out = solve_centralized(
        &vehicles,
        network,
        &config.scheduler_params(),
        Some(&incumbent),
        Some(config.node_budget),
    )
    .map_err(|source| SimError::Scheduler { vehicle: 0, source })?;
    let per_vehicle = out.stats.wall_ms / seq.len().max(1) as f64;
    let mut records: Vec<VehicleRecord> = Vec::with_capacity(seq.len());
    for (old, schedule) in seq.into_iter().zip(out.schedules) {
        let active: Vec<&VehicleRecord> = records
            .iter()
            .filter(|r| r.schedule.exit_time > old.t0)
            .collect();
        let (trajectory, follow_arcs) = realize(
            config, network, old.id, &old.path, &schedule, &active,
        )
        .map_err(|e| match e {
            Realize::Unsafe(msg) => SimError::SafetyViolation(format!("vehicle {}: {msg}", old.id)),
            Realize::Trajectory(source) => SimError::Trajectory {
                vehicle: old.id,
                source,
            },
        })?;
        let arrival = Arrival {
            id: old.id,
            t0: old.t0,
            path: old.path.clone(),
            entry_speed: old.entry_speed,
        };
        let solver = SolveStats {
            wall_ms: per_vehicle,
            ..out.stats.clone()
        };
        records.push(record(
            config,
            &arrival,
            old.queue_index,
            old.v_merge,
            schedule,
            trajectory,
            solver,
            per_vehicle,
            follow_arcs,
        ));
    }
    Ok((records, out.stats))
}

/// How two vehicles share one stretch of road where rear-end spacing applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedStretch {
    /// True if the first vehicle enters the stretch first.
    pub first_leads: bool,
    /// Path position of the stretch's reference point for each vehicle.
    pub offsets: (f64, f64),
    /// Interval during which both vehicles are on the stretch.
    pub window: (f64, f64),
}

/// Stretches shared by two scheduled vehicles, measured from the exit of
/// the first shared zone (the merge point).
pub fn shared_stretches(
    network: &ZoneNetwork,
    (path_a, sched_a): (&PathSpec, &ScheduleTuple),
    (path_b, sched_b): (&PathSpec, &ScheduleTuple),
) -> Vec<SharedStretch> {
    let (ta, tb) = (sched_a.boundary_times(), sched_b.boundary_times());
    network
        .conflict_runs(path_a, path_b)
        .into_iter()
        .filter(|run| run.relation != Relation::Cross)
        .map(|run| {
            let (ka, kb, n) = (run.start_i, run.start_j, run.zones.len());
            SharedStretch {
                first_leads: ta[ka] < tb[kb],
                offsets: (path_a.exit_offset(ka), path_b.exit_offset(kb)),
                window: (ta[ka].max(tb[kb]), ta[ka + n].min(tb[kb + n])),
            }
        })
        .collect()
}

/// Signed spacing slack of `follower` behind `leader` at `t`.
fn gap_margin(
    follower: &VehicleTrajectory,
    f_off: f64,
    leader: &VehicleTrajectory,
    l_off: f64,
    t: f64,
    config: &SimConfig,
) -> f64 {
    let (pf, vf, _) = follower.state_at(t);
    let (pl, _, _) = leader.state_at(t);
    (pl - l_off) - (pf - f_off) - required_gap(vf, config.gamma, config.phi)
}

/// First sampled time in `window` where the gap is violated.
fn first_violation(margin: impl Fn(f64) -> f64, window: (f64, f64), dt: f64) -> Option<f64> {
    first_violation_within(margin, window, window, dt)
}

/// As [`first_violation`], restricted to the samples of `window`'s grid
/// that fall in `[from, to]`.
fn first_violation_within(
    margin: impl Fn(f64) -> f64,
    (w0, w1): (f64, f64),
    (from, to): (f64, f64),
    dt: f64,
) -> Option<f64> {
    if !(w1 > w0) {
        return None;
    }
    let (from, to) = (from.max(w0), to.min(w1));
    if from > to {
        return None;
    }
    let steps = ((w1 - w0) / dt).ceil() as usize;
    let first = ((from - w0) / dt).ceil().max(0.0) as usize;
    (first..=steps)
        .map(|k| (w0 + k as f64 * dt).min(w1))
        .take_while(|&t| t <= to)
        .find(|&t| margin(t) < -GAP_TOL)
}

#[derive(Debug)]
enum Realize {
    /// Spacing could not be restored; the schedule is rejected.
    Unsafe(String),
    Trajectory(TrajectoryError),
}

impl From<TrajectoryError> for Realize {
    fn from(e: TrajectoryError) -> Self {
        Realize::Trajectory(e)
    }
}

/// Energy-minimal per-zone trajectories for a schedule.
pub fn zone_trajectories(
    vehicle: VehicleId,
    path: &PathSpec,
    schedule: &ScheduleTuple,
    config: &SimConfig,
) -> Result<VehicleTrajectory, TrajectoryError> {
    let times = schedule.boundary_times();
    let zones = (0..path.len())
        .map(|k| {
            let bvp = ZoneBvp {
                zone: path.zone_ids[k],
                t_start: times[k],
                t_end: times[k + 1],
                start: BoundaryState::new(path.entry_offsets[k], schedule.speeds[k]),
                end: BoundaryState::new(path.exit_offset(k), schedule.speeds[k + 1]),
                limits: config.limits,
            };
            solve_zone(&bvp, ZoneBounds::of(&bvp)?)
        })
        .collect::<Result<_, _>>()?;
    Ok(VehicleTrajectory { vehicle, zones })
}

/// Builds the trajectory and inserts car-following arcs wherever the new
/// vehicle would close in on a predecessor. Returns the number of arcs added.
fn realize(
    config: &SimConfig,
    network: &ZoneNetwork,
    vehicle: VehicleId,
    path: &PathSpec,
    schedule: &ScheduleTuple,
    others: &[&VehicleRecord],
) -> Result<(VehicleTrajectory, usize), Realize> {
    let mut traj = zone_trajectories(vehicle, path, schedule, config)?;
    let stretches: Vec<(&VehicleRecord, SharedStretch)> = others
        .iter()
        .flat_map(|o| {
            shared_stretches(network, (path, schedule), (&o.path, &o.schedule))
                .into_iter()
                .map(move |s| (*o, s))
        })
        .collect();
    let dt = config.rear_end_step;
    let mut repairs = 0;
    loop {
        let mut earliest: Option<(f64, &VehicleRecord, SharedStretch)> = None;
        for (o, s) in &stretches {
            if s.first_leads {
                let m = |t| gap_margin(&o.trajectory, s.offsets.1, &traj, s.offsets.0, t, config);
                if let Some(t) = first_violation(m, s.window, dt) {
                    return Err(Realize::Unsafe(format!(
                        "vehicle {} closes in from behind at t = {t:.3}",
                        o.id
                    )));
                }
            } else {
                let m = |t| gap_margin(&traj, s.offsets.0, &o.trajectory, s.offsets.1, t, config);
                if let Some(t) = first_violation(m, s.window, dt) {
                    if earliest.is_none_or(|(e, _, _)| t < e) {
                        earliest = Some((t, o, *s));
                    }
                }
            }
        }
        let Some((t_bad, leader, s)) = earliest else {
            return Ok((traj, repairs));
        };
        if repairs == MAX_REPAIRS {
            return Err(Realize::Unsafe("too many following arcs".into()));
        }
        repairs += 1;
        insert_follow(
            config,
            path,
            schedule,
            &mut traj,
            &leader.trajectory,
            s,
            t_bad,
        )?;
    }
}

/// Replaces the trajectory from the last safe instant before `t_bad` with a
/// following arc and a cubic back onto the schedule.
fn insert_follow(
    config: &SimConfig,
    path: &PathSpec,
    schedule: &ScheduleTuple,
    traj: &mut VehicleTrajectory,
    leader: &VehicleTrajectory,
    s: SharedStretch,
    t_bad: f64,
) -> Result<(), Realize> {
    let (f_off, l_off) = s.offsets;
    let margin = |tr: &VehicleTrajectory, t| gap_margin(tr, f_off, leader, l_off, t, config);
    if t_bad <= s.window.0 {
        return Err(Realize::Unsafe(
            "spacing already violated on entering the shared stretch".into(),
        ));
    }
    let (mut lo, mut hi) = ((t_bad - config.rear_end_step).max(s.window.0), t_bad);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if margin(traj, mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = lo;
    let k = traj.zone_index_at(tau);
    let zone = &traj.zones[k];
    let t_end = zone.t_end();
    if tau >= t_end - 2.0 * FOLLOW_STEP || tau <= zone.t_start() {
        return Err(Realize::Unsafe("spacing lost at a zone boundary".into()));
    }
    let (p, v, u) = zone.state_at(tau);
    let end = BoundaryState::new(path.exit_offset(k), schedule.speeds[k + 1]);
    let gap_ok = |rest: &ZoneTrajectory| {
        first_violation_within(
            |t| {
                let (pf, vf, _) = rest.state_at(t);
                let (pl, _, _) = leader.state_at(t);
                (pl - l_off) - (pf - f_off) - required_gap(vf, config.gamma, config.phi)
            },
            s.window,
            (rest.t_start(), rest.t_end()),
            config.rear_end_step,
        )
        .is_none()
    };
    let start = FollowSample { t: tau, p, v, u };
    let (arc, rest) = match follow_arc(
        zone.zone,
        start,
        |t| leader.state_at(t),
        config.phi,
        t_end,
        end,
        &config.limits,
        gap_ok,
    ) {
        Ok(x) => x,
        Err(TrajectoryError::NoExitFound { horizon }) => {
            return Err(Realize::Unsafe(format!(
                "following arc found no exit before {horizon:.3}"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let mut arcs: Vec<Arc> = zone
        .arcs
        .iter()
        .filter(|a| a.t0 < tau)
        .map(|a| a.until(tau))
        .filter(|a| a.t1 > a.t0)
        .collect();
    arcs.push(arc);
    arcs.extend(rest.arcs);
    traj.zones[k] = ZoneTrajectory::new(zone.zone, arcs);
    Ok(())
}

/// Runs every policy on the arrival list of each seed.
pub fn compare_policies(config: &SimConfig, seeds: &[u64]) -> Result<Vec<SimOutcome>, SimError> {
    config.validate()?;
    let network = config.build_network()?;
    let mut out = Vec::new();
    for &seed in seeds {
        let cfg = SimConfig {
            seed,
            ..config.clone()
        };
        let arrivals = generate_arrivals(&cfg, &network)?;
        for policy in Policy::ALL {
            let cfg = SimConfig {
                policy,
                ..cfg.clone()
            };
            out.push(simulate_arrivals(&cfg, &network, &arrivals)?);
        }
    }
    Ok(out)
}
