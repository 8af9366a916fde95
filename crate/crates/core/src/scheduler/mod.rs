//! Per-vehicle time-optimal zone scheduling with disjunctive safety
//! constraints, plus FIFO and centralized reference policies.
//!
//! With every order binary fixed, the program left over is a set of
//! difference constraints, so each branch-and-bound node is solved exactly by
//! earliest-time propagation (see [`stn`]).

pub mod centralized;
pub mod stn;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{self, headway_is_safe, BoundaryState, KinematicsError, Limits};
use crate::network::{ConflictRun, PathSpec, Relation, ZoneId, ZoneNetwork};
use stn::{Disjunction, Edge, Order, ORIGIN, SLACK_TOL};

pub use centralized::{joint_model, solve_centralized, CentralOutcome, CentralVehicle, JointModel};

pub type VehicleId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("zone {zone}: {source}")]
    Kinematics {
        zone: ZoneId,
        #[source]
        source: KinematicsError,
    },
    #[error("zone {zone} has no finite deadline and no horizon is configured")]
    HorizonRequired { zone: ZoneId },
    #[error("unsafe headway in zone {zone} against vehicle {other}: leader {v_lead} m/s, follower {v_follow} m/s")]
    UnsafeHeadway {
        zone: ZoneId,
        other: VehicleId,
        v_lead: f64,
        v_follow: f64,
    },
    #[error("no schedule satisfies every constraint")]
    Infeasible,
    #[error("node budget exhausted before any feasible schedule was found")]
    NodeBudgetExceeded,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    pub limits: Limits,
    /// Minimum separation of two vehicles' arrival times at a shared zone, s.
    pub h: f64,
    /// Speed imposed at every interior zone boundary, m/s.
    pub v_merge: f64,
    /// Speed on leaving the control zone; `None` uses `v_merge`.
    #[serde(default)]
    pub exit_speed: Option<f64>,
    /// Stand-in for an unbounded deadline, s.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Standstill distance, m.
    pub gamma: f64,
    /// Reaction time, s.
    pub phi: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            limits: Limits {
                u_min: -1.0,
                u_max: 1.0,
                v_min: 5.0,
                v_max: 25.0,
            },
            h: 1.5,
            v_merge: 15.0,
            exit_speed: None,
            horizon: Some(600.0),
            gamma: 5.0,
            phi: 0.2,
        }
    }
}

impl SchedulerParams {
    pub fn exit_speed(&self) -> f64 {
        self.exit_speed.unwrap_or(self.v_merge)
    }
}

/// A vehicle asking for a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRequest {
    pub id: VehicleId,
    pub path: PathSpec,
    pub t0: f64,
    pub entry_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneTime {
    pub zone: ZoneId,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDecision {
    pub other: VehicleId,
    pub zones: Vec<ZoneId>,
    pub order: Order,
    pub binary: u8,
}

/// Arrival time at every zone of a vehicle's path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTuple {
    pub vehicle: VehicleId,
    pub entries: Vec<ZoneTime>,
    pub exit_time: f64,
    /// Speed at each zone boundary: entry of every zone, then the exit.
    pub speeds: Vec<f64>,
    #[serde(default)]
    pub decisions: Vec<RunDecision>,
}

impl ScheduleTuple {
    pub fn t0(&self) -> f64 {
        self.entries[0].time
    }

    pub fn time_at(&self, zone: ZoneId) -> Option<f64> {
        self.entries.iter().find(|e| e.zone == zone).map(|e| e.time)
    }

    /// Zone arrival times followed by the exit time.
    pub fn boundary_times(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| e.time)
            .chain([self.exit_time])
            .collect()
    }
}

/// A vehicle whose schedule is already fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct CommittedVehicle {
    pub id: VehicleId,
    pub path: PathSpec,
    pub schedule: ScheduleTuple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneWindow {
    pub zone: ZoneId,
    pub start_speed: f64,
    pub end_speed: f64,
    pub release: f64,
    /// `None` when the vehicle could stop inside the zone.
    pub deadline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conflict {
    pub other: VehicleId,
    pub run: ConflictRun,
    /// The other vehicle's arrival time at each zone of the run.
    pub other_times: Vec<f64>,
    pub fixed: Option<Order>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingInstance {
    pub vehicle: VehicleId,
    pub path: PathSpec,
    pub t0: f64,
    pub speeds: Vec<f64>,
    pub windows: Vec<ZoneWindow>,
    pub conflicts: Vec<Conflict>,
    pub h: f64,
    pub horizon: Option<f64>,
}

/// Speeds at every boundary of a path: measured entry speed, `v_merge` in
/// between, `exit_speed` on leaving.
pub fn boundary_speeds(zones: usize, entry_speed: f64, v_merge: f64, exit_speed: f64) -> Vec<f64> {
    let mut s = vec![v_merge; zones + 1];
    s[0] = entry_speed;
    s[zones] = exit_speed;
    s
}

/// Release time and deadline of every zone on `path` for the given boundary
/// speeds.
pub fn zone_windows(
    path: &PathSpec,
    speeds: &[f64],
    limits: &Limits,
) -> Result<Vec<ZoneWindow>, SchedulerError> {
    assert_eq!(speeds.len(), path.len() + 1, "one speed per zone boundary");
    (0..path.len())
        .map(|k| {
            let zone = path.zone_ids[k];
            let start = BoundaryState::new(path.entry_offsets[k], speeds[k]);
            let end = BoundaryState::new(path.exit_offset(k), speeds[k + 1]);
            let wrap = |source| SchedulerError::Kinematics { zone, source };
            let release = kinematics::release_time(start, end, limits).map_err(wrap)?;
            let deadline = kinematics::deadline(start, end, limits).map_err(wrap)?;
            Ok(ZoneWindow {
                zone,
                start_speed: speeds[k],
                end_speed: speeds[k + 1],
                release: release.time,
                deadline: deadline.time(),
            })
        })
        .collect()
}

/// Assembles one vehicle's scheduling problem against the committed set.
pub fn build_instance(
    request: &VehicleRequest,
    network: &ZoneNetwork,
    committed: &[CommittedVehicle],
    params: &SchedulerParams,
) -> Result<SchedulingInstance, SchedulerError> {
    let path = &request.path;
    let speeds = boundary_speeds(
        path.len(),
        request.entry_speed,
        params.v_merge,
        params.exit_speed(),
    );
    let windows = zone_windows(path, &speeds, &params.limits)?;
    let mut conflicts = Vec::new();
    for other in committed {
        // Anyone gone h seconds before we enter cannot bind.
        if other.schedule.exit_time + params.h <= request.t0 {
            continue;
        }
        for run in network.conflict_runs(path, &other.path) {
            let other_times: Vec<f64> = (0..run.zones.len())
                .map(|k| other.schedule.entries[run.start_j + k].time)
                .collect();
            let mut fixed =
                (run.relation == Relation::SamePath || run.start_i == 0).then_some(Order::After);
            if run.relation != Relation::Cross {
                fixed = restrict_by_headway(
                    &speeds,
                    &other.schedule.speeds,
                    other.id,
                    &run,
                    fixed,
                    params,
                )?;
            }
            conflicts.push(Conflict {
                other: other.id,
                run,
                other_times,
                fixed,
            });
        }
    }
    Ok(SchedulingInstance {
        vehicle: request.id,
        path: path.clone(),
        t0: request.t0,
        speeds,
        windows,
        conflicts,
        h: params.h,
        horizon: params.horizon,
    })
}

/// Drops any order under which the follower could be forced into the
/// rear-end constraint at a shared zone's entry.
pub(crate) fn restrict_by_headway(
    speeds: &[f64],
    other_speeds: &[f64],
    other: VehicleId,
    run: &ConflictRun,
    fixed: Option<Order>,
    params: &SchedulerParams,
) -> Result<Option<Order>, SchedulerError> {
    let safe = |order: Order| {
        (0..run.zones.len()).find_map(|k| {
            let mine = speeds[run.start_i + k];
            let theirs = other_speeds[run.start_j + k];
            let (v_lead, v_follow) = match order {
                Order::After => (theirs, mine),
                Order::Before => (mine, theirs),
            };
            (!headway_is_safe(
                params.h,
                v_lead,
                v_follow,
                params.gamma,
                params.phi,
                params.limits.u_min,
            ))
            .then_some(SchedulerError::UnsafeHeadway {
                zone: run.zones[k],
                other,
                v_lead,
                v_follow,
            })
        })
    };
    match fixed {
        Some(order) => match safe(order) {
            None => Ok(fixed),
            Some(err) => Err(err),
        },
        None => match (safe(Order::After), safe(Order::Before)) {
            (None, None) => Ok(None),
            (None, Some(_)) => Ok(Some(Order::After)),
            (Some(_), None) => Ok(Some(Order::Before)),
            (Some(err), Some(_)) => Err(err),
        },
    }
}

/// One conflict run in model form: node indices of the constrained zones.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub other: VehicleId,
    pub zones: Vec<ZoneId>,
    /// Model node of each constrained zone arrival.
    pub nodes: Vec<usize>,
    pub other_times: Vec<f64>,
    pub fixed: Option<Order>,
}

/// The disjunctive program of one vehicle. Node 0 is the time origin, node
/// `k + 1` the arrival at zone `k`, node `n + 1` the exit.
#[derive(Debug, Clone, PartialEq)]
pub struct DisjunctiveModel {
    pub vehicle: VehicleId,
    pub zones: Vec<ZoneId>,
    pub t0: f64,
    pub speeds: Vec<f64>,
    /// (lower, upper) bound on the time spent in each zone.
    pub windows: Vec<(f64, f64)>,
    pub runs: Vec<ModelRun>,
    pub h: f64,
    pub big_m: f64,
}

pub fn to_model(instance: &SchedulingInstance) -> Result<DisjunctiveModel, SchedulerError> {
    let mut windows = Vec::with_capacity(instance.windows.len());
    for w in &instance.windows {
        let upper = match (w.deadline, instance.horizon) {
            (Some(d), _) => d,
            (None, Some(h)) => h,
            (None, None) => return Err(SchedulerError::HorizonRequired { zone: w.zone }),
        };
        if !(w.release >= 0.0 && upper >= w.release - SLACK_TOL) {
            return Err(SchedulerError::InvalidModel(format!(
                "zone {} window [{}, {}] is empty or negative",
                w.zone, w.release, upper
            )));
        }
        windows.push((w.release, upper));
    }
    let mut runs = Vec::new();
    let mut latest_other = 0.0f64;
    for c in &instance.conflicts {
        let mut zones = Vec::new();
        let mut nodes = Vec::new();
        let mut other_times = Vec::new();
        for (k, zone) in c.run.zones.iter().enumerate() {
            let idx = c.run.start_i + k;
            latest_other = latest_other.max(c.other_times[k]);
            // The first zone's arrival is the entry time itself.
            if idx == 0 {
                continue;
            }
            zones.push(*zone);
            nodes.push(idx + 1);
            other_times.push(c.other_times[k]);
        }
        let fixed = if nodes.is_empty() {
            Some(Order::After)
        } else {
            c.fixed
        };
        runs.push(ModelRun {
            other: c.other,
            zones,
            nodes,
            other_times,
            fixed,
        });
    }
    let own_latest = instance.t0 + windows.iter().map(|w| w.1).sum::<f64>();
    Ok(DisjunctiveModel {
        vehicle: instance.vehicle,
        zones: instance.path.zone_ids.clone(),
        t0: instance.t0,
        speeds: instance.speeds.clone(),
        windows,
        runs,
        h: instance.h,
        big_m: own_latest.max(latest_other) + instance.h,
    })
}

impl DisjunctiveModel {
    pub fn node_count(&self) -> usize {
        self.zones.len() + 2
    }

    pub fn exit_node(&self) -> usize {
        self.zones.len() + 1
    }

    pub fn free_binaries(&self) -> usize {
        self.runs.iter().filter(|r| r.fixed.is_none()).count()
    }

    /// Entry pinned to `t0` and the per-zone traversal windows.
    pub fn base_edges(&self) -> Vec<Edge> {
        let mut edges = vec![
            Edge::new(ORIGIN, 1, self.t0),
            Edge::new(1, ORIGIN, -self.t0),
        ];
        for (k, (lo, hi)) in self.windows.iter().enumerate() {
            edges.push(Edge::new(k + 1, k + 2, *lo));
            edges.push(Edge::new(k + 2, k + 1, -hi));
        }
        edges
    }

    pub fn disjunctions(&self) -> Vec<Disjunction> {
        self.runs
            .iter()
            .map(|r| {
                let after = r
                    .nodes
                    .iter()
                    .zip(&r.other_times)
                    .map(|(n, t)| Edge::new(ORIGIN, *n, t + self.h))
                    .collect();
                let before = r
                    .nodes
                    .iter()
                    .zip(&r.other_times)
                    .map(|(n, t)| Edge::new(*n, ORIGIN, -(t - self.h)))
                    .collect();
                Disjunction {
                    sides: [after, before],
                    fixed: r.fixed,
                }
            })
            .collect()
    }

    /// Smallest slack over the literal big-M inequalities and the windows for
    /// node values `x` and one binary per run. Negative means violated.
    pub fn min_slack(&self, x: &[f64], binaries: &[u8]) -> f64 {
        let mut slack = f64::INFINITY;
        slack = slack.min(-(x[1] - self.t0).abs());
        for (k, (lo, hi)) in self.windows.iter().enumerate() {
            let gap = x[k + 2] - x[k + 1];
            slack = slack.min(gap - lo).min(hi - gap);
        }
        for (r, &b) in self.runs.iter().zip(binaries) {
            let b = f64::from(b);
            for (n, t) in r.nodes.iter().zip(&r.other_times) {
                slack = slack.min((x[*n] - t) + b * self.big_m - self.h);
                slack = slack.min((t - x[*n]) + (1.0 - b) * self.big_m - self.h);
            }
        }
        slack
    }

    fn tuple(&self, x: &[f64], orders: &[Order]) -> ScheduleTuple {
        ScheduleTuple {
            vehicle: self.vehicle,
            entries: self
                .zones
                .iter()
                .enumerate()
                .map(|(k, z)| ZoneTime {
                    zone: *z,
                    time: x[k + 1],
                })
                .collect(),
            exit_time: x[self.exit_node()],
            speeds: self.speeds.clone(),
            decisions: self
                .runs
                .iter()
                .zip(orders)
                .map(|(r, o)| RunDecision {
                    other: r.other,
                    zones: r.zones.clone(),
                    order: *o,
                    binary: o.binary(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub wall_ms: f64,
    pub nodes: u64,
    pub leaves: u64,
    pub binaries: Vec<u8>,
    pub optimal: bool,
}

/// Exact minimum-exit-time schedule.
pub fn solve(model: &DisjunctiveModel) -> Result<(ScheduleTuple, SolveStats), SchedulerError> {
    solve_with(model, model.disjunctions())
}

/// Schedule with every free binary forced to "after": the new vehicle yields
/// wherever it meets an earlier one.
pub fn solve_fifo(model: &DisjunctiveModel) -> Result<(ScheduleTuple, SolveStats), SchedulerError> {
    let mut ds = model.disjunctions();
    for d in &mut ds {
        d.fixed.get_or_insert(Order::After);
    }
    solve_with(model, ds)
}

fn solve_with(
    model: &DisjunctiveModel,
    ds: Vec<Disjunction>,
) -> Result<(ScheduleTuple, SolveStats), SchedulerError> {
    let start = Instant::now();
    let out = stn::branch_and_bound(
        &model.base_edges(),
        model.node_count(),
        &ds,
        &[model.exit_node()],
        None,
        None,
    )
    .ok_or(SchedulerError::Infeasible)?;
    let stats = SolveStats {
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        nodes: out.nodes,
        leaves: out.leaves,
        binaries: out.orders.iter().map(|o| o.binary()).collect(),
        optimal: out.complete,
    };
    Ok((model.tuple(&out.x, &out.orders), stats))
}
