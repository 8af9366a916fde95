//! Joint schedule of a whole arrival list minimizing the sum of exit times.

use std::time::Instant;

use super::stn::{self, Disjunction, Edge, Order, ORIGIN, SLACK_TOL};
use super::{
    restrict_by_headway, zone_windows, RunDecision, ScheduleTuple, SchedulerError, SchedulerParams,
    SolveStats, VehicleId, ZoneTime,
};
use crate::network::{PathSpec, Relation, ZoneId, ZoneNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct CentralVehicle {
    pub id: VehicleId,
    pub path: PathSpec,
    pub t0: f64,
    /// Speed at each zone boundary, as in [`ScheduleTuple::speeds`].
    pub speeds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralOutcome {
    /// One schedule per vehicle, in input order.
    pub schedules: Vec<ScheduleTuple>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq)]
struct PairRun {
    later: usize,
    earlier: usize,
    zones: Vec<ZoneId>,
}

/// The joint difference-constraint program over all vehicles: node 0 is
/// the time origin, then each vehicle's zone arrivals and exit in turn.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub nodes: usize,
    pub base: Vec<Edge>,
    pub disjunctions: Vec<Disjunction>,
    /// Exit node of each vehicle; the objective sums these.
    pub exits: Vec<usize>,
    /// First node of each vehicle.
    pub offset: Vec<usize>,
    pairs: Vec<PairRun>,
}

/// Builds the joint program. `vehicles` must be in queue order; a later
/// vehicle never overtakes an earlier one on an identical path or at a
/// shared entry.
pub fn joint_model(
    vehicles: &[CentralVehicle],
    network: &ZoneNetwork,
    params: &SchedulerParams,
) -> Result<JointModel, SchedulerError> {
    let mut offset = Vec::with_capacity(vehicles.len());
    let mut nodes = 1;
    for v in vehicles {
        offset.push(nodes);
        nodes += v.path.len() + 1;
    }

    let mut base = Vec::new();
    let mut earliest = Vec::with_capacity(vehicles.len());
    let mut latest = Vec::with_capacity(vehicles.len());
    for (i, v) in vehicles.iter().enumerate() {
        let windows = zone_windows(&v.path, &v.speeds, &params.limits)?;
        let o = offset[i];
        base.push(Edge::new(ORIGIN, o, v.t0));
        base.push(Edge::new(o, ORIGIN, -v.t0));
        let (mut lo, mut hi) = (vec![v.t0], vec![v.t0]);
        for (k, w) in windows.iter().enumerate() {
            let upper = match (w.deadline, params.horizon) {
                (Some(d), _) => d,
                (None, Some(h)) => h,
                (None, None) => return Err(SchedulerError::HorizonRequired { zone: w.zone }),
            };
            base.push(Edge::new(o + k, o + k + 1, w.release));
            base.push(Edge::new(o + k + 1, o + k, -upper));
            lo.push(lo[k] + w.release);
            hi.push(hi[k] + upper);
        }
        earliest.push(lo);
        latest.push(hi);
    }

    let h = params.h;
    let mut disjunctions = Vec::new();
    let mut pairs = Vec::new();
    for b in 0..vehicles.len() {
        for a in 0..b {
            for run in network.conflict_runs(&vehicles[b].path, &vehicles[a].path) {
                let idx: Vec<(usize, usize)> = (0..run.zones.len())
                    .map(|k| (run.start_i + k, run.start_j + k))
                    .filter(|(kb, ka)| *kb > 0 && *ka > 0)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let b_after = idx
                    .iter()
                    .all(|&(kb, ka)| latest[a][ka] + h <= earliest[b][kb]);
                let b_before = idx
                    .iter()
                    .all(|&(kb, ka)| latest[b][kb] + h <= earliest[a][ka]);
                if b_after || b_before {
                    // Settled by the traversal windows alone.
                    continue;
                }
                let mut fixed = (run.relation == Relation::SamePath || run.start_i == 0)
                    .then_some(Order::After);
                if run.relation != Relation::Cross {
                    fixed = restrict_by_headway(
                        &vehicles[b].speeds,
                        &vehicles[a].speeds,
                        vehicles[a].id,
                        &run,
                        fixed,
                        params,
                    )?;
                }
                let after = idx
                    .iter()
                    .map(|&(kb, ka)| Edge::new(offset[a] + ka, offset[b] + kb, h))
                    .collect();
                let before = idx
                    .iter()
                    .map(|&(kb, ka)| Edge::new(offset[b] + kb, offset[a] + ka, h))
                    .collect();
                disjunctions.push(Disjunction {
                    sides: [after, before],
                    fixed,
                });
                pairs.push(PairRun {
                    later: b,
                    earlier: a,
                    zones: idx
                        .iter()
                        .map(|&(kb, _)| vehicles[b].path.zone_ids[kb])
                        .collect(),
                });
            }
        }
    }

    let exits: Vec<usize> = vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| offset[i] + v.path.len())
        .collect();
    Ok(JointModel {
        nodes,
        base,
        disjunctions,
        exits,
        offset,
        pairs,
    })
}

/// Solves every vehicle jointly, minimizing the sum of exit times.
/// `incumbent`, if feasible, seeds the bound.
pub fn solve_centralized(
    vehicles: &[CentralVehicle],
    network: &ZoneNetwork,
    params: &SchedulerParams,
    incumbent: Option<&[ScheduleTuple]>,
    node_budget: Option<u64>,
) -> Result<CentralOutcome, SchedulerError> {
    let start = Instant::now();
    let JointModel {
        nodes,
        base,
        disjunctions,
        exits,
        offset,
        pairs,
    } = joint_model(vehicles, network, params)?;
    let seed = incumbent
        .and_then(|s| incumbent_point(s, vehicles, &offset, nodes, &base, &disjunctions, &exits));

    let out = std::thread::scope(|scope| {
        std::thread::Builder::new()
            .stack_size(256 << 20)
            .spawn_scoped(scope, || {
                stn::branch_and_bound(&base, nodes, &disjunctions, &exits, seed, node_budget)
            })
            .expect("spawn search thread")
            .join()
            .expect("search thread panicked")
    });
    let out = match out {
        Some(o) => o,
        None if node_budget.is_some() => return Err(SchedulerError::NodeBudgetExceeded),
        None => return Err(SchedulerError::Infeasible),
    };

    let mut schedules: Vec<ScheduleTuple> = vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let o = offset[i];
            ScheduleTuple {
                vehicle: v.id,
                entries: v
                    .path
                    .zone_ids
                    .iter()
                    .enumerate()
                    .map(|(k, z)| ZoneTime {
                        zone: *z,
                        time: out.x[o + k],
                    })
                    .collect(),
                exit_time: out.x[o + v.path.len()],
                speeds: v.speeds.clone(),
                decisions: Vec::new(),
            }
        })
        .collect();
    for (p, order) in pairs.iter().zip(&out.orders) {
        schedules[p.later].decisions.push(RunDecision {
            other: vehicles[p.earlier].id,
            zones: p.zones.clone(),
            order: *order,
            binary: order.binary(),
        });
    }
    Ok(CentralOutcome {
        schedules,
        stats: SolveStats {
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            nodes: out.nodes,
            leaves: out.leaves,
            binaries: out.orders.iter().map(|o| o.binary()).collect(),
            optimal: out.complete,
        },
    })
}

/// Turns a known set of schedules into a starting bound, if it satisfies
/// the joint program.
fn incumbent_point(
    schedules: &[ScheduleTuple],
    vehicles: &[CentralVehicle],
    offset: &[usize],
    nodes: usize,
    base: &[Edge],
    disjunctions: &[Disjunction],
    exits: &[usize],
) -> Option<(f64, Vec<f64>, Vec<Order>)> {
    let mut x = vec![0.0; nodes];
    for (i, v) in vehicles.iter().enumerate() {
        let s = schedules.iter().find(|s| s.vehicle == v.id)?;
        if s.entries.len() != v.path.len() {
            return None;
        }
        for (k, e) in s.entries.iter().enumerate() {
            x[offset[i] + k] = e.time;
        }
        x[offset[i] + v.path.len()] = s.exit_time;
    }
    if base.iter().any(|e| e.slack(&x) < -SLACK_TOL) {
        return None;
    }
    let orders = disjunctions
        .iter()
        .map(|d| match d.fixed {
            Some(o) => (d.violation(o, &x) <= SLACK_TOL).then_some(o),
            None => d.satisfied_by(&x),
        })
        .collect::<Option<Vec<_>>>()?;
    let value = exits.iter().map(|&k| x[k]).sum();
    Some((value, x, orders))
}
