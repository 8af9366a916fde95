//! Oracles shared by the integration tests.
#![allow(dead_code)]

use corridor_core::network::{Relation, ZoneNetwork};
use corridor_core::scheduler::stn::Order;
use corridor_core::scheduler::{
    build_instance, solve, to_model, CommittedVehicle, DisjunctiveModel, SchedulerParams,
    VehicleRequest,
};
use corridor_core::sim::{SimConfig, SimOutcome, VehicleRecord};

/// Earliest exit for fixed orders, by Bellman-Ford on the longest-path
/// form `x_v >= x_u + w`. Node 0 is the origin at time zero.
pub fn earliest_exit(m: &DisjunctiveModel, orders: &[Order]) -> Option<f64> {
    let n = m.zones.len() + 2;
    let mut edges = vec![(0, 1, m.t0), (1, 0, -m.t0)];
    for (k, (lo, hi)) in m.windows.iter().enumerate() {
        edges.push((k + 1, k + 2, *lo));
        edges.push((k + 2, k + 1, -*hi));
    }
    for (r, o) in m.runs.iter().zip(orders) {
        for (node, t) in r.nodes.iter().zip(&r.other_times) {
            match o {
                Order::After => edges.push((0, *node, t + m.h)),
                Order::Before => edges.push((*node, 0, m.h - t)),
            }
        }
    }
    let mut x = vec![f64::NEG_INFINITY; n];
    x[0] = 0.0;
    for round in 0..=n {
        let mut changed = false;
        for &(u, v, w) in &edges {
            if x[u] > f64::NEG_INFINITY && x[u] + w > x[v] + 1e-12 {
                x[v] = x[u] + w;
                changed = true;
            }
        }
        if !changed {
            return (x[0] == 0.0).then_some(x[n - 1]);
        }
        if round == n {
            return None;
        }
    }
    None
}

pub fn enumerate(m: &DisjunctiveModel) -> Option<f64> {
    let free: Vec<usize> = (0..m.runs.len())
        .filter(|&i| m.runs[i].fixed.is_none())
        .collect();
    let mut best: Option<f64> = None;
    for mask in 0u32..1 << free.len() {
        let mut orders: Vec<Order> = m
            .runs
            .iter()
            .map(|r| r.fixed.unwrap_or(Order::After))
            .collect();
        for (bit, &i) in free.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                orders[i] = Order::Before;
            }
        }
        if let Some(e) = earliest_exit(m, &orders) {
            best = Some(best.map_or(e, |b| b.min(e)));
        }
    }
    best
}

pub fn free_count(m: &DisjunctiveModel) -> usize {
    m.runs.iter().filter(|r| r.fixed.is_none()).count()
}

/// Schedules a stream of arrivals one by one and returns the committed
/// vehicles plus the request for the next one.
pub fn traffic(
    n: &ZoneNetwork,
    params: &SchedulerParams,
    stream: &[(usize, f64, f64)],
) -> (Vec<CommittedVehicle>, VehicleRequest) {
    let paths = n.all_paths();
    let mut committed = Vec::new();
    let mut t = 0.0;
    let mut last_entry = std::collections::HashMap::new();
    let mut requests = stream.iter().enumerate().map(|(i, &(p, gap, v))| {
        let path = paths[p % paths.len()].clone();
        // Entry times are given, so arrivals on one approach are spaced
        // by h as they would be upstream.
        t += gap;
        if let Some(prev) = last_entry.get(&path.origin) {
            t = t.max(prev + params.h);
        }
        last_entry.insert(path.origin, t);
        VehicleRequest {
            id: i as u64 + 1,
            path,
            t0: t,
            entry_speed: v,
        }
    });
    let mut last = requests.next().unwrap();
    for next in requests {
        if let Ok(inst) = build_instance(&last, n, &committed, params) {
            if let Ok((s, _)) = solve(&to_model(&inst).unwrap()) {
                committed.push(CommittedVehicle {
                    id: last.id,
                    path: last.path.clone(),
                    schedule: s,
                });
            }
        }
        last = next;
    }
    (committed, last)
}

/// Conflict-zone entries closer than h, over every pair.
pub fn lateral_violations(out: &SimOutcome, network: &ZoneNetwork, h: f64) -> Vec<String> {
    let mut bad = Vec::new();
    for (i, a) in out.records.iter().enumerate() {
        for b in &out.records[..i] {
            for run in network.conflict_runs(&a.path, &b.path) {
                for z in &run.zones {
                    let gap =
                        (a.schedule.time_at(*z).unwrap() - b.schedule.time_at(*z).unwrap()).abs();
                    if gap < h - 1e-9 {
                        bad.push(format!("vehicles {} and {} at zone {z}: {gap}", a.id, b.id));
                    }
                }
            }
        }
    }
    bad
}

/// Rear-end gap on every shared or merging stretch, measured from the end
/// of the stretch's first zone, while both vehicles are on it. Returns the
/// samples that come closer than the required gap.
pub fn rear_end_violations(
    out: &SimOutcome,
    network: &ZoneNetwork,
    cfg: &SimConfig,
) -> Vec<String> {
    let mut bad = Vec::new();
    for (i, a) in out.records.iter().enumerate() {
        for b in &out.records[..i] {
            for run in network.conflict_runs(&a.path, &b.path) {
                if run.relation == Relation::Cross {
                    continue;
                }
                let (first, last) = (run.zones[0], run.zones[run.zones.len() - 1]);
                let enter = |r: &VehicleRecord| r.schedule.time_at(first).unwrap();
                let leave = |r: &VehicleRecord| {
                    let k = r.path.index_of(last).unwrap();
                    r.schedule.boundary_times()[k + 1]
                };
                let (lead, follow) = if enter(a) < enter(b) { (a, b) } else { (b, a) };
                let reference =
                    |r: &VehicleRecord| r.path.exit_offset(r.path.index_of(first).unwrap());
                let (from, to) = (enter(follow), leave(lead).min(leave(follow)));
                let n = ((to - from) / 0.01).ceil().max(0.0) as usize;
                for k in 0..=n {
                    let t = (from + k as f64 * 0.01).min(to);
                    let (pl, _, _) = lead.trajectory.state_at(t);
                    let (pf, vf, _) = follow.trajectory.state_at(t);
                    let gap = (pl - reference(lead)) - (pf - reference(follow));
                    let need = cfg.gamma + cfg.phi * vf;
                    if gap - need < -1e-6 {
                        bad.push(format!(
                            "{} behind {} at t = {t}: gap {gap}, need {need}",
                            follow.id, lead.id
                        ));
                    }
                }
            }
        }
    }
    bad
}
