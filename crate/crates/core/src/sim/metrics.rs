use serde::{Deserialize, Serialize};

use super::fuel::{fuel_rate, FuelCoefficients};
use super::{shared_stretches, SimConfig, VehicleRecord};
use crate::network::ZoneNetwork;
use crate::scheduler::SolveStats;
use crate::trajectory::VehicleTrajectory;

/// Fleet-wide speed statistics sampled on a fixed grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedSeries {
    pub t: Vec<f64>,
    pub min: Vec<f64>,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub vehicles: usize,
    pub saturated: usize,
    pub avg_travel_time: f64,
    pub p50_travel_time: f64,
    pub p90_travel_time: f64,
    pub max_travel_time: f64,
    /// Mean over vehicles of fuel used divided by travel time, ml/s.
    pub avg_fuel_rate_ml_s: f64,
    /// Mean fuel used per vehicle, liters.
    pub avg_fuel_l: f64,
    /// Wall-clock figures; left out of the serialized report so reruns
    /// produce identical files. See [`super::output::write_timing`].
    #[serde(skip)]
    pub solver_ms_mean: f64,
    #[serde(skip)]
    pub solver_ms_std: f64,
    pub lateral_violations: usize,
    pub rear_end_violations: usize,
    pub safety_violations: usize,
    pub min_speed: f64,
    pub max_speed: f64,
    pub min_control: f64,
    pub max_control: f64,
    pub follow_arcs: usize,
    /// Largest distance between a trajectory's final position and its path length, m.
    pub exit_position_error: f64,
    /// Whether the centralized search finished (absent for other policies).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub centralized_optimal: Option<bool>,
    pub speed_series: SpeedSeries,
}

/// Fuel burned along a trajectory, ml, by the trapezoid rule.
pub fn fuel_ml(traj: &VehicleTrajectory, k: &FuelCoefficients, dt: f64) -> f64 {
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let n = ((t1 - t0) / dt).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let f = |t: f64| {
        let (_, v, u) = traj.state_at(t);
        fuel_rate(v, u, k)
    };
    let inner: f64 = (1..n).map(|i| f(t0 + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(t0) + f(t1)))
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q * (sorted.len() - 1) as f64;
    let (i, frac) = (x.floor() as usize, x.fract());
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + frac * (sorted[j] - sorted[i])
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Lateral and rear-end violations between two vehicles.
pub fn pair_violations(
    config: &SimConfig,
    network: &ZoneNetwork,
    a: &VehicleRecord,
    b: &VehicleRecord,
) -> (usize, usize) {
    let mut lateral = 0;
    for e in &a.schedule.entries {
        if let Some(tb) = b.schedule.time_at(e.zone) {
            if (e.time - tb).abs() < config.h - 1e-9 {
                lateral += 1;
            }
        }
    }
    let mut rear = 0;
    for s in shared_stretches(network, (&a.path, &a.schedule), (&b.path, &b.schedule)) {
        let (lead, follow, l_off, f_off) = if s.first_leads {
            (a, b, s.offsets.0, s.offsets.1)
        } else {
            (b, a, s.offsets.1, s.offsets.0)
        };
        let bad = crate::trajectory::check_rear_end(
            &follow.trajectory,
            f_off,
            &lead.trajectory,
            l_off,
            s.window,
            config.gamma,
            config.phi,
            config.rear_end_step,
        );
        rear += bad.len();
    }
    (lateral, rear)
}

pub fn evaluate(
    config: &SimConfig,
    network: &ZoneNetwork,
    records: &[VehicleRecord],
    saturated: usize,
    central: Option<&SolveStats>,
) -> MetricsReport {
    let mut travel: Vec<f64> = records.iter().map(|r| r.travel_time).collect();
    travel.sort_by(f64::total_cmp);
    let (avg_travel_time, _) = mean_std(&travel);
    let solver: Vec<f64> = records.iter().map(|r| r.solver_ms).collect();
    let (solver_ms_mean, solver_ms_std) = mean_std(&solver);
    let rates: Vec<f64> = records
        .iter()
        .map(|r| r.fuel_l * 1000.0 / r.travel_time)
        .collect();
    let fuel: Vec<f64> = records.iter().map(|r| r.fuel_l).collect();

    let (mut lateral_violations, mut rear_end_violations) = (0, 0);
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            if b.t0 >= a.schedule.exit_time + config.h {
                continue;
            }
            let (l, r) = pair_violations(config, network, a, b);
            lateral_violations += l;
            rear_end_violations += r;
        }
    }

    let (mut min_speed, mut max_speed) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_control, mut max_control) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut exit_position_error: f64 = 0.0;
    for r in records {
        for z in &r.trajectory.zones {
            let (lo, hi) = z.speed_range();
            min_speed = min_speed.min(lo);
            max_speed = max_speed.max(hi);
            let (lo, hi) = z.control_range();
            min_control = min_control.min(lo);
            max_control = max_control.max(hi);
        }
        let (p, _, _) = r.trajectory.state_at(r.trajectory.t_end());
        exit_position_error = exit_position_error.max((p - r.path.total_length()).abs());
    }

    MetricsReport {
        vehicles: records.len(),
        saturated,
        avg_travel_time,
        p50_travel_time: percentile(&travel, 0.5),
        p90_travel_time: percentile(&travel, 0.9),
        max_travel_time: travel.last().copied().unwrap_or(f64::NAN),
        avg_fuel_rate_ml_s: mean_std(&rates).0,
        avg_fuel_l: mean_std(&fuel).0,
        solver_ms_mean,
        solver_ms_std,
        lateral_violations,
        rear_end_violations,
        safety_violations: lateral_violations + rear_end_violations,
        min_speed,
        max_speed,
        min_control,
        max_control,
        follow_arcs: records.iter().map(|r| r.follow_arcs).sum(),
        exit_position_error,
        centralized_optimal: central.map(|s| s.optimal),
        speed_series: speed_series(records, config.trace_step),
    }
}

fn speed_series(records: &[VehicleRecord], step: f64) -> SpeedSeries {
    let mut out = SpeedSeries::default();
    let Some(start) = records.iter().map(|r| r.t0).min_by(f64::total_cmp) else {
        return out;
    };
    let end = records
        .iter()
        .map(|r| r.schedule.exit_time)
        .fold(f64::NEG_INFINITY, f64::max);
    let n = ((end - start) / step).floor() as usize;
    for k in 0..=n {
        let t = start + k as f64 * step;
        let speeds: Vec<f64> = records
            .iter()
            .filter(|r| r.t0 <= t && t <= r.schedule.exit_time)
            .map(|r| r.trajectory.state_at(t).1)
            .collect();
        if speeds.is_empty() {
            continue;
        }
        out.t.push(t);
        out.min
            .push(speeds.iter().copied().fold(f64::INFINITY, f64::min));
        out.max
            .push(speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.mean
            .push(speeds.iter().sum::<f64>() / speeds.len() as f64);
    }
    out
}
