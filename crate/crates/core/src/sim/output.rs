use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{SimError, SimOutcome};
use crate::network::{Endpoint, Movement};
use crate::scheduler::{ScheduleTuple, VehicleId};

/// Formats `x` with 9 significant digits, without exponent notation.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Serialize)]
struct ScheduleEntry<'a> {
    id: VehicleId,
    queue_index: usize,
    origin: Endpoint,
    movement: Movement,
    t0: f64,
    entry_speed: f64,
    v_merge: f64,
    travel_time: f64,
    fuel_l: f64,
    schedule: &'a ScheduleTuple,
}

/// Writes `schedules.json`, `trajectory.csv` and `metrics.json` into `dir`.
/// Solver timings go to [`write_timing`] instead.
pub fn write_traces(dir: &Path, outcome: &SimOutcome, trace_step: f64) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    let entries: Vec<ScheduleEntry> = outcome
        .records
        .iter()
        .map(|r| ScheduleEntry {
            id: r.id,
            queue_index: r.queue_index,
            origin: r.path.origin,
            movement: r.path.movement,
            t0: r.t0,
            entry_speed: r.entry_speed,
            v_merge: r.v_merge,
            travel_time: r.travel_time,
            fuel_l: r.fuel_l,
            schedule: &r.schedule,
        })
        .collect();
    fs::write(dir.join("schedules.json"), to_json(&entries)?)?;
    fs::write(dir.join("metrics.json"), to_json(&outcome.metrics)?)?;

    let mut csv = std::io::BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?);
    writeln!(csv, "vehicle,t,zone,p,v,u")?;
    for r in &outcome.records {
        let traj = &r.trajectory;
        let (t0, t1) = (traj.t_start(), traj.t_end());
        let n = ((t1 - t0) / trace_step).floor() as usize;
        let times = (0..=n)
            .map(|k| t0 + k as f64 * trace_step)
            .chain((t1 > t0 + n as f64 * trace_step).then_some(t1));
        for t in times {
            let zone = traj.zones[traj.zone_index_at(t)].zone;
            let (p, v, u) = traj.state_at(t);
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.id,
                sig9(t),
                zone,
                sig9(p),
                sig9(v),
                sig9(u)
            )?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Writes one row per simulated (seed, policy) pair.
pub fn write_comparison(path: &Path, outcomes: &[SimOutcome]) -> Result<(), SimError> {
    let mut csv = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        csv,
        "policy,seed,vehicles,saturated,avg_travel_time,optimal,safety_violations"
    )?;
    for o in outcomes {
        let m = &o.metrics;
        let optimal = match o.central.as_ref() {
            Some(s) => s.optimal,
            None => o.records.iter().all(|r| r.solver.optimal),
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            o.policy.name(),
            o.seed,
            m.vehicles,
            m.saturated,
            sig9(m.avg_travel_time),
            optimal,
            m.safety_violations
        )?;
    }
    csv.flush()?;
    Ok(())
}

/// Appends solver wall times for each outcome to a CSV: one row per
/// vehicle, plus a row with vehicle `all` holding the mean and standard
/// deviation. Unlike the other outputs, these differ between reruns.
pub fn write_timing(path: &Path, outcomes: &[SimOutcome]) -> Result<(), SimError> {
    let mut csv = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(csv, "policy,seed,vehicle,solver_ms,solver_ms_std")?;
    for o in outcomes {
        for r in &o.records {
            writeln!(
                csv,
                "{},{},{},{},",
                o.policy.name(),
                o.seed,
                r.id,
                sig9(r.solver_ms)
            )?;
        }
        let m = &o.metrics;
        writeln!(
            csv,
            "{},{},all,{},{}",
            o.policy.name(),
            o.seed,
            sig9(m.solver_ms_mean),
            sig9(m.solver_ms_std)
        )?;
    }
    csv.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, SimError> {
    serde_json::to_string_pretty(value).map_err(|e| SimError::Io(e.into()))
}
