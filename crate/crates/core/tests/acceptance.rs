//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use corridor_core::kinematics::{
    deadline, integrate_profile, release_time, AccelProfile, BoundaryState, Limits,
};
use corridor_core::scheduler::stn::Order;
use corridor_core::scheduler::{
    build_instance, solve, to_model, DisjunctiveModel, ModelRun, SchedulerParams,
};
use corridor_core::sim::config::default_paths;
use corridor_core::sim::{
    compare_policies, fuel_rate, simulate, ArrivalModel, FuelCoefficients, Policy, SimConfig,
    SimOutcome,
};
use corridor_core::trajectory::{
    solve_unconstrained, solve_zone, ArcKind, ZoneBounds, ZoneBvp, ZoneTrajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{enumerate, free_count, lateral_violations, rear_end_violations, traffic};

const LIM: Limits = Limits {
    u_min: -1.0,
    u_max: 1.0,
    v_min: 5.0,
    v_max: 25.0,
};

/// Illustrative coefficients, not calibrated to any vehicle.
const FUEL: FuelCoefficients = FuelCoefficients {
    c: [0.1569, 2.450e-2, -7.415e-4, 5.975e-5],
    d: [0.07224, 9.681e-2, 1.075e-3],
};

type Verdict = Result<String, String>;

fn reachable(vs: f64, ve: f64, len: f64) -> bool {
    (ve * ve - vs * vs).abs() <= 2.0 * len
}

fn random_pair(rng: &mut ChaCha8Rng) -> (BoundaryState, BoundaryState) {
    loop {
        let (vs, ve, len) = (
            rng.gen_range(LIM.v_min..=LIM.v_max),
            rng.gen_range(LIM.v_min..=LIM.v_max),
            rng.gen_range(10.0..400.0),
        );
        if reachable(vs, ve, len) {
            return (BoundaryState::new(0.0, vs), BoundaryState::new(len, ve));
        }
    }
}

fn end_error(profile: &AccelProfile, end: &BoundaryState) -> f64 {
    let last = *integrate_profile(profile, 0.1).last().unwrap();
    (last.p - end.position)
        .abs()
        .max((last.v - end.speed).abs())
}

fn kinematics() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let (s, e) = random_pair(&mut rng);
        let r = release_time(s, e, &LIM).map_err(|err| format!("pair {i}: {err}"))?;
        let d = deadline(s, e, &LIM).map_err(|err| format!("pair {i}: {err}"))?;
        let d = d.profile().ok_or(format!("pair {i}: no finite deadline"))?;
        for p in [&r.profile, d] {
            let (lo, hi) = p.speed_range();
            if lo < LIM.v_min - 1e-9 || hi > LIM.v_max + 1e-9 {
                return Err(format!("pair {i}: speed leaves [{lo}, {hi}]"));
            }
            worst = worst.max(end_error(p, &e));
        }
    }
    if worst > 1e-9 {
        return Err(format!("end state off by {worst:e}"));
    }
    let (s, e) = (
        BoundaryState::new(0.0, 15.0),
        BoundaryState::new(300.0, 15.0),
    );
    let r = release_time(s, e, &LIM).unwrap().time;
    let r20 = release_time(s, e, &Limits { v_max: 20.0, ..LIM })
        .unwrap()
        .time;
    let d = deadline(s, e, &LIM).unwrap().time().unwrap();
    let want = [(r, 2.0 * (525f64.sqrt() - 15.0)), (r20, 16.25), (d, 40.0)];
    for (got, want) in want {
        if (got - want).abs() > 1e-9 {
            return Err(format!("worked value {got} != {want}"));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    if secs >= 5.0 {
        return Err(format!("took {secs:.2} s"));
    }
    Ok(format!(
        "10000 pairs, worst end error {worst:.1e}; R = {r:.7}, R(v_max 20) = {r20}, D = {d}; {secs:.2} s"
    ))
}

fn synthetic_model(rng: &mut ChaCha8Rng) -> DisjunctiveModel {
    let zones = rng.gen_range(2..=7);
    let t0 = rng.gen_range(0.0..5.0);
    let windows: Vec<(f64, f64)> = (0..zones)
        .map(|_| {
            let lo = rng.gen_range(0.5..15.0);
            (lo, lo + rng.gen_range(0.0..20.0))
        })
        .collect();
    let reach = t0 + windows.iter().map(|w| w.1).sum::<f64>();
    let runs: Vec<ModelRun> = (0..rng.gen_range(0..=14))
        .map(|r| {
            let first = rng.gen_range(1..zones);
            let len = rng.gen_range(1..=(zones - first).min(3));
            let nodes: Vec<usize> = (first + 1..first + 1 + len).collect();
            let mut t = rng.gen_range(t0..reach);
            let other_times = nodes
                .iter()
                .map(|_| {
                    let now = t;
                    t += rng.gen_range(0.5..5.0);
                    now
                })
                .collect();
            ModelRun {
                other: r as u64 + 1,
                zones: nodes.iter().map(|&k| k as u32).collect(),
                nodes,
                other_times,
                fixed: rng.gen_bool(0.2).then_some(Order::After),
            }
        })
        .collect();
    let latest = runs
        .iter()
        .flat_map(|r| r.other_times.iter().copied())
        .fold(reach, f64::max);
    DisjunctiveModel {
        vehicle: 0,
        zones: (0..zones as u32).collect(),
        t0,
        speeds: vec![15.0; zones + 1],
        windows,
        runs,
        h: 1.5,
        big_m: latest + 1.5,
    }
}

fn scheduler() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let network = corridor_core::network::build_network(Default::default()).unwrap();
    let params = SchedulerParams::default();
    let mut models = Vec::new();
    while models.len() < 500 {
        let stream: Vec<(usize, f64, f64)> = (0..rng.gen_range(2..16))
            .map(|_| {
                (
                    rng.gen_range(0..64),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(13.0..16.0),
                )
            })
            .collect();
        let (committed, req) = traffic(&network, &params, &stream);
        let m = to_model(&build_instance(&req, &network, &committed, &params).unwrap()).unwrap();
        if free_count(&m) <= 12 {
            models.push(m);
        }
    }
    while models.len() < 1000 {
        let m = synthetic_model(&mut rng);
        if free_count(&m) <= 12 {
            models.push(m);
        }
    }
    let (mut feasible, mut max_free, mut worst_slack) = (0, 0, f64::INFINITY);
    for (i, m) in models.iter().enumerate() {
        max_free = max_free.max(free_count(m));
        match (solve(m), enumerate(m)) {
            (Ok((tuple, stats)), Some(best)) => {
                if (tuple.exit_time - best).abs() > 1e-9 {
                    return Err(format!(
                        "instance {i}: {} vs enumeration {best}",
                        tuple.exit_time
                    ));
                }
                let x: Vec<f64> = std::iter::once(0.0).chain(tuple.boundary_times()).collect();
                worst_slack = worst_slack.min(m.min_slack(&x, &stats.binaries));
                feasible += 1;
            }
            (Err(_), None) => {}
            (got, want) => {
                return Err(format!(
                    "instance {i}: solver {:?}, enumeration {want:?}",
                    got.map(|g| g.0.exit_time)
                ))
            }
        }
    }
    if worst_slack < -1e-9 {
        return Err(format!("slack violation {worst_slack:e}"));
    }
    let secs = clock.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.2} s"));
    }
    Ok(format!(
        "1000 instances ({feasible} feasible, up to {max_free} free binaries), min slack {worst_slack:.2e}; {secs:.2} s"
    ))
}

fn volume_config(vph: f64, seed: u64) -> SimConfig {
    let mut c = SimConfig::with_arrivals(
        ArrivalModel::Volume {
            veh_per_hour: vph,
            paths: default_paths(),
            duration: 28.0,
            entry_speed: (13.0, 16.0),
        },
        FUEL,
    );
    c.seed = seed;
    c
}

fn table(runs: &[(f64, Vec<SimOutcome>)]) -> Verdict {
    let targets = [40.81, 41.86, 43.26, 46.59, 48.53];
    let mut line = Vec::new();
    let mut ok = true;
    for ((vph, outs), want) in runs.iter().zip(targets) {
        let avg = outs.iter().map(|o| o.metrics.avg_travel_time).sum::<f64>() / outs.len() as f64;
        let count = outs.iter().map(|o| o.metrics.vehicles as f64).sum::<f64>() / outs.len() as f64;
        let dev = (avg - want) / want;
        ok &= dev.abs() <= 0.15;
        line.push(format!(
            "{vph}: {avg:.2} s vs {want} ({:+.1}%, {count:.1} veh)",
            100.0 * dev
        ));
    }
    let text = line.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn solve_cost(outs: &[SimOutcome]) -> Verdict {
    let times: Vec<f64> = outs
        .iter()
        .flat_map(|o| o.records.iter().map(|r| r.solver_ms))
        .collect();
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let text = format!(
        "mean {mean:.4} ms, std {std:.4} ms over {} vehicles at 1200 veh/h",
        times.len()
    );
    if mean <= 50.0 {
        Ok(text)
    } else {
        Err(text)
    }
}

/// Compared runs per vehicle count, and the largest gap between the
/// decentralized and centralized averages.
fn dominance(outcomes: &[(usize, Vec<SimOutcome>)]) -> Verdict {
    let (mut proven, mut fifo_checked, mut worst_gap) = (0, 0, 0.0f64);
    for (n, outs) in outcomes {
        for seed_outs in outs.chunks(3) {
            let pick = |p: Policy| seed_outs.iter().find(|o| o.policy == p).unwrap();
            let (dec, cen, fifo) = (
                pick(Policy::Decentralized),
                pick(Policy::Centralized),
                pick(Policy::Fifo),
            );
            let (d, c, f) = (
                dec.metrics.avg_travel_time,
                cen.metrics.avg_travel_time,
                fifo.metrics.avg_travel_time,
            );
            if !(dec.saturated.is_empty() && cen.saturated.is_empty()) {
                return Err(format!("{n} vehicles, seed {}: dropped vehicles", dec.seed));
            }
            worst_gap = worst_gap.max((d - c) / c);
            if (d - c) / c > 0.10 {
                return Err(format!(
                    "{n} vehicles, seed {}: dec {d} vs cen {c}",
                    dec.seed
                ));
            }
            if cen.central.as_ref().is_some_and(|s| s.optimal) {
                proven += 1;
                if c > d + 1e-6 {
                    return Err(format!(
                        "{n} vehicles, seed {}: cen {c} > dec {d}",
                        dec.seed
                    ));
                }
                // An average over fewer vehicles is not comparable.
                if fifo.saturated.is_empty() {
                    fifo_checked += 1;
                    if d > f + 1e-6 {
                        return Err(format!(
                            "{n} vehicles, seed {}: dec {d} > fifo {f}",
                            dec.seed
                        ));
                    }
                }
            }
        }
    }
    let total: usize = outcomes.iter().map(|(_, o)| o.len() / 3).sum();
    Ok(format!(
        "{total} arrival lists, {proven} proven optimal ({fifo_checked} without FIFO drops); dec at most {:.2}% above cen",
        100.0 * worst_gap
    ))
}

fn simpson(f: impl Fn(f64) -> f64, t: f64, n: usize) -> f64 {
    let h = t / n as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

/// Second derivative of `ε sin(kπs/T) sin(πs/T)`, a bump that keeps
/// position and speed at both ends.
fn bump_accel(eps: f64, k: f64, t: f64, s: f64) -> f64 {
    let (a, b) = (k * PI / t, PI / t);
    let (f, g) = ((a * s).sin(), (b * s).sin());
    eps * (-(a * a + b * b) * f * g + 2.0 * a * b * (a * s).cos() * (b * s).cos())
}

fn check_trajectory(traj: &ZoneTrajectory, b: &ZoneBvp) -> Result<(), String> {
    let first = &traj.arcs[0];
    let last = &traj.arcs[traj.arcs.len() - 1];
    let (p0, v0, _) = first.state_at(first.t0);
    let (p1, v1, _) = last.state_at(last.t1);
    let errs = [
        first.t0 - b.t_start,
        last.t1 - b.t_end,
        p0 - b.start.position,
        v0 - b.start.speed,
        p1 - b.end.position,
        v1 - b.end.speed,
    ];
    if errs.iter().any(|e| e.abs() > 1e-7) {
        return Err(format!("boundary errors {errs:?}"));
    }
    for w in traj.arcs.windows(2) {
        let (pa, va, _) = w[0].state_at(w[0].t1);
        let (pb, vb, _) = w[1].state_at(w[1].t0);
        if (pa - pb).abs() > 1e-7 || (va - vb).abs() > 1e-7 || (w[0].t1 - w[1].t0).abs() > 1e-7 {
            return Err(format!("jump at t = {}", w[0].t1));
        }
    }
    for k in 0..=200 {
        let t = b.t_start + (b.t_end - b.t_start) * k as f64 / 200.0;
        let (_, v, u) = traj.state_at(t);
        if v < LIM.v_min - 1e-7
            || v > LIM.v_max + 1e-7
            || u < LIM.u_min - 1e-7
            || u > LIM.u_max + 1e-7
        {
            return Err(format!("(v, u) = ({v}, {u}) at t = {t}"));
        }
    }
    Ok(())
}

fn trajectories() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cubic = 0;
    let mut perturbed = 0;
    for i in 0..10_000 {
        let (start, end) = random_pair(&mut rng);
        let t0 = rng.gen_range(0.0..100.0);
        let mut b = ZoneBvp {
            zone: 1,
            t_start: t0,
            t_end: t0 + 1.0,
            start,
            end,
            limits: LIM,
        };
        let bounds = ZoneBounds::of(&b).map_err(|e| format!("case {i}: {e}"))?;
        let d = bounds.deadline.ok_or(format!("case {i}: no deadline"))?;
        b.t_end = t0 + rng.gen_range(bounds.release..=d);
        let traj = solve_zone(&b, bounds).map_err(|e| format!("case {i}: {e}"))?;
        check_trajectory(&traj, &b).map_err(|e| format!("case {i}: {e}"))?;
        if let [arc] = &traj.arcs[..] {
            if !matches!(arc.kind, ArcKind::Cubic { .. }) {
                continue;
            }
            cubic += 1;
            if perturbed >= 300 {
                continue;
            }
            perturbed += 1;
            let ArcKind::Cubic { a, b: b0, .. } = solve_unconstrained(&b).unwrap().kind else {
                unreachable!()
            };
            let t = b.window();
            let base = simpson(|s| 0.5 * (a * s + b0).powi(2), t, 2000);
            for k in 1..=4 {
                for eps in [1e-3, -1e-3, 0.05, -0.05] {
                    let e = simpson(
                        |s| 0.5 * (a * s + b0 + bump_accel(eps, k as f64, t, s)).powi(2),
                        t,
                        2000,
                    );
                    if e < base - 1e-10 {
                        return Err(format!(
                            "case {i}: bump k = {k}, eps = {eps} lowers the energy"
                        ));
                    }
                }
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("took {secs:.2} s"));
    }
    Ok(format!(
        "10000 BVPs ({cubic} plain cubics, {perturbed} perturbed for k = 1..4); {secs:.2} s"
    ))
}

fn safety(runs: &[(&SimConfig, &SimOutcome)]) -> Verdict {
    let network = corridor_core::network::build_network(Default::default()).unwrap();
    let (mut lateral, mut rear, mut min_dec) = (0, 0, f64::INFINITY);
    for (cfg, out) in runs {
        lateral += out.metrics.lateral_violations + lateral_violations(out, &network, cfg.h).len();
        rear += out.metrics.rear_end_violations + rear_end_violations(out, &network, cfg).len();
        if out.policy == Policy::Decentralized {
            for r in &out.records {
                let traj = &r.trajectory;
                let steps = ((traj.t_end() - traj.t_start()) / 0.01) as usize;
                for k in 0..=steps {
                    let (_, v, _) = traj.state_at(traj.t_start() + k as f64 * 0.01);
                    min_dec = min_dec.min(v);
                }
                min_dec = min_dec.min(out.metrics.min_speed);
            }
        }
    }
    let text = format!(
        "{} runs: {lateral} lateral, {rear} rear-end violations; decentralized min speed {min_dec:.4} m/s",
        runs.len()
    );
    if lateral == 0 && rear == 0 && min_dec >= LIM.v_min - 1e-7 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn fuel() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100_000 {
        let v = rng.gen_range(0.0..30.0);
        let u = rng.gen_range(-3.0..3.0);
        let f = fuel_rate(v, u, &FUEL);
        if f < 0.0 {
            return Err(format!("negative rate at ({v}, {u})"));
        }
        let cruise = FUEL.c[0] + FUEL.c[1] * v + FUEL.c[2] * v * v + FUEL.c[3] * v.powi(3);
        if u <= 0.0 && (f - cruise).abs() > 1e-12 {
            return Err(format!("braking at ({v}, {u}) costs {f}, cruise {cruise}"));
        }
        if u > 0.0 {
            let more = fuel_rate(v, u + rng.gen_range(0.0..1.0), &FUEL);
            if more < f {
                return Err(format!("rate falls as u grows at ({v}, {u})"));
            }
        }
    }
    Ok(
        "100000 samples: non-negative, non-decreasing in u > 0, cruise polynomial for u <= 0"
            .into(),
    )
}

fn main() -> ExitCode {
    let mut verdicts: Vec<(u8, &str, Verdict)> = Vec::new();
    let mut report = |n: u8, name: &'static str, v: Verdict| {
        match &v {
            Ok(s) => println!("criterion {n} ({name}): PASS: {s}"),
            Err(s) => println!("criterion {n} ({name}): FAIL: {s}"),
        }
        verdicts.push((n, name, v));
    };

    report(1, "kinematics oracle", kinematics());
    report(2, "scheduler exactness", scheduler());

    let clock = Instant::now();
    let volumes = [400.0, 600.0, 800.0, 1000.0, 1200.0];
    let mut configs = Vec::new();
    let mut table_runs = Vec::new();
    for vph in volumes {
        let mut outs = Vec::new();
        for seed in 1..=5 {
            let cfg = volume_config(vph, seed);
            outs.push(simulate(&cfg).expect("volume run"));
            configs.push(cfg);
        }
        table_runs.push((vph, outs));
    }
    let secs = clock.elapsed().as_secs_f64();
    let t = table(&table_runs).and_then(|s| {
        if secs < 600.0 {
            Ok(format!("{s}; {secs:.1} s"))
        } else {
            Err(format!("{s}; took {secs:.1} s"))
        }
    });
    report(3, "travel time by volume", t);
    report(4, "solver cost", solve_cost(&table_runs[4].1));

    let mut poisson = Vec::new();
    let mut poisson_cfgs = Vec::new();
    for n in [15, 30, 45, 60, 75] {
        let mut cfg = SimConfig::with_arrivals(
            ArrivalModel::Poisson {
                rate: 1.0,
                vehicles: n,
                entry_speed: (13.0, 16.0),
            },
            FUEL,
        );
        cfg.seed = 1;
        let outs = compare_policies(&cfg, &[1, 2, 3, 4, 5]).expect("policy comparison");
        poisson_cfgs.push(cfg);
        poisson.push((n, outs));
    }
    report(5, "policy dominance", dominance(&poisson));
    report(6, "trajectory invariants", trajectories());

    let mut all: Vec<(&SimConfig, &SimOutcome)> = Vec::new();
    for (i, (_, outs)) in table_runs.iter().enumerate() {
        for (j, o) in outs.iter().enumerate() {
            all.push((&configs[i * 5 + j], o));
        }
    }
    for (cfg, (_, outs)) in poisson_cfgs.iter().zip(&poisson) {
        for o in outs {
            all.push((cfg, o));
        }
    }
    report(7, "end-to-end safety", safety(&all));
    report(8, "fuel model", fuel());

    let failed: Vec<u8> = verdicts
        .iter()
        .filter(|v| v.2.is_err())
        .map(|v| v.0)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all 8 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
