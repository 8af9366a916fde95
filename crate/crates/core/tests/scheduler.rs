use corridor_core::network::{build_network, Geometry, Relation, ZoneNetwork};
use corridor_core::scheduler::stn::Order;
use corridor_core::scheduler::{
    build_instance, solve, solve_fifo, to_model, DisjunctiveModel, ModelRun, SchedulerParams,
    VehicleRequest,
};
use proptest::prelude::*;

mod common;
use common::{enumerate, free_count, traffic};

fn net() -> ZoneNetwork {
    build_network(Geometry::default()).unwrap()
}

fn stream() -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
    prop::collection::vec((0usize..64, 0.0f64..3.0, 13.0f64..16.0), 2..14)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn solve_matches_enumeration_on_traffic(s in stream()) {
        let n = net();
        let params = SchedulerParams::default();
        let (committed, req) = traffic(&n, &params, &s);
        let inst = build_instance(&req, &n, &committed, &params).unwrap();
        let model = to_model(&inst).unwrap();
        prop_assume!(free_count(&model) <= 12);
        let oracle = enumerate(&model);
        match solve(&model) {
            Ok((tuple, stats)) => {
                let best = oracle.expect("solver found a schedule the oracle missed");
                prop_assert!((tuple.exit_time - best).abs() <= 1e-9, "{} vs {best}", tuple.exit_time);
                let x: Vec<f64> = std::iter::once(0.0).chain(tuple.boundary_times()).collect();
                prop_assert!(model.min_slack(&x, &stats.binaries) >= -1e-9);

                // Every conflict zone is separated by h.
                for c in &inst.conflicts {
                    for (k, z) in c.run.zones.iter().enumerate() {
                        let gap = (tuple.time_at(*z).unwrap() - c.other_times[k]).abs();
                        prop_assert!(gap >= params.h - 1e-9, "zone {z}: gap {gap}");
                    }
                    // A merge or shared stretch is crossed in one order.
                    if c.run.relation != Relation::Cross {
                        let signs: Vec<bool> = c.run.zones.iter().enumerate()
                            .map(|(k, z)| tuple.time_at(*z).unwrap() > c.other_times[k])
                            .collect();
                        prop_assert!(signs.windows(2).all(|w| w[0] == w[1]));
                    }
                }
                // Each zone takes between its release and deadline.
                let times = tuple.boundary_times();
                for (k, w) in inst.windows.iter().enumerate() {
                    let dt = times[k + 1] - times[k];
                    let hi = w.deadline.unwrap_or(f64::INFINITY);
                    prop_assert!(dt >= w.release - 1e-9 && dt <= hi + 1e-9);
                }

                if let Ok((fifo, _)) = solve_fifo(&model) {
                    prop_assert!(tuple.exit_time <= fifo.exit_time + 1e-9);
                }
            }
            Err(_) => prop_assert!(oracle.is_none(), "solver failed, oracle found {oracle:?}"),
        }
    }

    #[test]
    fn solve_matches_enumeration_on_synthetic_models(m in synthetic()) {
        let oracle = enumerate(&m);
        match solve(&m) {
            Ok((tuple, _)) => {
                let best = oracle.expect("oracle infeasible");
                prop_assert!((tuple.exit_time - best).abs() <= 1e-9, "{} vs {best}", tuple.exit_time);
            }
            Err(_) => prop_assert!(oracle.is_none()),
        }
    }
}

/// Chains of up to seven zones with up to twelve free runs.
fn synthetic() -> impl Strategy<Value = DisjunctiveModel> {
    (2usize..=7, 0.0f64..5.0).prop_flat_map(|(zones, t0)| {
        let windows = prop::collection::vec((0.5f64..15.0, 0.0f64..20.0), zones);
        let runs = prop::collection::vec(
            (
                1usize..zones,
                1usize..=3,
                0.0f64..1.0,
                prop::collection::vec(0.5f64..5.0, 3),
                any::<bool>(),
            ),
            0..=12,
        );
        (Just(zones), Just(t0), windows, runs).prop_map(|(zones, t0, w, raw)| {
            let windows: Vec<(f64, f64)> = w.iter().map(|(lo, span)| (*lo, lo + span)).collect();
            let reach = t0 + windows.iter().map(|w| w.1).sum::<f64>();
            let runs: Vec<ModelRun> = raw
                .iter()
                .enumerate()
                .map(|(r, (first, len, frac, gaps, fixed))| {
                    let len = (*len).min(zones - first);
                    let nodes: Vec<usize> = (first + 1..first + 1 + len).collect();
                    let mut t = t0 + frac * (reach - t0);
                    let other_times = gaps[..len]
                        .iter()
                        .map(|g| {
                            let now = t;
                            t += g;
                            now
                        })
                        .collect();
                    ModelRun {
                        other: r as u64 + 1,
                        zones: nodes.iter().map(|&k| k as u32).collect(),
                        nodes,
                        other_times,
                        fixed: fixed.then_some(Order::After),
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
        })
    })
}

#[test]
fn empty_road_gives_release_times() {
    let n = net();
    let params = SchedulerParams::default();
    let path = n.all_paths()[0].clone();
    let req = VehicleRequest {
        id: 1,
        path,
        t0: 3.0,
        entry_speed: 15.0,
    };
    let inst = build_instance(&req, &n, &[], &params).unwrap();
    let (s, stats) = solve(&to_model(&inst).unwrap()).unwrap();
    let sum: f64 = inst.windows.iter().map(|w| w.release).sum();
    assert!((s.exit_time - 3.0 - sum).abs() < 1e-9);
    assert!(stats.optimal);
}
