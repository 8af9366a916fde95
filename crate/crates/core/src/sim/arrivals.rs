use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Uniform};
use serde::{Deserialize, Serialize};

use super::config::{ArrivalModel, SimConfig};
use super::SimError;
use crate::network::{PathSpec, ZoneNetwork};
use crate::scheduler::VehicleId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: VehicleId,
    pub t0: f64,
    pub path: PathSpec,
    pub entry_speed: f64,
}

/// Arrival list for `config.seed`, in queue order with ids counting from 1.
///
/// Vehicles sharing an entry road are spaced at least `h` apart. Ties in
/// entry time go to the shorter path.
pub fn generate_arrivals(
    config: &SimConfig,
    network: &ZoneNetwork,
) -> Result<Vec<Arrival>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.arrivals.entry_speed();
    let speed = Uniform::new_inclusive(lo, hi);
    let mut raw: Vec<(f64, PathSpec, f64)> = Vec::new();
    match &config.arrivals {
        ArrivalModel::Volume {
            veh_per_hour,
            paths,
            duration,
            ..
        } => {
            let gap =
                Exp::new(veh_per_hour / 3600.0).map_err(|e| SimError::Config(e.to_string()))?;
            for choice in paths {
                let path = network
                    .path_for(choice.origin, choice.movement)
                    .map_err(SimError::Network)?;
                let mut t = gap.sample(&mut rng);
                while t < *duration {
                    raw.push((t, path.clone(), speed.sample(&mut rng)));
                    t += gap.sample(&mut rng);
                }
            }
        }
        ArrivalModel::Poisson { rate, vehicles, .. } => {
            let gap = Exp::new(*rate).map_err(|e| SimError::Config(e.to_string()))?;
            let all = network.all_paths();
            if all.is_empty() {
                return Err(SimError::Config("network has no paths".into()));
            }
            let mut t = 0.0;
            for _ in 0..*vehicles {
                t += gap.sample(&mut rng);
                let path = all[rng.gen_range(0..all.len())].clone();
                raw.push((t, path, speed.sample(&mut rng)));
            }
        }
    }

    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut last = BTreeMap::new();
    for (t, path, _) in &mut raw {
        if let Some(prev) = last.get(&path.origin) {
            *t = t.max(prev + config.h);
        }
        last.insert(path.origin, *t);
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        raw[a]
            .0
            .total_cmp(&raw[b].0)
            .then(raw[a].1.total_length().total_cmp(&raw[b].1.total_length()))
            .then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            let (t0, path, entry_speed) = raw[i].clone();
            Arrival {
                id: k as VehicleId + 1,
                t0,
                path,
                entry_speed,
            }
        })
        .collect())
}
