use serde::{Deserialize, Serialize};

/// Polynomial fuel-rate model in ml/s: a cruise polynomial in speed plus an
/// acceleration term that only counts positive control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelCoefficients {
    /// Cruise polynomial `c0 + c1 v + c2 v² + c3 v³`.
    pub c: [f64; 4],
    /// Acceleration polynomial `d0 + d1 v + d2 v²`, scaled by `max(u, 0)`.
    pub d: [f64; 3],
}

impl FuelCoefficients {
    pub const ZERO: Self = Self {
        c: [0.0; 4],
        d: [0.0; 3],
    };
}

pub fn fuel_rate(v: f64, u: f64, k: &FuelCoefficients) -> f64 {
    let cruise = k.c[0] + v * (k.c[1] + v * (k.c[2] + v * k.c[3]));
    let accel = k.d[0] + v * (k.d[1] + v * k.d[2]);
    cruise + u.max(0.0) * accel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_constant_models() {
        assert_eq!(fuel_rate(12.0, 0.7, &FuelCoefficients::ZERO), 0.0);
        let one = FuelCoefficients {
            c: [1.0, 0.0, 0.0, 0.0],
            d: [0.0; 3],
        };
        assert_eq!(fuel_rate(3.0, -0.5, &one), 1.0);
        assert_eq!(fuel_rate(20.0, 1.0, &one), 1.0);
    }

    #[test]
    fn braking_costs_only_the_cruise_term() {
        let k = FuelCoefficients {
            c: [0.2, 0.01, 0.001, 0.0001],
            d: [0.1, 0.1, 0.01],
        };
        assert_eq!(fuel_rate(10.0, -1.0, &k), fuel_rate(10.0, 0.0, &k));
        assert!(fuel_rate(10.0, 0.5, &k) > fuel_rate(10.0, 0.0, &k));
    }
}
