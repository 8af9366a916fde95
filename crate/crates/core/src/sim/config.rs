use serde::{Deserialize, Serialize};

use super::fuel::FuelCoefficients;
use super::SimError;
use crate::kinematics::{headway_margin, Limits};
use crate::network::{build_network, Endpoint, Geometry, Movement, ZoneNetwork};
use crate::scheduler::SchedulerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Decentralized,
    Centralized,
    Fifo,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Decentralized, Policy::Centralized, Policy::Fifo];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Decentralized => "decentralized",
            Policy::Centralized => "centralized",
            Policy::Fifo => "fifo",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown policy {s:?} (expected decentralized, centralized or fifo)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathChoice {
    pub origin: Endpoint,
    pub movement: Movement,
}

/// The four conflicting paths of the two-intersection example layout.
pub fn default_paths() -> Vec<PathChoice> {
    let p = |origin, m: &str| PathChoice {
        origin,
        movement: m.parse().expect("static movement"),
    };
    vec![
        p(Endpoint::SB2, "through"),
        p(Endpoint::NB1, "right-through"),
        p(Endpoint::EB, "through-through"),
        p(Endpoint::WB, "through-through"),
    ]
}

fn default_entry_speed() -> (f64, f64) {
    (13.0, 16.0)
}

fn default_duration() -> f64 {
    28.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArrivalModel {
    /// Independent Poisson streams, one per listed path.
    Volume {
        /// Vehicles per hour on each path.
        veh_per_hour: f64,
        #[serde(default = "default_paths")]
        paths: Vec<PathChoice>,
        /// Arrivals are generated over `[0, duration)` seconds.
        #[serde(default = "default_duration")]
        duration: f64,
        #[serde(default = "default_entry_speed")]
        entry_speed: (f64, f64),
    },
    /// One Poisson stream spread uniformly over every path of the network.
    Poisson {
        /// Mean arrivals per second.
        rate: f64,
        vehicles: usize,
        #[serde(default = "default_entry_speed")]
        entry_speed: (f64, f64),
    },
}

impl ArrivalModel {
    pub fn entry_speed(&self) -> (f64, f64) {
        match self {
            ArrivalModel::Volume { entry_speed, .. }
            | ArrivalModel::Poisson { entry_speed, .. } => *entry_speed,
        }
    }
}

fn default_limits() -> Limits {
    SchedulerParams::default().limits
}
fn default_h() -> f64 {
    1.5
}
fn default_v_merge() -> f64 {
    15.0
}
fn default_gamma() -> f64 {
    5.0
}
fn default_phi() -> f64 {
    0.2
}
fn default_horizon() -> Option<f64> {
    Some(600.0)
}
fn default_fallback_step() -> f64 {
    0.5
}
fn default_rear_end_step() -> f64 {
    0.01
}
fn default_trace_step() -> f64 {
    0.1
}
fn default_node_budget() -> u64 {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub geometry: Geometry,
    /// Custom network; replaces the one built from `geometry`.
    #[serde(default)]
    pub network: Option<ZoneNetwork>,
    #[serde(default = "default_limits")]
    pub limits: Limits,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_v_merge")]
    pub v_merge: f64,
    /// Speed on leaving the control zone; defaults to `v_merge`.
    #[serde(default)]
    pub exit_speed: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    /// Stand-in for an unbounded deadline, s.
    #[serde(default = "default_horizon")]
    pub deadline_horizon: Option<f64>,
    pub arrivals: ArrivalModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default = "default_fallback_step")]
    pub fallback_step: f64,
    pub fuel: FuelCoefficients,
    #[serde(default = "default_rear_end_step")]
    pub rear_end_step: f64,
    #[serde(default = "default_trace_step")]
    pub trace_step: f64,
    /// Branch-and-bound node cap for the centralized policy.
    #[serde(default = "default_node_budget")]
    pub node_budget: u64,
}

fn default_policy() -> Policy {
    Policy::Decentralized
}

impl SimConfig {
    /// Reference parameters with the given arrivals and fuel model.
    pub fn with_arrivals(arrivals: ArrivalModel, fuel: FuelCoefficients) -> Self {
        Self {
            geometry: Geometry::default(),
            network: None,
            limits: default_limits(),
            h: default_h(),
            v_merge: default_v_merge(),
            exit_speed: None,
            gamma: default_gamma(),
            phi: default_phi(),
            deadline_horizon: default_horizon(),
            arrivals,
            seed: 0,
            policy: Policy::Decentralized,
            fallback_step: default_fallback_step(),
            fuel,
            rear_end_step: default_rear_end_step(),
            trace_step: default_trace_step(),
            node_budget: default_node_budget(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scheduler_params(&self) -> SchedulerParams {
        SchedulerParams {
            limits: self.limits,
            h: self.h,
            v_merge: self.v_merge,
            exit_speed: self.exit_speed,
            horizon: self.deadline_horizon,
            gamma: self.gamma,
            phi: self.phi,
        }
    }

    pub fn build_network(&self) -> Result<ZoneNetwork, SimError> {
        match &self.network {
            Some(n) => Ok(n.clone()),
            None => build_network(self.geometry).map_err(SimError::Network),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        self.limits
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        let l = &self.limits;
        if !(l.v_min < self.v_merge && self.v_merge < l.v_max) {
            return bad(format!(
                "v_merge {} must lie strictly inside ({}, {})",
                self.v_merge, l.v_min, l.v_max
            ));
        }
        for (name, v) in [
            ("h", self.h),
            ("gamma", self.gamma + 1.0),
            ("phi", self.phi + 1.0),
            ("fallback_step", self.fallback_step),
            ("rear_end_step", self.rear_end_step),
            ("trace_step", self.trace_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        let (lo, hi) = self.arrivals.entry_speed();
        if !(l.v_min < lo && lo <= hi && hi < l.v_max) {
            return bad(format!(
                "entry speed range [{lo}, {hi}] must lie inside ({}, {})",
                l.v_min, l.v_max
            ));
        }
        match &self.arrivals {
            ArrivalModel::Volume {
                veh_per_hour,
                paths,
                duration,
                ..
            } => {
                if !(*veh_per_hour > 0.0 && *duration > 0.0) || paths.is_empty() {
                    return bad("volume arrivals need a positive rate, a positive duration and at least one path".into());
                }
            }
            ArrivalModel::Poisson { rate, .. } => {
                if !(*rate > 0.0) {
                    return bad("poisson rate must be positive".into());
                }
            }
        }
        // Worst case: slowest possible leader, fastest possible follower.
        let speeds = [
            lo,
            hi,
            self.v_merge,
            self.exit_speed.unwrap_or(self.v_merge),
        ];
        let v_lead = speeds.iter().copied().fold(f64::INFINITY, f64::min);
        let v_follow = speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if headway_margin(self.h, v_lead, v_follow, self.gamma, self.phi, l.u_min) <= 0.0 {
            return Err(SimError::UnsafeHeadway { v_lead, v_follow });
        }
        Ok(())
    }
}
