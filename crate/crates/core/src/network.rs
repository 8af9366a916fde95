//! Zone partition of two adjacent intersections, vehicle paths through it,
//! and the shared-zone runs between pairs of paths.
//!
//! The default layout puts intersection A to the west of intersection B,
//! joined by one link zone per direction. Traffic keeps right, so every
//! movement visits the four quarters of a merging zone counter-clockwise
//! (SE, NE, NW, SW). Zone labels follow the reference figure the layout was
//! read from:
//!
//! | zones   | what                                             |
//! |---------|--------------------------------------------------|
//! | 1–4     | A quarters NW, NE, SW, SE                        |
//! | 5–8     | B quarters NW, NE, SW, SE                        |
//! | 10, 11, 12 | approaches into A: EB, SB1, NB1               |
//! | 18, 20, 22 | approaches into B: NB2, WB, SB2               |
//! | 13, 14  | link A→B (eastbound), link B→A (westbound)       |
//! | 9, 15, 16 | exits from A: west, north, south               |
//! | 17, 19, 21 | exits from B: south, east, north              |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ZoneId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("zone length must be positive and finite, got {name} = {value}")]
    NonPositiveLength { name: String, value: f64 },
    #[error("movement {movement} is not defined for origin {origin}")]
    UndefinedMovement {
        origin: Endpoint,
        movement: Movement,
    },
    #[error("invalid network: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZoneKind {
    Approach,
    MergingSubzone,
    Link,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: ZoneId,
    pub length: f64,
    pub kind: ZoneKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merging_group: Option<u32>,
}

/// The six control-zone entry/exit roads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    NB1,
    NB2,
    EB,
    WB,
    SB1,
    SB2,
}

impl Endpoint {
    pub const ALL: [Endpoint; 6] = [
        Endpoint::NB1,
        Endpoint::NB2,
        Endpoint::EB,
        Endpoint::WB,
        Endpoint::SB1,
        Endpoint::SB2,
    ];
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Endpoint {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Endpoint::ALL
            .into_iter()
            .find(|e| e.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown endpoint {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Turn {
    Left,
    Through,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    fn as_str(self) -> &'static str {
        match self {
            Turn::Left => "left",
            Turn::Through => "through",
            Turn::Right => "right",
        }
    }
}

/// Turn taken at the first intersection, plus the turn at the second one
/// when the first leads onto the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Movement {
    pub first: Turn,
    pub second: Option<Turn>,
}

impl Movement {
    pub fn single(first: Turn) -> Self {
        Self {
            first,
            second: None,
        }
    }

    pub fn double(first: Turn, second: Turn) -> Self {
        Self {
            first,
            second: Some(second),
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.second {
            None => f.write_str(self.first.as_str()),
            Some(s) => write!(f, "{}-{}", self.first.as_str(), s.as_str()),
        }
    }
}

impl FromStr for Movement {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let turn = |t: &str| {
            Turn::ALL
                .into_iter()
                .find(|x| x.as_str() == t)
                .ok_or_else(|| format!("unknown turn {t:?} in movement {s:?}"))
        };
        match s.split_once('-') {
            None => Ok(Movement::single(turn(s)?)),
            Some((a, b)) => Ok(Movement::double(turn(a)?, turn(b)?)),
        }
    }
}

impl TryFrom<String> for Movement {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Movement> for String {
    fn from(m: Movement) -> String {
        m.to_string()
    }
}

/// One row of the movement table: the zones crossed and the sub-zones in
/// which the vehicle is turning (traversed along a quarter circle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementEntry {
    pub origin: Endpoint,
    pub movement: Movement,
    pub zones: Vec<ZoneId>,
    #[serde(default)]
    pub turning: Vec<ZoneId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Length of every road entering or leaving the control zone, meters.
    pub approach_length: f64,
    /// Length of the road between the two merging zones, meters.
    pub link_length: f64,
    /// Side of each square merging zone, meters.
    pub merging_zone_side: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            approach_length: 300.0,
            link_length: 100.0,
            merging_zone_side: 30.0,
        }
    }
}

/// A vehicle's ordered zone tuple with the in-path length of each zone and
/// the distance from control-zone entry to each zone's entry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub origin: Endpoint,
    pub movement: Movement,
    pub zone_ids: Vec<ZoneId>,
    pub traversal: Vec<f64>,
    pub entry_offsets: Vec<f64>,
}

impl PathSpec {
    pub fn len(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zone_ids.is_empty()
    }

    pub fn index_of(&self, zone: ZoneId) -> Option<usize> {
        self.zone_ids.iter().position(|&z| z == zone)
    }

    pub fn offset_of(&self, zone: ZoneId) -> Option<f64> {
        self.index_of(zone).map(|k| self.entry_offsets[k])
    }

    pub fn total_length(&self) -> f64 {
        self.entry_offsets.last().copied().unwrap_or(0.0)
            + self.traversal.last().copied().unwrap_or(0.0)
    }

    /// Position at which the vehicle leaves zone index `k`.
    pub fn exit_offset(&self, k: usize) -> f64 {
        self.entry_offsets[k] + self.traversal[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    SamePath,
    Merge,
    Cross,
}

/// A maximal run of consecutive zones shared, in the same order, by two paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRun {
    pub zones: Vec<ZoneId>,
    pub relation: Relation,
    /// Index of the run's first zone in the first path.
    pub start_i: usize,
    /// Index of the run's first zone in the second path.
    pub start_j: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneNetwork {
    zones: BTreeMap<ZoneId, Zone>,
    successors: BTreeMap<ZoneId, BTreeSet<ZoneId>>,
    movements: Vec<MovementEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDoc {
    zones: Vec<Zone>,
    successors: BTreeMap<ZoneId, Vec<ZoneId>>,
    movements: Vec<MovementEntry>,
}

impl Serialize for ZoneNetwork {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        NetworkDoc {
            zones: self.zones.values().cloned().collect(),
            successors: self
                .successors
                .iter()
                .map(|(k, v)| (*k, v.iter().copied().collect()))
                .collect(),
            movements: self.movements.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ZoneNetwork {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = NetworkDoc::deserialize(d)?;
        let successors = doc
            .successors
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();
        ZoneNetwork::from_parts(doc.zones, successors, doc.movements)
            .map_err(serde::de::Error::custom)
    }
}

fn positive(name: &str, value: f64) -> Result<f64, NetworkError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(NetworkError::NonPositiveLength {
            name: name.to_string(),
            value,
        })
    }
}

impl ZoneNetwork {
    /// Builds and validates a network from its parts.
    pub fn from_parts(
        zones: Vec<Zone>,
        successors: BTreeMap<ZoneId, BTreeSet<ZoneId>>,
        movements: Vec<MovementEntry>,
    ) -> Result<Self, NetworkError> {
        let mut by_id = BTreeMap::new();
        for z in zones {
            positive(&format!("zone {} length", z.id), z.length)?;
            match (z.kind, z.merging_group) {
                (ZoneKind::MergingSubzone, None) => {
                    return Err(NetworkError::Invalid(format!(
                        "merging sub-zone {} has no merging group",
                        z.id
                    )))
                }
                (k, Some(_)) if k != ZoneKind::MergingSubzone => {
                    return Err(NetworkError::Invalid(format!(
                        "zone {} is not a merging sub-zone but has a group",
                        z.id
                    )))
                }
                _ => {}
            }
            if by_id.insert(z.id, z.clone()).is_some() {
                return Err(NetworkError::Invalid(format!("duplicate zone id {}", z.id)));
            }
        }
        for (from, tos) in &successors {
            for id in std::iter::once(from).chain(tos) {
                if !by_id.contains_key(id) {
                    return Err(NetworkError::Invalid(format!(
                        "adjacency refers to unknown zone {id}"
                    )));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for m in &movements {
            if !seen.insert((m.origin, m.movement)) {
                return Err(NetworkError::Invalid(format!(
                    "duplicate movement {} {}",
                    m.origin, m.movement
                )));
            }
            if m.zones.is_empty() {
                return Err(NetworkError::Invalid(format!(
                    "movement {} {} has no zones",
                    m.origin, m.movement
                )));
            }
            let mut uniq = BTreeSet::new();
            for z in &m.zones {
                if !by_id.contains_key(z) {
                    return Err(NetworkError::Invalid(format!(
                        "movement {} {} uses unknown zone {z}",
                        m.origin, m.movement
                    )));
                }
                if !uniq.insert(*z) {
                    return Err(NetworkError::Invalid(format!(
                        "movement {} {} visits zone {z} twice",
                        m.origin, m.movement
                    )));
                }
            }
            for w in m.zones.windows(2) {
                if !successors.get(&w[0]).is_some_and(|s| s.contains(&w[1])) {
                    return Err(NetworkError::Invalid(format!(
                        "movement {} {}: zone {} is not adjacent to {}",
                        m.origin, m.movement, w[1], w[0]
                    )));
                }
            }
            for t in &m.turning {
                if !m.zones.contains(t) || by_id[t].kind != ZoneKind::MergingSubzone {
                    return Err(NetworkError::Invalid(format!(
                        "movement {} {}: turning zone {t} is not a merging sub-zone on the path",
                        m.origin, m.movement
                    )));
                }
            }
        }
        Ok(Self {
            zones: by_id,
            successors,
            movements,
        })
    }

    pub fn zone(&self, id: ZoneId) -> Option<&Zone> {
        self.zones.get(&id)
    }

    pub fn zones(&self) -> impl Iterator<Item = &Zone> {
        self.zones.values()
    }

    pub fn zone_count(&self) -> usize {
        self.zones.len()
    }

    pub fn successors(&self, id: ZoneId) -> impl Iterator<Item = ZoneId> + '_ {
        self.successors.get(&id).into_iter().flatten().copied()
    }

    pub fn movements(&self) -> &[MovementEntry] {
        &self.movements
    }

    pub fn is_subzone(&self, id: ZoneId) -> bool {
        self.zones
            .get(&id)
            .is_some_and(|z| z.kind == ZoneKind::MergingSubzone)
    }

    /// In-path length of a zone: its length, or a quarter circle fitted to the
    /// sub-zone square when the vehicle turns inside it.
    pub fn traversal_length(&self, id: ZoneId, turning: bool) -> f64 {
        let len = self.zones[&id].length;
        if turning {
            std::f64::consts::FRAC_PI_4 * len
        } else {
            len
        }
    }

    pub fn path_for(&self, origin: Endpoint, movement: Movement) -> Result<PathSpec, NetworkError> {
        let entry = self
            .movements
            .iter()
            .find(|m| m.origin == origin && m.movement == movement)
            .ok_or(NetworkError::UndefinedMovement { origin, movement })?;
        Ok(self.path_from_entry(entry))
    }

    fn path_from_entry(&self, entry: &MovementEntry) -> PathSpec {
        let traversal: Vec<f64> = entry
            .zones
            .iter()
            .map(|z| self.traversal_length(*z, entry.turning.contains(z)))
            .collect();
        let mut entry_offsets = Vec::with_capacity(traversal.len());
        let mut acc = 0.0;
        for len in &traversal {
            entry_offsets.push(acc);
            acc += len;
        }
        PathSpec {
            origin: entry.origin,
            movement: entry.movement,
            zone_ids: entry.zones.clone(),
            traversal,
            entry_offsets,
        }
    }

    /// Every path of the movement table, in table order.
    pub fn all_paths(&self) -> Vec<PathSpec> {
        self.movements
            .iter()
            .map(|m| self.path_from_entry(m))
            .collect()
    }

    /// Shared runs of `path_i` and `path_j`, ordered along `path_i`.
    pub fn conflict_runs(&self, path_i: &PathSpec, path_j: &PathSpec) -> Vec<ConflictRun> {
        let pos_j: HashMap<ZoneId, usize> = path_j
            .zone_ids
            .iter()
            .enumerate()
            .map(|(k, z)| (*z, k))
            .collect();
        let same = path_i.zone_ids == path_j.zone_ids;
        let (zi, zj) = (&path_i.zone_ids, &path_j.zone_ids);
        let mut runs = Vec::new();
        let mut k = 0;
        while k < zi.len() {
            let Some(&j0) = pos_j.get(&zi[k]) else {
                k += 1;
                continue;
            };
            let mut len = 1;
            while k + len < zi.len() && j0 + len < zj.len() && zi[k + len] == zj[j0 + len] {
                len += 1;
            }
            let zones = zi[k..k + len].to_vec();
            let relation = if same {
                Relation::SamePath
            } else if len == 1 && self.is_subzone(zones[0]) {
                Relation::Cross
            } else {
                Relation::Merge
            };
            runs.push(ConflictRun {
                zones,
                relation,
                start_i: k,
                start_j: j0,
            });
            k += len;
        }
        runs
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Heading {
    North,
    South,
    East,
    West,
}

#[derive(Clone, Copy)]
enum Quarter {
    Nw,
    Ne,
    Sw,
    Se,
}

#[derive(Clone, Copy)]
enum Outlet {
    Exit(ZoneId),
    Link(ZoneId, usize, Heading),
}

struct Junction {
    /// NW, NE, SW, SE zone ids.
    quarters: [ZoneId; 4],
    north: Outlet,
    south: Outlet,
    east: Outlet,
    west: Outlet,
}

impl Junction {
    fn quarter(&self, q: Quarter) -> ZoneId {
        self.quarters[q as usize]
    }

    fn outlet(&self, heading: Heading) -> Outlet {
        match heading {
            Heading::North => self.north,
            Heading::South => self.south,
            Heading::East => self.east,
            Heading::West => self.west,
        }
    }
}

/// Quarters crossed, index of the quarter where the turn happens, and the
/// heading on leaving, for right-hand traffic.
fn crossing(heading: Heading, turn: Turn) -> (Vec<Quarter>, Option<usize>, Heading) {
    use Heading::*;
    use Quarter::*;
    match (heading, turn) {
        (North, Turn::Through) => (vec![Se, Ne], None, North),
        (North, Turn::Right) => (vec![Se], Some(0), East),
        (North, Turn::Left) => (vec![Se, Ne, Nw], Some(1), West),
        (South, Turn::Through) => (vec![Nw, Sw], None, South),
        (South, Turn::Right) => (vec![Nw], Some(0), West),
        (South, Turn::Left) => (vec![Nw, Sw, Se], Some(1), East),
        (East, Turn::Through) => (vec![Sw, Se], None, East),
        (East, Turn::Right) => (vec![Sw], Some(0), South),
        (East, Turn::Left) => (vec![Sw, Se, Ne], Some(1), North),
        (West, Turn::Through) => (vec![Ne, Nw], None, West),
        (West, Turn::Right) => (vec![Ne], Some(0), North),
        (West, Turn::Left) => (vec![Ne, Nw, Sw], Some(1), South),
    }
}

fn default_junctions() -> [Junction; 2] {
    [
        Junction {
            quarters: [1, 2, 3, 4],
            north: Outlet::Exit(15),
            south: Outlet::Exit(16),
            west: Outlet::Exit(9),
            east: Outlet::Link(13, 1, Heading::East),
        },
        Junction {
            quarters: [5, 6, 7, 8],
            north: Outlet::Exit(21),
            south: Outlet::Exit(17),
            east: Outlet::Exit(19),
            west: Outlet::Link(14, 0, Heading::West),
        },
    ]
}

/// Approach zone, junction index and heading of each origin.
fn origin_entry(origin: Endpoint) -> (ZoneId, usize, Heading) {
    match origin {
        Endpoint::EB => (10, 0, Heading::East),
        Endpoint::SB1 => (11, 0, Heading::South),
        Endpoint::NB1 => (12, 0, Heading::North),
        Endpoint::NB2 => (18, 1, Heading::North),
        Endpoint::WB => (20, 1, Heading::West),
        Endpoint::SB2 => (22, 1, Heading::South),
    }
}

fn default_movements(junctions: &[Junction; 2]) -> Vec<MovementEntry> {
    let mut out = Vec::new();
    for origin in Endpoint::ALL {
        let (approach, j0, h0) = origin_entry(origin);
        for first in Turn::ALL {
            let (quarters, turn_at, out_heading) = crossing(h0, first);
            let mut zones = vec![approach];
            let mut turning = Vec::new();
            for (k, q) in quarters.iter().enumerate() {
                let id = junctions[j0].quarter(*q);
                zones.push(id);
                if turn_at == Some(k) {
                    turning.push(id);
                }
            }
            match junctions[j0].outlet(out_heading) {
                Outlet::Exit(exit) => {
                    zones.push(exit);
                    out.push(MovementEntry {
                        origin,
                        movement: Movement::single(first),
                        zones,
                        turning,
                    });
                }
                Outlet::Link(link, j1, h1) => {
                    for second in Turn::ALL {
                        let (quarters, turn_at, out_heading) = crossing(h1, second);
                        let mut zones = zones.clone();
                        let mut turning = turning.clone();
                        zones.push(link);
                        for (k, q) in quarters.iter().enumerate() {
                            let id = junctions[j1].quarter(*q);
                            zones.push(id);
                            if turn_at == Some(k) {
                                turning.push(id);
                            }
                        }
                        match junctions[j1].outlet(out_heading) {
                            Outlet::Exit(exit) => zones.push(exit),
                            Outlet::Link(..) => unreachable!("no U-turn back onto the link"),
                        }
                        out.push(MovementEntry {
                            origin,
                            movement: Movement::double(first, second),
                            zones,
                            turning,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Builds the default 22-zone two-intersection network.
pub fn build_network(geometry: Geometry) -> Result<ZoneNetwork, NetworkError> {
    let approach = positive("approach_length", geometry.approach_length)?;
    let link = positive("link_length", geometry.link_length)?;
    let side = positive("merging_zone_side", geometry.merging_zone_side)? / 2.0;

    let mut zones = Vec::new();
    for id in 1..=8 {
        zones.push(Zone {
            id,
            length: side,
            kind: ZoneKind::MergingSubzone,
            merging_group: Some(if id <= 4 { 1 } else { 2 }),
        });
    }
    for id in [10, 11, 12, 18, 20, 22] {
        zones.push(Zone {
            id,
            length: approach,
            kind: ZoneKind::Approach,
            merging_group: None,
        });
    }
    for id in [9, 15, 16, 17, 19, 21] {
        zones.push(Zone {
            id,
            length: approach,
            kind: ZoneKind::Exit,
            merging_group: None,
        });
    }
    for id in [13, 14] {
        zones.push(Zone {
            id,
            length: link,
            kind: ZoneKind::Link,
            merging_group: None,
        });
    }

    let movements = default_movements(&default_junctions());
    let mut successors: BTreeMap<ZoneId, BTreeSet<ZoneId>> = BTreeMap::new();
    for m in &movements {
        for w in m.zones.windows(2) {
            successors.entry(w[0]).or_default().insert(w[1]);
        }
    }
    ZoneNetwork::from_parts(zones, successors, movements)
}
