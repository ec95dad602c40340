//! Heterogeneous road-network model: intersections, lane-level movements,
//! conflict relations and the phase sets derived from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::NetworkError;

/// Default lower green bound in seconds when a scenario omits `d_min`.
pub const DEFAULT_D_MIN: f64 = 5.0;
/// Default upper green bound in seconds when a scenario omits `d_max`.
pub const DEFAULT_D_MAX: f64 = 60.0;
/// Phase enumeration refuses intersections with more movements than this.
pub const MAX_MOVEMENTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntersectionId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MovementId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lane {}", self.0)
    }
}

impl fmt::Display for IntersectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "intersection {}", self.0)
    }
}

impl fmt::Display for MovementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "movement {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Left,
    Through,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    /// Meters.
    pub length: f64,
    /// Free-flow speed in m/s.
    pub speed: f64,
    /// Travel heading in degrees, clockwise from north. Needed only when
    /// conflicts are derived from geometry.
    pub bearing: Option<f64>,
}

impl Lane {
    /// Free-flow traversal time in seconds.
    pub fn travel_time(&self) -> f64 {
        self.length / self.speed
    }
}

/// Directed road. A missing endpoint is the network boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub from: Option<IntersectionId>,
    pub to: Option<IntersectionId>,
    pub lanes: Vec<LaneId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Movement {
    pub id: MovementId,
    pub from: LaneId,
    pub to: LaneId,
    pub turn: Turn,
}

/// A set of mutually compatible movements. `index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub index: usize,
    pub movements: Vec<MovementId>,
}

/// Symmetric, irreflexive conflict predicate over the movements of one
/// intersection, stored as a dense matrix in movement order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictRelation {
    ids: Vec<MovementId>,
    matrix: Vec<bool>,
}

impl ConflictRelation {
    pub fn empty(ids: Vec<MovementId>) -> Self {
        let n = ids.len();
        Self {
            ids,
            matrix: vec![false; n * n],
        }
    }

    /// Builds a relation from explicit pairs. Self-pairs are ignored.
    pub fn from_pairs(
        ids: Vec<MovementId>,
        pairs: &[(MovementId, MovementId)],
    ) -> Result<Self, MovementId> {
        let mut rel = Self::empty(ids);
        for &(a, b) in pairs {
            let i = rel.position(a).ok_or(a)?;
            let j = rel.position(b).ok_or(b)?;
            rel.set_idx(i, j, true);
        }
        Ok(rel)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[MovementId] {
        &self.ids
    }

    pub fn position(&self, id: MovementId) -> Option<usize> {
        self.ids.iter().position(|&m| m == id)
    }

    pub fn conflicts_idx(&self, i: usize, j: usize) -> bool {
        self.matrix[i * self.ids.len() + j]
    }

    pub fn conflicts(&self, a: MovementId, b: MovementId) -> bool {
        match (self.position(a), self.position(b)) {
            (Some(i), Some(j)) => self.conflicts_idx(i, j),
            _ => false,
        }
    }

    /// Sets a symmetric entry; diagonal writes are dropped.
    pub fn set_idx(&mut self, i: usize, j: usize, value: bool) {
        if i == j {
            return;
        }
        let n = self.ids.len();
        self.matrix[i * n + j] = value;
        self.matrix[j * n + i] = value;
    }

    pub fn pairs(&self) -> Vec<(MovementId, MovementId)> {
        let n = self.ids.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.conflicts_idx(i, j) {
                    out.push((self.ids[i], self.ids[j]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: IntersectionId,
    pub incoming: Vec<LaneId>,
    pub outgoing: Vec<LaneId>,
    pub movements: Vec<Movement>,
    pub phases: Vec<Phase>,
    pub conflicts: ConflictRelation,
    pub d_min: f64,
    pub d_max: f64,
}

impl Intersection {
    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn movement(&self, id: MovementId) -> Option<&Movement> {
        self.movements.iter().find(|m| m.id == id)
    }

    /// The phase with 1-based index `p`.
    pub fn phase(&self, p: usize) -> Option<&Phase> {
        p.checked_sub(1).and_then(|i| self.phases.get(i))
    }

    pub fn clamp_duration(&self, d: f64) -> f64 {
        d.clamp(self.d_min, self.d_max)
    }
}

/// Validated, immutable road network.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub intersections: Vec<Intersection>,
    pub roads: Vec<Road>,
    pub lanes: BTreeMap<LaneId, Lane>,
    lane_road: HashMap<LaneId, usize>,
    intersection_index: HashMap<IntersectionId, usize>,
}

impl RoadNetwork {
    pub fn new(
        intersections: Vec<Intersection>,
        roads: Vec<Road>,
        lanes: Vec<Lane>,
    ) -> Result<Self, NetworkError> {
        if intersections.is_empty() {
            return Err(NetworkError::validation("network", "no intersections"));
        }
        let mut lane_map = BTreeMap::new();
        for lane in lanes {
            if !(lane.length > 0.0 && lane.length.is_finite()) {
                return Err(NetworkError::validation(
                    lane.id.to_string(),
                    "length must be positive",
                ));
            }
            if !(lane.speed > 0.0 && lane.speed.is_finite()) {
                return Err(NetworkError::validation(
                    lane.id.to_string(),
                    "speed must be positive",
                ));
            }
            let id = lane.id;
            if lane_map.insert(id, lane).is_some() {
                return Err(NetworkError::validation(id.to_string(), "duplicate lane id"));
            }
        }
        let mut intersection_index = HashMap::new();
        for (k, node) in intersections.iter().enumerate() {
            if intersection_index.insert(node.id, k).is_some() {
                return Err(NetworkError::validation(
                    node.id.to_string(),
                    "duplicate intersection id",
                ));
            }
        }
        let mut lane_road = HashMap::new();
        for (r, road) in roads.iter().enumerate() {
            for end in [road.from, road.to].into_iter().flatten() {
                if !intersection_index.contains_key(&end) {
                    return Err(NetworkError::validation(
                        format!("road {r}"),
                        format!("endpoint {end} does not exist"),
                    ));
                }
            }
            if road.lanes.is_empty() {
                return Err(NetworkError::validation(format!("road {r}"), "road has no lanes"));
            }
            for &lane in &road.lanes {
                if !lane_map.contains_key(&lane) {
                    return Err(NetworkError::validation(
                        format!("road {r}"),
                        format!("{lane} is not in the lane registry"),
                    ));
                }
                if lane_road.insert(lane, r).is_some() {
                    return Err(NetworkError::validation(
                        lane.to_string(),
                        "lane belongs to more than one road",
                    ));
                }
            }
        }
        if let Some(orphan) = lane_map.keys().find(|l| !lane_road.contains_key(l)) {
            return Err(NetworkError::validation(
                orphan.to_string(),
                "lane does not belong to any road",
            ));
        }
        let net = Self {
            intersections,
            roads,
            lanes: lane_map,
            lane_road,
            intersection_index,
        };
        for node in &net.intersections {
            net.validate_intersection(node)?;
        }
        Ok(net)
    }

    fn validate_intersection(&self, node: &Intersection) -> Result<(), NetworkError> {
        let who = node.id.to_string();
        if node.incoming.is_empty() {
            return Err(NetworkError::validation(who, "no incoming lanes"));
        }
        if node.outgoing.is_empty() {
            return Err(NetworkError::validation(who, "no outgoing lanes"));
        }
        if !(node.d_min > 0.0 && node.d_min <= node.d_max && node.d_max.is_finite()) {
            return Err(NetworkError::validation(
                who,
                format!("invalid duration bounds d_min={} d_max={}", node.d_min, node.d_max),
            ));
        }
        for &lane in &node.incoming {
            let road = self.road_of(lane).ok_or_else(|| {
                NetworkError::validation(&who, format!("incoming {lane} is not on any road"))
            })?;
            if road.to != Some(node.id) {
                return Err(NetworkError::validation(
                    &who,
                    format!("incoming {lane} is on a road that does not end here"),
                ));
            }
        }
        for &lane in &node.outgoing {
            let road = self.road_of(lane).ok_or_else(|| {
                NetworkError::validation(&who, format!("outgoing {lane} is not on any road"))
            })?;
            if road.from != Some(node.id) {
                return Err(NetworkError::validation(
                    &who,
                    format!("outgoing {lane} is on a road that does not start here"),
                ));
            }
        }
        let mut seen = BTreeSet::new();
        for m in &node.movements {
            if !seen.insert(m.id) {
                return Err(NetworkError::validation(m.id.to_string(), "duplicate movement id"));
            }
            if !node.incoming.contains(&m.from) {
                return Err(NetworkError::validation(
                    m.id.to_string(),
                    format!("from-{} is not an incoming lane of {}", m.from, node.id),
                ));
            }
            if !node.outgoing.contains(&m.to) {
                return Err(NetworkError::validation(
                    m.id.to_string(),
                    format!("to-{} is not an outgoing lane of {}", m.to, node.id),
                ));
            }
        }
        if node.phases.is_empty() {
            return Err(NetworkError::validation(who, "no phases"));
        }
        let mut distinct = BTreeSet::new();
        for phase in &node.phases {
            if phase.movements.is_empty() {
                return Err(NetworkError::validation(
                    format!("{who} phase {}", phase.index),
                    "empty phase",
                ));
            }
            for &m in &phase.movements {
                if node.movement(m).is_none() {
                    return Err(NetworkError::validation(
                        format!("{who} phase {}", phase.index),
                        format!("unknown {m}"),
                    ));
                }
            }
            for (i, &a) in phase.movements.iter().enumerate() {
                for &b in &phase.movements[i + 1..] {
                    if node.conflicts.conflicts(a, b) {
                        return Err(NetworkError::validation(
                            format!("{who} phase {}", phase.index),
                            format!("{a} conflicts with {b}"),
                        ));
                    }
                }
            }
            let key: BTreeSet<_> = phase.movements.iter().copied().collect();
            if !distinct.insert(key) {
                return Err(NetworkError::validation(
                    format!("{who} phase {}", phase.index),
                    "duplicate phase",
                ));
            }
        }
        for m in &node.movements {
            if !node.phases.iter().any(|p| p.movements.contains(&m.id)) {
                return Err(NetworkError::validation(m.id.to_string(), "movement is in no phase"));
            }
        }
        Ok(())
    }

    pub fn intersection(&self, id: IntersectionId) -> Option<&Intersection> {
        self.intersection_index
            .get(&id)
            .map(|&k| &self.intersections[k])
    }

    pub fn intersection_position(&self, id: IntersectionId) -> Option<usize> {
        self.intersection_index.get(&id).copied()
    }

    pub fn road_of(&self, lane: LaneId) -> Option<&Road> {
        self.lane_road.get(&lane).map(|&r| &self.roads[r])
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.lanes.get(&id)
    }

    /// Incoming lanes of all intersections; these are the lanes that hold
    /// queues at a stop line.
    pub fn stop_line_lanes(&self) -> Vec<LaneId> {
        self.intersections
            .iter()
            .flat_map(|n| n.incoming.iter().copied())
            .collect()
    }

    /// The movement at the end of `from` that leads onto `to`, if any.
    pub fn connecting_movement(&self, from: LaneId, to: LaneId) -> Option<(&Intersection, &Movement)> {
        let road = self.road_of(from)?;
        let node = self.intersection(road.to?)?;
        node.movements
            .iter()
            .find(|m| m.from == from && m.to == to)
            .map(|m| (node, m))
    }
}

fn heading_delta(from: f64, to: f64) -> f64 {
    (to - from).rem_euclid(360.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relative {
    Same,
    /// Other approach travels 90 degrees clockwise of this one.
    Clockwise,
    Opposite,
    CounterClockwise,
}

fn relative(from: f64, to: f64) -> Relative {
    let d = heading_delta(from, to);
    if !(45.0..315.0).contains(&d) {
        Relative::Same
    } else if d < 135.0 {
        Relative::Clockwise
    } else if d < 225.0 {
        Relative::Opposite
    } else {
        Relative::CounterClockwise
    }
}

/// Whether a left turn arriving with heading `left` crosses a through
/// movement arriving with heading `through`.
fn left_crosses_through(left: f64, through: f64) -> bool {
    matches!(relative(left, through), Relative::Opposite | Relative::Clockwise)
}

/// Default geometric conflict rule for right-hand traffic.
///
/// Movements sharing a to-lane always conflict (merge); movements sharing a
/// from-lane never do (diverge). Otherwise: throughs on perpendicular
/// approaches cross, a left crosses the oncoming through and the through
/// arriving from its left, lefts on perpendicular approaches cross, and
/// right turns cross nothing. Movements whose from-lane has no bearing are
/// only checked for merges.
pub fn default_conflicts(node: &Intersection, lanes: &BTreeMap<LaneId, Lane>) -> ConflictRelation {
    let ids: Vec<MovementId> = node.movements.iter().map(|m| m.id).collect();
    let mut rel = ConflictRelation::empty(ids);
    let bearing = |l: LaneId| lanes.get(&l).and_then(|lane| lane.bearing);
    for (i, a) in node.movements.iter().enumerate() {
        for (j, b) in node.movements.iter().enumerate().skip(i + 1) {
            let conflict = if a.to == b.to {
                true
            } else if a.from == b.from {
                false
            } else {
                match (bearing(a.from), bearing(b.from)) {
                    (Some(ha), Some(hb)) => turn_conflict(a.turn, ha, b.turn, hb),
                    _ => false,
                }
            };
            rel.set_idx(i, j, conflict);
        }
    }
    rel
}

fn turn_conflict(ta: Turn, ha: f64, tb: Turn, hb: f64) -> bool {
    let rel = relative(ha, hb);
    if rel == Relative::Same {
        return false;
    }
    let perpendicular = matches!(rel, Relative::Clockwise | Relative::CounterClockwise);
    match (ta, tb) {
        (Turn::Right, _) | (_, Turn::Right) => false,
        (Turn::Through, Turn::Through) | (Turn::Left, Turn::Left) => perpendicular,
        (Turn::Left, Turn::Through) => left_crosses_through(ha, hb),
        (Turn::Through, Turn::Left) => left_crosses_through(hb, ha),
    }
}

/// Enumerates all maximal compatible movement sets (maximal independent sets
/// of the conflict graph), sorted by their lowest movement id.
pub fn enumerate_phases(
    movements: &[Movement],
    conflicts: &ConflictRelation,
) -> Result<Vec<Phase>, NetworkError> {
    let n = movements.len();
    if n > MAX_MOVEMENTS {
        return Err(NetworkError::TooManyMovements(n));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Compatibility adjacency as bitmasks over `movements` order.
    let idx: Vec<usize> = movements
        .iter()
        .map(|m| conflicts.position(m.id).unwrap_or(usize::MAX))
        .collect();
    let mut compatible = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let clash = idx[i] != usize::MAX
                    && idx[j] != usize::MAX
                    && conflicts.conflicts_idx(idx[i], idx[j]);
                if !clash {
                    compatible[i] |= 1 << j;
                }
            }
        }
    }
    let mut cliques = Vec::new();
    bron_kerbosch(0, (1u64 << n) - 1, 0, &compatible, &mut cliques);

    let mut sets: Vec<Vec<MovementId>> = cliques
        .into_iter()
        .map(|mask| {
            let mut ids: Vec<MovementId> = (0..n)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| movements[i].id)
                .collect();
            ids.sort();
            ids
        })
        .collect();
    sets.sort();
    sets.dedup();
    Ok(sets
        .into_iter()
        .enumerate()
        .map(|(k, movements)| Phase {
            index: k + 1,
            movements,
        })
        .collect())
}

/// Bron–Kerbosch with pivoting over the compatibility graph; maximal cliques
/// there are maximal independent sets of the conflict graph.
fn bron_kerbosch(r: u64, mut p: u64, mut x: u64, adj: &[u64], out: &mut Vec<u64>) {
    if p == 0 && x == 0 {
        out.push(r);
        return;
    }
    let pivot_pool = p | x;
    let pivot = (0..adj.len())
        .filter(|&u| pivot_pool & (1 << u) != 0)
        .max_by_key(|&u| (p & adj[u]).count_ones())
        .unwrap_or(0);
    let mut candidates = p & !adj[pivot];
    while candidates != 0 {
        let v = candidates.trailing_zeros() as usize;
        let bit = 1u64 << v;
        bron_kerbosch(r | bit, p & adj[v], x & adj[v], adj, out);
        p &= !bit;
        x |= bit;
        candidates &= !bit;
    }
}
