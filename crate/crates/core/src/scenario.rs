//! Scenario files and the synthetic grid generator.
//!
//! A scenario is one JSON document with exactly the top-level keys
//! `intersections`, `roads`, `lanes`, `demand` and `sim`. Unknown keys are
//! rejected at every level. See `docs/scenario-format.md`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::ControllerSpec;
use crate::error::NetworkError;
use crate::network::{
    default_conflicts, enumerate_phases, ConflictRelation, Intersection, IntersectionId, Lane, LaneId, Movement,
    MovementId, Phase, Road, RoadNetwork, Turn, DEFAULT_D_MAX, DEFAULT_D_MIN,
};
use crate::sim::{DemandProfile, Flow, RateWindow, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementSpec {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub turn: Turn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionSpec {
    pub id: u32,
    pub incoming: Vec<u32>,
    pub outgoing: Vec<u32>,
    pub movements: Vec<MovementSpec>,
    /// Explicit phases as lists of movement ids, in index order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<Vec<u32>>>,
    /// Explicit conflicting movement pairs; replaces the geometric rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflicts: Option<Vec<[u32; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    pub from: Option<u32>,
    pub to: Option<u32>,
    pub lanes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSpec {
    pub id: u32,
    pub length: f64,
    pub speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(flatten)]
    pub config: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSpec>,
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub intersections: Vec<IntersectionSpec>,
    pub roads: Vec<RoadSpec>,
    pub lanes: Vec<LaneSpec>,
    pub demand: DemandProfile,
    pub sim: SimSection,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: RoadNetwork,
    pub demand: DemandProfile,
    pub sim: SimConfig,
    pub controller: Option<ControllerSpec>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, NetworkError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&bytes)
}

/// Parses and validates scenario bytes. Pure: equal bytes give equal
/// scenarios.
pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario, NetworkError> {
    let file: ScenarioFile = serde_json::from_slice(bytes).map_err(|e| NetworkError::Parse(e.to_string()))?;
    file.build()
}

impl ScenarioFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn build(&self) -> Result<Scenario, NetworkError> {
        if self.intersections.is_empty() {
            return Err(NetworkError::validation("network", "no intersections"));
        }
        let lanes: Vec<Lane> = self
            .lanes
            .iter()
            .map(|l| Lane {
                id: LaneId(l.id),
                length: l.length,
                speed: l.speed,
                bearing: l.bearing,
            })
            .collect();
        let lane_map: BTreeMap<LaneId, Lane> = lanes.iter().map(|l| (l.id, l.clone())).collect();
        let intersections = self
            .intersections
            .iter()
            .map(|spec| build_intersection(spec, &lane_map))
            .collect::<Result<Vec<_>, _>>()?;
        let roads = self
            .roads
            .iter()
            .map(|r| Road {
                from: r.from.map(IntersectionId),
                to: r.to.map(IntersectionId),
                lanes: r.lanes.iter().copied().map(LaneId).collect(),
            })
            .collect();
        let network = RoadNetwork::new(intersections, roads, lanes)?;
        self.sim.config.validate()?;
        self.demand.validate(&network)?;
        Ok(Scenario {
            network,
            demand: self.demand.clone(),
            sim: self.sim.config.clone(),
            controller: self.sim.controller.clone(),
        })
    }
}

fn build_intersection(spec: &IntersectionSpec, lanes: &BTreeMap<LaneId, Lane>) -> Result<Intersection, NetworkError> {
    let id = IntersectionId(spec.id);
    let movements: Vec<Movement> = spec
        .movements
        .iter()
        .map(|m| Movement {
            id: MovementId(m.id),
            from: LaneId(m.from),
            to: LaneId(m.to),
            turn: m.turn,
        })
        .collect();
    for m in &movements {
        if !spec.incoming.contains(&m.from.0) {
            return Err(NetworkError::validation(
                m.id.to_string(),
                format!("from-{} is not an incoming lane of {id}", m.from),
            ));
        }
        if !spec.outgoing.contains(&m.to.0) {
            return Err(NetworkError::validation(
                m.id.to_string(),
                format!("to-{} is not an outgoing lane of {id}", m.to),
            ));
        }
    }
    let d_min = spec.d_min.unwrap_or(DEFAULT_D_MIN);
    let d_max = spec.d_max.unwrap_or(DEFAULT_D_MAX);
    if d_min > d_max {
        return Err(NetworkError::validation(
            id.to_string(),
            format!("d_min {d_min} exceeds d_max {d_max}"),
        ));
    }
    let shell = Intersection {
        id,
        incoming: spec.incoming.iter().copied().map(LaneId).collect(),
        outgoing: spec.outgoing.iter().copied().map(LaneId).collect(),
        movements: movements.clone(),
        phases: Vec::new(),
        conflicts: ConflictRelation::empty(movements.iter().map(|m| m.id).collect()),
        d_min,
        d_max,
    };
    let has_geometry = movements
        .iter()
        .all(|m| lanes.get(&m.from).is_some_and(|l| l.bearing.is_some()));
    let conflicts = match &spec.conflicts {
        Some(pairs) => {
            let pairs: Vec<_> = pairs.iter().map(|[a, b]| (MovementId(*a), MovementId(*b))).collect();
            ConflictRelation::from_pairs(shell.conflicts.ids().to_vec(), &pairs)
                .map_err(|m| NetworkError::validation(id.to_string(), format!("conflict names unknown {m}")))?
        }
        None if has_geometry => default_conflicts(&shell, lanes),
        None if spec.phases.is_some() => shell.conflicts.clone(),
        None => {
            return Err(NetworkError::validation(
                id.to_string(),
                "needs lane bearings, explicit conflicts or explicit phases",
            ))
        }
    };
    let phases = match &spec.phases {
        Some(lists) => lists
            .iter()
            .enumerate()
            .map(|(k, ms)| Phase {
                index: k + 1,
                movements: ms.iter().copied().map(MovementId).collect(),
            })
            .collect(),
        None => enumerate_phases(&movements, &conflicts)?,
    };
    Ok(Intersection {
        conflicts,
        phases,
        ..shell
    })
}

/// Parameters of the synthetic grid generator. Every generated scenario is
/// a pure function of these values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub rows: usize,
    pub cols: usize,
    /// Vehicles per hour entering on each boundary entry lane.
    pub demand_vph: f64,
    /// Internal road length in meters.
    pub block_length: f64,
    /// Boundary road length in meters.
    pub edge_length: f64,
    /// Free-flow speed in m/s.
    pub speed: f64,
    pub turn_left: f64,
    pub turn_right: f64,
    /// Distinct routes generated per entry lane.
    pub routes_per_entry: usize,
    /// Seconds of demand; zero means the whole horizon.
    pub duration: f64,
    pub seed: u64,
    pub horizon: u64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            demand_vph: 200.0,
            block_length: 300.0,
            edge_length: 200.0,
            speed: 13.89,
            turn_left: 0.2,
            turn_right: 0.2,
            routes_per_entry: 6,
            duration: 0.0,
            seed: 1,
            horizon: 3600,
        }
    }
}

const HEADINGS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

/// `(row, col)` step for travel heading index 0=N, 1=E, 2=S, 3=W.
fn step(dir: usize) -> (isize, isize) {
    match dir {
        0 => (-1, 0),
        1 => (0, 1),
        2 => (1, 0),
        _ => (0, -1),
    }
}

/// Generates a rows x cols grid of four-leg intersections joined by
/// single-lane roads, with boundary entry/exit roads on every open side.
/// Every lane carries its bearing, so phases come from the default conflict
/// rule. Routes enter at a boundary, turn at random and leave at a
/// boundary.
pub fn generate_grid(params: &GridParams) -> ScenarioFile {
    let (rows, cols) = (params.rows.max(1), params.cols.max(1));
    let node_id = |r: usize, c: usize| (r * cols + c + 1) as u32;
    let mut lanes = Vec::new();
    let mut roads = Vec::new();
    // Lane arriving at (r, c) while travelling `dir`, and lane leaving it.
    let mut arriving: BTreeMap<(usize, usize, usize), u32> = BTreeMap::new();
    let mut leaving: BTreeMap<(usize, usize, usize), u32> = BTreeMap::new();
    let mut entries = Vec::new();
    let mut next_lane = 1u32;
    let mut new_lane = |lanes: &mut Vec<LaneSpec>, length: f64, dir: usize| {
        let id = next_lane;
        next_lane += 1;
        lanes.push(LaneSpec {
            id,
            length,
            speed: params.speed,
            bearing: Some(HEADINGS[dir]),
        });
        id
    };
    for r in 0..rows {
        for c in 0..cols {
            for dir in 0..4 {
                let (dr, dc) = step(dir);
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                let inside = nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols;
                if inside {
                    let lane = new_lane(&mut lanes, params.block_length, dir);
                    roads.push(RoadSpec {
                        from: Some(node_id(r, c)),
                        to: Some(node_id(nr as usize, nc as usize)),
                        lanes: vec![lane],
                    });
                    leaving.insert((r, c, dir), lane);
                    arriving.insert((nr as usize, nc as usize, dir), lane);
                } else {
                    let exit = new_lane(&mut lanes, params.edge_length, dir);
                    roads.push(RoadSpec {
                        from: Some(node_id(r, c)),
                        to: None,
                        lanes: vec![exit],
                    });
                    leaving.insert((r, c, dir), exit);
                    // Entry travels the opposite way, into (r, c).
                    let back = (dir + 2) % 4;
                    let entry = new_lane(&mut lanes, params.edge_length, back);
                    roads.push(RoadSpec {
                        from: None,
                        to: Some(node_id(r, c)),
                        lanes: vec![entry],
                    });
                    arriving.insert((r, c, back), entry);
                    entries.push((r, c, back, entry));
                }
            }
        }
    }
    let mut intersections = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let incoming: Vec<u32> = (0..4).map(|d| arriving[&(r, c, d)]).collect();
            let outgoing: Vec<u32> = (0..4).map(|d| leaving[&(r, c, d)]).collect();
            let mut movements = Vec::new();
            for d_in in 0..4 {
                for (turn, d_out) in [
                    (Turn::Left, (d_in + 3) % 4),
                    (Turn::Through, d_in),
                    (Turn::Right, (d_in + 1) % 4),
                ] {
                    movements.push(MovementSpec {
                        id: (movements.len() + 1) as u32,
                        from: arriving[&(r, c, d_in)],
                        to: leaving[&(r, c, d_out)],
                        turn,
                    });
                }
            }
            intersections.push(IntersectionSpec {
                id: node_id(r, c),
                incoming,
                outgoing,
                movements,
                phases: None,
                conflicts: None,
                d_min: None,
                d_max: None,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let end = if params.duration > 0.0 {
        params.duration
    } else {
        params.horizon as f64
    };
    let per_route = params.demand_vph / params.routes_per_entry.max(1) as f64;
    let mut flows = Vec::new();
    for &(r0, c0, dir0, entry) in &entries {
        for _ in 0..params.routes_per_entry.max(1) {
            let mut route = vec![entry];
            let (mut r, mut c, mut dir) = (r0, c0, dir0);
            loop {
                let u: f64 = rng.gen();
                dir = if u < params.turn_left {
                    (dir + 3) % 4
                } else if u < params.turn_left + params.turn_right {
                    (dir + 1) % 4
                } else {
                    dir
                };
                let lane = leaving[&(r, c, dir)];
                route.push(lane);
                let (dr, dc) = step(dir);
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                let inside = nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols;
                if !inside || route.len() > 4 * (rows + cols) {
                    break;
                }
                r = nr as usize;
                c = nc as usize;
            }
            // A route that ran out of hops inside the grid heads straight out.
            while let Some(&last) = route.last() {
                let Some((&(r, c, d), _)) = arriving.iter().find(|(_, &l)| l == last) else {
                    break;
                };
                route.push(leaving[&(r, c, d)]);
            }
            flows.push(Flow {
                route: route.into_iter().map(LaneId).collect(),
                rates: vec![RateWindow {
                    start: 0.0,
                    end,
                    vph: per_route,
                }],
            });
        }
    }

    ScenarioFile {
        intersections,
        roads,
        lanes,
        demand: DemandProfile { flows },
        sim: SimSection {
            config: SimConfig {
                horizon: params.horizon,
                seed: params.seed,
                ..SimConfig::default()
            },
            controller: None,
        },
    }
}
