//! Deterministic discrete-time point-queue simulator.
//!
//! Vehicles queue at stop lines and discharge at a saturation rate while
//! their movement is green. Between stop lines they travel at free-flow
//! speed. Phase changes insert an intersection-wide lost time.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{NetworkError, SimError};
use crate::network::{IntersectionId, LaneId, RoadNetwork};

/// Default vehicle footprint used to express queues in meters.
pub const DEFAULT_VEHICLE_LENGTH: f64 = 7.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Seconds per tick.
    pub tick: f64,
    /// Vehicles per second per lane at full green.
    pub saturation: f64,
    /// Seconds of all-red inserted on a phase change.
    pub lost_time: f64,
    /// Episode length in ticks.
    pub horizon: u64,
    pub seed: u64,
    /// Meters per queued vehicle, for AQL.
    pub vehicle_length: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tick: 1.0,
            saturation: 0.5,
            lost_time: 3.0,
            horizon: 3600,
            seed: 0,
            vehicle_length: DEFAULT_VEHICLE_LENGTH,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |field: &str, reason: &str| Err(NetworkError::validation(format!("sim.{field}"), reason));
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return bad("tick", "must be positive");
        }
        if !(self.saturation > 0.0 && self.saturation.is_finite()) {
            return bad("saturation", "must be positive");
        }
        if !(self.lost_time >= 0.0 && self.lost_time.is_finite()) {
            return bad("lost_time", "must be non-negative");
        }
        if !(self.vehicle_length >= 0.0 && self.vehicle_length.is_finite()) {
            return bad("vehicle_length", "must be non-negative");
        }
        Ok(())
    }

    /// Whole ticks covering `seconds`, at least one.
    pub fn ticks_for(&self, seconds: f64) -> u64 {
        ((seconds / self.tick) - 1e-9).ceil().max(1.0) as u64
    }

    pub fn lost_ticks(&self) -> u64 {
        if self.lost_time <= 0.0 {
            0
        } else {
            self.ticks_for(self.lost_time)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateWindow {
    /// Seconds from episode start, inclusive.
    pub start: f64,
    /// Seconds, exclusive.
    pub end: f64,
    /// Vehicles per hour.
    pub vph: f64,
}

/// Vehicles entering on `route[0]` and following `route` lane by lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flow {
    pub route: Vec<LaneId>,
    pub rates: Vec<RateWindow>,
}

impl Flow {
    pub fn entry(&self) -> LaneId {
        self.route[0]
    }

    /// Piecewise-constant arrival rate at time `t` seconds.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.rates
            .iter()
            .filter(|w| w.start <= t && t < w.end)
            .map(|w| w.vph)
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandProfile {
    pub flows: Vec<Flow>,
}

impl DemandProfile {
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), NetworkError> {
        for (k, flow) in self.flows.iter().enumerate() {
            let who = format!("demand flow {k}");
            if flow.route.len() < 2 {
                return Err(NetworkError::validation(who, "route needs at least two lanes"));
            }
            for w in &flow.rates {
                if !(w.vph >= 0.0 && w.vph.is_finite()) {
                    return Err(NetworkError::validation(who, "rates must be non-negative"));
                }
                if !(w.start < w.end) {
                    return Err(NetworkError::validation(who, "rate window must have start < end"));
                }
            }
            for lane in &flow.route {
                if net.lane(*lane).is_none() {
                    return Err(NetworkError::validation(who, format!("unknown {lane}")));
                }
            }
            for pair in flow.route.windows(2) {
                if net.connecting_movement(pair[0], pair[1]).is_none() {
                    return Err(NetworkError::validation(
                        who,
                        format!("no movement from {} to {}", pair[0], pair[1]),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Same routes with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for flow in &mut out.flows {
            for w in &mut flow.rates {
                w.vph *= factor;
            }
        }
        out
    }
}

/// Phase index (1-based) and green duration in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingAction {
    pub phase: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u32,
    pub spawn_tick: u64,
    pub completion_tick: Option<u64>,
    pub waiting_ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Vehicle {
    record: VehicleRecord,
    route: u32,
    /// Index into the route of the lane the vehicle is on.
    pos: u32,
    queued_since: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalState {
    pub active: Option<TimingAction>,
    pub remaining_green: u64,
    pub lost_remaining: u64,
    /// Green ticks elapsed since the active phase last started.
    pub green_elapsed: u64,
}

impl SignalState {
    fn idle() -> Self {
        Self {
            active: None,
            remaining_green: 0,
            lost_remaining: 0,
            green_elapsed: 0,
        }
    }

    /// Discharging this tick.
    pub fn is_green(&self) -> bool {
        self.active.is_some() && self.lost_remaining == 0 && self.remaining_green > 0
    }
}

/// Mutable simulation state. Lanes are addressed by dense index (see
/// [`Simulator::lane_index`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub clock: u64,
    queues: Vec<VecDeque<u32>>,
    /// Vehicles travelling on each lane with their arrival tick, FIFO.
    moving: Vec<VecDeque<(u32, u64)>>,
    carry: Vec<f64>,
    signals: Vec<SignalState>,
    vehicles: Vec<Vehicle>,
    completed: u64,
}

impl SimState {
    pub fn spawned(&self) -> u64 {
        self.vehicles.len() as u64
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn queued(&self) -> u64 {
        self.queues.iter().map(|q| q.len() as u64).sum()
    }

    pub fn in_transit_count(&self) -> u64 {
        self.moving.iter().map(|q| q.len() as u64).sum()
    }

    pub fn queue_len(&self, lane: usize) -> u32 {
        self.queues[lane].len() as u32
    }

    /// Queue length of every lane, in dense-index order.
    pub fn lane_queues(&self) -> Vec<u32> {
        self.queues.iter().map(|q| q.len() as u32).collect()
    }

    pub fn signal(&self, intersection: usize) -> &SignalState {
        &self.signals[intersection]
    }

    /// `(vehicle id, lane index, remaining ticks)` for every moving vehicle.
    pub fn in_transit(&self) -> Vec<(u32, usize, u64)> {
        let mut out = Vec::new();
        for (lane, q) in self.moving.iter().enumerate() {
            for &(v, arrive) in q {
                out.push((v, lane, arrive.saturating_sub(self.clock)));
            }
        }
        out
    }

    /// Records of every spawned vehicle. Waiting of still-queued vehicles
    /// includes the time queued so far.
    pub fn records(&self) -> Vec<VehicleRecord> {
        let mut out: Vec<VehicleRecord> = self.vehicles.iter().map(|v| v.record.clone()).collect();
        for q in &self.queues {
            for &v in q {
                let veh = &self.vehicles[v as usize];
                out[v as usize].waiting_ticks += self.clock - veh.queued_since;
            }
        }
        out
    }

    /// Stable digest of the full state, used to check rollouts are pure.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.clock.hash(&mut h);
        self.queues.hash(&mut h);
        self.moving.hash(&mut h);
        for c in &self.carry {
            c.to_bits().hash(&mut h);
        }
        for s in &self.signals {
            s.active.map(|a| (a.phase, a.duration.to_bits())).hash(&mut h);
            (s.remaining_green, s.lost_remaining, s.green_elapsed).hash(&mut h);
        }
        for v in &self.vehicles {
            (&v.record, v.route, v.pos, v.queued_since).hash(&mut h);
        }
        self.completed.hash(&mut h);
        h.finish()
    }
}

/// Independent Poisson arrival streams, one per flow. Each stream is seeded
/// from its entry lane so streams do not shift when flows are added on
/// other lanes.
#[derive(Debug, Clone)]
pub struct SpawnStreams {
    rngs: Vec<ChaCha8Rng>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl SpawnStreams {
    pub fn new(demand: &DemandProfile, seed: u64) -> Self {
        let mut per_lane: HashMap<LaneId, u64> = HashMap::new();
        let rngs = demand
            .flows
            .iter()
            .map(|f| {
                let ordinal = per_lane.entry(f.entry()).or_insert(0);
                let s = splitmix64(seed ^ splitmix64(u64::from(f.entry().0)) ^ splitmix64(*ordinal + 0x51));
                *ordinal += 1;
                ChaCha8Rng::seed_from_u64(s)
            })
            .collect();
        Self { rngs }
    }
}

#[derive(Debug, Clone)]
struct LaneInfo {
    travel_ticks: u64,
}

#[derive(Debug, Clone)]
struct NodeLayout {
    id: IntersectionId,
    incoming: Vec<usize>,
    outgoing: Vec<usize>,
    /// Per phase: served `(from lane, to lane)` pairs.
    phases: Vec<Vec<(usize, usize)>>,
    d_min: f64,
    d_max: f64,
}

/// Network and demand compiled to dense indices, plus the config. Immutable
/// and shareable across workers.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    lane_ids: Vec<LaneId>,
    lane_pos: HashMap<LaneId, usize>,
    lanes: Vec<LaneInfo>,
    nodes: Vec<NodeLayout>,
    routes: Vec<Arc<[usize]>>,
    demand: DemandProfile,
    stop_lines: Vec<usize>,
}

impl Simulator {
    pub fn new(net: &RoadNetwork, demand: &DemandProfile, cfg: &SimConfig) -> Result<Self, NetworkError> {
        cfg.validate()?;
        demand.validate(net)?;
        let lane_ids: Vec<LaneId> = net.lanes.keys().copied().collect();
        let lane_pos: HashMap<LaneId, usize> = lane_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let lanes = net
            .lanes
            .values()
            .map(|l| LaneInfo {
                travel_ticks: cfg.ticks_for(l.travel_time()),
            })
            .collect();
        let nodes = net
            .intersections
            .iter()
            .map(|n| NodeLayout {
                id: n.id,
                incoming: n.incoming.iter().map(|l| lane_pos[l]).collect(),
                outgoing: n.outgoing.iter().map(|l| lane_pos[l]).collect(),
                phases: n
                    .phases
                    .iter()
                    .map(|p| {
                        let mut pairs: Vec<(usize, usize)> = p
                            .movements
                            .iter()
                            .filter_map(|m| n.movement(*m))
                            .map(|m| (lane_pos[&m.from], lane_pos[&m.to]))
                            .collect();
                        pairs.sort_unstable();
                        pairs
                    })
                    .collect(),
                d_min: n.d_min,
                d_max: n.d_max,
            })
            .collect();
        let routes = demand
            .flows
            .iter()
            .map(|f| f.route.iter().map(|l| lane_pos[l]).collect::<Vec<_>>().into())
            .collect();
        let stop_lines = net.stop_line_lanes().iter().map(|l| lane_pos[l]).collect();
        Ok(Self {
            cfg: cfg.clone(),
            lane_ids,
            lane_pos,
            lanes,
            nodes,
            routes,
            demand: demand.clone(),
            stop_lines,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn demand(&self) -> &DemandProfile {
        &self.demand
    }

    pub fn lane_index(&self, lane: LaneId) -> Option<usize> {
        self.lane_pos.get(&lane).copied()
    }

    pub fn lane_id(&self, idx: usize) -> LaneId {
        self.lane_ids[idx]
    }

    pub fn lane_count(&self) -> usize {
        self.lane_ids.len()
    }

    pub fn intersection_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn intersection_index(&self, id: IntersectionId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn intersection_id(&self, idx: usize) -> IntersectionId {
        self.nodes[idx].id
    }

    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.nodes[node].incoming
    }

    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.nodes[node].outgoing
    }

    /// Served `(from lane, to lane)` pairs of every phase at `node`, sorted.
    pub fn phase_lanes(&self, node: usize) -> &[Vec<(usize, usize)>] {
        &self.nodes[node].phases
    }

    pub fn phase_count(&self, node: usize) -> usize {
        self.nodes[node].phases.len()
    }

    /// `(d_min, d_max)` at `node`.
    pub fn bounds(&self, node: usize) -> (f64, f64) {
        (self.nodes[node].d_min, self.nodes[node].d_max)
    }

    /// Dense indices of all lanes with a stop line.
    pub fn stop_lines(&self) -> &[usize] {
        &self.stop_lines
    }

    pub fn initial_state(&self) -> SimState {
        let n = self.lane_ids.len();
        SimState {
            clock: 0,
            queues: vec![VecDeque::new(); n],
            moving: vec![VecDeque::new(); n],
            carry: vec![0.0; n],
            signals: vec![SignalState::idle(); self.nodes.len()],
            vehicles: Vec::new(),
            completed: 0,
        }
    }

    /// Draws Poisson arrivals for the current tick and appends them to
    /// their entry-lane queues. Returns the new vehicles' records.
    pub fn spawn_vehicles(&self, state: &mut SimState, streams: &mut SpawnStreams) -> Vec<VehicleRecord> {
        let t = state.clock as f64 * self.cfg.tick;
        let mut out = Vec::new();
        for (k, flow) in self.demand.flows.iter().enumerate() {
            let mean = flow.rate_at(t) * self.cfg.tick / 3600.0;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean)
                .map(|d| d.sample(&mut streams.rngs[k]) as u64)
                .unwrap_or(0);
            let entry = self.routes[k][0];
            for _ in 0..count {
                let id = state.vehicles.len() as u32;
                let record = VehicleRecord {
                    id,
                    spawn_tick: state.clock,
                    completion_tick: None,
                    waiting_ticks: 0,
                };
                state.vehicles.push(Vehicle {
                    record: record.clone(),
                    route: k as u32,
                    pos: 0,
                    queued_since: state.clock,
                });
                state.queues[entry].push_back(id);
                out.push(record);
            }
        }
        out
    }

    /// Sets the timing action at one intersection. A phase change starts
    /// the lost-time countdown before the new green.
    pub fn apply_timing(&self, state: &mut SimState, node: usize, action: TimingAction) -> Result<(), SimError> {
        let layout = self
            .nodes
            .get(node)
            .ok_or(SimError::UnknownIntersection(node as u32))?;
        let who = layout.id.0;
        if action.phase < 1 || action.phase > layout.phases.len() {
            return Err(SimError::PhaseOutOfRange {
                intersection: who,
                phase: action.phase,
                max: layout.phases.len(),
            });
        }
        if action.duration < layout.d_min - 1e-9 || !action.duration.is_finite() {
            return Err(SimError::BelowMinimum {
                intersection: who,
                duration: action.duration,
                d_min: layout.d_min,
            });
        }
        if action.duration > layout.d_max + 1e-9 {
            return Err(SimError::AboveMaximum {
                intersection: who,
                duration: action.duration,
                d_max: layout.d_max,
            });
        }
        let sig = &mut state.signals[node];
        let switching = matches!(sig.active, Some(prev) if prev.phase != action.phase);
        if switching {
            sig.lost_remaining = self.cfg.lost_ticks();
            sig.green_elapsed = 0;
        }
        sig.active = Some(action);
        sig.remaining_green = self.cfg.ticks_for(action.duration);
        Ok(())
    }

    /// Intersections whose green has run out (or never started).
    pub fn needs_decision(&self, state: &SimState, node: usize) -> bool {
        let s = &state.signals[node];
        s.active.is_none() || (s.lost_remaining == 0 && s.remaining_green == 0)
    }

    /// Advances one tick: arrivals at lane ends, stop-line discharge,
    /// signal countdowns, clock.
    pub fn step(&self, state: &mut SimState) {
        let now = state.clock;
        for lane in 0..state.moving.len() {
            while let Some(&(v, arrive)) = state.moving[lane].front() {
                if arrive > now {
                    break;
                }
                state.moving[lane].pop_front();
                let veh = &mut state.vehicles[v as usize];
                let route = &self.routes[veh.route as usize];
                if veh.pos as usize + 1 >= route.len() {
                    veh.record.completion_tick = Some(now);
                    state.completed += 1;
                } else {
                    veh.queued_since = now;
                    state.queues[lane].push_back(v);
                }
            }
        }

        let per_tick = self.cfg.saturation * self.cfg.tick;
        for (node, layout) in self.nodes.iter().enumerate() {
            let sig = state.signals[node];
            let served: &[(usize, usize)] = match sig.active {
                Some(a) if sig.is_green() => &layout.phases[a.phase - 1],
                _ => &[],
            };
            for &lane in &layout.incoming {
                let mut discharged_any = false;
                loop {
                    let Some(&v) = state.queues[lane].front() else { break };
                    let veh = &state.vehicles[v as usize];
                    let route = &self.routes[veh.route as usize];
                    let next = route[veh.pos as usize + 1];
                    if served.binary_search(&(lane, next)).is_err() {
                        break;
                    }
                    if !discharged_any {
                        state.carry[lane] += per_tick;
                        discharged_any = true;
                    }
                    if state.carry[lane] < 1.0 - 1e-9 {
                        break;
                    }
                    state.carry[lane] -= 1.0;
                    state.queues[lane].pop_front();
                    let veh = &mut state.vehicles[v as usize];
                    veh.record.waiting_ticks += now - veh.queued_since;
                    veh.pos += 1;
                    let arrive = now + self.lanes[next].travel_ticks;
                    state.moving[next].push_back((v, arrive));
                }
                if !discharged_any || state.queues[lane].is_empty() {
                    state.carry[lane] = 0.0;
                }
            }
        }

        for sig in &mut state.signals {
            if sig.active.is_none() {
                continue;
            }
            if sig.lost_remaining > 0 {
                sig.lost_remaining -= 1;
            } else if sig.remaining_green > 0 {
                sig.remaining_green -= 1;
                sig.green_elapsed += 1;
            }
        }
        state.clock += 1;
    }

    /// Queue vector of `node`'s incoming lanes after applying `action` there
    /// and stepping `delta` ticks with demand frozen. Other intersections
    /// hold their current action. `state` is not modified.
    pub fn rollout_predict(
        &self,
        state: &SimState,
        node: usize,
        action: TimingAction,
        delta: u64,
    ) -> Result<Vec<u32>, SimError> {
        let mut sim = state.clone();
        self.apply_timing(&mut sim, node, action)?;
        for _ in 0..delta.max(1) {
            for k in 0..self.nodes.len() {
                if let (true, Some(held)) = (self.needs_decision(&sim, k), sim.signals[k].active) {
                    self.apply_timing(&mut sim, k, held)?;
                }
            }
            self.step(&mut sim);
        }
        Ok(self.nodes[node].incoming.iter().map(|&l| sim.queue_len(l)).collect())
    }

    /// Mean queued vehicles over stop-line lanes.
    pub fn mean_stop_line_queue(&self, state: &SimState) -> f64 {
        if self.stop_lines.is_empty() {
            return 0.0;
        }
        let total: u64 = self.stop_lines.iter().map(|&l| state.queues[l].len() as u64).sum();
        total as f64 / self.stop_lines.len() as f64
    }
}

/// Rolling window of recent per-lane queue snapshots, oldest first.
#[derive(Debug, Clone, Default)]
pub struct QueueTrace {
    snapshots: VecDeque<Vec<u32>>,
    capacity: usize,
}

impl QueueTrace {
    pub fn new(capacity: usize) -> Self {
        Self {
            snapshots: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, snapshot: Vec<u32>) {
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(snapshot);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> impl DoubleEndedIterator<Item = &Vec<u32>> + ExactSizeIterator {
        self.snapshots.iter()
    }
}

/// Per-tick network mean stop-line queue, in vehicles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueHistory {
    pub mean_queue: Vec<f64>,
}

impl QueueHistory {
    pub fn record(&mut self, sim: &Simulator, state: &SimState) {
        self.mean_queue.push(sim.mean_stop_line_queue(state));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Seconds; `None` when nothing completed.
    pub att: Option<f64>,
    /// Meters.
    pub aql: f64,
    /// Seconds; `None` when nothing completed.
    pub awt: Option<f64>,
    pub completed: u64,
    pub spawned: u64,
}

impl MetricsReport {
    pub fn no_completions(&self) -> bool {
        self.completed == 0
    }
}

pub fn compute_metrics(records: &[VehicleRecord], history: &QueueHistory, cfg: &SimConfig) -> MetricsReport {
    let done: Vec<&VehicleRecord> = records.iter().filter(|r| r.completion_tick.is_some()).collect();
    let (att, awt) = if done.is_empty() {
        (None, None)
    } else {
        let n = done.len() as f64;
        let travel: u64 = done
            .iter()
            .map(|r| r.completion_tick.unwrap_or(r.spawn_tick) - r.spawn_tick)
            .sum();
        let wait: u64 = done.iter().map(|r| r.waiting_ticks).sum();
        (
            Some(travel as f64 / n * cfg.tick),
            Some(wait as f64 / n * cfg.tick),
        )
    };
    let aql = if history.mean_queue.is_empty() {
        0.0
    } else {
        history.mean_queue.iter().sum::<f64>() / history.mean_queue.len() as f64 * cfg.vehicle_length
    };
    MetricsReport {
        att,
        aql,
        awt,
        completed: done.len() as u64,
        spawned: records.len() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_single_record() {
        let rec = VehicleRecord {
            id: 0,
            spawn_tick: 0,
            completion_tick: Some(100),
            waiting_ticks: 40,
        };
        let m = compute_metrics(&[rec], &QueueHistory::default(), &SimConfig::default());
        assert_eq!(m.att, Some(100.0));
        assert_eq!(m.awt, Some(40.0));
        assert_eq!(m.completed, 1);
    }

    #[test]
    fn metrics_without_completions_are_flagged() {
        let rec = VehicleRecord {
            id: 0,
            spawn_tick: 3,
            completion_tick: None,
            waiting_ticks: 2,
        };
        let m = compute_metrics(&[rec], &QueueHistory::default(), &SimConfig::default());
        assert!(m.no_completions());
        assert_eq!(m.att, None);
        assert_eq!(m.awt, None);
        assert_eq!(m.spawned, 1);
    }

    #[test]
    fn identical_records_give_exact_att() {
        let recs: Vec<_> = (0..7)
            .map(|i| VehicleRecord {
                id: i,
                spawn_tick: 10,
                completion_tick: Some(47),
                waiting_ticks: 5,
            })
            .collect();
        let cfg = SimConfig {
            tick: 0.5,
            ..SimConfig::default()
        };
        let m = compute_metrics(&recs, &QueueHistory::default(), &cfg);
        assert_eq!(m.att, Some(18.5));
    }

    #[test]
    fn aql_uses_vehicle_footprint() {
        let h = QueueHistory {
            mean_queue: vec![1.0, 3.0],
        };
        let m = compute_metrics(&[], &h, &SimConfig::default());
        assert_eq!(m.aql, 15.0);
    }

    #[test]
    fn tick_conversion() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.ticks_for(15.0), 15);
        assert_eq!(cfg.ticks_for(0.2), 1);
        assert_eq!(cfg.lost_ticks(), 3);
        let cfg = SimConfig {
            lost_time: 0.0,
            ..cfg
        };
        assert_eq!(cfg.lost_ticks(), 0);
    }

    #[test]
    fn rate_windows_are_half_open() {
        let f = Flow {
            route: vec![LaneId(1), LaneId(2)],
            rates: vec![
                RateWindow { start: 0.0, end: 10.0, vph: 100.0 },
                RateWindow { start: 10.0, end: 20.0, vph: 50.0 },
            ],
        };
        assert_eq!(f.rate_at(0.0), 100.0);
        assert_eq!(f.rate_at(10.0), 50.0);
        assert_eq!(f.rate_at(20.0), 0.0);
    }
}
