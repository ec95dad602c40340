//! Signal controllers: the Random / FixedTime / MaxPressure baselines and
//! the RL assistant (pressure-based phase selection, history anchors plus
//! generative duration proposals, distributional critic selection).

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::sim::{QueueTrace, SimState, Simulator, TimingAction};

/// Served `(from lane, to lane)` pairs of one phase, as dense lane indices.
pub type PhaseLanes = Vec<(usize, usize)>;

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_POOL_CAPACITY: usize = 4096;
pub const DEFAULT_HISTORY_K: usize = 3;
pub const DEFAULT_GENERATIVE_N: usize = 5;
pub const DEFAULT_MAX_PRESSURE_DURATION: f64 = 15.0;
pub const DEFAULT_FIXED_TIME_DURATION: f64 = 20.0;

/// Controller selection as it appears in scenario files and requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Random,
    FixedTime {
        #[serde(default = "default_fixed_duration")]
        duration: f64,
        /// Phase cycle (1-based). Defaults to a greedy movement cover.
        #[serde(default)]
        order: Option<Vec<usize>>,
    },
    MaxPressure {
        #[serde(default = "default_mp_duration")]
        duration: f64,
    },
    RlAssistant(#[serde(default)] RlConfig),
}

fn default_fixed_duration() -> f64 {
    DEFAULT_FIXED_TIME_DURATION
}

fn default_mp_duration() -> f64 {
    DEFAULT_MAX_PRESSURE_DURATION
}

impl ControllerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerSpec::Random => "random",
            ControllerSpec::FixedTime { .. } => "fixed_time",
            ControllerSpec::MaxPressure { .. } => "max_pressure",
            ControllerSpec::RlAssistant(_) => "rl_assistant",
        }
    }

    /// Rejects settings no run could use.
    pub fn validate(&self) -> Result<(), String> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{} {what} must be a positive number, got {v}", self.name()))
            }
        };
        match self {
            ControllerSpec::Random => Ok(()),
            ControllerSpec::FixedTime { duration, order } => {
                positive("duration", *duration)?;
                match order {
                    Some(o) if o.is_empty() || o.contains(&0) => {
                        Err("fixed_time order must list 1-based phase indices".into())
                    }
                    _ => Ok(()),
                }
            }
            ControllerSpec::MaxPressure { duration } => positive("duration", *duration),
            ControllerSpec::RlAssistant(cfg) => cfg.validate(),
        }
    }

    pub fn max_pressure() -> Self {
        ControllerSpec::MaxPressure {
            duration: DEFAULT_MAX_PRESSURE_DURATION,
        }
    }

    pub fn fixed_time() -> Self {
        ControllerSpec::FixedTime {
            duration: DEFAULT_FIXED_TIME_DURATION,
            order: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    /// History window W in ticks.
    pub window: usize,
    pub pool_capacity: usize,
    pub history_k: usize,
    pub generative_n: usize,
    pub quantiles: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Generative noise schedule in seconds, non-increasing.
    pub noise_schedule: Vec<f64>,
    /// Probability of an exploratory duration while training.
    pub explore: f64,
    /// Training episodes run before each evaluated seed.
    pub train_episodes: usize,
    pub map_bins: usize,
    /// Extra critic passes over the episode's transitions at episode end.
    pub replay_passes: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            pool_capacity: DEFAULT_POOL_CAPACITY,
            history_k: DEFAULT_HISTORY_K,
            generative_n: DEFAULT_GENERATIVE_N,
            quantiles: 8,
            learning_rate: 0.05,
            gamma: 0.0,
            noise_schedule: vec![12.0, 8.0, 5.0],
            explore: 0.2,
            train_episodes: 2,
            map_bins: 10,
            replay_passes: 10,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("window", self.window),
            ("pool_capacity", self.pool_capacity),
            ("quantiles", self.quantiles),
            ("map_bins", self.map_bins),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(format!("rl_assistant {name} must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("rl_assistant learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("rl_assistant gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.explore) {
            return Err(format!("rl_assistant explore must be in [0, 1], got {}", self.explore));
        }
        let s = &self.noise_schedule;
        if s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || s.windows(2).any(|w| w[1] > w[0]) {
            return Err("rl_assistant noise_schedule must be non-negative and non-increasing".into());
        }
        Ok(())
    }
}

/// Compact per-intersection state `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEncoding {
    /// W rows (oldest first) of incoming-lane queues.
    pub window: Vec<Vec<f64>>,
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
    /// Latest queue on each outgoing lane.
    pub outgoing_queues: Vec<f64>,
    /// Pressure of each phase, in phase order.
    pub pressures: Vec<f64>,
    pub phase: Option<usize>,
    /// Green ticks elapsed in the active phase.
    pub elapsed: u64,
}

impl StateEncoding {
    pub fn current(&self) -> &[f64] {
        self.window.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_queue(&self) -> f64 {
        self.current().iter().sum()
    }

    fn lane_queue(&self, lane: usize) -> f64 {
        if let Some(k) = self.incoming.iter().position(|&l| l == lane) {
            return self.current().get(k).copied().unwrap_or(0.0);
        }
        if let Some(k) = self.outgoing.iter().position(|&l| l == lane) {
            return self.outgoing_queues.get(k).copied().unwrap_or(0.0);
        }
        0.0
    }

    fn pressure_of(&self, phase: &PhaseLanes) -> f64 {
        phase
            .iter()
            .map(|&(from, to)| self.lane_queue(from) - self.lane_queue(to))
            .sum()
    }

    /// Pressure of 1-based phase `p`, zero when out of range.
    pub fn pressure(&self, p: usize) -> f64 {
        p.checked_sub(1)
            .and_then(|i| self.pressures.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// `[total queue, pressure of p, longest queue]`, the pool lookup key.
    pub fn digest(&self, p: usize) -> [f64; 3] {
        let longest = self.current().iter().copied().fold(0.0, f64::max);
        [self.total_queue(), self.pressure(p), longest]
    }
}

/// Encodes the last `w` snapshots of `trace` (zero-padded at the front when
/// shorter) restricted to `incoming`, plus phase pressures from the newest
/// snapshot.
pub fn encode_state(
    trace: &[Vec<u32>],
    incoming: &[usize],
    outgoing: &[usize],
    phases: &[PhaseLanes],
    phase: Option<usize>,
    elapsed: u64,
    w: usize,
) -> StateEncoding {
    let w = w.max(1);
    let tail = &trace[trace.len().saturating_sub(w)..];
    let mut window = vec![vec![0.0; incoming.len()]; w - tail.len()];
    window.extend(
        tail.iter()
            .map(|snap| incoming.iter().map(|&l| f64::from(snap.get(l).copied().unwrap_or(0))).collect()),
    );
    let outgoing_queues = match tail.last() {
        Some(snap) => outgoing
            .iter()
            .map(|&l| f64::from(snap.get(l).copied().unwrap_or(0)))
            .collect(),
        None => vec![0.0; outgoing.len()],
    };
    let mut h = StateEncoding {
        window,
        incoming: incoming.to_vec(),
        outgoing: outgoing.to_vec(),
        outgoing_queues,
        pressures: Vec::new(),
        phase,
        elapsed,
    };
    h.pressures = phases.iter().map(|p| h.pressure_of(p)).collect();
    h
}

/// 1-based index of the phase with the largest pressure; ties go to the
/// lowest index.
pub fn pressure_select_phase(h: &StateEncoding, phases: &[PhaseLanes]) -> usize {
    let mut best = 1;
    let mut best_value = f64::NEG_INFINITY;
    for (i, phase) in phases.iter().enumerate() {
        let v = h.pressure_of(phase);
        if v > best_value {
            best_value = v;
            best = i + 1;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub digest: [f64; 3],
    pub phase: usize,
    pub duration: f64,
    pub ret: f64,
}

impl PoolEntry {
    pub fn queue_level(&self) -> f64 {
        self.digest[0]
    }
}

/// Ring buffer of executed decisions and their realized returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperiencePool {
    capacity: usize,
    entries: VecDeque<PoolEntry>,
}

impl ExperiencePool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, entry: PoolEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter()
    }
}

fn digest_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Up to `k` durations executed for phase `p` in the states nearest to `h`,
/// best return first.
pub fn propose_history(pool: &ExperiencePool, h: &StateEncoding, p: usize, k: usize) -> Vec<f64> {
    let key = h.digest(p);
    let mut near: Vec<(f64, &PoolEntry)> = pool
        .entries()
        .filter(|e| e.phase == p)
        .map(|e| (digest_distance(&e.digest, &key), e))
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    near.truncate(k);
    near.sort_by(|a, b| b.1.ret.total_cmp(&a.1.ret));
    near.into_iter().map(|(_, e)| e.duration).collect()
}

/// Annealed-noise duration sampler around a learned conditional mean
/// `mu(h, p) = w . [1, Q/20, P/20]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeDurationSampler {
    /// Std-devs in seconds, one per denoising step, non-increasing.
    pub schedule: Vec<f64>,
    pub mean_weights: [f64; 3],
}

impl GenerativeDurationSampler {
    pub fn new(schedule: Vec<f64>, initial_mean: f64) -> Self {
        Self {
            schedule,
            mean_weights: [initial_mean, 0.0, 0.0],
        }
    }

    fn mean_features(h: &StateEncoding, p: usize) -> [f64; 3] {
        [1.0, h.total_queue() / 20.0, h.pressure(p) / 20.0]
    }

    pub fn mean(&self, h: &StateEncoding, p: usize) -> f64 {
        let x = Self::mean_features(h, p);
        x.iter().zip(&self.mean_weights).map(|(a, b)| a * b).sum()
    }

    /// Refits the conditional mean toward the best-return durations of the
    /// pool: within each queue-level bucket, the top quarter of entries by
    /// return are regression targets (ridge least squares).
    pub fn fit(&mut self, pool: &ExperiencePool, bins: usize) {
        if pool.is_empty() {
            return;
        }
        let entries: Vec<&PoolEntry> = pool.entries().collect();
        let (lo, hi) = queue_range(entries.iter().copied());
        let bins = bins.max(1);
        let mut buckets: Vec<Vec<&PoolEntry>> = vec![Vec::new(); bins];
        for e in &entries {
            buckets[bucket_of(e.queue_level(), lo, hi, bins)].push(e);
        }
        let mut xtx = Matrix3::<f64>::identity() * 1e-3;
        let mut xty = Vector3::<f64>::zeros();
        let mut used = 0usize;
        for mut bucket in buckets {
            if bucket.is_empty() {
                continue;
            }
            bucket.sort_by(|a, b| b.ret.total_cmp(&a.ret));
            let keep = bucket.len().div_ceil(4);
            for e in &bucket[..keep] {
                let x = Vector3::new(1.0, e.digest[0] / 20.0, e.digest[1] / 20.0);
                xtx += x * x.transpose();
                xty += x * e.duration;
                used += 1;
            }
        }
        if used == 0 {
            return;
        }
        if let Some(inv) = xtx.try_inverse() {
            let w = inv * xty;
            if w.iter().all(|v| v.is_finite()) {
                self.mean_weights = [w[0], w[1], w[2]];
            }
        }
    }
}

/// `n` durations from the sampler for `(h, p)`, clamped to `bounds`.
///
/// Each draw starts at `mu + sigma_1 * eps` and takes one step per schedule
/// entry, contracting the offset from `mu` and re-injecting noise so the
/// marginal spread after step t is `sigma_t`.
pub fn propose_generative(
    sampler: &GenerativeDurationSampler,
    h: &StateEncoding,
    p: usize,
    n: usize,
    bounds: (f64, f64),
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mu = sampler.mean(h, p);
    let schedule = &sampler.schedule;
    (0..n)
        .map(|_| {
            let Some(&first) = schedule.first() else {
                return mu.clamp(bounds.0, bounds.1);
            };
            let eps: f64 = rng.sample(StandardNormal);
            let mut x = mu + first * eps;
            for pair in schedule.windows(2) {
                let (prev, next) = (pair[0], pair[1]);
                let eps: f64 = rng.sample(StandardNormal);
                x = if prev <= 0.0 {
                    mu
                } else {
                    let shrink = next / prev;
                    mu + shrink * (std::f64::consts::FRAC_1_SQRT_2 * (x - mu)
                        + std::f64::consts::FRAC_1_SQRT_2 * prev * eps)
                };
            }
            x.clamp(bounds.0, bounds.1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    History,
    Generative,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub duration: f64,
    pub source: CandidateSource,
}

/// Candidate durations for one phase, ascending, whole seconds, unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub phase: usize,
    pub items: Vec<Candidate>,
}

impl CandidateSet {
    pub fn durations(&self) -> Vec<f64> {
        self.items.iter().map(|c| c.duration).collect()
    }
}

fn snap_duration(d: f64, (lo, hi): (f64, f64)) -> f64 {
    let (whole_lo, whole_hi) = (lo.ceil(), hi.floor());
    let r = d.clamp(lo, hi).round();
    if whole_lo <= whole_hi {
        r.clamp(whole_lo, whole_hi)
    } else {
        d.clamp(lo, hi)
    }
}

/// Union of history anchors and generative samples: clamped, rounded to
/// whole seconds and deduplicated (history wins ties of provenance). Falls
/// back to the bound midpoint when both inputs are empty.
pub fn build_candidates(phase: usize, hist: &[f64], gen: &[f64], bounds: (f64, f64)) -> CandidateSet {
    let mut items: Vec<Candidate> = Vec::new();
    let tagged = hist
        .iter()
        .map(|&d| (d, CandidateSource::History))
        .chain(gen.iter().map(|&d| (d, CandidateSource::Generative)));
    for (d, source) in tagged {
        if !d.is_finite() {
            continue;
        }
        let duration = snap_duration(d, bounds);
        if !items.iter().any(|c| c.duration == duration) {
            items.push(Candidate { duration, source });
        }
    }
    if items.is_empty() {
        items.push(Candidate {
            duration: snap_duration((bounds.0 + bounds.1) / 2.0, bounds),
            source: CandidateSource::Fallback,
        });
    }
    items.sort_by(|a, b| a.duration.total_cmp(&b.duration));
    CandidateSet { phase, items }
}

/// Number of critic features.
pub const CRITIC_FEATURES: usize = 10;
const QUEUE_SCALE: f64 = 20.0;
const DURATION_SCALE: f64 = 60.0;

/// Linear-quantile distributional critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticModel {
    /// Strictly increasing levels in (0, 1).
    pub levels: Vec<f64>,
    /// One weight vector per level.
    pub weights: Vec<[f64; CRITIC_FEATURES]>,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Huber threshold of the quantile loss.
    pub kappa: f64,
}

impl CriticModel {
    /// Zero-initialized critic with `k` midpoint quantile levels.
    pub fn new(k: usize, learning_rate: f64, gamma: f64) -> Self {
        let k = k.max(1);
        let levels = (0..k).map(|i| (2 * i + 1) as f64 / (2 * k) as f64).collect();
        Self {
            levels,
            weights: vec![[0.0; CRITIC_FEATURES]; k],
            learning_rate,
            gamma,
            kappa: 1.0,
        }
    }

    /// `[1, Q, P, d, d^2, d*P, d*Q, elapsed, s, s*d]` with queues over 20
    /// vehicles, duration over 60 s, elapsed green over 60 ticks and `s` = 1
    /// when `p` differs from the active phase.
    pub fn features(h: &StateEncoding, p: usize, d: f64) -> [f64; CRITIC_FEATURES] {
        let q = h.total_queue() / QUEUE_SCALE;
        let pr = h.pressure(p) / QUEUE_SCALE;
        let dn = d / DURATION_SCALE;
        let s = if h.phase == Some(p) { 0.0 } else { 1.0 };
        [1.0, q, pr, dn, dn * dn, dn * pr, dn * q, h.elapsed as f64 / 60.0, s, s * dn]
    }

    fn raw(&self, x: &[f64; CRITIC_FEATURES]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Sorted quantile outputs and their mean for `(h, p, d)`. Sorting is the
/// monotone rearrangement that keeps quantiles non-crossing.
pub fn critic_value(q: &CriticModel, h: &StateEncoding, p: usize, d: f64) -> (Vec<f64>, f64) {
    let mut z = q.raw(&CriticModel::features(h, p, d));
    z.sort_by(f64::total_cmp);
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    (z, mean)
}

/// Candidate with the highest critic expectation; ties go to the shorter
/// green.
pub fn select_duration(candidates: &CandidateSet, q: &CriticModel, h: &StateEncoding) -> f64 {
    let mut best = candidates.items[0].duration;
    let mut best_value = f64::NEG_INFINITY;
    let mut sorted = candidates.durations();
    sorted.sort_by(f64::total_cmp);
    for d in sorted {
        let (_, v) = critic_value(q, h, candidates.phase, d);
        if v > best_value {
            best_value = v;
            best = d;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub h: StateEncoding,
    pub phase: usize,
    pub duration: f64,
    pub reward: f64,
    /// Critic expectation of the best candidate at the next decision.
    pub next_best: f64,
    /// Seconds between the two decisions; the bootstrap is discounted by
    /// `gamma^elapsed`.
    pub elapsed: f64,
}

/// One pass of quantile-Huber TD(0) over `transitions`, with
/// normalized-LMS step sizes.
pub fn critic_update(q: &mut CriticModel, transitions: &[Transition]) {
    if q.learning_rate == 0.0 {
        return;
    }
    for t in transitions {
        let target = t.reward + q.gamma.powf(t.elapsed) * t.next_best;
        if !target.is_finite() {
            continue;
        }
        let x = CriticModel::features(&t.h, t.phase, t.duration);
        let norm: f64 = x.iter().map(|v| v * v).sum();
        let z = q.raw(&x);
        for (k, w) in q.weights.iter_mut().enumerate() {
            let u = target - z[k];
            let tau = q.levels[k];
            let indicator = if u < 0.0 { 1.0 } else { 0.0 };
            let huber = if u.abs() <= q.kappa { u / q.kappa } else { u.signum() };
            let g = (tau - indicator).abs() * huber;
            let step = q.learning_rate * g / norm;
            for (wi, xi) in w.iter_mut().zip(&x) {
                *wi += step * xi;
            }
        }
    }
}

fn queue_range<'a>(entries: impl Iterator<Item = &'a PoolEntry>) -> (f64, f64) {
    entries.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
        (lo.min(e.queue_level()), hi.max(e.queue_level()))
    })
}

fn bucket_of(level: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let frac = (level - lo) / (hi - lo);
    ((frac * bins as f64) as usize).min(bins - 1)
}

/// Historical time–queue map: entries bucketed into `bins` equal-width
/// total-queue buckets; per non-empty bucket, its center and the duration
/// with the best realized return.
pub fn build_time_queue_map(pool: &ExperiencePool, bins: usize) -> Vec<(f64, f64)> {
    if pool.is_empty() || bins == 0 {
        return Vec::new();
    }
    let (lo, hi) = queue_range(pool.entries());
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 0.0 };
    let mut best: Vec<Option<&PoolEntry>> = vec![None; bins];
    for e in pool.entries() {
        let b = bucket_of(e.queue_level(), lo, hi, bins);
        if best[b].is_none_or(|cur| e.ret > cur.ret) {
            best[b] = Some(e);
        }
    }
    best.into_iter()
        .enumerate()
        .filter_map(|(b, e)| e.map(|e| (lo + width * (b as f64 + 0.5), e.duration)))
        .collect()
}

/// What the RL assistant would do, with the evidence shown to the LLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlProposal {
    pub action: TimingAction,
    /// Critic expectation of the action.
    pub q_rl: f64,
    pub candidates: CandidateSet,
    /// Predicted incoming-lane queues after the action.
    pub rollout: Vec<u32>,
    /// `(queue level, best historical duration)` near the current level.
    pub map_excerpt: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSchedule {
    pub order: Vec<usize>,
    pub duration: f64,
}

/// Greedy movement cover: repeatedly take the phase serving the most
/// not-yet-covered movements (lowest index on ties), then cycle in index
/// order.
pub fn default_cycle(phases: &[PhaseLanes]) -> Vec<usize> {
    let mut uncovered: Vec<(usize, usize)> = phases.iter().flatten().copied().collect();
    uncovered.sort_unstable();
    uncovered.dedup();
    let mut chosen = Vec::new();
    while !uncovered.is_empty() {
        let (best, gain) = phases
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.iter().filter(|m| uncovered.contains(m)).count()))
            .fold((0, 0), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
        if gain == 0 {
            break;
        }
        uncovered.retain(|m| !phases[best].contains(m));
        chosen.push(best + 1);
    }
    chosen.sort_unstable();
    if chosen.is_empty() {
        chosen.push(1);
    }
    chosen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    FixedTime,
    MaxPressure,
}

/// One baseline decision. `cycle_pos` is the fixed-time position to use and
/// is advanced by the caller.
pub fn baseline_action(
    kind: BaselineKind,
    h: &StateEncoding,
    phases: &[PhaseLanes],
    bounds: (f64, f64),
    rng: &mut impl Rng,
    schedule: &FixedSchedule,
    cycle_pos: usize,
    mp_duration: f64,
) -> TimingAction {
    match kind {
        BaselineKind::Random => TimingAction {
            phase: rng.gen_range(1..=phases.len().max(1)),
            duration: rng.gen_range(bounds.0.ceil()..=bounds.1.floor().max(bounds.0.ceil())),
        },
        BaselineKind::FixedTime => TimingAction {
            phase: schedule.order[cycle_pos % schedule.order.len()],
            duration: schedule.duration.clamp(bounds.0, bounds.1),
        },
        BaselineKind::MaxPressure => TimingAction {
            phase: pressure_select_phase(h, phases),
            duration: mp_duration.clamp(bounds.0, bounds.1),
        },
    }
}

/// What a controller sees at a decision point.
pub struct DecisionContext<'a> {
    pub sim: &'a Simulator,
    pub state: &'a SimState,
    pub trace: &'a QueueTrace,
    pub node: usize,
}

impl DecisionContext<'_> {
    pub fn encode(&self, w: usize) -> StateEncoding {
        let snaps: Vec<Vec<u32>> = self
            .trace
            .snapshots()
            .skip(self.trace.len().saturating_sub(w))
            .cloned()
            .collect();
        let sig = self.state.signal(self.node);
        encode_state(
            &snaps,
            self.sim.incoming(self.node),
            self.sim.outgoing(self.node),
            self.sim.phase_lanes(self.node),
            sig.active.map(|a| a.phase),
            sig.green_elapsed,
            w,
        )
    }
}

pub trait Controller: Send {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> TimingAction;

    /// Called once when an episode ends.
    fn end_episode(&mut self) {}
}

/// Random, FixedTime or MaxPressure over every intersection.
pub struct BaselineController {
    kind: BaselineKind,
    rng: ChaCha8Rng,
    schedules: Vec<FixedSchedule>,
    cycle_pos: Vec<usize>,
    mp_duration: f64,
}

impl BaselineController {
    pub fn new(spec: &ControllerSpec, sim: &Simulator, seed: u64) -> Self {
        let (kind, fixed_duration, order, mp_duration) = match spec {
            ControllerSpec::Random => (BaselineKind::Random, DEFAULT_FIXED_TIME_DURATION, None, DEFAULT_MAX_PRESSURE_DURATION),
            ControllerSpec::FixedTime { duration, order } => {
                (BaselineKind::FixedTime, *duration, order.clone(), DEFAULT_MAX_PRESSURE_DURATION)
            }
            ControllerSpec::MaxPressure { duration } => {
                (BaselineKind::MaxPressure, DEFAULT_FIXED_TIME_DURATION, None, *duration)
            }
            ControllerSpec::RlAssistant(_) => {
                (BaselineKind::MaxPressure, DEFAULT_FIXED_TIME_DURATION, None, DEFAULT_MAX_PRESSURE_DURATION)
            }
        };
        let schedules = (0..sim.intersection_count())
            .map(|node| {
                let phases = sim.phase_lanes(node);
                let order = match &order {
                    Some(o) => o.iter().copied().filter(|&p| p >= 1 && p <= phases.len()).collect::<Vec<_>>(),
                    None => default_cycle(phases),
                };
                FixedSchedule {
                    order: if order.is_empty() { vec![1] } else { order },
                    duration: fixed_duration,
                }
            })
            .collect();
        Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xC0_17_A5),
            schedules,
            cycle_pos: vec![0; sim.intersection_count()],
            mp_duration,
        }
    }
}

impl Controller for BaselineController {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> TimingAction {
        let h = if self.kind == BaselineKind::MaxPressure {
            ctx.encode(1)
        } else {
            StateEncoding {
                window: Vec::new(),
                incoming: Vec::new(),
                outgoing: Vec::new(),
                outgoing_queues: Vec::new(),
                pressures: Vec::new(),
                phase: None,
                elapsed: 0,
            }
        };
        let node = ctx.node;
        let action = baseline_action(
            self.kind,
            &h,
            ctx.sim.phase_lanes(node),
            ctx.sim.bounds(node),
            &mut self.rng,
            &self.schedules[node],
            self.cycle_pos[node],
            self.mp_duration,
        );
        self.cycle_pos[node] += 1;
        action
    }
}

#[derive(Debug, Clone)]
struct Pending {
    h: StateEncoding,
    phase: usize,
    duration: f64,
    queue_start: f64,
    tick_start: u64,
}

#[derive(Debug, Clone)]
struct Replay {
    t: Transition,
    next_h: StateEncoding,
    next: CandidateSet,
}

/// Serializable learned state of the RL assistant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlCheckpoint {
    pub version: u32,
    pub critic: CriticModel,
    pub sampler: GenerativeDurationSampler,
    pub pool: ExperiencePool,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Pressure-based phase selection with critic-selected durations, learning
/// online from per-decision queue-reduction rewards.
pub struct RlAssistant {
    pub cfg: RlConfig,
    pub critic: CriticModel,
    pub sampler: GenerativeDurationSampler,
    pub pool: ExperiencePool,
    pub training: bool,
    rng: ChaCha8Rng,
    pending: Vec<Option<Pending>>,
    replay: Vec<Replay>,
    tick: f64,
}

impl RlAssistant {
    pub fn new(cfg: RlConfig, seed: u64) -> Self {
        Self {
            critic: CriticModel::new(cfg.quantiles, cfg.learning_rate, cfg.gamma),
            sampler: GenerativeDurationSampler::new(cfg.noise_schedule.clone(), DEFAULT_MAX_PRESSURE_DURATION),
            pool: ExperiencePool::new(cfg.pool_capacity),
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_D1FF),
            pending: Vec::new(),
            replay: Vec::new(),
            tick: 1.0,
            cfg,
        }
    }

    pub fn from_checkpoint(cfg: RlConfig, ck: RlCheckpoint, seed: u64) -> Self {
        let mut me = Self::new(cfg, seed);
        me.critic = ck.critic;
        me.sampler = ck.sampler;
        me.pool = ck.pool;
        me
    }

    pub fn checkpoint(&self) -> RlCheckpoint {
        RlCheckpoint {
            version: CHECKPOINT_VERSION,
            critic: self.critic.clone(),
            sampler: self.sampler.clone(),
            pool: self.pool.clone(),
        }
    }

    /// Reseeds the exploration and sampling stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_D1FF);
    }

    /// History anchors and generative samples for phase `p`.
    pub fn candidates(&self, h: &StateEncoding, p: usize, bounds: (f64, f64), rng: &mut impl Rng) -> CandidateSet {
        let hist = propose_history(&self.pool, h, p, self.cfg.history_k);
        let gen = propose_generative(&self.sampler, h, p, self.cfg.generative_n, bounds, rng);
        build_candidates(p, &hist, &gen, bounds)
    }

    /// Reference proposal for `ctx.node`: pressure-selected phase, critic
    /// selected duration, its expectation, a rollout of the action and the
    /// time–queue map entries around the current queue level.
    pub fn reference(&self, ctx: &DecisionContext<'_>, rng: &mut impl Rng) -> Result<RlProposal, SimError> {
        let h = ctx.encode(self.cfg.window);
        let phases = ctx.sim.phase_lanes(ctx.node);
        let bounds = ctx.sim.bounds(ctx.node);
        let p = pressure_select_phase(&h, phases);
        let candidates = self.candidates(&h, p, bounds, rng);
        let d = select_duration(&candidates, &self.critic, &h);
        let (_, q_rl) = critic_value(&self.critic, &h, p, d);
        let action = TimingAction { phase: p, duration: d };
        let delta = ctx.sim.config().ticks_for(d);
        let rollout = ctx.sim.rollout_predict(ctx.state, ctx.node, action, delta)?;
        let map = build_time_queue_map(&self.pool, self.cfg.map_bins);
        let level = h.total_queue();
        let mut map_excerpt = map;
        map_excerpt.sort_by(|a, b| (a.0 - level).abs().total_cmp(&(b.0 - level).abs()));
        map_excerpt.truncate(3);
        map_excerpt.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(RlProposal {
            action,
            q_rl,
            candidates,
            rollout,
            map_excerpt,
        })
    }

    /// Closes the pending transition at `node` (if any) using the queue now
    /// observed, updating the critic and the pool.
    fn settle(&mut self, node: usize, h_now: &StateEncoding, next: &CandidateSet, clock: u64, next_best: f64) {
        let Some(prev) = self.pending.get_mut(node).and_then(Option::take) else {
            return;
        };
        let elapsed = ((clock - prev.tick_start) as f64 * self.tick).max(self.tick);
        let reward = -(h_now.total_queue() - prev.queue_start) / elapsed;
        if self.training {
            let t = Transition {
                h: prev.h.clone(),
                phase: prev.phase,
                duration: prev.duration,
                reward,
                next_best,
                elapsed,
            };
            critic_update(&mut self.critic, std::slice::from_ref(&t));
            self.replay.push(Replay {
                t,
                next_h: h_now.clone(),
                next: next.clone(),
            });
        }
        self.pool.push(PoolEntry {
            digest: prev.h.digest(prev.phase),
            phase: prev.phase,
            duration: prev.duration,
            ret: reward,
        });
    }
}

impl Controller for RlAssistant {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> TimingAction {
        if self.pending.len() < ctx.sim.intersection_count() {
            self.pending.resize(ctx.sim.intersection_count(), None);
        }
        self.tick = ctx.sim.config().tick;
        let h = ctx.encode(self.cfg.window);
        let phases = ctx.sim.phase_lanes(ctx.node);
        let bounds = ctx.sim.bounds(ctx.node);
        let p = pressure_select_phase(&h, phases);
        let mut rng = self.rng.clone();
        let candidates = self.candidates(&h, p, bounds, &mut rng);
        let greedy = select_duration(&candidates, &self.critic, &h);
        let (_, best_value) = critic_value(&self.critic, &h, p, greedy);
        let duration = if self.training && rng.gen_bool(self.cfg.explore.clamp(0.0, 1.0)) {
            snap_duration(rng.gen_range(bounds.0..=bounds.1), bounds)
        } else {
            greedy
        };
        self.rng = rng;
        self.settle(ctx.node, &h, &candidates, ctx.state.clock, best_value);
        self.pending[ctx.node] = Some(Pending {
            queue_start: h.total_queue(),
            h,
            phase: p,
            duration,
            tick_start: ctx.state.clock,
        });
        TimingAction { phase: p, duration }
    }

    fn end_episode(&mut self) {
        for slot in &mut self.pending {
            *slot = None;
        }
        let mut replay = std::mem::take(&mut self.replay);
        for _ in 0..self.cfg.replay_passes {
            replay.shuffle(&mut self.rng);
            let batch: Vec<Transition> = replay
                .iter()
                .map(|r| {
                    let d = select_duration(&r.next, &self.critic, &r.next_h);
                    let (_, next_best) = critic_value(&self.critic, &r.next_h, r.next.phase, d);
                    Transition { next_best, ..r.t.clone() }
                })
                .collect();
            critic_update(&mut self.critic, &batch);
        }
        self.sampler.fit(&self.pool, self.cfg.map_bins);
    }
}
