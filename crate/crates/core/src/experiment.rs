//! Episode loop and the experiment operations behind the CLI and service:
//! run, compare, curate, bench and validate.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{
    BaselineController, Controller, ControllerSpec, DecisionContext, RlAssistant,
    RlConfig, StateEncoding,
};
use crate::curation::{
    build_prompt, fuse_priority, label_record, partition_and_weight, reference_green, render_answer, render_history,
    render_state, rows_from_records, threshold_filter, DatasetRow, PriorityConfig, PromptRecord, Provenance, RecordIds,
};
use crate::deliberation::{action_id, deliberate, DeliberationConfig, DeliberationContext, Panel, ScoredAction};
use crate::error::{DeliberationError, Error, SimError};
use crate::scenario::{generate_grid, GridParams, ScenarioFile};
use crate::sim::{compute_metrics, MetricsReport, QueueHistory, QueueTrace, SimState, SpawnStreams, Simulator, TimingAction};

/// Snapshots kept for state encoding.
const TRACE_CAPACITY: usize = 16;

/// Hook called after every tick, used for trace output and invariant checks.
pub trait TickObserver {
    fn observe(&mut self, sim: &Simulator, state: &SimState);
}

impl TickObserver for () {
    fn observe(&mut self, _: &Simulator, _: &SimState) {}
}

impl<F: FnMut(&Simulator, &SimState)> TickObserver for F {
    fn observe(&mut self, sim: &Simulator, state: &SimState) {
        self(sim, state)
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub metrics: MetricsReport,
    pub state: SimState,
}

/// Runs `horizon` ticks: spawn, decide where green has expired, step,
/// record.
pub fn run_episode(
    sim: &Simulator,
    controller: &mut dyn Controller,
    seed: u64,
    horizon: u64,
    observer: &mut dyn TickObserver,
) -> Result<EpisodeOutcome, SimError> {
    let mut state = sim.initial_state();
    let mut streams = SpawnStreams::new(sim.demand(), seed);
    let mut trace = QueueTrace::new(TRACE_CAPACITY);
    let mut history = QueueHistory::default();
    trace.push(state.lane_queues());
    for _ in 0..horizon {
        sim.spawn_vehicles(&mut state, &mut streams);
        for node in 0..sim.intersection_count() {
            if sim.needs_decision(&state, node) {
                let action = controller.decide(&DecisionContext {
                    sim,
                    state: &state,
                    trace: &trace,
                    node,
                });
                sim.apply_timing(&mut state, node, action)?;
            }
        }
        sim.step(&mut state);
        history.record(sim, &state);
        trace.push(state.lane_queues());
        observer.observe(sim, &state);
    }
    controller.end_episode();
    let metrics = compute_metrics(&state.records(), &history, sim.config());
    Ok(EpisodeOutcome { metrics, state })
}

/// Builds the controller for one evaluated seed. The RL assistant first
/// trains for its configured number of episodes on derived seeds.
pub fn build_controller(spec: &ControllerSpec, sim: &Simulator, seed: u64, horizon: u64) -> Result<Box<dyn Controller>, SimError> {
    match spec {
        ControllerSpec::RlAssistant(cfg) => Ok(Box::new(train_assistant(cfg, sim, seed, horizon)?)),
        other => Ok(Box::new(BaselineController::new(other, sim, seed))),
    }
}

/// Trains an RL assistant for `cfg.train_episodes` episodes on seeds
/// derived from `seed`, then switches it to evaluation.
pub fn train_assistant(cfg: &RlConfig, sim: &Simulator, seed: u64, horizon: u64) -> Result<RlAssistant, SimError> {
    let mut agent = RlAssistant::new(cfg.clone(), seed);
    for ep in 0..cfg.train_episodes {
        let train_seed = seed.wrapping_add(1_000_003 * (ep as u64 + 1));
        agent.reseed(train_seed);
        run_episode(sim, &mut agent, train_seed, horizon, &mut ())?;
    }
    agent.training = false;
    agent.reseed(seed);
    Ok(agent)
}

// ---------------------------------------------------------------------------
// Requests and reports

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// One scenario, one controller, several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    /// Scenario label used in reports.
    pub name: String,
    pub scenario: ScenarioFile,
    /// Overrides the scenario's `sim.controller`.
    #[serde(default)]
    pub controller: Option<ControllerSpec>,
    pub seeds: Vec<u64>,
    /// Overrides the scenario's `sim.horizon`.
    #[serde(default)]
    pub horizon: Option<u64>,
    /// Seeds simulated in parallel; defaults to the number of CPUs.
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Record per-tick lane queues of the first seed.
    #[serde(default)]
    pub trace: bool,
}

struct Prepared {
    name: String,
    sim: Simulator,
    controller: ControllerSpec,
    seeds: Vec<u64>,
    horizon: u64,
    jobs: usize,
}

impl RunRequest {
    fn prepare(&self) -> Result<Prepared, Error> {
        if self.seeds.is_empty() {
            return Err(Error::Spec("at least one seed is required".into()));
        }
        let scenario = self.scenario.build()?;
        let controller = self
            .controller
            .clone()
            .or(scenario.controller.clone())
            .ok_or_else(|| Error::Spec("no controller given and the scenario names none".into()))?;
        controller.validate().map_err(Error::Spec)?;
        let horizon = self.horizon.unwrap_or(scenario.sim.horizon);
        if horizon == 0 {
            return Err(Error::Spec("horizon must be > 0".into()));
        }
        if let Some(0) = self.jobs {
            return Err(Error::Spec("jobs must be >= 1".into()));
        }
        let sim = Simulator::new(&scenario.network, &scenario.demand, &scenario.sim)?;
        Ok(Prepared {
            name: self.name.clone(),
            sim,
            controller,
            seeds: self.seeds.clone(),
            horizon,
            jobs: self.jobs.unwrap_or_else(default_jobs),
        })
    }
}

/// A metrics row; `seed` is `None` on the median row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub controller: String,
    pub seed: Option<u64>,
    pub att: Option<f64>,
    pub aql: f64,
    pub awt: Option<f64>,
    pub completed: f64,
    pub spawned: f64,
}

impl MetricsRow {
    fn from_report(scenario: &str, controller: &str, seed: u64, m: &MetricsReport) -> Self {
        Self {
            scenario: scenario.to_string(),
            controller: controller.to_string(),
            seed: Some(seed),
            att: m.att,
            aql: m.aql,
            awt: m.awt,
            completed: m.completed as f64,
            spawned: m.spawned as f64,
        }
    }
}

/// Median of the present values (mean of the middle two for even counts).
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn median_row(rows: &[MetricsRow]) -> MetricsRow {
    let first = &rows[0];
    MetricsRow {
        scenario: first.scenario.clone(),
        controller: first.controller.clone(),
        seed: None,
        att: median(rows.iter().filter_map(|r| r.att)),
        aql: median(rows.iter().map(|r| r.aql)).unwrap_or(0.0),
        awt: median(rows.iter().filter_map(|r| r.awt)),
        completed: median(rows.iter().map(|r| r.completed)).unwrap_or(0.0),
        spawned: median(rows.iter().map(|r| r.spawned)).unwrap_or(0.0),
    }
}

/// Per-tick lane queues of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueTraceReport {
    pub seed: u64,
    /// Lane ids, one per column.
    pub lanes: Vec<u32>,
    /// One row per tick.
    pub queues: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub controller: String,
    pub rows: Vec<MetricsRow>,
    pub median: MetricsRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<QueueTraceReport>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Spec(format!("cannot start worker pool: {e}")))
}

/// Simulates every seed (in parallel up to `jobs`) and aggregates the
/// median. Rows follow the order of `seeds`.
pub fn run(req: &RunRequest) -> Result<RunReport, Error> {
    let prep = req.prepare()?;
    let label = prep.controller.name();
    let first_seed = prep.seeds[0];
    let results: Vec<(MetricsReport, Option<Vec<Vec<u32>>>)> = pool(prep.jobs)?.install(|| {
        prep.seeds
            .par_iter()
            .map(|&seed| {
                let mut controller = build_controller(&prep.controller, &prep.sim, seed, prep.horizon)?;
                if req.trace && seed == first_seed {
                    let mut rows = Vec::with_capacity(prep.horizon as usize);
                    let mut observer = |_: &Simulator, state: &SimState| rows.push(state.lane_queues());
                    let out = run_episode(&prep.sim, controller.as_mut(), seed, prep.horizon, &mut observer)?;
                    Ok((out.metrics, Some(rows)))
                } else {
                    let out = run_episode(&prep.sim, controller.as_mut(), seed, prep.horizon, &mut ())?;
                    Ok((out.metrics, None))
                }
            })
            .collect::<Result<Vec<_>, SimError>>()
    })?;
    let mut trace = None;
    let mut rows = Vec::with_capacity(results.len());
    for (&seed, (metrics, queues)) in prep.seeds.iter().zip(results) {
        rows.push(MetricsRow::from_report(&prep.name, label, seed, &metrics));
        if let Some(queues) = queues {
            let lanes = (0..prep.sim.lane_count()).map(|i| prep.sim.lane_id(i).0).collect();
            trace = Some(QueueTraceReport { seed, lanes, queues });
        }
    }
    let median = median_row(&rows);
    Ok(RunReport {
        scenario: prep.name,
        controller: label.to_string(),
        rows,
        median,
        trace,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `scenario,controller,seed,ATT,AQL,AWT,completed,spawned`; the median
/// row has `median` in the seed column and missing values are empty.
pub fn write_metrics_csv(rows: &[MetricsRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "controller", "seed", "ATT", "AQL", "AWT", "completed", "spawned"])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.controller.clone(),
            r.seed.map_or_else(|| "median".to_string(), |s| s.to_string()),
            fmt_opt(r.att),
            r.aql.to_string(),
            fmt_opt(r.awt),
            r.completed.to_string(),
            r.spawned.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(trace: &QueueTraceReport, out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["tick".to_string()];
    header.extend(trace.lanes.iter().map(|l| format!("lane_{l}")));
    w.write_record(&header)?;
    for (t, row) in trace.queues.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(u32::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    pub runs: Vec<RunRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub label: String,
    pub att: Option<f64>,
    pub aql: f64,
    pub awt: Option<f64>,
    pub rank_att: usize,
    pub rank_aql: usize,
    pub rank_awt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario: String,
    /// Sorted by median ATT, missing last.
    pub entries: Vec<CompareEntry>,
    pub runs: Vec<RunReport>,
}

fn metric_order(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    }
}

/// Standard competition ranking ("1224"), lower is better, missing worst.
pub fn competition_ranks(values: &[Option<f64>]) -> Vec<usize> {
    values
        .iter()
        .map(|&v| 1 + values.iter().filter(|&&o| metric_order(o, v).is_lt()).count())
        .collect()
}

/// Runs each request and ranks the medians. All requests must share one
/// scenario.
pub fn compare(req: &CompareRequest) -> Result<CompareReport, Error> {
    if req.runs.len() < 2 {
        return Err(Error::Spec("compare needs at least two runs".into()));
    }
    let first = &req.runs[0];
    if let Some(other) = req.runs.iter().find(|r| r.scenario != first.scenario || r.name != first.name) {
        return Err(Error::Spec(format!(
            "runs use different scenarios ({} and {})",
            first.name, other.name
        )));
    }
    for r in &req.runs {
        r.prepare()?;
    }
    let runs = req.runs.iter().map(run).collect::<Result<Vec<_>, _>>()?;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let labels: Vec<String> = runs
        .iter()
        .map(|r| {
            let n = seen.entry(r.controller.clone()).or_insert(0);
            *n += 1;
            if *n == 1 { r.controller.clone() } else { format!("{}#{}", r.controller, n) }
        })
        .collect();
    let att: Vec<Option<f64>> = runs.iter().map(|r| r.median.att).collect();
    let aql: Vec<Option<f64>> = runs.iter().map(|r| Some(r.median.aql)).collect();
    let awt: Vec<Option<f64>> = runs.iter().map(|r| r.median.awt).collect();
    let (ra, rq, rw) = (competition_ranks(&att), competition_ranks(&aql), competition_ranks(&awt));
    let mut entries: Vec<CompareEntry> = (0..runs.len())
        .map(|i| CompareEntry {
            label: labels[i].clone(),
            att: att[i],
            aql: runs[i].median.aql,
            awt: awt[i],
            rank_att: ra[i],
            rank_aql: rq[i],
            rank_awt: rw[i],
        })
        .collect();
    entries.sort_by(|a, b| metric_order(a.att, b.att));
    Ok(CompareReport {
        scenario: first.name.clone(),
        entries,
        runs,
    })
}

pub fn write_compare_csv(entries: &[CompareEntry], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["controller", "ATT", "AQL", "AWT", "rank_ATT", "rank_AQL", "rank_AWT"])?;
    for e in entries {
        w.write_record([
            e.label.clone(),
            fmt_opt(e.att),
            e.aql.to_string(),
            fmt_opt(e.awt),
            e.rank_att.to_string(),
            e.rank_aql.to_string(),
            e.rank_awt.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table; ranks in parentheses.
pub fn format_compare_table(entries: &[CompareEntry]) -> String {
    let cell = |v: Option<f64>, r: usize| v.map_or_else(|| format!("- ({r})"), |x| format!("{x:.2} ({r})"));
    let rows: Vec<[String; 4]> = entries
        .iter()
        .map(|e| {
            [
                e.label.clone(),
                cell(e.att, e.rank_att),
                cell(Some(e.aql), e.rank_aql),
                cell(e.awt, e.rank_awt),
            ]
        })
        .collect();
    let header = ["controller".to_string(), "ATT (s)".into(), "AQL (m)".into(), "AWT (s)".into()];
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Curate

fn default_explore() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateRequest {
    pub run: RunRequest,
    #[serde(default)]
    pub priority: PriorityConfig,
    pub deliberation: DeliberationConfig,
    /// Probability that the executed action is a uniformly drawn candidate
    /// instead of the best fused one.
    #[serde(default = "default_explore")]
    pub explore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub total: usize,
    pub plus: usize,
    pub minus: usize,
    /// Records with priority at least kappa.
    pub high_priority: usize,
    pub deliberated: usize,
    pub rl_only: usize,
    pub non_deliberated: usize,
    pub consensus_failures: usize,
    /// One bin `[-1, 0)` for negative priorities, then ten bins over [0, 1].
    pub histogram: Vec<HistogramBin>,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateOutput {
    pub rows: Vec<DatasetRow>,
    pub report: CurationReport,
}

fn histogram(records: &[PromptRecord]) -> Vec<HistogramBin> {
    let mut bins = vec![HistogramBin {
        lo: crate::curation::NON_DELIBERATED_PRIORITY,
        hi: 0.0,
        count: 0,
    }];
    bins.extend((0..10).map(|i| HistogramBin {
        lo: i as f64 / 10.0,
        hi: (i + 1) as f64 / 10.0,
        count: 0,
    }));
    for r in records {
        let idx = if r.priority < 0.0 { 0 } else { 1 + ((r.priority * 10.0) as usize).min(9) };
        bins[idx].count += 1;
    }
    bins
}

/// Runs `fut` to completion from synchronous code: on the current runtime
/// when called from a blocking thread of one, else on a private one. Must
/// not be called from an async task.
fn block_on<F: std::future::Future>(fut: F) -> F::Output {
    match tokio::runtime::Handle::try_current() {
        Ok(handle) => handle.block_on(fut),
        Err(_) => tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("tokio runtime")
            .block_on(fut),
    }
}

/// Candidate actions: the critic's candidate durations for the two phases
/// with the highest pressure, each scored by the critic.
fn candidate_actions(
    agent: &RlAssistant,
    ctx: &DecisionContext<'_>,
    h: &StateEncoding,
    first: &crate::controllers::CandidateSet,
    rng: &mut ChaCha8Rng,
) -> Vec<ScoredAction> {
    let score = |phase: usize, d: f64| {
        let (_, q) = crate::controllers::critic_value(&agent.critic, h, phase, d);
        ScoredAction::new(TimingAction { phase, duration: d }, q)
    };
    let mut out: Vec<ScoredAction> = first.durations().into_iter().map(|d| score(first.phase, d)).collect();
    let phases = ctx.sim.phase_lanes(ctx.node);
    let mut order: Vec<usize> = (1..=phases.len()).filter(|&p| p != first.phase).collect();
    order.sort_by(|&a, &b| h.pressure(b).total_cmp(&h.pressure(a)).then(a.cmp(&b)));
    if let Some(&second) = order.first() {
        let set = agent.candidates(h, second, ctx.sim.bounds(ctx.node), rng);
        out.extend(set.durations().into_iter().map(|d| score(second, d)));
    }
    out
}

fn q_map(actions: &[ScoredAction]) -> BTreeMap<String, f64> {
    actions.iter().map(|a| (a.id.clone(), a.q_rl)).collect()
}

struct CurateSeed {
    records: Vec<PromptRecord>,
    metrics: MetricsReport,
    consensus_failures: usize,
}

fn curate_seed(
    name: &str,
    sim: &Simulator,
    agent: &RlAssistant,
    panel: &Panel,
    req: &CurateRequest,
    seed: u64,
    horizon: u64,
) -> Result<CurateSeed, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0_4A7E);
    let mut state = sim.initial_state();
    let mut streams = SpawnStreams::new(sim.demand(), seed);
    let mut trace = QueueTrace::new(TRACE_CAPACITY);
    let mut history = QueueHistory::default();
    let mut records = Vec::new();
    let mut consensus_failures = 0;
    trace.push(state.lane_queues());
    for _ in 0..horizon {
        sim.spawn_vehicles(&mut state, &mut streams);
        for node in 0..sim.intersection_count() {
            if !sim.needs_decision(&state, node) {
                continue;
            }
            let ctx = DecisionContext {
                sim,
                state: &state,
                trace: &trace,
                node,
            };
            let h = ctx.encode(agent.cfg.window);
            let proposal = agent.reference(&ctx, &mut rng)?;
            let level = h.total_queue();
            let candidates = candidate_actions(agent, &ctx, &h, &proposal.candidates, &mut rng);
            let lanes: Vec<_> = sim.incoming(node).iter().map(|&l| sim.lane_id(l)).collect();
            let state_text = render_state(sim.intersection_id(node), &lanes, &h);
            let dctx = DeliberationContext {
                state: state_text.clone(),
                candidates: candidates.clone(),
                history: render_history(&proposal, level),
            };
            let (action, priority, provenance, prompt) = match block_on(deliberate(&dctx, panel)) {
                Ok(d) => {
                    let fused = fuse_priority(&q_map(&d.kept), &d.summary.scores, &req.priority)?;
                    let action = if rng.gen_bool(req.explore.clamp(0.0, 1.0)) {
                        candidates[rng.gen_range(0..candidates.len())].action
                    } else {
                        let mut best = &d.kept[0];
                        for k in &d.kept[1..] {
                            if fused[&k.id] > fused[&best.id] {
                                best = k;
                            }
                        }
                        best.action
                    };
                    let (s, prov) = label_record(&action_id(&action), &fused);
                    (action, s, prov, build_prompt(&state_text, &proposal, level, Some(&d.summary)))
                }
                Err(DeliberationError::ConsensusUnavailable { attempts, last }) => {
                    tracing::warn!(attempts, %last, "consensus unavailable, keeping the RL action");
                    consensus_failures += 1;
                    let q = q_map(&candidates);
                    let keys: Vec<&String> = q.keys().collect();
                    let f = req.priority.f.apply(&q.values().copied().collect::<Vec<_>>());
                    let id = action_id(&proposal.action);
                    let s = keys.iter().position(|k| **k == id).map_or(0.5, |i| f[i]);
                    (proposal.action, s, Provenance::RlOnly, build_prompt(&state_text, &proposal, level, None))
                }
                Err(e) => return Err(e.into()),
            };
            let answer = render_answer(action, &h, reference_green(&proposal.map_excerpt, level));
            records.push(PromptRecord {
                prompt,
                answer,
                priority,
                provenance,
                ids: RecordIds {
                    scenario: name.to_string(),
                    intersection: sim.intersection_id(node).0,
                    tick: state.clock,
                },
            });
            sim.apply_timing(&mut state, node, action)?;
        }
        sim.step(&mut state);
        history.record(sim, &state);
        trace.push(state.lane_queues());
    }
    Ok(CurateSeed {
        records,
        metrics: compute_metrics(&state.records(), &history, sim.config()),
        consensus_failures,
    })
}

/// Collects priority-scored records: for every decision the RL assistant
/// proposes candidates, the panel deliberates, priorities are fused and one
/// action is executed and recorded. Seeds run in order.
pub fn curate(req: &CurateRequest) -> Result<CurateOutput, Error> {
    req.priority.validate().map_err(Error::Spec)?;
    if !(0.0..=1.0).contains(&req.explore) {
        return Err(Error::Spec(format!("explore must be in [0, 1], got {}", req.explore)));
    }
    let prep = req.run.prepare()?;
    let rl_cfg = match &prep.controller {
        ControllerSpec::RlAssistant(cfg) => cfg.clone(),
        _ => RlConfig::default(),
    };
    let panel = req.deliberation.build()?;
    let mut records = Vec::new();
    let mut metrics = Vec::new();
    let mut consensus_failures = 0;
    for &seed in &prep.seeds {
        let agent = train_assistant(&rl_cfg, &prep.sim, seed, prep.horizon)?;
        let out = curate_seed(&prep.name, &prep.sim, &agent, &panel, req, seed, prep.horizon)?;
        records.extend(out.records);
        metrics.push(MetricsRow::from_report(&prep.name, "curation", seed, &out.metrics));
        consensus_failures += out.consensus_failures;
    }
    let batch = partition_and_weight(&records, &req.priority);
    let count = |p: Provenance| records.iter().filter(|r| r.provenance == p).count();
    let report = CurationReport {
        total: records.len(),
        plus: batch.plus.len(),
        minus: batch.minus.len(),
        high_priority: threshold_filter(&records, req.priority.kappa).len(),
        deliberated: count(Provenance::Deliberated),
        rl_only: count(Provenance::RlOnly),
        non_deliberated: count(Provenance::NonDeliberated),
        consensus_failures,
        histogram: histogram(&records),
        metrics,
    };
    Ok(CurateOutput {
        rows: rows_from_records(&records),
        report,
    })
}

// ---------------------------------------------------------------------------
// Bench and validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchRequest {
    pub rows: usize,
    pub cols: usize,
    pub horizon: u64,
    pub seed: u64,
    pub demand_vph: f64,
}

impl Default for BenchRequest {
    fn default() -> Self {
        Self {
            rows: 13,
            cols: 14,
            horizon: 3600,
            seed: 1,
            demand_vph: GridParams::default().demand_vph,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub intersections: usize,
    pub lanes: usize,
    pub ticks: u64,
    pub wall_seconds: f64,
    pub ticks_per_second: f64,
    pub metrics: MetricsReport,
}

/// MaxPressure on a generated `rows x cols` grid, timed. Scenario
/// generation and compilation are excluded from the timing.
pub fn bench(req: &BenchRequest) -> Result<BenchReport, Error> {
    if req.rows == 0 || req.cols == 0 || req.horizon == 0 {
        return Err(Error::Spec("rows, cols and horizon must be > 0".into()));
    }
    let file = generate_grid(&GridParams {
        rows: req.rows,
        cols: req.cols,
        demand_vph: req.demand_vph,
        seed: req.seed,
        horizon: req.horizon,
        ..GridParams::default()
    });
    let scenario = file.build()?;
    let sim = Simulator::new(&scenario.network, &scenario.demand, &scenario.sim)?;
    let mut controller = BaselineController::new(&ControllerSpec::max_pressure(), &sim, req.seed);
    let started = Instant::now();
    let out = run_episode(&sim, &mut controller, req.seed, req.horizon, &mut ())?;
    let wall = started.elapsed().as_secs_f64();
    Ok(BenchReport {
        intersections: sim.intersection_count(),
        lanes: sim.lane_count(),
        ticks: req.horizon,
        wall_seconds: wall,
        ticks_per_second: req.horizon as f64 / wall.max(1e-9),
        metrics: out.metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSummary {
    pub id: u32,
    pub movements: usize,
    pub phases: usize,
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub intersections: Vec<IntersectionSummary>,
    pub lanes: usize,
    pub flows: usize,
}

pub fn validate(file: &ScenarioFile) -> Result<ValidationReport, Error> {
    let scenario = file.build()?;
    let intersections = scenario
        .network
        .intersections
        .iter()
        .map(|i| IntersectionSummary {
            id: i.id.0,
            movements: i.movements.len(),
            phases: i.phases.len(),
            d_min: i.d_min,
            d_max: i.d_max,
        })
        .collect();
    Ok(ValidationReport {
        intersections,
        lanes: file.lanes.len(),
        flows: scenario.demand.flows.len(),
    })
}
