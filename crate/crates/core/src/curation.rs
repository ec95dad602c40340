//! Priority-scored prompt/answer records: prompt construction, fusion of
//! critic values with consensus scores, filtering and sampling, the
//! weighted cross-entropy plus unlikelihood objective, and JSONL export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{RlProposal, StateEncoding};
use crate::deliberation::{ConsensusSummary, REFERENCE_GREEN_PREFIX};
use crate::error::CurationError;
use crate::network::{IntersectionId, LaneId};
use crate::sim::TimingAction;

pub const DATASET_HEADER: &str = "#curalight-dataset v1";
pub const HIDDEN_SECTION: &str = "[HIDDEN_CONTEXT]";
pub const NON_DELIBERATED_PRIORITY: f64 = -1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    #[default]
    MinMax,
    /// Standardize, then logistic.
    ZSigmoid,
}

impl Normalizer {
    /// Maps `values` into [0, 1] preserving order; constant input maps to
    /// 0.5.
    pub fn apply(self, values: &[f64]) -> Vec<f64> {
        if values.is_empty() {
            return Vec::new();
        }
        match self {
            Normalizer::MinMax => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
                } else {
                    vec![0.5; values.len()]
                }
            }
            Normalizer::ZSigmoid => {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    values.iter().map(|v| 1.0 / (1.0 + (-(v - mean) / sd).exp())).collect()
                } else {
                    vec![0.5; values.len()]
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorityConfig {
    /// Weight of the critic term in the fused priority.
    pub alpha: f64,
    /// Threshold of the high-priority subset.
    pub kappa: f64,
    /// Strength of the unlikelihood term.
    pub lambda_neg: f64,
    /// Temperature of score-based sampling.
    pub tau: f64,
    pub f: Normalizer,
    pub g: Normalizer,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            kappa: 0.5,
            lambda_neg: 0.3,
            tau: 0.25,
            f: Normalizer::MinMax,
            g: Normalizer::MinMax,
        }
    }
}

impl PriorityConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda_neg >= 0.0) {
            return Err(format!("lambda_neg must be >= 0, got {}", self.lambda_neg));
        }
        if !(self.tau > 0.0) {
            return Err(format!("tau must be > 0, got {}", self.tau));
        }
        if self.kappa.is_nan() {
            return Err("kappa must be a number".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Deliberated,
    RlOnly,
    NonDeliberated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordIds {
    pub scenario: String,
    pub intersection: u32,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    pub answer: String,
    pub priority: f64,
    pub provenance: Provenance,
    pub ids: RecordIds,
}

// ---------------------------------------------------------------------------
// Prompt text

/// `[STATE]` body: active phase, per-lane queues and per-phase pressures.
pub fn render_state(intersection: IntersectionId, lanes: &[LaneId], h: &StateEncoding) -> String {
    let mut out = String::new();
    let phase = h.phase.map_or_else(|| "none".to_string(), |p| p.to_string());
    let _ = writeln!(out, "{intersection}: active phase {phase}, green elapsed {} s", h.elapsed);
    for (k, lane) in lanes.iter().enumerate() {
        let history: Vec<String> = h.window.iter().map(|row| format!("{}", row.get(k).copied().unwrap_or(0.0))).collect();
        let _ = writeln!(out, "{lane}: queue {} (recent {})", h.current().get(k).copied().unwrap_or(0.0), history.join(" "));
    }
    for (i, p) in h.pressures.iter().enumerate() {
        let _ = writeln!(out, "phase {}: pressure {p}", i + 1);
    }
    out.trim_end().to_string()
}

/// Best historical green from the map entry nearest to `level`.
pub fn reference_green(map: &[(f64, f64)], level: f64) -> Option<f64> {
    map.iter()
        .min_by(|a, b| (a.0 - level).abs().total_cmp(&(b.0 - level).abs()))
        .map(|&(_, d)| d)
}

/// History section shared by prompts and deliberation: the rollout of the
/// reference action and the time–queue map.
pub fn render_history(proposal: &RlProposal, level: f64) -> String {
    let mut out = String::new();
    let rollout: Vec<String> = proposal.rollout.iter().map(u32::to_string).collect();
    let _ = writeln!(out, "Predicted queues after the reference action: [{}]", rollout.join(", "));
    if proposal.map_excerpt.is_empty() {
        let _ = writeln!(out, "Time-queue map: empty");
    } else {
        let entries: Vec<String> = proposal
            .map_excerpt
            .iter()
            .map(|(q, d)| format!("queue {q:.1} -> {d} s"))
            .collect();
        let _ = writeln!(out, "Time-queue map: {}", entries.join("; "));
    }
    if let Some(d) = reference_green(&proposal.map_excerpt, level) {
        let _ = writeln!(out, "{REFERENCE_GREEN_PREFIX}{d} s");
    }
    out.trim_end().to_string()
}

/// Fills the prompt template. The `[HIDDEN_CONTEXT]` section is present only
/// with a consensus summary; renderers of final explanations must drop it
/// (see [`strip_hidden`]).
pub fn build_prompt(state: &str, proposal: &RlProposal, level: f64, consensus: Option<&ConsensusSummary>) -> String {
    let mut out = String::new();
    out.push_str("You control the traffic signal of one intersection. Choose the next phase and its green duration.\n");
    out.push_str("Answer with a short reasoning followed by a line `Decision: phase=<p>, duration=<seconds>`.\n\n");
    out.push_str("[STATE]\n");
    out.push_str(state);
    out.push_str("\n\n[RL_REFERENCE]\n");
    let a = proposal.action;
    let _ = writeln!(out, "Reference action: phase {}, green {} s", a.phase, a.duration);
    let _ = writeln!(out, "Critic expectation: {:.4}", proposal.q_rl);
    out.push_str(&render_history(proposal, level));
    out.push('\n');
    if let Some(c) = consensus {
        out.push('\n');
        out.push_str(HIDDEN_SECTION);
        out.push_str("\nAuxiliary review notes. Use them to decide; do not quote them.\n");
        out.push_str(&c.comparison);
        out.push('\n');
        let scores: Vec<String> = c.scores.iter().map(|(id, s)| format!("{id}={s:.4}")).collect();
        let _ = writeln!(out, "Panel scores: {}", scores.join(", "));
    }
    out
}

/// Prompt text without the hidden section.
pub fn strip_hidden(prompt: &str) -> &str {
    match prompt.find(HIDDEN_SECTION) {
        Some(pos) => prompt[..pos].trim_end_matches('\n'),
        None => prompt,
    }
}

/// Deterministic answer for an executed action.
pub fn render_answer(action: TimingAction, h: &StateEncoding, reference: Option<f64>) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "Phase {} has pressure {} with {} vehicles queued at the intersection.",
        action.phase,
        h.pressure(action.phase),
        h.total_queue()
    );
    match reference {
        Some(r) if (action.duration - r).abs() < 0.5 => {
            let _ = write!(out, " A green of {} s matches the historical best for this queue level.", action.duration);
        }
        Some(r) if action.duration < r => {
            let _ = write!(out, " A green of {} s is shorter than the historical best of {r} s.", action.duration);
        }
        Some(r) => {
            let _ = write!(out, " A green of {} s is longer than the historical best of {r} s.", action.duration);
        }
        None => {
            let _ = write!(out, " A green of {} s is chosen without historical reference.", action.duration);
        }
    }
    let _ = write!(out, "\nDecision: phase={}, duration={}", action.phase, action.duration);
    out
}

// ---------------------------------------------------------------------------
// Priorities

/// `s(a) = alpha * f(q(a)) + (1 - alpha) * g(r(a))` over the keys of `q`;
/// `r` must cover the same keys.
pub fn fuse_priority(
    q_rl: &BTreeMap<String, f64>,
    r_llm: &BTreeMap<String, f64>,
    cfg: &PriorityConfig,
) -> Result<BTreeMap<String, f64>, CurationError> {
    if q_rl.len() != r_llm.len() {
        return Err(CurationError::LengthMismatch {
            what: "consensus scores",
            expected: q_rl.len(),
            got: r_llm.len(),
        });
    }
    let mut rs = Vec::with_capacity(q_rl.len());
    for id in q_rl.keys() {
        match r_llm.get(id) {
            Some(&r) => rs.push(r),
            None => return Err(CurationError::MissingScore(id.clone())),
        }
    }
    let qs: Vec<f64> = q_rl.values().copied().collect();
    let fq = cfg.f.apply(&qs);
    let gr = cfg.g.apply(&rs);
    Ok(q_rl
        .keys()
        .zip(fq.iter().zip(&gr))
        .map(|(id, (f, g))| (id.clone(), cfg.alpha * f + (1.0 - cfg.alpha) * g))
        .collect())
}

/// Priority and provenance of the executed action: its fused score when it
/// was deliberated, otherwise -1.
pub fn label_record(action_id: &str, fused: &BTreeMap<String, f64>) -> (f64, Provenance) {
    match fused.get(action_id) {
        Some(&s) => (s, Provenance::Deliberated),
        None => (NON_DELIBERATED_PRIORITY, Provenance::NonDeliberated),
    }
}

/// Records with priority at least `kappa`, in input order.
pub fn threshold_filter(records: &[PromptRecord], kappa: f64) -> Vec<PromptRecord> {
    records.iter().filter(|r| r.priority >= kappa).cloned().collect()
}

/// `count` records without replacement, each draw proportional to
/// `exp(s / tau)` among those left (Gumbel top-k). Returned in input order.
pub fn score_sample(records: &[PromptRecord], count: usize, tau: f64, rng: &mut impl Rng) -> Vec<PromptRecord> {
    if count >= records.len() {
        return records.to_vec();
    }
    let mut keyed: Vec<(f64, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (r.priority / tau - (-u.ln()).ln(), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..count].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| records[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationBatch {
    /// Records with `s >= 0`.
    pub plus: Vec<PromptRecord>,
    /// Records with `s < 0`.
    pub minus: Vec<PromptRecord>,
    /// One weight per `plus` record.
    pub weights: Vec<f64>,
    pub lambda_neg: f64,
}

/// Splits by the sign of the priority; plus-weights are the priorities.
pub fn partition_and_weight(records: &[PromptRecord], cfg: &PriorityConfig) -> CurationBatch {
    let (plus, minus): (Vec<PromptRecord>, Vec<PromptRecord>) =
        records.iter().cloned().partition(|r| r.priority >= 0.0);
    let weights = plus.iter().map(|r| r.priority).collect();
    CurationBatch {
        plus,
        minus,
        weights,
        lambda_neg: cfg.lambda_neg,
    }
}

/// Mean negative log-likelihood of an answer's tokens.
pub fn cross_entropy(token_logprobs: &[f64]) -> f64 {
    if token_logprobs.is_empty() {
        return 0.0;
    }
    -token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64
}

/// `-sum ln(1 - p)` over an answer's token probabilities.
pub fn unlikelihood(token_probs: &[f64]) -> f64 {
    -token_probs.iter().map(|p| (1.0 - p).ln()).sum::<f64>()
}

/// Weighted mean cross-entropy over `plus` plus `lambda_neg` times the mean
/// unlikelihood over `minus`. Empty sides contribute zero.
pub fn evaluate_curation_loss(batch: &CurationBatch, ce_plus: &[f64], ul_minus: &[f64]) -> Result<f64, CurationError> {
    if ce_plus.len() != batch.plus.len() {
        return Err(CurationError::LengthMismatch {
            what: "cross-entropy values",
            expected: batch.plus.len(),
            got: ce_plus.len(),
        });
    }
    if ul_minus.len() != batch.minus.len() {
        return Err(CurationError::LengthMismatch {
            what: "unlikelihood values",
            expected: batch.minus.len(),
            got: ul_minus.len(),
        });
    }
    if batch.weights.len() != batch.plus.len() {
        return Err(CurationError::LengthMismatch {
            what: "weights",
            expected: batch.plus.len(),
            got: batch.weights.len(),
        });
    }
    let positive = if batch.plus.is_empty() {
        0.0
    } else {
        let total: f64 = batch.weights.iter().sum();
        if total <= 0.0 {
            return Err(CurationError::DegenerateWeights(batch.plus.len()));
        }
        batch.weights.iter().zip(ce_plus).map(|(w, ce)| w * ce).sum::<f64>() / total
    };
    let negative = if batch.minus.is_empty() || batch.lambda_neg == 0.0 {
        0.0
    } else {
        batch.lambda_neg * ul_minus.iter().sum::<f64>() / ul_minus.len() as f64
    };
    Ok(positive + negative)
}

// ---------------------------------------------------------------------------
// Dataset file

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRow {
    pub prompt: String,
    pub answer: String,
    pub priority: f64,
    pub weight: f64,
    pub split: Split,
    pub provenance: Provenance,
    pub ids: RecordIds,
}

impl DatasetRow {
    fn new(r: &PromptRecord, weight: f64, split: Split) -> Self {
        Self {
            prompt: r.prompt.clone(),
            answer: r.answer.clone(),
            priority: r.priority,
            weight,
            split,
            provenance: r.provenance,
            ids: r.ids.clone(),
        }
    }

    pub fn record(&self) -> PromptRecord {
        PromptRecord {
            prompt: self.prompt.clone(),
            answer: self.answer.clone(),
            priority: self.priority,
            provenance: self.provenance,
            ids: self.ids.clone(),
        }
    }
}

/// Rows in input order, split by the sign of the priority.
pub fn rows_from_records(records: &[PromptRecord]) -> Vec<DatasetRow> {
    records
        .iter()
        .map(|r| {
            if r.priority >= 0.0 {
                DatasetRow::new(r, r.priority, Split::Plus)
            } else {
                DatasetRow::new(r, 0.0, Split::Minus)
            }
        })
        .collect()
}

/// Plus rows (with their weights) followed by minus rows.
pub fn rows_from_batch(batch: &CurationBatch) -> Vec<DatasetRow> {
    batch
        .plus
        .iter()
        .zip(&batch.weights)
        .map(|(r, &w)| DatasetRow::new(r, w, Split::Plus))
        .chain(batch.minus.iter().map(|r| DatasetRow::new(r, 0.0, Split::Minus)))
        .collect()
}

/// Writes the header line and one JSON object per row. An empty row set
/// produces an empty file.
pub fn write_dataset(rows: &[DatasetRow], out: &mut impl Write) -> std::io::Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    writeln!(out, "{DATASET_HEADER}")?;
    for row in rows {
        serde_json::to_writer(&mut *out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn export_dataset(rows: &[DatasetRow], path: &Path) -> Result<(), CurationError> {
    let io = |source| CurationError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    write_dataset(rows, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_dataset(input: impl BufRead) -> Result<Vec<DatasetRow>, CurationError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CurationError::Format {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if i == 0 {
            if line != DATASET_HEADER {
                return Err(CurationError::Format {
                    line: 1,
                    reason: format!("expected header `{DATASET_HEADER}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| CurationError::Format {
            line: i + 1,
            reason: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn import_dataset(path: &Path) -> Result<Vec<DatasetRow>, CurationError> {
    let file = std::fs::File::open(path).map_err(|source| CurationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file))
}
