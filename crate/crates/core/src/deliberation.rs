//! Defender/consensus deliberation over RL-filtered candidate actions.
//!
//! Candidates that survive [`rl_prefilter`] are each defended by one
//! defender model; a consensus model then compares the defenses and scores
//! every candidate through a `SCORES_BEGIN` / `SCORES_END` block. Models are
//! reached through [`ChatClient`], implemented for OpenAI-compatible HTTP
//! endpoints and for deterministic mocks.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::error::DeliberationError;
use crate::sim::TimingAction;

pub const DEFENSE_TEMPLATE: &str = include_str!("../templates/defense.txt");
pub const CONSENSUS_TEMPLATE: &str = include_str!("../templates/consensus.txt");

pub const SCORES_BEGIN: &str = "SCORES_BEGIN";
pub const SCORES_END: &str = "SCORES_END";

/// Line prefix under which the history section states the best historical
/// green for the current queue level.
pub const REFERENCE_GREEN_PREFIX: &str = "Historical best green near current queue: ";

const SYSTEM_PROMPT: &str = "You are a careful traffic engineering assistant.";

/// Identifier used for an action in prompts and score blocks.
pub fn action_id(action: &TimingAction) -> String {
    format!("p{}_d{}", action.phase, action.duration)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAction {
    pub id: String,
    pub action: TimingAction,
    /// Critic expectation of the action.
    pub q_rl: f64,
}

impl ScoredAction {
    pub fn new(action: TimingAction, q_rl: f64) -> Self {
        Self {
            id: action_id(&action),
            action,
            q_rl,
        }
    }
}

/// Shared context shown to every participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliberationContext {
    pub state: String,
    pub candidates: Vec<ScoredAction>,
    /// Rollout and time–queue map summaries.
    pub history: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseArgument {
    pub candidate: String,
    pub defender: String,
    pub text: String,
    pub attempts: u32,
    /// Set when every attempt failed and `text` is the empty substitute.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    /// The consensus reply without its score block.
    pub comparison: String,
    pub scores: BTreeMap<String, f64>,
    /// Candidates the reply did not score (scored 0).
    pub flagged: Vec<String>,
    /// Always true: the summary is auxiliary context, never quoted.
    pub hidden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deliberation {
    pub kept: Vec<ScoredAction>,
    pub defenses: Vec<DefenseArgument>,
    pub summary: ConsensusSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff: Duration,
}

#[async_trait]
pub trait ChatClient: Send + Sync {
    fn name(&self) -> &str;

    fn retry(&self) -> RetryPolicy;

    /// One chat exchange; returns the assistant's reply text.
    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, DeliberationError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exhausted {
    pub attempts: u32,
    pub last: String,
}

/// Runs one exchange with the client's retry policy.
pub async fn exchange(client: &dyn ChatClient, messages: &[ChatMessage]) -> Result<Exchange, Exhausted> {
    let policy = client.retry();
    let mut delay = policy.backoff;
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(messages).await {
            Ok(text) => return Ok(Exchange { text, attempts }),
            Err(e) => {
                tracing::debug!(client = client.name(), attempt = attempts, error = %e, "chat exchange failed");
                if attempts > policy.max_retries {
                    return Err(Exhausted {
                        attempts,
                        last: e.to_string(),
                    });
                }
            }
        }
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
            delay *= 2;
        }
    }
}

// ---------------------------------------------------------------------------
// Clients

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientConfig {
    Http(HttpConfig),
    Mock(MockConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    #[serde(default)]
    pub reply: MockReply,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    /// Deterministic replies computed from the prompt.
    #[default]
    Heuristic,
    Fixed(String),
    /// Replayed in order; the last step repeats once the script runs out.
    Script(Vec<ScriptStep>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStep {
    Reply(String),
    Fail(String),
}

fn default_temperature() -> f64 {
    0.2
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

impl ClientConfig {
    pub fn mock() -> Self {
        ClientConfig::Mock(MockConfig {
            reply: MockReply::Heuristic,
            max_retries: default_retries(),
        })
    }

    pub fn validate(&self) -> Result<(), DeliberationError> {
        match self {
            ClientConfig::Http(c) => {
                if !(c.timeout_secs > 0.0) || !c.timeout_secs.is_finite() {
                    return Err(DeliberationError::Config(format!("timeout_secs must be > 0, got {}", c.timeout_secs)));
                }
                if c.base_url.is_empty() || c.model.is_empty() {
                    return Err(DeliberationError::Config("base_url and model are required".into()));
                }
                Ok(())
            }
            ClientConfig::Mock(_) => Ok(()),
        }
    }

    pub fn build(&self, name: &str) -> Result<Arc<dyn ChatClient>, DeliberationError> {
        self.validate()?;
        Ok(match self {
            ClientConfig::Http(c) => Arc::new(HttpChatClient::new(name, c.clone())?),
            ClientConfig::Mock(c) => Arc::new(MockChatClient::new(name, c.reply.clone(), c.max_retries)),
        })
    }
}

/// Client for the OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpChatClient {
    name: String,
    cfg: HttpConfig,
    token: Option<String>,
    http: reqwest::Client,
}

impl HttpChatClient {
    pub fn new(name: &str, cfg: HttpConfig) -> Result<Self, DeliberationError> {
        let token = match &cfg.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| DeliberationError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| DeliberationError::Config(e.to_string()))?;
        Ok(Self {
            name: name.to_string(),
            cfg,
            token,
            http,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[async_trait]
impl ChatClient for HttpChatClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.cfg.max_retries,
            backoff: Duration::from_millis(self.cfg.backoff_ms),
        }
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, DeliberationError> {
        let body = CompletionRequest {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
        };
        let mut req = self.http.post(self.endpoint()).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| DeliberationError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            return Err(DeliberationError::Transport(format!("HTTP {status}: {snippet}")));
        }
        let parsed: CompletionResponse = resp
            .json()
            .await
            .map_err(|e| DeliberationError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| DeliberationError::Transport("response has no message content".into()))
    }
}

/// Offline client. Retries are immediate.
pub struct MockChatClient {
    name: String,
    reply: MockReply,
    max_retries: u32,
    cursor: AtomicUsize,
}

impl MockChatClient {
    pub fn new(name: &str, reply: MockReply, max_retries: u32) -> Self {
        Self {
            name: name.to_string(),
            reply,
            max_retries,
            cursor: AtomicUsize::new(0),
        }
    }

    /// Number of `complete` calls so far.
    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatClient for MockChatClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff: Duration::ZERO,
        }
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, DeliberationError> {
        let call = self.cursor.fetch_add(1, Ordering::SeqCst);
        match &self.reply {
            MockReply::Fixed(text) => Ok(text.clone()),
            MockReply::Script(steps) => match steps.get(call).or(steps.last()) {
                Some(ScriptStep::Reply(text)) => Ok(text.clone()),
                Some(ScriptStep::Fail(reason)) => Err(DeliberationError::Transport(reason.clone())),
                None => Err(DeliberationError::Transport("empty script".into())),
            },
            MockReply::Heuristic => {
                let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
                Ok(heuristic_reply(prompt))
            }
        }
    }
}

struct ParsedCandidate {
    id: String,
    phase: usize,
    duration: f64,
    q_rl: f64,
}

fn parse_candidate_line(line: &str) -> Option<ParsedCandidate> {
    // "<id>: phase <p>, green <d> s, q_rl <q>"
    let (id, rest) = line.split_once(": phase ")?;
    let (phase, rest) = rest.split_once(", green ")?;
    let (duration, rest) = rest.split_once(" s, q_rl ")?;
    Some(ParsedCandidate {
        id: id.trim().to_string(),
        phase: phase.trim().parse().ok()?,
        duration: duration.trim().parse().ok()?,
        q_rl: rest.trim().parse().ok()?,
    })
}

fn section<'a>(prompt: &'a str, name: &str) -> &'a str {
    let header = format!("[{name}]\n");
    let Some(start) = prompt.find(&header) else {
        return "";
    };
    let body = &prompt[start + header.len()..];
    let end = body.find("\n[").unwrap_or(body.len());
    &body[..end]
}

/// Deterministic stand-in for a model. Defenses restate the candidate and
/// its rank; consensus scores prefer durations close to the historical best
/// green, or the critic ranking when no history is given.
fn heuristic_reply(prompt: &str) -> String {
    let candidates: Vec<ParsedCandidate> = section(prompt, "CANDIDATES").lines().filter_map(parse_candidate_line).collect();
    if let Some(pos) = prompt.find("Candidate to defend: ") {
        let id = prompt[pos + "Candidate to defend: ".len()..].lines().next().unwrap_or("").trim();
        return match candidates.iter().position(|c| c.id == id) {
            Some(rank) => {
                let c = &candidates[rank];
                format!(
                    "Candidate {id} serves phase {} for {} s. Its critic expectation {:.4} ranks {} of {}, \
                     so it clears the served queues without holding the other approaches longer than needed.",
                    c.phase,
                    c.duration,
                    c.q_rl,
                    rank + 1,
                    candidates.len()
                )
            }
            None => format!("Candidate {id} keeps the current plan."),
        };
    }
    let reference = section(prompt, "HISTORY").lines().find_map(|l| {
        l.strip_prefix(REFERENCE_GREEN_PREFIX)
            .and_then(|rest| rest.trim_end_matches(" s").trim().parse::<f64>().ok())
    });
    let mut out = format!("Compared {} candidates", candidates.len());
    match reference {
        Some(r) => out.push_str(&format!(" against a historical best green of {r} s.\n")),
        None => out.push_str(" by critic expectation.\n"),
    }
    out.push_str(SCORES_BEGIN);
    out.push('\n');
    let n = candidates.len();
    for (rank, c) in candidates.iter().enumerate() {
        let score = match reference {
            Some(r) => 1.0 / (1.0 + (c.duration - r).abs() / 5.0),
            None if n > 1 => (n - 1 - rank) as f64 / (n - 1) as f64,
            None => 1.0,
        };
        out.push_str(&format!("{}={:.4}\n", c.id, score));
    }
    out.push_str(SCORES_END);
    out
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeliberationParams {
    /// Candidates kept by the pre-filter.
    pub k: usize,
    /// Dominance margin as a fraction of the q_RL range.
    pub margin: f64,
    /// Defense length cap in characters.
    pub defense_cap: usize,
    /// Concurrent defenses per deliberation.
    pub parallelism: usize,
}

impl Default for DeliberationParams {
    fn default() -> Self {
        Self {
            k: 3,
            margin: 0.25,
            defense_cap: 1200,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliberationConfig {
    pub defenders: Vec<ClientConfig>,
    pub consensus: ClientConfig,
    #[serde(default)]
    pub params: DeliberationParams,
}

impl DeliberationConfig {
    /// Three heuristic mock defenders and a heuristic mock consensus.
    pub fn mock() -> Self {
        Self {
            defenders: vec![ClientConfig::mock(); 3],
            consensus: ClientConfig::mock(),
            params: DeliberationParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DeliberationError> {
        if self.defenders.is_empty() {
            return Err(DeliberationError::Config("at least one defender is required".into()));
        }
        if self.params.k == 0 {
            return Err(DeliberationError::Config("k must be at least 1".into()));
        }
        if !(self.params.margin >= 0.0) {
            return Err(DeliberationError::Config(format!("margin must be >= 0, got {}", self.params.margin)));
        }
        for c in self.defenders.iter().chain(std::iter::once(&self.consensus)) {
            c.validate()?;
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Panel, DeliberationError> {
        self.validate()?;
        let defenders = self
            .defenders
            .iter()
            .enumerate()
            .map(|(i, c)| c.build(&format!("defender-{}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Panel {
            defenders,
            consensus: self.consensus.build("consensus")?,
            params: self.params.clone(),
        })
    }
}

/// Built clients plus pipeline parameters.
#[derive(Clone)]
pub struct Panel {
    pub defenders: Vec<Arc<dyn ChatClient>>,
    pub consensus: Arc<dyn ChatClient>,
    pub params: DeliberationParams,
}

fn rank_order(a: &ScoredAction, b: &ScoredAction) -> std::cmp::Ordering {
    b.q_rl
        .total_cmp(&a.q_rl)
        .then(a.action.duration.total_cmp(&b.action.duration))
        .then(a.action.phase.cmp(&b.action.phase))
}

/// Drops actions more than `margin * (max - min)` below the best q_RL and
/// keeps the top `k` of the rest, best first (ties: shorter green, then lower
/// phase).
pub fn rl_prefilter(candidates: &[ScoredAction], k: usize, margin: f64) -> Vec<ScoredAction> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(rank_order);
    let Some(first) = sorted.first() else {
        return sorted;
    };
    let max = first.q_rl;
    let min = sorted.iter().map(|c| c.q_rl).fold(f64::INFINITY, f64::min);
    let floor = max - margin * (max - min);
    sorted.retain(|c| c.q_rl >= floor);
    sorted.truncate(k.max(1));
    sorted
}

/// Round-robin: candidate `j` goes to defender `j mod n`. Returns
/// `(defender index, candidate index)` pairs in candidate order.
pub fn assign_defenders(candidates: usize, defenders: usize) -> Result<Vec<(usize, usize)>, DeliberationError> {
    if defenders == 0 {
        return Err(DeliberationError::Config("at least one defender is required".into()));
    }
    Ok((0..candidates).map(|j| (j % defenders, j)).collect())
}

fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let body = match template.split_once('\n') {
        Some((first, rest)) if first.starts_with("#template") => rest,
        _ => template,
    };
    let mut out = body.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    out
}

fn candidate_lines(candidates: &[ScoredAction]) -> String {
    candidates
        .iter()
        .map(|c| format!("{}: phase {}, green {} s, q_rl {:.4}", c.id, c.action.phase, c.action.duration, c.q_rl))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn defense_prompt(ctx: &DeliberationContext, candidate: &ScoredAction, cap: usize) -> String {
    render(
        DEFENSE_TEMPLATE,
        &[
            ("cap", &cap.to_string()),
            ("state", &ctx.state),
            ("candidates", &candidate_lines(&ctx.candidates)),
            ("history", &ctx.history),
            ("candidate", &candidate.id),
        ],
    )
}

pub fn consensus_prompt(ctx: &DeliberationContext, defenses: &[DefenseArgument]) -> String {
    let defenses = defenses
        .iter()
        .map(|d| {
            let text = if d.text.is_empty() { "(no defense received)" } else { d.text.as_str() };
            format!("{} ({}): {}", d.candidate, d.defender, text)
        })
        .collect::<Vec<_>>()
        .join("\n");
    render(
        CONSENSUS_TEMPLATE,
        &[
            ("state", &ctx.state),
            ("candidates", &candidate_lines(&ctx.candidates)),
            ("history", &ctx.history),
            ("defenses", &defenses),
        ],
    )
}

fn messages(prompt: String) -> Vec<ChatMessage> {
    vec![ChatMessage::new("system", SYSTEM_PROMPT), ChatMessage::new("user", prompt)]
}

/// One defense exchange; the reply is truncated to `cap` characters.
pub async fn run_defense(
    client: &dyn ChatClient,
    ctx: &DeliberationContext,
    candidate: &ScoredAction,
    cap: usize,
) -> Result<DefenseArgument, DeliberationError> {
    match exchange(client, &messages(defense_prompt(ctx, candidate, cap))).await {
        Ok(ex) => Ok(DefenseArgument {
            candidate: candidate.id.clone(),
            defender: client.name().to_string(),
            text: ex.text.trim().chars().take(cap).collect(),
            attempts: ex.attempts,
            failed: false,
        }),
        Err(e) => Err(DeliberationError::DefenseUnavailable {
            candidate: candidate.id.clone(),
            attempts: e.attempts,
            last: e.last,
        }),
    }
}

/// Parses the last `SCORES_BEGIN` / `SCORES_END` block of `reply` into
/// `id -> score` (unclamped). Lines that are not `id=<finite float>` are
/// skipped. Returns the reply with the block removed.
pub fn parse_score_block(reply: &str) -> (BTreeMap<String, f64>, String) {
    let lines: Vec<&str> = reply.lines().collect();
    let Some(begin) = lines.iter().rposition(|l| l.trim() == SCORES_BEGIN) else {
        return (BTreeMap::new(), reply.trim().to_string());
    };
    let end = lines[begin + 1..]
        .iter()
        .position(|l| l.trim() == SCORES_END)
        .map(|off| begin + 1 + off);
    let body_end = end.unwrap_or(lines.len());
    let mut scores = BTreeMap::new();
    for line in &lines[begin + 1..body_end] {
        let Some((id, value)) = line.trim().split_once('=') else {
            continue;
        };
        if let Ok(v) = value.trim().parse::<f64>() {
            if v.is_finite() {
                scores.insert(id.trim().to_string(), v);
            }
        }
    }
    let rest_start = end.map(|e| e + 1).unwrap_or(lines.len());
    let mut comparison: Vec<&str> = lines[..begin].to_vec();
    comparison.extend_from_slice(&lines[rest_start..]);
    (scores, comparison.join("\n").trim().to_string())
}

/// Consensus exchange. Scores are clamped to [0, 1]; candidates missing
/// from the block score 0 and are flagged.
pub async fn run_consensus(
    client: &dyn ChatClient,
    ctx: &DeliberationContext,
    defenses: &[DefenseArgument],
) -> Result<ConsensusSummary, DeliberationError> {
    let ex = exchange(client, &messages(consensus_prompt(ctx, defenses)))
        .await
        .map_err(|e| DeliberationError::ConsensusUnavailable {
            attempts: e.attempts,
            last: e.last,
        })?;
    let (parsed, comparison) = parse_score_block(&ex.text);
    let mut scores = BTreeMap::new();
    let mut flagged = Vec::new();
    for c in &ctx.candidates {
        match parsed.get(&c.id) {
            Some(v) => {
                scores.insert(c.id.clone(), v.clamp(0.0, 1.0));
            }
            None => {
                scores.insert(c.id.clone(), 0.0);
                flagged.push(c.id.clone());
            }
        }
    }
    Ok(ConsensusSummary {
        comparison,
        scores,
        flagged,
        hidden: true,
    })
}

/// Pre-filter, defend the survivors concurrently, then ask the consensus
/// model. `ctx.candidates` is the full candidate list; the contexts sent to
/// the models list only the survivors. A failed defense becomes an empty
/// argument; only consensus failure is an error.
pub async fn deliberate(ctx: &DeliberationContext, panel: &Panel) -> Result<Deliberation, DeliberationError> {
    if ctx.candidates.is_empty() {
        return Err(DeliberationError::Config("no candidates to deliberate".into()));
    }
    let kept = rl_prefilter(&ctx.candidates, panel.params.k, panel.params.margin);
    let assignments = assign_defenders(kept.len(), panel.defenders.len())?;
    let shared = DeliberationContext {
        state: ctx.state.clone(),
        candidates: kept.clone(),
        history: ctx.history.clone(),
    };
    let cap = panel.params.defense_cap;
    let defenses: Vec<DefenseArgument> = stream::iter(assignments)
        .map(|(d, j)| {
            let client = Arc::clone(&panel.defenders[d]);
            let shared = &shared;
            let candidate = &kept[j];
            async move {
                match run_defense(client.as_ref(), shared, candidate, cap).await {
                    Ok(arg) => arg,
                    Err(e) => {
                        tracing::warn!(error = %e, "defense failed, continuing without it");
                        let attempts = match e {
                            DeliberationError::DefenseUnavailable { attempts, .. } => attempts,
                            _ => 0,
                        };
                        DefenseArgument {
                            candidate: candidate.id.clone(),
                            defender: client.name().to_string(),
                            text: String::new(),
                            attempts,
                            failed: true,
                        }
                    }
                }
            }
        })
        .buffered(panel.params.parallelism.max(1))
        .collect()
        .await;
    let summary = run_consensus(panel.consensus.as_ref(), &shared, &defenses).await?;
    Ok(Deliberation {
        kept,
        defenses,
        summary,
    })
}
