//! Session driver: render -> query -> parse -> step, with retry handling,
//! plus scripted endpoints for tests and an HTTP driver for real ones.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    assign_labels, parse_choice, parse_history, render_prompt, HistoryLine, PromptState,
    PromptTemplate,
};
use crate::tasks::{
    AgentTag, FeedbackMode, TaskId, TaskRng, TaskSpec, TaskState, Transcript, TrialRecord,
    TrialSlot,
};

#[derive(Debug, Error, Clone)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("transport: {0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("transport failure at visit {visit} after {retries} retries: {source}")]
    Transport {
        visit: u32,
        retries: u32,
        /// Everything recorded before the abort; the run is incomplete.
        partial: Box<Transcript>,
        source: TransportError,
    },
    #[error("no valid choice at visit {visit}; completion was {completion:?}")]
    NoValidChoice {
        visit: u32,
        partial: Box<Transcript>,
        completion: String,
    },
}

impl SessionError {
    /// The incomplete transcript recorded before the abort.
    pub fn partial(&self) -> &Transcript {
        match self {
            SessionError::Transport { partial, .. } => partial,
            SessionError::NoValidChoice { partial, .. } => partial,
        }
    }
}

/// Anything that can turn a prompt into a completion.
pub trait CompletionClient {
    fn complete(&mut self, prompt: &str) -> Result<String, TransportError>;
}

/// Connection settings for a chat-completion endpoint. The temperature is
/// pinned to 0.0 for experiment parity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the credential.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            model: String::new(),
            api_key_env: "BANDITLAB_API_KEY".to_string(),
            temperature: 0.0,
            max_tokens: 8,
            timeout_secs: 30,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature != 0.0 {
            return Err(format!(
                "temperature must stay at 0.0 for experiment parity, got {}",
                self.temperature
            ));
        }
        if self.base_url.is_empty() {
            return Err("endpoint base_url is empty".to_string());
        }
        Ok(())
    }
}

fn template_for(task_id: TaskId, feedback: FeedbackMode, mixed: bool) -> PromptTemplate {
    match task_id {
        TaskId::Casinos => PromptTemplate::Task1,
        TaskId::Counterfactual => PromptTemplate::Task2 { feedback },
        TaskId::Agency => PromptTemplate::Task3 { mixed },
    }
}

fn history_line_from(record: &TrialRecord, task_id: TaskId) -> HistoryLine {
    let chosen_idx = record.chosen_index().expect("labels are consistent");
    HistoryLine {
        visit: record.global_visit,
        casino: (task_id == TaskId::Casinos).then_some(record.block_id + 1),
        forced: record.kind == crate::tasks::TrialKind::Forced,
        machine: record.chosen.clone(),
        reward: record.reward_chosen,
        counterfactual: record
            .reward_unchosen
            .map(|r| (record.options[1 - chosen_idx].clone(), r)),
    }
}

/// Run one complete task session against a completion endpoint: prompts
/// are re-rendered after every trial, forced trials go straight into the
/// history without a query, and NoValidChoice is retried once with the
/// identical prompt before the run is marked failed.
pub fn run_session(
    task: &TaskSpec,
    client: &mut dyn CompletionClient,
    run_id: u32,
    seed: u64,
    max_retries: u32,
    backoff_ms: u64,
) -> Result<Transcript, SessionError> {
    let mut label_rng = TaskRng::seed_from_u64(seed);
    label_rng.set_stream(2);
    let mut order_rng = TaskRng::seed_from_u64(seed);
    order_rng.set_stream(3);

    let mut state = TaskState::new(task.clone(), run_id, seed);
    let labels: Vec<[String; 2]> = match task.task_id {
        // Task 1 labels all eight machines at once so letters stay unique
        // across casinos within a run.
        TaskId::Casinos => {
            let letters = assign_labels(&mut label_rng, 8).expect("8 <= 24");
            letters
                .chunks(2)
                .map(|c| [c[0].clone(), c[1].clone()])
                .collect()
        }
        _ => task
            .blocks
            .iter()
            .map(|_| {
                let l = assign_labels(&mut label_rng, 2).expect("2 <= 24");
                [l[0].clone(), l[1].clone()]
            })
            .collect(),
    };
    state.set_labels(labels.clone());

    let mut records: Vec<TrialRecord> = Vec::new();
    let partial = |records: &[TrialRecord]| {
        let mut rs = records.to_vec();
        rs.sort_by_key(|r| (r.block_id, r.trial_index));
        Box::new(Transcript {
            task_id: task.task_id,
            agent_tag: AgentTag::Llm,
            seed,
            records: rs,
        })
    };

    // Histories: one global for Task 1, per-block otherwise (each block is
    // prompted independently).
    let mut global_history: Vec<HistoryLine> = Vec::new();
    let mut block_histories: HashMap<u32, Vec<HistoryLine>> = HashMap::new();

    while let Some(pending) = state.current() {
        let block = &task.blocks[pending.block_id as usize];
        let mixed = block.n_free() < block.n_trials;
        let template = template_for(task.task_id, pending.feedback_mode, mixed);

        let action = match pending.slot {
            TrialSlot::Forced(o) => o,
            TrialSlot::Free => {
                let history = match task.task_id {
                    TaskId::Casinos => global_history.clone(),
                    _ => block_histories
                        .get(&pending.block_id)
                        .cloned()
                        .unwrap_or_default(),
                };
                let pair = &labels[pending.block_id as usize];
                let options_display = if order_rng.gen::<bool>() {
                    [pair[0].clone(), pair[1].clone()]
                } else {
                    [pair[1].clone(), pair[0].clone()]
                };
                let prompt = render_prompt(&PromptState {
                    template,
                    history,
                    visit: pending.global_visit,
                    casino: (task.task_id == TaskId::Casinos).then_some(pending.block_id + 1),
                    options_display,
                });
                let completion = query_with_retries(
                    client,
                    &prompt,
                    max_retries,
                    backoff_ms,
                    pending.global_visit,
                    || partial(&records),
                )?;
                let label = match parse_choice(&completion, pair) {
                    Ok(l) => l,
                    // One retry with the identical prompt, then fail the run.
                    Err(_) => {
                        let retry = query_with_retries(
                            client,
                            &prompt,
                            max_retries,
                            backoff_ms,
                            pending.global_visit,
                            || partial(&records),
                        )?;
                        parse_choice(&retry, pair).map_err(|_| SessionError::NoValidChoice {
                            visit: pending.global_visit,
                            partial: partial(&records),
                            completion: retry.clone(),
                        })?
                    }
                };
                pair.iter().position(|l| *l == label).expect("parsed label is valid")
            }
        };
        let record = state.step(action).expect("action is legal");
        let line = history_line_from(&record, task.task_id);
        match task.task_id {
            TaskId::Casinos => global_history.push(line),
            _ => block_histories.entry(record.block_id).or_default().push(line),
        }
        records.push(record);
    }
    Ok(state.into_transcript(AgentTag::Llm, seed))
}

fn query_with_retries(
    client: &mut dyn CompletionClient,
    prompt: &str,
    max_retries: u32,
    backoff_ms: u64,
    visit: u32,
    partial: impl Fn() -> Box<Transcript>,
) -> Result<String, SessionError> {
    let mut attempt = 0;
    loop {
        match client.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(source) => {
                if attempt >= max_retries {
                    return Err(SessionError::Transport {
                        visit,
                        retries: max_retries,
                        partial: partial(),
                        source,
                    });
                }
                if backoff_ms > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(
                        backoff_ms << attempt.min(8),
                    ));
                }
                attempt += 1;
            }
        }
    }
}

/// Deterministic in-process endpoints for tests and demos.
#[derive(Debug, Clone)]
pub enum ScriptedPolicy {
    /// Always answer with the first machine named in the question.
    FirstLabel,
    /// Answer with the machine whose observed history mean is highest
    /// (unseen machines are tried first).
    HighestMean,
    /// Replay a fixed sequence of completions, then fall back to the first
    /// label.
    Sequence(Vec<String>),
}

/// Scripted completion endpoint; can also simulate transient transport
/// failures via `fail_next`.
#[derive(Debug, Clone)]
pub struct ScriptedEndpoint {
    pub policy: ScriptedPolicy,
    /// Fail this many upcoming requests with a timeout before succeeding.
    pub fail_next: u32,
    cursor: usize,
}

impl ScriptedEndpoint {
    pub fn new(policy: ScriptedPolicy) -> Self {
        ScriptedEndpoint {
            policy,
            fail_next: 0,
            cursor: 0,
        }
    }
}

fn question_labels(prompt: &str) -> Option<[String; 2]> {
    let q = prompt.lines().rev().find(|l| l.starts_with("Q: "))?;
    let rest = q.split("between Machine ").nth(1)?;
    let (a, rest) = rest.split_once(" and Machine ")?;
    let b = rest.strip_suffix('?')?;
    Some([a.to_string(), b.to_string()])
}

fn current_casino(prompt: &str) -> Option<u32> {
    let q = prompt.lines().rev().find(|l| l.starts_with("Q: "))?;
    let rest = q.split("playing in Casino ").nth(1)?;
    rest.split('.').next()?.parse().ok()
}

impl CompletionClient for ScriptedEndpoint {
    fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
        if self.fail_next > 0 {
            self.fail_next -= 1;
            return Err(TransportError::Timeout);
        }
        let labels = question_labels(prompt)
            .ok_or_else(|| TransportError::Other("prompt has no question".to_string()))?;
        let answer = match &self.policy {
            ScriptedPolicy::FirstLabel => labels[0].clone(),
            ScriptedPolicy::Sequence(seq) => {
                let a = seq.get(self.cursor).cloned().unwrap_or(labels[0].clone());
                self.cursor += 1;
                a
            }
            ScriptedPolicy::HighestMean => {
                let template = if prompt.starts_with("You are going to visit four different casinos")
                {
                    PromptTemplate::Task1
                } else {
                    // The history line grammar is shared across Tasks 2-3.
                    PromptTemplate::Task3 { mixed: true }
                };
                let casino = current_casino(prompt);
                let history = parse_history(template, prompt)
                    .map_err(|e| TransportError::Other(e.to_string()))?;
                let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
                for line in &history {
                    if template == PromptTemplate::Task1 && line.casino != casino {
                        continue;
                    }
                    let e = sums.entry(line.machine.clone()).or_insert((0.0, 0));
                    e.0 += line.reward;
                    e.1 += 1;
                    if let Some((machine, reward)) = &line.counterfactual {
                        let e = sums.entry(machine.clone()).or_insert((0.0, 0));
                        e.0 += reward;
                        e.1 += 1;
                    }
                }
                let score = |label: &String| match sums.get(label) {
                    // Unseen machines first, then by observed mean.
                    None => f64::INFINITY,
                    Some((sum, n)) => sum / *n as f64,
                };
                if score(&labels[1]) > score(&labels[0]) {
                    labels[1].clone()
                } else {
                    labels[0].clone()
                }
            }
        };
        Ok(format!(" {answer}"))
    }
}

/// Blocking HTTP driver for a generic chat-completion endpoint: single-turn
/// text in, text out. The request body carries `model`, `prompt`,
/// `temperature`, and `max_tokens`; the completion is read from the first
/// of `completion`, `text`, `choices[0].text`, `choices[0].message.content`,
/// or `content[0].text` present in the response.
#[cfg(feature = "live-endpoint")]
pub struct HttpEndpoint {
    config: EndpointConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[cfg(feature = "live-endpoint")]
impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Result<Self, TransportError> {
        config.validate().map_err(TransportError::Other)?;
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build();
        Ok(HttpEndpoint {
            config,
            api_key,
            agent,
        })
    }

    fn extract_completion(value: &serde_json::Value) -> Option<String> {
        if let Some(s) = value.get("completion").and_then(|v| v.as_str()) {
            return Some(s.to_string());
        }
        if let Some(s) = value.get("text").and_then(|v| v.as_str()) {
            return Some(s.to_string());
        }
        if let Some(choice) = value.get("choices").and_then(|v| v.get(0)) {
            if let Some(s) = choice.get("text").and_then(|v| v.as_str()) {
                return Some(s.to_string());
            }
            if let Some(s) = choice
                .get("message")
                .and_then(|m| m.get("content"))
                .and_then(|v| v.as_str())
            {
                return Some(s.to_string());
            }
        }
        value
            .get("content")
            .and_then(|v| v.get(0))
            .and_then(|b| b.get("text"))
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
    }
}

#[cfg(feature = "live-endpoint")]
impl CompletionClient for HttpEndpoint {
    fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "prompt": prompt,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut request = self
            .agent
            .post(&self.config.base_url)
            .set("content-type", "application/json");
        if let Some(key) = &self.api_key {
            request = request
                .set("authorization", &format!("Bearer {key}"))
                .set("x-api-key", key);
        }
        let response = request.send_json(body).map_err(|e| match e {
            ureq::Error::Transport(t) => TransportError::Other(t.to_string()),
            ureq::Error::Status(code, _) => TransportError::Other(format!("http status {code}")),
        })?;
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Self::extract_completion(&value)
            .ok_or_else(|| TransportError::Other("no completion field in response".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{regret_curve, ArmFilter};
    use crate::tasks::{build_task, validate_transcript};

    #[test]
    fn first_label_session_is_valid_and_deterministic() {
        let task = build_task(1, 3).unwrap();
        let mut client = ScriptedEndpoint::new(ScriptedPolicy::FirstLabel);
        let a = run_session(&task, &mut client, 0, 42, 3, 0).unwrap();
        assert_eq!(a.records.len(), 96);
        validate_transcript(&a).unwrap();
        let mut client = ScriptedEndpoint::new(ScriptedPolicy::FirstLabel);
        let b = run_session(&task, &mut client, 0, 42, 3, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn highest_mean_mock_learns() {
        let transcripts: Vec<_> = (0..6)
            .map(|i| {
                let task = build_task(1, 50 + i).unwrap();
                let mut client = ScriptedEndpoint::new(ScriptedPolicy::HighestMean);
                run_session(&task, &mut client, i as u32, 90 + i, 3, 0).unwrap()
            })
            .collect();
        let curve = regret_curve(&transcripts, ArmFilter::All).unwrap();
        let head: f64 = curve.points[..5].iter().map(|p| p.mean).sum::<f64>() / 5.0;
        let tail: f64 = curve.points[19..].iter().map(|p| p.mean).sum::<f64>() / 5.0;
        assert!(
            tail < head - 0.01,
            "regret did not decrease: head {head}, tail {tail}"
        );
    }

    #[test]
    fn forced_trials_never_query_the_endpoint() {
        struct Counting(ScriptedEndpoint, usize);
        impl CompletionClient for Counting {
            fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
                self.1 += 1;
                self.0.complete(prompt)
            }
        }
        let task = build_task(3, 7).unwrap();
        let mut client = Counting(ScriptedEndpoint::new(ScriptedPolicy::FirstLabel), 0);
        let t = run_session(&task, &mut client, 0, 5, 3, 0).unwrap();
        validate_transcript(&t).unwrap();
        // 6 free blocks x 40 + 6 mixed x 40 free trials.
        assert_eq!(client.1, 480);
        assert_eq!(t.records.len(), 720);
    }

    #[test]
    fn transient_failures_are_retried() {
        let task = build_task(1, 1).unwrap();
        let mut client = ScriptedEndpoint::new(ScriptedPolicy::FirstLabel);
        client.fail_next = 3;
        let t = run_session(&task, &mut client, 0, 2, 3, 0).unwrap();
        assert_eq!(t.records.len(), 96);
    }

    #[test]
    fn persistent_failure_aborts_with_partial() {
        struct DeadAfter(u32, ScriptedEndpoint);
        impl CompletionClient for DeadAfter {
            fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
                if self.0 == 0 {
                    return Err(TransportError::Timeout);
                }
                self.0 -= 1;
                self.1.complete(prompt)
            }
        }
        let task = build_task(1, 1).unwrap();
        let mut client = DeadAfter(10, ScriptedEndpoint::new(ScriptedPolicy::FirstLabel));
        let err = run_session(&task, &mut client, 0, 2, 2, 0).unwrap_err();
        match &err {
            SessionError::Transport { partial, visit, .. } => {
                assert_eq!(partial.records.len(), 10);
                assert_eq!(*visit, 11);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(err.partial().records.len(), 10);
    }

    #[test]
    fn nonsense_completion_fails_after_one_retry() {
        struct Nonsense(usize);
        impl CompletionClient for Nonsense {
            fn complete(&mut self, _prompt: &str) -> Result<String, TransportError> {
                self.0 += 1;
                Ok("the quick brown fox".to_string())
            }
        }
        let task = build_task(1, 1).unwrap();
        let mut client = Nonsense(0);
        let err = run_session(&task, &mut client, 0, 2, 3, 0).unwrap_err();
        assert!(matches!(err, SessionError::NoValidChoice { .. }));
        assert_eq!(client.0, 2);
    }
}
