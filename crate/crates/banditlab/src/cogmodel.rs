//! The Rescorla-Wagner model family.
//!
//! Every model here is the same parametric scheme: a map from update
//! contexts (which outcome, which trial kind, which prediction-error sign)
//! to learning-rate slots, plus a softmax inverse temperature. The classic
//! RW model uses one slot for everything; RW± splits by error sign; the
//! counterfactual and agency variants split further by outcome target and
//! trial kind.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::{
    AgentTag, TaskId, TaskRng, TaskSpec, TaskState, Transcript, TrialKind, TrialRecord, TrialSlot,
};
use rand::SeedableRng;

#[derive(Debug, Error)]
pub enum CogError {
    #[error("record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("model {model} expects {expected} rates, got {got}")]
    RateCountMismatch {
        model: ModelId,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Which observed outcome an update applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Chosen,
    Unchosen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorSign {
    Positive,
    Negative,
}

/// Classification axes for a single value update. Eight combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UpdateContext {
    pub target: Target,
    pub trial_kind: TrialKind,
    pub error_sign: ErrorSign,
}

/// A member of the RW family, identified by name in CLI and report files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    /// One learning rate for everything.
    #[serde(rename = "RW")]
    Rw,
    /// Separate rates for positive and negative prediction errors
    /// (free-choice chosen outcomes only).
    #[serde(rename = "RWpm")]
    RwPm,
    /// Four rates: (chosen | unchosen) x (positive | negative).
    #[serde(rename = "Full4a")]
    Full4a,
    /// Two rates: confirmatory (chosen+, unchosen-) vs. disconfirmatory.
    #[serde(rename = "Confirm2a")]
    Confirm2a,
    /// Free trials split by sign, forced trials share one rate.
    #[serde(rename = "Agency3a")]
    Agency3a,
    /// Four rates: (free | forced) x (positive | negative).
    #[serde(rename = "Agency4a")]
    Agency4a,
}

impl ModelId {
    pub fn all() -> [ModelId; 6] {
        [
            ModelId::Rw,
            ModelId::RwPm,
            ModelId::Full4a,
            ModelId::Confirm2a,
            ModelId::Agency3a,
            ModelId::Agency4a,
        ]
    }

    pub fn n_rates(self) -> usize {
        match self {
            ModelId::Rw => 1,
            ModelId::RwPm | ModelId::Confirm2a => 2,
            ModelId::Agency3a => 3,
            ModelId::Full4a | ModelId::Agency4a => 4,
        }
    }

    /// Number of fitted parameters (rates plus inverse temperature).
    pub fn n_params(self) -> usize {
        self.n_rates() + 1
    }

    pub fn rate_names(self) -> &'static [&'static str] {
        match self {
            ModelId::Rw => &["alpha"],
            ModelId::RwPm => &["alpha_plus", "alpha_minus"],
            ModelId::Full4a => &[
                "alpha_chosen_plus",
                "alpha_chosen_minus",
                "alpha_unchosen_plus",
                "alpha_unchosen_minus",
            ],
            ModelId::Confirm2a => &["alpha_confirm", "alpha_disconfirm"],
            ModelId::Agency3a => &["alpha_free_plus", "alpha_free_minus", "alpha_forced"],
            ModelId::Agency4a => &[
                "alpha_free_plus",
                "alpha_free_minus",
                "alpha_forced_plus",
                "alpha_forced_minus",
            ],
        }
    }

    /// The learning-rate slot used for `ctx`, or `None` when the model
    /// does not update in that context.
    pub fn rate_slot(self, ctx: UpdateContext) -> Option<usize> {
        use ErrorSign::*;
        use Target::*;
        match self {
            ModelId::Rw => Some(0),
            ModelId::RwPm => match (ctx.target, ctx.trial_kind, ctx.error_sign) {
                (Chosen, TrialKind::Free, Positive) => Some(0),
                (Chosen, TrialKind::Free, Negative) => Some(1),
                _ => None,
            },
            ModelId::Full4a => match (ctx.target, ctx.error_sign) {
                (Chosen, Positive) => Some(0),
                (Chosen, Negative) => Some(1),
                (Unchosen, Positive) => Some(2),
                (Unchosen, Negative) => Some(3),
            },
            ModelId::Confirm2a => match (ctx.target, ctx.error_sign) {
                // Confirmatory: the chosen machine beat expectations or the
                // foregone machine fell short of them.
                (Chosen, Positive) | (Unchosen, Negative) => Some(0),
                (Chosen, Negative) | (Unchosen, Positive) => Some(1),
            },
            ModelId::Agency3a => match (ctx.target, ctx.trial_kind, ctx.error_sign) {
                (Chosen, TrialKind::Free, Positive) => Some(0),
                (Chosen, TrialKind::Free, Negative) => Some(1),
                (Chosen, TrialKind::Forced, _) => Some(2),
                (Unchosen, _, _) => None,
            },
            ModelId::Agency4a => match (ctx.target, ctx.trial_kind, ctx.error_sign) {
                (Chosen, TrialKind::Free, Positive) => Some(0),
                (Chosen, TrialKind::Free, Negative) => Some(1),
                (Chosen, TrialKind::Forced, Positive) => Some(2),
                (Chosen, TrialKind::Forced, Negative) => Some(3),
                (Unchosen, _, _) => None,
            },
        }
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelId::Rw => "RW",
            ModelId::RwPm => "RWpm",
            ModelId::Full4a => "Full4a",
            ModelId::Confirm2a => "Confirm2a",
            ModelId::Agency3a => "Agency3a",
            ModelId::Agency4a => "Agency4a",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelId {
    type Err = CogError;

    fn from_str(s: &str) -> Result<Self, CogError> {
        match s {
            "RW" => Ok(ModelId::Rw),
            "RWpm" => Ok(ModelId::RwPm),
            "Full4a" => Ok(ModelId::Full4a),
            "Confirm2a" => Ok(ModelId::Confirm2a),
            "Agency3a" => Ok(ModelId::Agency3a),
            "Agency4a" => Ok(ModelId::Agency4a),
            other => Err(CogError::InvalidParam(format!("unknown model id {other:?}"))),
        }
    }
}

/// Learning rates plus inverse temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// One rate per slot, each in [0, 1].
    pub rates: Vec<f64>,
    /// Softmax inverse temperature, finite and nonnegative.
    pub beta: f64,
}

impl ParamVector {
    pub fn new(rates: Vec<f64>, beta: f64) -> Self {
        ParamVector { rates, beta }
    }

    pub fn validate(&self, model: ModelId) -> Result<(), CogError> {
        if self.rates.len() != model.n_rates() {
            return Err(CogError::RateCountMismatch {
                model,
                expected: model.n_rates(),
                got: self.rates.len(),
            });
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(CogError::InvalidParam(format!("rate {r} outside [0, 1]")));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(CogError::InvalidParam(format!(
                "beta {} must be finite and nonnegative",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Per-block expected values for both options. Each block is a separate
/// learning problem: values start at the task's initial value and are never
/// shared across blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueState {
    pub v0: f64,
    values: Vec<[f64; 2]>,
}

impl ValueState {
    pub fn new(v0: f64, n_blocks: usize) -> Self {
        ValueState {
            v0,
            values: vec![[v0, v0]; n_blocks],
        }
    }

    pub fn for_task(task_id: TaskId) -> Self {
        let n_blocks = match task_id {
            TaskId::Casinos => 4,
            TaskId::Counterfactual => 16,
            TaskId::Agency => 12,
        };
        ValueState::new(task_id.initial_value(), n_blocks)
    }

    pub fn value(&self, block_id: u32, option: usize) -> f64 {
        self.values[block_id as usize][option]
    }

    pub fn pair(&self, block_id: u32) -> [f64; 2] {
        self.values[block_id as usize]
    }

    fn bump(&mut self, block_id: u32, option: usize, amount: f64) {
        self.values[block_id as usize][option] += amount;
    }
}

/// Prediction error between an observed reward and the current expectation.
pub fn prediction_error(value: f64, reward: f64) -> f64 {
    reward - value
}

fn sign_of(delta: f64) -> Option<ErrorSign> {
    if delta > 0.0 {
        Some(ErrorSign::Positive)
    } else if delta < 0.0 {
        Some(ErrorSign::Negative)
    } else {
        // Zero prediction error updates nothing; both sign branches agree
        // in the limit.
        None
    }
}

/// Apply one trial's worth of value updates. The chosen outcome always
/// updates; the unchosen outcome updates iff the record carries the
/// counterfactual reward. Contexts the model ignores leave values intact.
pub fn apply_update(
    state: &mut ValueState,
    model: ModelId,
    params: &ParamVector,
    record: &TrialRecord,
) -> Result<(), CogError> {
    let chosen = record.chosen_index().ok_or_else(|| CogError::MalformedRecord {
        index: record.trial_index as usize,
        reason: format!("chosen label {:?} not among options", record.chosen),
    })?;
    let one = |target: Target, option: usize, reward: f64, state: &mut ValueState| {
        let delta = prediction_error(state.value(record.block_id, option), reward);
        if let Some(error_sign) = sign_of(delta) {
            let ctx = UpdateContext {
                target,
                trial_kind: record.kind,
                error_sign,
            };
            if let Some(slot) = model.rate_slot(ctx) {
                state.bump(record.block_id, option, params.rates[slot] * delta);
            }
        }
    };
    one(Target::Chosen, chosen, record.reward_chosen, state);
    if let Some(unchosen_reward) = record.reward_unchosen {
        one(Target::Unchosen, 1 - chosen, unchosen_reward, state);
    }
    Ok(())
}

/// Softmax choice rule over a pair of values, computed with the max
/// subtracted so large `beta * value` products cannot overflow.
pub fn choice_probabilities(values: [f64; 2], beta: f64) -> [f64; 2] {
    let scaled = [beta * values[0], beta * values[1]];
    let m = scaled[0].max(scaled[1]);
    let e = [(scaled[0] - m).exp(), (scaled[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

/// Log probability of choosing `chosen` under the softmax rule.
fn log_choice_probability(values: [f64; 2], beta: f64, chosen: usize) -> f64 {
    let scaled = [beta * values[0], beta * values[1]];
    let m = scaled[0].max(scaled[1]);
    let z = (scaled[0] - m).exp() + (scaled[1] - m).exp();
    scaled[chosen] - m - z.ln()
}

/// Generate behavior from a model on a task: free choices sampled from the
/// softmax rule, forced options followed, values updated after every trial.
pub fn simulate_agent(
    task: &TaskSpec,
    model: ModelId,
    params: &ParamVector,
    run_id: u32,
    seed: u64,
) -> Result<Transcript, CogError> {
    params.validate(model)?;
    // Independent streams for environment outcomes and the agent's choices.
    let mut choice_rng = TaskRng::seed_from_u64(seed);
    choice_rng.set_stream(1);
    let mut state = TaskState::new(task.clone(), run_id, seed);
    let mut values = ValueState::new(task.task_id.initial_value(), task.blocks.len());
    while let Some(pending) = state.current() {
        let action = match pending.slot {
            TrialSlot::Forced(o) => o,
            TrialSlot::Free => {
                let p = choice_probabilities(values.pair(pending.block_id), params.beta);
                usize::from(choice_rng.gen::<f64>() >= p[0])
            }
        };
        let record = state.step(action).expect("action is legal by construction");
        apply_update(&mut values, model, params, &record)?;
    }
    Ok(state.into_transcript(AgentTag::Cogsim, seed))
}

/// Replay a transcript and accumulate `-ln p(choice)` over free trials.
/// Forced trials update values but contribute no likelihood term; the free
/// trial count is the `N` that enters the BIC.
pub fn negative_log_likelihood(
    transcript: &Transcript,
    model: ModelId,
    params: &ParamVector,
) -> Result<f64, CogError> {
    let n_blocks = transcript
        .records
        .iter()
        .map(|r| r.block_id as usize + 1)
        .max()
        .unwrap_or(0);
    let mut values = ValueState::new(transcript.task_id.initial_value(), n_blocks);
    let mut nll = 0.0;
    for (index, record) in transcript.records.iter().enumerate() {
        let chosen = record
            .chosen_index()
            .ok_or_else(|| CogError::MalformedRecord {
                index,
                reason: format!("chosen label {:?} not among options", record.chosen),
            })?;
        if record.kind == TrialKind::Free {
            nll -= log_choice_probability(values.pair(record.block_id), params.beta, chosen);
        }
        apply_update(&mut values, model, params, record)?;
    }
    Ok(nll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{build_task, FeedbackMode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn free_record(block_id: u32, chosen: usize, reward: f64, unchosen: Option<f64>) -> TrialRecord {
        TrialRecord {
            run_id: 0,
            block_id,
            trial_index: 0,
            global_visit: 1,
            kind: TrialKind::Free,
            options: ["A".into(), "B".into()],
            chosen: if chosen == 0 { "A".into() } else { "B".into() },
            reward_chosen: reward,
            reward_unchosen: unchosen,
            feedback_mode: if unchosen.is_some() {
                FeedbackMode::Full
            } else {
                FeedbackMode::Partial
            },
        }
    }

    #[test]
    fn prediction_error_examples() {
        assert_eq!(prediction_error(0.25, 0.5), 0.25);
        assert_eq!(prediction_error(0.7, 0.7), 0.0);
        assert_eq!(prediction_error(0.5, 0.0), -0.5);
    }

    #[test]
    fn rwpm_update_example() {
        // Optimistic update at the strength reported for the partial task.
        let mut state = ValueState::new(0.0, 1);
        let params = ParamVector::new(vec![0.87, 0.10], 5.0);
        let rec = free_record(0, 0, 0.5, None);
        apply_update(&mut state, ModelId::RwPm, &params, &rec).unwrap();
        assert_relative_eq!(state.value(0, 0), 0.435, max_relative = 1e-12);
        assert_eq!(state.value(0, 1), 0.0);
    }

    #[test]
    fn zero_rate_never_moves() {
        let mut state = ValueState::new(0.25, 1);
        let params = ParamVector::new(vec![0.0], 1.0);
        for reward in [0.5, 0.0, 0.5] {
            let rec = free_record(0, 1, reward, None);
            apply_update(&mut state, ModelId::Rw, &params, &rec).unwrap();
        }
        assert_eq!(state.pair(0), [0.25, 0.25]);
    }

    #[test]
    fn rwpm_with_equal_rates_matches_rw() {
        let mut a = ValueState::new(0.25, 1);
        let mut b = ValueState::new(0.25, 1);
        let rw = ParamVector::new(vec![0.3], 2.0);
        let pm = ParamVector::new(vec![0.3, 0.3], 2.0);
        for (chosen, reward) in [(0, 0.5), (0, 0.0), (1, 0.5), (0, 0.5)] {
            let rec = free_record(0, chosen, reward, None);
            apply_update(&mut a, ModelId::Rw, &rw, &rec).unwrap();
            apply_update(&mut b, ModelId::RwPm, &pm, &rec).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(choice_probabilities([0.3, 0.9], 0.0), [0.5, 0.5]);
        let p = choice_probabilities([1.0, 0.0], 3f64.ln());
        assert_relative_eq!(p[0], 0.75, max_relative = 1e-12);
        assert_relative_eq!(p[1], 0.25, max_relative = 1e-12);
        assert_eq!(choice_probabilities([0.4, 0.4], 17.0), [0.5, 0.5]);
    }

    #[test]
    fn confirm2a_slots() {
        use ErrorSign::*;
        use Target::*;
        let ctx = |target, error_sign| UpdateContext {
            target,
            trial_kind: TrialKind::Free,
            error_sign,
        };
        assert_eq!(ModelId::Confirm2a.rate_slot(ctx(Chosen, Positive)), Some(0));
        assert_eq!(ModelId::Confirm2a.rate_slot(ctx(Unchosen, Negative)), Some(0));
        assert_eq!(ModelId::Confirm2a.rate_slot(ctx(Chosen, Negative)), Some(1));
        assert_eq!(ModelId::Confirm2a.rate_slot(ctx(Unchosen, Positive)), Some(1));
    }

    #[test]
    fn greedy_agent_locks_onto_winner() {
        // Deterministic machines and a near-greedy policy: after the first
        // win the agent must never leave the winning machine.
        let mut task = build_task(1, 3).unwrap();
        for b in &mut task.blocks {
            b.win_probs = [1.0, 0.0];
        }
        let params = ParamVector::new(vec![0.5, 0.5], 1000.0);
        let t = simulate_agent(&task, ModelId::RwPm, &params, 0, 17).unwrap();
        for block in 0..4u32 {
            let recs: Vec<_> = t.records.iter().filter(|r| r.block_id == block).collect();
            let first_win = recs
                .iter()
                .position(|r| r.reward_chosen == 0.5)
                .expect("winning machine pays every time it is played");
            for r in &recs[first_win..] {
                assert_eq!(r.chosen_index().unwrap(), 0, "block {block}");
            }
        }
    }

    #[test]
    fn zero_rates_give_uniform_likelihood() {
        let task = build_task(1, 5).unwrap();
        let params = ParamVector::new(vec![0.0, 0.0], 4.0);
        let t = simulate_agent(&task, ModelId::RwPm, &params, 0, 11).unwrap();
        let nll = negative_log_likelihood(&t, ModelId::RwPm, &params).unwrap();
        assert_relative_eq!(nll, 96.0 * 2f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn simulate_is_deterministic() {
        let task = build_task(2, 9).unwrap();
        let params = ParamVector::new(vec![0.4, 0.2, 0.3, 0.5], 6.0);
        let a = simulate_agent(&task, ModelId::Full4a, &params, 0, 123).unwrap();
        let b = simulate_agent(&task, ModelId::Full4a, &params, 0, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nll_handcomputed_two_trials() {
        // First trial at equal values is p = 0.5; an RW(1.0) update after a
        // +1 outcome puts the values at (1, 0), so with beta = ln 3 the
        // second choice of the same machine has p = 0.75.
        let records = vec![
            TrialRecord {
                trial_index: 0,
                global_visit: 1,
                ..free_record(0, 0, 1.0, None)
            },
            TrialRecord {
                trial_index: 1,
                global_visit: 2,
                ..free_record(0, 0, 1.0, None)
            },
        ];
        let t = Transcript {
            task_id: TaskId::Agency,
            agent_tag: AgentTag::Cogsim,
            seed: 0,
            records,
        };
        let params = ParamVector::new(vec![1.0], 3f64.ln());
        let nll = negative_log_likelihood(&t, ModelId::Rw, &params).unwrap();
        assert_relative_eq!(nll, -(0.5f64.ln()) - 0.75f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn empty_transcript_nll_is_zero() {
        let t = Transcript {
            task_id: TaskId::Casinos,
            agent_tag: AgentTag::Cogsim,
            seed: 0,
            records: vec![],
        };
        let params = ParamVector::new(vec![0.5], 3.0);
        assert_eq!(negative_log_likelihood(&t, ModelId::Rw, &params).unwrap(), 0.0);
    }

    #[test]
    fn forced_trials_update_but_do_not_score() {
        // A transcript of only forced trials has zero likelihood mass but
        // still moves values.
        let mut rec = free_record(0, 0, 1.0, None);
        rec.kind = TrialKind::Forced;
        let t = Transcript {
            task_id: TaskId::Agency,
            agent_tag: AgentTag::Cogsim,
            seed: 0,
            records: vec![rec.clone()],
        };
        let params = ParamVector::new(vec![0.2, 0.3, 0.4], 2.0);
        assert_eq!(
            negative_log_likelihood(&t, ModelId::Agency3a, &params).unwrap(),
            0.0
        );
        let mut state = ValueState::new(0.0, 1);
        apply_update(&mut state, ModelId::Agency3a, &params, &rec).unwrap();
        assert_relative_eq!(state.value(0, 0), 0.4, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn values_stay_bounded(
            seed in 0u64..1000,
            rates in proptest::collection::vec(0.0f64..=1.0, 4),
        ) {
            let mut rng = TaskRng::seed_from_u64(seed);
            let mut state = ValueState::new(0.0, 2);
            let params = ParamVector::new(rates, 1.0);
            for i in 0..200 {
                let chosen = (rng.gen::<bool>()) as usize;
                let reward = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let unchosen = rng.gen::<bool>().then(|| if rng.gen::<bool>() { 1.0 } else { -1.0 });
                let mut rec = free_record(i % 2, chosen, reward, unchosen);
                if rng.gen::<f64>() < 0.3 { rec.kind = TrialKind::Forced; }
                apply_update(&mut state, ModelId::Full4a, &params, &rec).unwrap();
                for b in 0..2 {
                    for o in 0..2 {
                        prop_assert!((-1.0..=1.0).contains(&state.value(b, o)));
                    }
                }
            }
        }

        #[test]
        fn softmax_shift_invariant(v0 in -5.0f64..5.0, v1 in -5.0f64..5.0, c in -10.0f64..10.0, beta in 0.0f64..20.0) {
            let p = choice_probabilities([v0, v1], beta);
            let q = choice_probabilities([v0 + c, v1 + c], beta);
            prop_assert!((p[0] - q[0]).abs() < 1e-9);
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }
}
