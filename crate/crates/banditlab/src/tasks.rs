//! The three two-alternative forced-choice (2AFC) task environments.
//!
//! Every task is a set of blocks; a block is a pair of slot machines with
//! hidden win probabilities. Task 1 interleaves four casinos with partial
//! feedback, Task 2 mixes partial- and full-feedback blocks, Task 3 mixes
//! free-choice and forced-choice trials under partial feedback.
//!
//! Block composition (win probabilities, feedback mode, trial counts) is a
//! fixed function of the block id; the seed only randomizes presentation
//! order, Task 1 casino interleaving, and forced-trial placement. This keeps
//! every analysis reconstructible from `(task_id, block_id)` alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deterministic generator used throughout the crate. ChaCha output is
/// stable across platforms and releases, unlike `StdRng`.
pub type TaskRng = ChaCha8Rng;

/// Identifies one of the three task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TaskId {
    /// Task 1: four interleaved casinos, partial feedback, 0.5/0.0 dollars.
    Casinos,
    /// Task 2: single-casino blocks, half with counterfactual (full) feedback.
    Counterfactual,
    /// Task 3: single-casino blocks, half with forced-choice trials.
    Agency,
}

impl TaskId {
    pub fn all() -> [TaskId; 3] {
        [TaskId::Casinos, TaskId::Counterfactual, TaskId::Agency]
    }

    pub fn as_u8(self) -> u8 {
        match self {
            TaskId::Casinos => 1,
            TaskId::Counterfactual => 2,
            TaskId::Agency => 3,
        }
    }

    /// Initial expected value for learning models: the average of the two
    /// reward outcomes (0.25 dollars for Task 1, 0.0 points otherwise).
    pub fn initial_value(self) -> f64 {
        match self {
            TaskId::Casinos => 0.25,
            TaskId::Counterfactual | TaskId::Agency => 0.0,
        }
    }

    /// (win, lose) outcome values in task currency.
    pub fn reward_values(self) -> (f64, f64) {
        match self {
            TaskId::Casinos => (0.5, 0.0),
            TaskId::Counterfactual | TaskId::Agency => (1.0, -1.0),
        }
    }
}

impl TryFrom<u8> for TaskId {
    type Error = TaskError;

    fn try_from(v: u8) -> Result<Self, TaskError> {
        match v {
            1 => Ok(TaskId::Casinos),
            2 => Ok(TaskId::Counterfactual),
            3 => Ok(TaskId::Agency),
            other => Err(TaskError::UnknownTask(other)),
        }
    }
}

impl From<TaskId> for u8 {
    fn from(t: TaskId) -> u8 {
        t.as_u8()
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("unknown task id {0}; expected 1, 2, or 3")]
    UnknownTask(u8),
    #[error("task is finished; no further trials to step")]
    Finished,
    #[error("forced trial requires option {expected}, got {got}")]
    ForcedMismatch { expected: usize, got: usize },
    #[error("action {0} is not a valid option index")]
    IllegalAction(usize),
}

/// Whether the unchosen machine's outcome is revealed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    Partial,
    Full,
}

/// One scheduled trial: either a free choice or a forced play of a
/// predetermined option index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialSlot {
    Free,
    Forced(usize),
}

impl TrialSlot {
    pub fn kind(self) -> TrialKind {
        match self {
            TrialSlot::Free => TrialKind::Free,
            TrialSlot::Forced(_) => TrialKind::Forced,
        }
    }
}

/// Trial kind as stored in the behavioral record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Free,
    Forced,
}

/// A block: one casino with two slot machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub block_id: u32,
    pub win_probs: [f64; 2],
    pub feedback_mode: FeedbackMode,
    pub n_trials: u32,
    /// Per-trial schedule; length equals `n_trials`.
    pub trial_kinds: Vec<TrialSlot>,
    /// (win, lose) outcome values, copied from the task level.
    pub reward_values: (f64, f64),
}

impl BlockSpec {
    pub fn n_free(&self) -> u32 {
        self.trial_kinds
            .iter()
            .filter(|k| matches!(k, TrialSlot::Free))
            .count() as u32
    }
}

/// Full parameterization of a task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub blocks: Vec<BlockSpec>,
    /// (win, lose) outcome values in task currency.
    pub reward_values: (f64, f64),
    pub visits_total: u32,
    /// Temporal order of trials as `(block_id, trial_index)` pairs. Task 1
    /// interleaves casinos here; Tasks 2-3 list blocks in presentation order.
    pub schedule: Vec<(u32, u32)>,
}

/// Canonical behavioral record for a single trial.
///
/// Field order is fixed; it defines the line format of transcript files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub run_id: u32,
    pub block_id: u32,
    /// 0-based position within the block.
    pub trial_index: u32,
    /// 1-based visit number as printed in prompts (global for Task 1,
    /// per-block for Tasks 2-3).
    pub global_visit: u32,
    pub kind: TrialKind,
    /// Option labels in canonical machine order (index 0, index 1).
    pub options: [String; 2],
    pub chosen: String,
    pub reward_chosen: f64,
    /// Present iff `feedback_mode` is full.
    pub reward_unchosen: Option<f64>,
    pub feedback_mode: FeedbackMode,
}

impl TrialRecord {
    /// Index of the chosen option within `options`, if the labels are
    /// consistent.
    pub fn chosen_index(&self) -> Option<usize> {
        self.options.iter().position(|o| *o == self.chosen)
    }
}

/// Which kind of agent produced a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentTag {
    Llm,
    Metarl,
    Cogsim,
    Ingested,
}

/// The behavioral record of one full task run, sorted by
/// `(block_id, trial_index)`. `global_visit` preserves temporal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: TaskId,
    pub agent_tag: AgentTag,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
}

impl Transcript {
    /// Free-trial count; the `N` that enters the BIC.
    pub fn n_free(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.kind == TrialKind::Free)
            .count()
    }

    /// Restrict to blocks accepted by `keep`, preserving everything else.
    pub fn filter_blocks(&self, keep: impl Fn(u32) -> bool) -> Transcript {
        Transcript {
            task_id: self.task_id,
            agent_tag: self.agent_tag,
            seed: self.seed,
            records: self
                .records
                .iter()
                .filter(|r| keep(r.block_id))
                .cloned()
                .collect(),
        }
    }

    pub fn run_id(&self) -> u32 {
        self.records.first().map(|r| r.run_id).unwrap_or(0)
    }
}

/// Block composition for Task 2. Feedback mode and reward class are fixed
/// per block id so analyses never depend on the build seed.
fn task2_block(block_id: u32) -> ([f64; 2], FeedbackMode) {
    let mode = if block_id < 8 {
        FeedbackMode::Partial
    } else {
        FeedbackMode::Full
    };
    let probs = if block_id % 8 < 4 {
        [0.9, 0.6]
    } else {
        [0.4, 0.1]
    };
    (probs, mode)
}

fn task3_block(block_id: u32) -> ([f64; 2], bool) {
    // Blocks 0-5 are free-choice, 6-11 mixed-choice; high/low reward halves
    // within each group.
    let mixed = block_id >= 6;
    let probs = if block_id % 6 < 3 {
        [0.9, 0.6]
    } else {
        [0.4, 0.1]
    };
    (probs, mixed)
}

/// Shuffled schedule of forced/free slots with the forced trials split
/// evenly between the two machines.
pub(crate) fn balanced_mixed_schedule(n_free: u32, n_forced: u32, rng: &mut impl Rng) -> Vec<TrialSlot> {
    debug_assert_eq!(n_forced % 2, 0);
    let mut slots = Vec::with_capacity((n_free + n_forced) as usize);
    slots.extend(std::iter::repeat(TrialSlot::Free).take(n_free as usize));
    slots.extend(std::iter::repeat(TrialSlot::Forced(0)).take((n_forced / 2) as usize));
    slots.extend(std::iter::repeat(TrialSlot::Forced(1)).take((n_forced / 2) as usize));
    slots.shuffle(rng);
    slots
}

/// Build a task instance. Block interleaving and forced-trial placement are
/// deterministic functions of `rng_seed`.
pub fn build_task(task_id: u8, rng_seed: u64) -> Result<TaskSpec, TaskError> {
    let task = TaskId::try_from(task_id)?;
    let mut rng = TaskRng::seed_from_u64(rng_seed);
    let reward_values = task.reward_values();

    match task {
        TaskId::Casinos => {
            let prob_pairs = [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]];
            let blocks: Vec<BlockSpec> = prob_pairs
                .iter()
                .enumerate()
                .map(|(i, probs)| BlockSpec {
                    block_id: i as u32,
                    win_probs: *probs,
                    feedback_mode: FeedbackMode::Partial,
                    n_trials: 24,
                    trial_kinds: vec![TrialSlot::Free; 24],
                    reward_values,
                })
                .collect();
            // 96 visit slots, 24 per casino, uniformly permuted.
            let mut visit_blocks: Vec<u32> = (0..4).flat_map(|b| [b; 24]).collect();
            visit_blocks.shuffle(&mut rng);
            let mut counters = [0u32; 4];
            let schedule = visit_blocks
                .into_iter()
                .map(|b| {
                    let t = counters[b as usize];
                    counters[b as usize] += 1;
                    (b, t)
                })
                .collect();
            Ok(TaskSpec {
                task_id: task,
                blocks,
                reward_values,
                visits_total: 96,
                schedule,
            })
        }
        TaskId::Counterfactual => {
            let blocks: Vec<BlockSpec> = (0..16)
                .map(|b| {
                    let (win_probs, feedback_mode) = task2_block(b);
                    BlockSpec {
                        block_id: b,
                        win_probs,
                        feedback_mode,
                        n_trials: 40,
                        // "Half of the time you visit the casino, you can
                        // play, the other someone else is playing."
                        trial_kinds: balanced_mixed_schedule(20, 20, &mut rng),
                        reward_values,
                    }
                })
                .collect();
            let schedule = sequential_schedule(&blocks, &mut rng);
            Ok(TaskSpec {
                task_id: task,
                blocks,
                reward_values,
                visits_total: 640,
                schedule,
            })
        }
        TaskId::Agency => {
            let blocks: Vec<BlockSpec> = (0..12)
                .map(|b| {
                    let (win_probs, mixed) = task3_block(b);
                    let (n_trials, trial_kinds) = if mixed {
                        (80, balanced_mixed_schedule(40, 40, &mut rng))
                    } else {
                        (40, vec![TrialSlot::Free; 40])
                    };
                    BlockSpec {
                        block_id: b,
                        win_probs,
                        feedback_mode: FeedbackMode::Partial,
                        n_trials,
                        trial_kinds,
                        reward_values,
                    }
                })
                .collect();
            let schedule = sequential_schedule(&blocks, &mut rng);
            Ok(TaskSpec {
                task_id: task,
                blocks,
                reward_values,
                visits_total: 720,
                schedule,
            })
        }
    }
}

/// Blocks in random presentation order, each run to completion before the
/// next starts (blocks are prompted independently).
fn sequential_schedule(blocks: &[BlockSpec], rng: &mut impl Rng) -> Vec<(u32, u32)> {
    let mut order: Vec<u32> = blocks.iter().map(|b| b.block_id).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .flat_map(|b| {
            let n = blocks[b as usize].n_trials;
            (0..n).map(move |t| (b, t))
        })
        .collect()
}

/// Draw a stochastic outcome for `option` on `block`.
pub fn sample_reward(block: &BlockSpec, option: usize, rng: &mut impl Rng) -> f64 {
    let (win, lose) = block.reward_values;
    if rng.gen_bool(block.win_probs[option]) {
        win
    } else {
        lose
    }
}

/// Reward missed in expectation relative to the optimal choice:
/// `(max(p) - p[chosen]) * (win - lose)`.
pub fn expected_regret(block: &BlockSpec, chosen_option: usize) -> f64 {
    let (win, lose) = block.reward_values;
    let max_p = block.win_probs[0].max(block.win_probs[1]);
    (max_p - block.win_probs[chosen_option]) * (win - lose)
}

/// Secondary metric: expected reward of the best option minus the outcome
/// actually received. Averages to `expected_regret` over reward draws.
pub fn realized_regret(block: &BlockSpec, reward_received: f64) -> f64 {
    let (win, lose) = block.reward_values;
    let max_p = block.win_probs[0].max(block.win_probs[1]);
    (max_p * win + (1.0 - max_p) * lose) - reward_received
}

/// The trial the environment is waiting on.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingTrial {
    pub block_id: u32,
    pub trial_index: u32,
    pub global_visit: u32,
    pub slot: TrialSlot,
    pub feedback_mode: FeedbackMode,
    pub options: [String; 2],
}

/// Single-owner mutable environment state for one run. Rewards are drawn
/// from a generator owned by the state, so independent runs parallelize
/// freely.
#[derive(Debug, Clone)]
pub struct TaskState {
    spec: TaskSpec,
    run_id: u32,
    cursor: usize,
    rng: TaskRng,
    /// Option labels per block, canonical machine order.
    labels: Vec<[String; 2]>,
    records: Vec<TrialRecord>,
}

impl TaskState {
    pub fn new(spec: TaskSpec, run_id: u32, reward_seed: u64) -> Self {
        let labels = spec
            .blocks
            .iter()
            .map(|_| ["A".to_string(), "B".to_string()])
            .collect();
        TaskState {
            spec,
            run_id,
            cursor: 0,
            rng: TaskRng::seed_from_u64(reward_seed),
            labels,
            records: Vec::new(),
        }
    }

    /// Replace the default A/B labels (one pair per block).
    pub fn set_labels(&mut self, labels: Vec<[String; 2]>) {
        assert_eq!(labels.len(), self.spec.blocks.len());
        self.labels = labels;
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn run_id(&self) -> u32 {
        self.run_id
    }

    pub fn is_finished(&self) -> bool {
        self.cursor >= self.spec.schedule.len()
    }

    /// The trial awaiting an action, or `None` once the run is complete.
    pub fn current(&self) -> Option<PendingTrial> {
        let &(block_id, trial_index) = self.spec.schedule.get(self.cursor)?;
        let block = &self.spec.blocks[block_id as usize];
        let global_visit = match self.spec.task_id {
            TaskId::Casinos => self.cursor as u32 + 1,
            _ => trial_index + 1,
        };
        Some(PendingTrial {
            block_id,
            trial_index,
            global_visit,
            slot: block.trial_kinds[trial_index as usize],
            feedback_mode: block.feedback_mode,
            options: self.labels[block_id as usize].clone(),
        })
    }

    /// Play `action` on the current trial: samples the outcome(s), appends
    /// the record, and advances the schedule. On forced trials `action`
    /// must equal the forced option.
    pub fn step(&mut self, action: usize) -> Result<TrialRecord, TaskError> {
        let pending = self.current().ok_or(TaskError::Finished)?;
        if action > 1 {
            return Err(TaskError::IllegalAction(action));
        }
        if let TrialSlot::Forced(forced) = pending.slot {
            if action != forced {
                return Err(TaskError::ForcedMismatch {
                    expected: forced,
                    got: action,
                });
            }
        }
        let block = &self.spec.blocks[pending.block_id as usize];
        let reward_chosen = sample_reward(block, action, &mut self.rng);
        // The counterfactual outcome is an independent draw from the
        // unchosen machine.
        let reward_unchosen = match block.feedback_mode {
            FeedbackMode::Full => Some(sample_reward(block, 1 - action, &mut self.rng)),
            FeedbackMode::Partial => None,
        };
        let record = TrialRecord {
            run_id: self.run_id,
            block_id: pending.block_id,
            trial_index: pending.trial_index,
            global_visit: pending.global_visit,
            kind: pending.slot.kind(),
            options: pending.options.clone(),
            chosen: pending.options[action].clone(),
            reward_chosen,
            reward_unchosen,
            feedback_mode: block.feedback_mode,
        };
        self.records.push(record.clone());
        self.cursor += 1;
        Ok(record)
    }

    /// Finish the run, sorting records into canonical order.
    pub fn into_transcript(self, agent_tag: AgentTag, seed: u64) -> Transcript {
        let mut records = self.records;
        records.sort_by_key(|r| (r.block_id, r.trial_index));
        Transcript {
            task_id: self.spec.task_id,
            agent_tag,
            seed,
            records,
        }
    }
}

/// Check every record-level and transcript-level invariant against the
/// task family. Returns the index of the first offending record.
pub fn validate_transcript(t: &Transcript) -> Result<(), (usize, String)> {
    let spec = build_task(t.task_id.as_u8(), 0).expect("task id is valid");
    let (win, lose) = spec.reward_values;
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let mut counts = vec![0u32; spec.blocks.len()];
    let mut forced_counts = vec![0u32; spec.blocks.len()];
    let mut prev: Option<(u32, u32)> = None;
    for (i, r) in t.records.iter().enumerate() {
        let key = (r.block_id, r.trial_index);
        if let Some(p) = prev {
            if key <= p {
                return Err((i, format!("records not ordered by (block_id, trial_index) at {key:?}")));
            }
        }
        prev = Some(key);
        let block = spec
            .blocks
            .get(r.block_id as usize)
            .ok_or((i, format!("block_id {} out of range", r.block_id)))?;
        if r.trial_index >= block.n_trials {
            return Err((i, format!("trial_index {} exceeds block length", r.trial_index)));
        }
        if r.feedback_mode != block.feedback_mode {
            return Err((i, "feedback_mode does not match the block".to_string()));
        }
        if r.options[0] == r.options[1] {
            return Err((i, "option labels are not distinct".to_string()));
        }
        if r.chosen_index().is_none() {
            return Err((i, format!("chosen label {:?} not among options", r.chosen)));
        }
        if !close(r.reward_chosen, win) && !close(r.reward_chosen, lose) {
            return Err((i, format!("reward_chosen {} outside task currency", r.reward_chosen)));
        }
        match (r.feedback_mode, r.reward_unchosen) {
            (FeedbackMode::Full, None) => {
                return Err((i, "full feedback record missing reward_unchosen".to_string()))
            }
            (FeedbackMode::Partial, Some(_)) => {
                return Err((i, "partial feedback record carries reward_unchosen".to_string()))
            }
            (FeedbackMode::Full, Some(ru)) if !close(ru, win) && !close(ru, lose) => {
                return Err((i, format!("reward_unchosen {ru} outside task currency")));
            }
            _ => {}
        }
        counts[r.block_id as usize] += 1;
        if r.kind == TrialKind::Forced {
            forced_counts[r.block_id as usize] += 1;
        }
    }
    for (b, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if n != spec.blocks[b].n_trials {
            return Err((
                t.records.len(),
                format!("block {b} has {n} records, expected {}", spec.blocks[b].n_trials),
            ));
        }
        // Forced placement varies with seed but the per-block count does not.
        let expected_forced = spec.blocks[b].n_trials - spec.blocks[b].n_free();
        if forced_counts[b] != expected_forced {
            return Err((
                t.records.len(),
                format!(
                    "block {b} has {} forced trials, expected {expected_forced}",
                    forced_counts[b]
                ),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn task1_structure() {
        let spec = build_task(1, 7).unwrap();
        assert_eq!(spec.blocks.len(), 4);
        assert_eq!(spec.visits_total, 96);
        assert_eq!(spec.schedule.len(), 96);
        let mut pairs: Vec<[f64; 2]> = spec.blocks.iter().map(|b| b.win_probs).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            pairs,
            vec![[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]]
        );
        for b in 0..4u32 {
            assert_eq!(spec.schedule.iter().filter(|(bb, _)| *bb == b).count(), 24);
        }
    }

    #[test]
    fn task2_structure() {
        let spec = build_task(2, 11).unwrap();
        assert_eq!(spec.blocks.len(), 16);
        assert_eq!(spec.visits_total, 640);
        let partial = spec
            .blocks
            .iter()
            .filter(|b| b.feedback_mode == FeedbackMode::Partial)
            .count();
        assert_eq!(partial, 8);
        let high = spec.blocks.iter().filter(|b| b.win_probs == [0.9, 0.6]).count();
        assert_eq!(high, 8);
        for b in &spec.blocks {
            assert_eq!(b.n_trials, 40);
            assert_eq!(b.n_free(), 20);
            let forced0 = b
                .trial_kinds
                .iter()
                .filter(|k| matches!(k, TrialSlot::Forced(0)))
                .count();
            assert_eq!(forced0, 10);
        }
    }

    #[test]
    fn task3_forced_balance() {
        let spec = build_task(3, 123).unwrap();
        assert_eq!(spec.blocks.len(), 12);
        for b in &spec.blocks {
            if b.block_id < 6 {
                assert_eq!(b.n_trials, 40);
                assert_eq!(b.n_free(), 40);
            } else {
                assert_eq!(b.n_trials, 80);
                assert_eq!(b.n_free(), 40);
                let forced: Vec<usize> = b
                    .trial_kinds
                    .iter()
                    .filter_map(|k| match k {
                        TrialSlot::Forced(o) => Some(*o),
                        TrialSlot::Free => None,
                    })
                    .collect();
                assert_eq!(forced.len(), 40);
                assert_eq!(forced.iter().filter(|&&o| o == 0).count(), 20);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(build_task(1, 42).unwrap(), build_task(1, 42).unwrap());
        assert_eq!(build_task(3, 9).unwrap(), build_task(3, 9).unwrap());
        assert_ne!(
            build_task(1, 1).unwrap().schedule,
            build_task(1, 2).unwrap().schedule
        );
    }

    #[test]
    fn unknown_task_rejected() {
        assert!(matches!(build_task(4, 0), Err(TaskError::UnknownTask(4))));
    }

    #[test]
    fn degenerate_reward_probs() {
        let mut rng = TaskRng::seed_from_u64(0);
        let mut block = build_task(1, 0).unwrap().blocks[0].clone();
        block.win_probs = [1.0, 0.0];
        for _ in 0..50 {
            assert_eq!(sample_reward(&block, 0, &mut rng), 0.5);
            assert_eq!(sample_reward(&block, 1, &mut rng), 0.0);
        }
    }

    #[test]
    fn reward_sampling_monte_carlo() {
        let mut rng = TaskRng::seed_from_u64(1);
        let mut block = build_task(1, 0).unwrap().blocks[0].clone();
        block.win_probs = [0.75, 0.25];
        let n = 100_000;
        let wins = (0..n)
            .filter(|_| sample_reward(&block, 0, &mut rng) == 0.5)
            .count();
        let frac = wins as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.01, "win fraction {frac}");
    }

    #[test]
    fn regret_examples() {
        let spec = build_task(1, 0).unwrap();
        let unequal = spec
            .blocks
            .iter()
            .find(|b| b.win_probs == [0.25, 0.75])
            .unwrap();
        assert!((expected_regret(unequal, 0) - 0.25).abs() < 1e-12);
        assert_eq!(expected_regret(unequal, 1), 0.0);
        // Uniform-random policy averaged over the four casinos.
        let mean: f64 = spec
            .blocks
            .iter()
            .map(|b| 0.5 * expected_regret(b, 0) + 0.5 * expected_regret(b, 1))
            .sum::<f64>()
            / 4.0;
        assert!((mean - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn step_full_feedback_has_counterfactual() {
        let spec = build_task(2, 3).unwrap();
        let mut state = TaskState::new(spec, 0, 99);
        let mut saw_full = false;
        let mut saw_partial = false;
        while let Some(pending) = state.current() {
            let action = match pending.slot {
                TrialSlot::Free => 0,
                TrialSlot::Forced(o) => o,
            };
            let rec = state.step(action).unwrap();
            match rec.feedback_mode {
                FeedbackMode::Full => {
                    assert!(rec.reward_unchosen.is_some());
                    saw_full = true;
                }
                FeedbackMode::Partial => {
                    assert!(rec.reward_unchosen.is_none());
                    saw_partial = true;
                }
            }
        }
        assert!(saw_full && saw_partial);
        assert!(matches!(state.step(0), Err(TaskError::Finished)));
    }

    #[test]
    fn forced_trial_rejects_wrong_action() {
        let spec = build_task(3, 5).unwrap();
        let mut state = TaskState::new(spec, 0, 1);
        loop {
            let pending = state.current().expect("task 3 has forced trials");
            if let TrialSlot::Forced(o) = pending.slot {
                let err = state.step(1 - o).unwrap_err();
                assert!(matches!(err, TaskError::ForcedMismatch { .. }));
                break;
            }
            state.step(0).unwrap();
        }
    }

    #[test]
    fn transcript_validates_and_roundtrips() {
        let spec = build_task(1, 21).unwrap();
        let mut state = TaskState::new(spec, 3, 8);
        while !state.is_finished() {
            state.step(1).unwrap();
        }
        let t = state.into_transcript(AgentTag::Cogsim, 8);
        assert_eq!(t.records.len(), 96);
        validate_transcript(&t).unwrap();
        let line = serde_json::to_string(&t.records[0]).unwrap();
        assert!(line.contains("\"reward_unchosen\":null"));
        let back: TrialRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, t.records[0]);
    }

    proptest! {
        #[test]
        fn regret_nonnegative_and_zero_at_best(p0 in 0.0f64..1.0, p1 in 0.0f64..1.0) {
            let mut block = build_task(1, 0).unwrap().blocks[0].clone();
            block.win_probs = [p0, p1];
            for chosen in 0..2 {
                let r = expected_regret(&block, chosen);
                prop_assert!(r >= 0.0);
                let is_best = block.win_probs[chosen] >= block.win_probs[1 - chosen];
                prop_assert_eq!(r == 0.0, is_best);
            }
        }
    }
}
