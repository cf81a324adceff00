//! The idealized in-context learning agent: a small causal transformer
//! trained with an actor-critic objective over uniformly sampled 2AFC
//! tasks, then evaluated on the experimental tasks without weight updates.

mod net;

pub use net::{
    backward, forward_full, forward_step, param_count, softmax2, AdamState, NetShape, Params,
    SeqState,
};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::derive_seed;
use crate::tasks::{
    AgentTag, BlockSpec, FeedbackMode, TaskId, TaskRng, TaskSpec, TaskState,
    Transcript, TrialRecord, TrialSlot,
};

#[derive(Debug, Error)]
pub enum MetarlError {
    #[error("checkpoint is for task {expected}, given task {got}")]
    TaskMismatch { expected: TaskId, got: TaskId },
    #[error("loss became non-finite at episode {0}; training aborted")]
    Diverged(usize),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("checkpoint decode: {0}")]
    Decode(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Agent and training hyperparameters. Defaults follow the published
/// recipe; `input_size` counts the enumerated features (action 2, reward
/// 1, time 1, plus casino one-hot for Task 1, trial-type bits for Tasks
/// 2-3, and the foregone reward for Task 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub task_id: TaskId,
    pub input_size: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub gamma: f64,
    pub critic_weight: f64,
    pub entropy_start: f64,
    pub episodes_total: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl AgentConfig {
    pub fn for_task(task_id: TaskId) -> Self {
        let input_size = match task_id {
            TaskId::Casinos => 8,
            TaskId::Counterfactual => 9,
            TaskId::Agency => 8,
        };
        AgentConfig {
            task_id,
            input_size,
            model_dim: 8 * input_size,
            n_heads: 8,
            ff_dim: 128,
            gamma: 0.8,
            critic_weight: 0.5,
            entropy_start: 1.0,
            episodes_total: 5000,
            batch_size: 64,
            learning_rate: 0.0003,
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            input_size: self.input_size,
            model_dim: self.model_dim,
            n_heads: self.n_heads,
            ff_dim: self.ff_dim,
        }
    }
}

/// Entropy coefficient schedule: linear from 1 at episode 0 to 0 at
/// `episodes_total / 2`, and 0 thereafter.
pub fn entropy_schedule(episode: usize, episodes_total: usize) -> f64 {
    let half = episodes_total as f64 / 2.0;
    if half <= 0.0 {
        return 0.0;
    }
    (1.0 - episode as f64 / half).max(0.0)
}

/// A fresh training episode: win probabilities uniform per option, trial
/// schedules matching the task family. Task 1 samples the casino context
/// uniformly per step.
pub fn sample_training_task(task_id: TaskId, rng: &mut TaskRng) -> TaskSpec {
    let reward_values = task_id.reward_values();
    let uniform_probs = |rng: &mut TaskRng| [rng.gen::<f64>(), rng.gen::<f64>()];
    match task_id {
        TaskId::Casinos => {
            let blocks: Vec<BlockSpec> = (0..4)
                .map(|b| BlockSpec {
                    block_id: b,
                    win_probs: uniform_probs(rng),
                    feedback_mode: FeedbackMode::Partial,
                    // A casino can be visited up to 96 times when contexts
                    // are drawn per step.
                    n_trials: 96,
                    trial_kinds: vec![TrialSlot::Free; 96],
                    reward_values,
                })
                .collect();
            let mut counts = [0u32; 4];
            let schedule = (0..96)
                .map(|_| {
                    let b = rng.gen_range(0..4u32);
                    let t = counts[b as usize];
                    counts[b as usize] += 1;
                    (b, t)
                })
                .collect();
            TaskSpec {
                task_id,
                blocks,
                reward_values,
                visits_total: 96,
                schedule,
            }
        }
        TaskId::Counterfactual => {
            let feedback_mode = if rng.gen::<bool>() {
                FeedbackMode::Full
            } else {
                FeedbackMode::Partial
            };
            let block = BlockSpec {
                block_id: 0,
                win_probs: uniform_probs(rng),
                feedback_mode,
                n_trials: 40,
                trial_kinds: crate::tasks::balanced_mixed_schedule(20, 20, rng),
                reward_values,
            };
            single_block_task(task_id, block, reward_values)
        }
        TaskId::Agency => {
            let mixed = rng.gen::<bool>();
            let (n_trials, trial_kinds) = if mixed {
                (80, crate::tasks::balanced_mixed_schedule(40, 40, rng))
            } else {
                (40, vec![TrialSlot::Free; 40])
            };
            let block = BlockSpec {
                block_id: 0,
                win_probs: uniform_probs(rng),
                feedback_mode: FeedbackMode::Partial,
                n_trials,
                trial_kinds,
                reward_values,
            };
            single_block_task(task_id, block, reward_values)
        }
    }
}

fn single_block_task(task_id: TaskId, block: BlockSpec, reward_values: (f64, f64)) -> TaskSpec {
    let schedule = (0..block.n_trials).map(|t| (0, t)).collect();
    TaskSpec {
        task_id,
        blocks: vec![block],
        reward_values,
        visits_total: 0,
        schedule,
    }
}

/// What the agent observed at the end of a step; feeds the next input.
#[derive(Debug, Clone, Copy, Default)]
struct Observed {
    action: usize,
    reward: f64,
    unchosen_reward: f64,
    slot: Option<TrialSlot>,
}

fn trial_type_bits(slot: Option<TrialSlot>) -> [f64; 2] {
    match slot {
        Some(TrialSlot::Forced(0)) => [1.0, 0.0],
        Some(TrialSlot::Forced(_)) => [0.0, 1.0],
        _ => [0.0, 0.0],
    }
}

/// Build the step input: previous action (one-hot) and reward, normalized
/// time, then the task-specific context. Placeholders are zero.
fn encode_input(
    task_id: TaskId,
    prev: Option<&Observed>,
    step: usize,
    episode_len: usize,
    block_id: u32,
    current_slot: TrialSlot,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(9);
    match prev {
        Some(o) => {
            x.push(if o.action == 0 { 1.0 } else { 0.0 });
            x.push(if o.action == 1 { 1.0 } else { 0.0 });
            x.push(o.reward);
        }
        None => x.extend_from_slice(&[0.0, 0.0, 0.0]),
    }
    if task_id == TaskId::Counterfactual {
        x.push(prev.map_or(0.0, |o| o.unchosen_reward));
    }
    x.push(step as f64 / episode_len as f64);
    match task_id {
        TaskId::Casinos => {
            let mut casino = [0.0; 4];
            casino[block_id as usize] = 1.0;
            x.extend_from_slice(&casino);
        }
        TaskId::Counterfactual | TaskId::Agency => {
            x.extend_from_slice(&trial_type_bits(Some(current_slot)));
            x.extend_from_slice(&trial_type_bits(prev.and_then(|o| o.slot)));
        }
    }
    x
}

/// Everything recorded during one episode rollout.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrajectory {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Observed outcomes, free and forced alike. Forced-step outcomes are
    /// observation only: they never count toward the agent's total, so the
    /// return computation masks them out.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub forced: Vec<bool>,
}

impl EpisodeTrajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Objective reward at step `t`: zero on forced steps.
    pub fn effective_reward(&self, t: usize) -> f64 {
        if self.forced[t] {
            0.0
        } else {
            self.rewards[t]
        }
    }

    /// Sum of rewards that count toward the agent's objective.
    pub fn objective_reward(&self) -> f64 {
        (0..self.len()).map(|t| self.effective_reward(t)).sum()
    }

    /// Discounted returns `G_t = r_t + gamma * G_{t+1}` over the objective
    /// rewards (forced-step outcomes masked to zero).
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.len()];
        let mut acc = 0.0;
        for t in (0..self.len()).rev() {
            acc = self.effective_reward(t) + gamma * acc;
            g[t] = acc;
        }
        g
    }
}

/// Scalar actor-critic loss pieces, averaged over unmasked steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub policy: f64,
    pub critic: f64,
    pub entropy: f64,
    pub n_unmasked: usize,
}

/// The standard actor-critic loss over one trajectory: policy gradient
/// with the value baseline (advantage detached), a squared critic term
/// weighted by `critic_weight`, and entropy regularization. Forced steps
/// contribute zero to every term; a fully forced trajectory has zero loss.
pub fn actor_critic_loss(
    trajectory: &EpisodeTrajectory,
    entropy_coef: f64,
    gamma: f64,
    critic_weight: f64,
) -> Result<LossBreakdown, MetarlError> {
    if trajectory.is_empty() {
        return Err(MetarlError::EmptyTrajectory);
    }
    let returns = trajectory.returns(gamma);
    let mut policy = 0.0;
    let mut critic = 0.0;
    let mut entropy = 0.0;
    let mut n = 0usize;
    for t in 0..trajectory.len() {
        if trajectory.forced[t] {
            continue;
        }
        let advantage = returns[t] - trajectory.values[t];
        policy += -trajectory.log_probs[t] * advantage;
        critic += critic_weight * advantage * advantage;
        entropy += -entropy_coef * trajectory.entropies[t];
        n += 1;
    }
    if n == 0 {
        return Ok(LossBreakdown {
            total: 0.0,
            policy: 0.0,
            critic: 0.0,
            entropy: 0.0,
            n_unmasked: 0,
        });
    }
    let scale = 1.0 / n as f64;
    Ok(LossBreakdown {
        total: (policy + critic + entropy) * scale,
        policy: policy * scale,
        critic: critic * scale,
        entropy: entropy * scale,
        n_unmasked: n,
    })
}

/// Roll one episode with the current policy. Free actions are sampled from
/// the softmax policy (or argmax when `greedy`); forced options are
/// followed. Returns the trajectory and the produced records.
fn rollout(
    params: &Params,
    config: &AgentConfig,
    task: &TaskSpec,
    run_id: u32,
    seed: u64,
    greedy: bool,
) -> (EpisodeTrajectory, Vec<TrialRecord>) {
    let mut action_rng = TaskRng::seed_from_u64(seed);
    action_rng.set_stream(4);
    let mut env = TaskState::new(task.clone(), run_id, seed);
    let episode_len = task.schedule.len();
    let mut seq = SeqState::rollout();
    let mut traj = EpisodeTrajectory::default();
    let mut prev: Option<Observed> = None;
    let mut step = 0usize;
    while let Some(pending) = env.current() {
        let input = encode_input(
            config.task_id,
            prev.as_ref(),
            step,
            episode_len,
            pending.block_id,
            pending.slot,
        );
        let (logits, value) = forward_step(params, &mut seq, &input);
        let probs = softmax2(logits);
        let action = match pending.slot {
            TrialSlot::Forced(o) => o,
            TrialSlot::Free => {
                if greedy {
                    usize::from(probs[1] > probs[0])
                } else {
                    usize::from(action_rng.gen::<f64>() >= probs[0])
                }
            }
        };
        let record = env.step(action).expect("action is legal");
        let forced = matches!(pending.slot, TrialSlot::Forced(_));
        traj.inputs.push(input);
        traj.actions.push(action);
        traj.log_probs.push(probs[action].max(1e-300).ln());
        traj.entropies
            .push(-(probs[0] * probs[0].max(1e-300).ln() + probs[1] * probs[1].max(1e-300).ln()));
        traj.rewards.push(record.reward_chosen);
        traj.values.push(value);
        traj.forced.push(forced);
        prev = Some(Observed {
            action,
            reward: record.reward_chosen,
            unchosen_reward: record.reward_unchosen.unwrap_or(0.0),
            slot: Some(pending.slot),
        });
        step += 1;
    }
    (traj, env.into_transcript(AgentTag::Metarl, seed).records)
}

/// Per-step loss gradients on logits and values for one trajectory, with
/// the advantage detached from the policy term and forced steps fully
/// masked.
pub fn loss_gradients(
    traj: &EpisodeTrajectory,
    logits: &[[f64; 2]],
    values: &[f64],
    entropy_coef: f64,
    gamma: f64,
    critic_weight: f64,
) -> (Vec<[f64; 2]>, Vec<f64>) {
    let returns = traj.returns(gamma);
    let n = traj.forced.iter().filter(|f| !**f).count().max(1) as f64;
    let scale = 1.0 / n;
    let mut dlogits = vec![[0.0; 2]; traj.len()];
    let mut dvalues = vec![0.0; traj.len()];
    for t in 0..traj.len() {
        if traj.forced[t] {
            continue;
        }
        let p = softmax2(logits[t]);
        let advantage = returns[t] - values[t];
        let a = traj.actions[t];
        // Policy: d(-log pi(a) * A)/dlogit_j = (p_j - 1[j=a]) * A.
        for j in 0..2 {
            let onehot = if j == a { 1.0 } else { 0.0 };
            dlogits[t][j] += (p[j] - onehot) * advantage * scale;
            // Entropy: d(-c * H)/dlogit_j = c * p_j (ln p_j + H).
            let h = -(p[0] * p[0].max(1e-300).ln() + p[1] * p[1].max(1e-300).ln());
            dlogits[t][j] += entropy_coef * p[j] * (p[j].max(1e-300).ln() + h) * scale;
        }
        // Critic: d(cw * (G - V)^2)/dV = -2 cw (G - V).
        dvalues[t] += -2.0 * critic_weight * advantage * scale;
    }
    (dlogits, dvalues)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub episode: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub entropy_coef: f64,
}

/// Trained weights plus everything needed to resume or reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub config: AgentConfig,
    pub seed: u64,
    pub episodes_trained: usize,
    pub params: Params,
    pub adam: AdamState,
    /// Tensor names and shapes, so the flat weight buffer is
    /// self-describing.
    pub tensor_shapes: Vec<(String, (usize, usize))>,
}

impl AgentCheckpoint {
    /// Fresh untrained checkpoint.
    pub fn init(config: AgentConfig, seed: u64) -> Self {
        let params = Params::init(config.shape(), derive_seed(seed, 0xC0FFEE, 0));
        let n = params.data.len();
        let tensor_shapes = params.named_shapes();
        AgentCheckpoint {
            config,
            seed,
            episodes_trained: 0,
            params,
            adam: AdamState::new(n),
            tensor_shapes,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), MetarlError> {
        let json = serde_json::to_string(self).map_err(|e| MetarlError::Decode(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MetarlError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MetarlError::Decode(e.to_string()))
    }

    /// Policy logits and value estimate for the final step of `history`.
    pub fn forward(&self, history: &[Vec<f64>]) -> ([f64; 2], f64) {
        let (logits, values, _) = forward_full(&self.params, history);
        (*logits.last().expect("history is nonempty"), *values.last().unwrap())
    }
}

/// Train from the checkpoint's episode counter up to
/// `min(stop_at, config.episodes_total)`: each episode samples a fresh
/// batch of tasks, rolls them out with the current policy, and applies one
/// Adam step on the batch-mean actor-critic loss. Episode rollouts are
/// seeded by (seed, episode, slot) and the optimizer state lives in the
/// checkpoint, so resumed training reproduces uninterrupted training
/// exactly.
pub fn train_until(
    mut checkpoint: AgentCheckpoint,
    stop_at: usize,
    on_episode: &mut dyn FnMut(TrainLogEntry),
) -> Result<AgentCheckpoint, MetarlError> {
    let config = checkpoint.config.clone();
    for episode in checkpoint.episodes_trained..config.episodes_total.min(stop_at) {
        let coef = config.entropy_start * entropy_schedule(episode, config.episodes_total);
        let params = &checkpoint.params;
        let results: Vec<(Params, f64, f64)> = (0..config.batch_size)
            .into_par_iter()
            .map(|slot| {
                let ep_seed = derive_seed(checkpoint.seed, episode as u64 + 1, slot as u64);
                let mut task_rng = TaskRng::seed_from_u64(ep_seed);
                task_rng.set_stream(5);
                let task = sample_training_task(config.task_id, &mut task_rng);
                let (traj, _) = rollout(params, &config, &task, 0, ep_seed, false);
                // Recompute the forward pass with activation caching; the
                // math is identical to the rollout's incremental pass.
                let (logits, values, seq) = forward_full(params, &traj.inputs);
                let (dlogits, dvalues) = loss_gradients(
                    &traj,
                    &logits,
                    &values,
                    coef,
                    config.gamma,
                    config.critic_weight,
                );
                let grad = backward(params, &seq, &dlogits, &dvalues);
                let loss = {
                    let mut t = traj.clone();
                    t.values = values;
                    actor_critic_loss(&t, coef, config.gamma, config.critic_weight)
                        .expect("nonempty trajectory")
                        .total
                };
                (grad, loss, traj.objective_reward())
            })
            .collect();

        // Deterministic reduction in slot order.
        let mut grad = Params::zeros(config.shape());
        let mut loss_sum = 0.0;
        let mut reward_sum = 0.0;
        for (g, loss, reward) in &results {
            for (acc, gi) in grad.data.iter_mut().zip(&g.data) {
                *acc += gi;
            }
            loss_sum += loss;
            reward_sum += reward;
        }
        let inv_b = 1.0 / config.batch_size as f64;
        for gi in &mut grad.data {
            *gi *= inv_b;
        }
        let loss = loss_sum * inv_b;
        if !loss.is_finite() {
            return Err(MetarlError::Diverged(episode));
        }
        checkpoint
            .adam
            .update(&mut checkpoint.params, &grad, config.learning_rate);
        checkpoint.episodes_trained = episode + 1;
        on_episode(TrainLogEntry {
            episode,
            mean_reward: reward_sum * inv_b,
            loss,
            entropy_coef: coef,
        });
    }
    Ok(checkpoint)
}

/// Train a fresh agent to its full episode budget; see [`train_until`].
pub fn train(
    config: AgentConfig,
    seed: u64,
) -> Result<(AgentCheckpoint, Vec<TrainLogEntry>), MetarlError> {
    let mut log = Vec::with_capacity(config.episodes_total);
    let checkpoint = train_until(AgentCheckpoint::init(config, seed), usize::MAX, &mut |e| {
        log.push(e)
    })?;
    Ok((checkpoint, log))
}

/// Evaluate a trained agent on an experimental task without weight
/// updates: Task 1 runs as one 96-step in-context episode; Tasks 2-3 run
/// each block as an independent episode. Actions are sampled from the
/// policy unless `greedy`.
pub fn evaluate(
    checkpoint: &AgentCheckpoint,
    task: &TaskSpec,
    n_runs: usize,
    seed: u64,
    greedy: bool,
) -> Result<Vec<Transcript>, MetarlError> {
    if checkpoint.config.task_id != task.task_id {
        return Err(MetarlError::TaskMismatch {
            expected: checkpoint.config.task_id,
            got: task.task_id,
        });
    }
    let runs: Vec<Transcript> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derive_seed(seed, run as u64, 0xE7A1);
            let mut records = Vec::new();
            match task.task_id {
                TaskId::Casinos => {
                    let (_, recs) =
                        rollout(&checkpoint.params, &checkpoint.config, task, run as u32, run_seed, greedy);
                    records = recs;
                }
                _ => {
                    for block in &task.blocks {
                        let episode = TaskSpec {
                            schedule: task
                                .schedule
                                .iter()
                                .filter(|(b, _)| *b == block.block_id)
                                .cloned()
                                .collect(),
                            ..task.clone()
                        };
                        let (_, mut recs) = rollout(
                            &checkpoint.params,
                            &checkpoint.config,
                            &episode,
                            run as u32,
                            derive_seed(run_seed, block.block_id as u64, 1),
                            greedy,
                        );
                        records.append(&mut recs);
                    }
                }
            }
            records.sort_by_key(|r| (r.block_id, r.trial_index));
            Transcript {
                task_id: task.task_id,
                agent_tag: AgentTag::Metarl,
                seed: run_seed,
                records,
            }
        })
        .collect();
    Ok(runs)
}

/// Mean expected regret of an agent's transcripts over the last `k`
/// free-trial positions.
pub fn tail_regret(transcripts: &[Transcript], k: usize) -> f64 {
    let curve = crate::analysis::regret_curve(transcripts, crate::analysis::ArmFilter::All)
        .expect("nonempty transcripts");
    curve.tail_mean(k)
}
