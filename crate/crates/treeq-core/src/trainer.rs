//! Direct preference training on replayed search data, plus the outer
//! search-then-train loop.
//!
//! All three objectives are trained by plain gradient descent with exact
//! sparse gradients:
//!
//! * step DPO: -log sigmoid(beta * (logp_w - ref_w) - beta * (logp_l - ref_l))
//!   per node-level pair, with the reference likelihoods read from the
//!   stored pair, never from a live model;
//! * trajectory DPO: the same form with each side's log-ratio summed over
//!   its own trajectory's steps;
//! * rejection fine-tuning: mean summed negative log-likelihood over
//!   successful trajectories only.
//!
//! Because the policy is log-linear and pairs compare actions at a shared
//! state, the step objective is convex in the weights.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agent::{GradMap, SoftmaxPolicy, Trajectory};
use crate::critic::Critic;
use crate::env::{Env, TaskSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalMode};
use crate::mcts::{run_search, SearchConfig};
use crate::preference::{
    build_pairs, build_rft_dataset, build_trajectory_pairs, PreferencePair, ReplayBuffer,
};
use crate::util::{derive_seed, rng_from};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainVariant {
    StepDpo,
    TrajectoryDpo,
    Rft,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: TrainVariant,
    /// KL anchor strength for the DPO variants.
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    /// Items per batch; 0 trains full-batch.
    pub batch_size: usize,
    pub momentum: f64,
    /// Training aborts with an explicit error when the applied gradient
    /// norm exceeds this.
    pub divergence_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: TrainVariant::StepDpo,
            beta: 0.5,
            learning_rate: 0.2,
            epochs: 30,
            batch_size: 0,
            momentum: 0.0,
            divergence_threshold: 1e6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable on both tails
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_scaled(acc: &mut GradMap, grad: &GradMap, scale: f64) {
    if scale == 0.0 {
        return;
    }
    for (&k, &v) in grad {
        *acc.entry(k).or_insert(0.0) += scale * v;
    }
}

/// Step-level DPO loss and gradient for one pair. The margin uses the
/// pair's stored generation-time likelihoods as the reference; only the
/// current policy is evaluated.
pub fn dpo_step_loss(
    policy: &SoftmaxPolicy,
    pair: &PreferencePair,
    beta: f64,
) -> Result<(f64, GradMap)> {
    let (lp_w, grad_w) = policy.action_logp_grad(&pair.history, &pair.winner)?;
    let (lp_l, grad_l) = policy.action_logp_grad(&pair.history, &pair.loser)?;
    let margin = beta * (lp_w - pair.ref_logp_winner) - beta * (lp_l - pair.ref_logp_loser);
    let loss = softplus(-margin);
    // d loss / d margin = -sigmoid(-margin)
    let coeff = -sigmoid(-margin) * beta;
    let mut grad = GradMap::default();
    add_scaled(&mut grad, &grad_w, coeff);
    add_scaled(&mut grad, &grad_l, -coeff);
    Ok((loss, grad))
}

/// Trajectory-level DPO: one comparison between a successful and a failed
/// trajectory of the same task, each side's log-ratio summed over its own
/// steps against the likelihoods stored when the trajectory was generated.
pub fn dpo_trajectory_loss(
    policy: &SoftmaxPolicy,
    winner: &Trajectory,
    loser: &Trajectory,
    beta: f64,
) -> Result<(f64, GradMap)> {
    let side = |traj: &Trajectory| -> Result<(f64, GradMap)> {
        let mut ratio = 0.0;
        let mut grad = GradMap::default();
        for step in &traj.steps {
            let (lp, g) = policy.action_logp_grad(&step.history, &step.action)?;
            ratio += lp - step.action.joint_logp();
            add_scaled(&mut grad, &g, 1.0);
        }
        Ok((ratio, grad))
    };
    let (ratio_w, grad_w) = side(winner)?;
    let (ratio_l, grad_l) = side(loser)?;
    let margin = beta * ratio_w - beta * ratio_l;
    let loss = softplus(-margin);
    let coeff = -sigmoid(-margin) * beta;
    let mut grad = GradMap::default();
    add_scaled(&mut grad, &grad_w, coeff);
    add_scaled(&mut grad, &grad_l, -coeff);
    Ok((loss, grad))
}

/// Rejection fine-tuning: mean over trajectories of the summed negative
/// log-likelihood of every step.
pub fn rft_loss(policy: &SoftmaxPolicy, trajectories: &[&Trajectory]) -> Result<(f64, GradMap)> {
    if trajectories.is_empty() {
        return Err(Error::MissingData("rft dataset is empty".into()));
    }
    let scale = -1.0 / trajectories.len() as f64;
    let mut loss = 0.0;
    let mut grad = GradMap::default();
    for traj in trajectories {
        for step in &traj.steps {
            let (lp, g) = policy.action_logp_grad(&step.history, &step.action)?;
            loss += scale * lp;
            add_scaled(&mut grad, &g, scale);
        }
    }
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum TrainData {
    StepPairs(Vec<PreferencePair>),
    TrajectoryPairs(Vec<(Trajectory, Trajectory)>),
    Trajectories(Vec<Trajectory>),
}

impl TrainData {
    pub fn len(&self) -> usize {
        match self {
            TrainData::StepPairs(v) => v.len(),
            TrainData::TrajectoryPairs(v) => v.len(),
            TrainData::Trajectories(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u32,
    pub loss: f64,
    pub grad_norm: f64,
    /// Fraction of pairs whose margin is positive; DPO variants only.
    pub pair_accuracy: Option<f64>,
}

/// Deterministic L2 norm of a sparse gradient (keys visited in sorted
/// order so float summation order is fixed).
fn grad_norm(grad: &GradMap) -> f64 {
    let mut keys: Vec<&u64> = grad.keys().collect();
    keys.sort_unstable();
    keys.iter().map(|k| grad[k] * grad[k]).sum::<f64>().sqrt()
}

/// Content identity of a step pair: pairs agreeing on state, actions, and
/// references contribute identical gradients and can be weighted instead
/// of recomputed.
fn pair_content_key(pair: &PreferencePair) -> u64 {
    crate::util::fnv1a64_str(&format!(
        "{}|{}|{}|{}|{}|{:x}|{:x}",
        pair.history.task.task_id,
        pair.history.step_index,
        pair.history.current_obs.page_id,
        pair.winner.canonical(),
        pair.loser.canonical(),
        pair.ref_logp_winner.to_bits(),
        pair.ref_logp_loser.to_bits(),
    ))
}

/// Gradient-descent training of `policy` on `data`. Returns the trained
/// policy and one report per epoch. Aborts with `Error::Divergence` when
/// the applied gradient norm exceeds the configured threshold or the loss
/// stops being finite.
pub fn train(
    policy: &SoftmaxPolicy,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<(SoftmaxPolicy, Vec<EpochReport>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::MissingData("training data is empty".into()));
    }
    let mut theta = policy.clone();
    let mut velocity: GradMap = GradMap::default();
    let mut reports = Vec::with_capacity(cfg.epochs as usize);

    // Weighted item list: identical step pairs collapse to one weighted
    // entry in full-batch mode, which changes nothing mathematically.
    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= data.len();
    let weighted: Vec<(usize, f64)> = match data {
        TrainData::StepPairs(pairs) if full_batch => {
            let mut groups: HashMap<u64, (usize, f64)> = HashMap::new();
            for (i, p) in pairs.iter().enumerate() {
                let e = groups.entry(pair_content_key(p)).or_insert((i, 0.0));
                e.1 += 1.0;
            }
            let mut v: Vec<(usize, f64)> = groups.into_values().collect();
            v.sort_unstable_by_key(|(i, _)| *i);
            v
        }
        _ => (0..data.len()).map(|i| (i, 1.0)).collect(),
    };
    let total_weight: f64 = weighted.iter().map(|(_, w)| w).sum();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..weighted.len()).collect();
        if !full_batch {
            let mut rng = rng_from(cfg.seed, &format!("train-epoch|{epoch}"));
            order.shuffle(&mut rng);
        }
        let batch_len = if full_batch { weighted.len() } else { cfg.batch_size };

        let mut epoch_loss = 0.0;
        let mut epoch_norm = 0.0;
        let mut n_batches = 0u32;
        let mut correct = 0.0f64;
        let mut judged = 0.0f64;

        for chunk in order.chunks(batch_len.max(1)) {
            let mut batch_loss = 0.0;
            let mut batch_grad = GradMap::default();
            let mut batch_weight = 0.0;
            for &oi in chunk {
                let (item, weight) = weighted[oi];
                let (loss, grad, margin_pos) = item_loss(&theta, data, item, cfg)?;
                batch_loss += weight * loss;
                add_scaled(&mut batch_grad, &grad, weight);
                batch_weight += weight;
                if let Some(pos) = margin_pos {
                    judged += weight;
                    if pos {
                        correct += weight;
                    }
                }
            }
            let inv = 1.0 / batch_weight;
            batch_loss *= inv;
            for v in batch_grad.values_mut() {
                *v *= inv;
            }
            let norm = grad_norm(&batch_grad);
            if !batch_loss.is_finite() || !norm.is_finite() || norm > cfg.divergence_threshold {
                return Err(Error::Divergence(norm));
            }
            // Heavy-ball step.
            for (&k, &g) in &batch_grad {
                let v = velocity.entry(k).or_insert(0.0);
                *v = cfg.momentum * *v + g;
                theta.add_weight(k, -cfg.learning_rate * *v);
            }
            epoch_loss += batch_loss * batch_weight;
            epoch_norm += norm;
            n_batches += 1;
        }

        reports.push(EpochReport {
            epoch,
            loss: epoch_loss / total_weight,
            grad_norm: epoch_norm / n_batches as f64,
            pair_accuracy: if judged > 0.0 { Some(correct / judged) } else { None },
        });
    }
    Ok((theta, reports))
}

fn item_loss(
    theta: &SoftmaxPolicy,
    data: &TrainData,
    item: usize,
    cfg: &TrainConfig,
) -> Result<(f64, GradMap, Option<bool>)> {
    match data {
        TrainData::StepPairs(pairs) => {
            let (loss, grad) = dpo_step_loss(theta, &pairs[item], cfg.beta)?;
            // loss < ln 2 exactly when the margin is positive
            Ok((loss, grad, Some(loss < std::f64::consts::LN_2)))
        }
        TrainData::TrajectoryPairs(pairs) => {
            let (w, l) = &pairs[item];
            let (loss, grad) = dpo_trajectory_loss(theta, w, l, cfg.beta)?;
            Ok((loss, grad, Some(loss < std::f64::consts::LN_2)))
        }
        TrainData::Trajectories(trajs) => {
            let (loss, grad) = rft_loss(theta, &[&trajs[item]])?;
            Ok((loss, grad, None))
        }
    }
}

// ---------------------------------------------------------------------------
// The outer loop: search, harvest, train, evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub iterations: u32,
    pub tasks_per_iteration: usize,
    pub search: SearchConfig,
    pub train: TrainConfig,
    /// Minimum mixed-value gap for a pair to count.
    pub theta: f64,
    /// Per-task cap on trajectory pairs.
    pub traj_pair_cap: usize,
    pub env_seed: u64,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            iterations: 1,
            tasks_per_iteration: 16,
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            theta: 0.25,
            traj_pair_cap: 4,
            env_seed: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u32,
    pub buffer_pairs: usize,
    pub buffer_trajectories: usize,
    pub train_items: usize,
    /// Final-epoch training loss; absent when there was nothing to train.
    pub loss: Option<f64>,
    pub pair_accuracy: Option<f64>,
    pub eval_success_rate: f64,
}

pub struct LoopOutcome {
    pub policy: SoftmaxPolicy,
    pub metrics: Vec<IterationMetrics>,
    pub buffer: ReplayBuffer,
}

/// The full improvement loop. Iteration i searches with policy i-1,
/// harvests node-level pairs and trajectories into the cumulative buffer,
/// then trains policy i from policy i-1 on the whole buffer. Every stored
/// item keeps the likelihoods recorded at generation time, so replayed
/// data stays anchored to the policy that produced it. Evaluation is
/// sampled zero-shot decoding on the held-out tasks; metrics carry one
/// row per iteration plus a leading row for the untrained policy.
pub fn agentq_loop(
    env: &Env,
    train_tasks: &[TaskSpec],
    eval_tasks: &[TaskSpec],
    policy0: &SoftmaxPolicy,
    critic: &dyn Critic,
    cfg: &LoopConfig,
) -> Result<LoopOutcome> {
    cfg.search.validate()?;
    cfg.train.validate()?;
    if train_tasks.is_empty() {
        return Err(Error::MissingData("no training tasks".into()));
    }
    let mut policy = policy0.clone();
    let mut buffer = ReplayBuffer::new();
    let mut metrics = Vec::new();

    let eval_rate = |p: &SoftmaxPolicy, label: &str| -> Result<f64> {
        let outcome = evaluate(
            env,
            eval_tasks,
            p,
            EvalMode::ZeroShot,
            None,
            None,
            cfg.env_seed,
            derive_seed(cfg.seed, label),
        )?;
        Ok(outcome.rate)
    };

    metrics.push(IterationMetrics {
        iteration: 0,
        buffer_pairs: 0,
        buffer_trajectories: 0,
        train_items: 0,
        loss: None,
        pair_accuracy: None,
        eval_success_rate: eval_rate(&policy, "eval|0")?,
    });

    for iter in 1..=cfg.iterations {
        // Seeded without-replacement task draw, processed in stable order.
        let mut idx: Vec<usize> = (0..train_tasks.len()).collect();
        let mut rng = rng_from(cfg.seed, &format!("loop-tasks|{iter}"));
        idx.shuffle(&mut rng);
        idx.truncate(cfg.tasks_per_iteration.max(1).min(train_tasks.len()));
        idx.sort_unstable();

        for &ti in &idx {
            let task = &train_tasks[ti];
            let mut search_cfg = cfg.search.clone();
            search_cfg.seed = derive_seed(cfg.seed, &format!("search|{iter}|{}", task.task_id));
            let outcome = run_search(env, task, &policy, critic, cfg.env_seed, &search_cfg)?;
            let pairs = build_pairs(&outcome.tree, cfg.search.alpha, cfg.theta)?;
            buffer.add_pairs(pairs, iter - 1);
            for record in outcome.rollouts {
                buffer.add_trajectory(record.trajectory, iter - 1);
            }
        }

        let data = match cfg.train.variant {
            TrainVariant::StepDpo => {
                TrainData::StepPairs(buffer.pairs.iter().map(|e| e.item.clone()).collect())
            }
            TrainVariant::TrajectoryDpo => TrainData::TrajectoryPairs(build_trajectory_pairs(
                &buffer,
                cfg.traj_pair_cap,
                cfg.seed,
            )),
            TrainVariant::Rft => TrainData::Trajectories(
                build_rft_dataset(&buffer).into_iter().cloned().collect(),
            ),
        };

        let (loss, pair_accuracy, train_items) = if data.is_empty() {
            (None, None, 0)
        } else {
            let mut tcfg = cfg.train.clone();
            tcfg.seed = derive_seed(cfg.train.seed, &format!("train|{iter}"));
            let (next, reports) = train(&policy, &data, &tcfg)?;
            policy = next;
            let last = reports.last().expect("epochs >= 1");
            (Some(last.loss), last.pair_accuracy, data.len())
        };

        metrics.push(IterationMetrics {
            iteration: iter,
            buffer_pairs: buffer.pairs.len(),
            buffer_trajectories: buffer.trajectories.len(),
            train_items,
            loss,
            pair_accuracy,
            eval_success_rate: eval_rate(&policy, &format!("eval|{iter}"))?,
        });
    }

    Ok(LoopOutcome {
        policy,
        metrics,
        buffer,
    })
}

// ---------------------------------------------------------------------------
