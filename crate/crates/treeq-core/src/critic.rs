//! Process supervision: a critic ranks proposed actions at each node.
//!
//! The critic's native interface is deliberately narrow: given a history
//! and candidate actions, pick the single best. A full ranking is built by
//! asking it to pick-and-remove repeatedly, exactly k-1 queries for k
//! candidates. Ranks map linearly onto [0, 1] values that search mixes
//! with empirical rollout means.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentHistory, CompositeAction};
use crate::env::{Env, EnvState};
use crate::error::{Error, Result};
use crate::util::derive_seed;

pub trait Critic {
    /// Index of the best candidate. Must be a valid index into
    /// `candidates`; implementations returning anything else are a
    /// protocol violation surfaced as an error by `rank_actions`.
    fn pick_best(&self, history: &AgentHistory, candidates: &[&CompositeAction]) -> Result<usize>;
}

/// Full ranking by iterated pick-and-remove: k-1 `pick_best` calls, the
/// final survivor ranked last. `ranked[r]` is the original index of the
/// rank-r candidate.
#[derive(Debug, Clone)]
pub struct CriticRanking {
    pub ranked: Vec<usize>,
}

impl CriticRanking {
    /// Rank of an original candidate index.
    pub fn rank_of(&self, idx: usize) -> Option<usize> {
        self.ranked.iter().position(|&i| i == idx)
    }

    /// Critic value of an original candidate index.
    pub fn value_of(&self, idx: usize) -> Result<f64> {
        let rank = self
            .rank_of(idx)
            .ok_or_else(|| Error::InvalidArgument(format!("index {idx} was never ranked")))?;
        rank_to_value(rank, self.ranked.len())
    }
}

pub fn rank_actions(
    critic: &dyn Critic,
    history: &AgentHistory,
    actions: &[CompositeAction],
) -> Result<CriticRanking> {
    let k = actions.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "ranking requires at least 2 candidates, got {k}"
        )));
    }
    let mut remaining: Vec<usize> = (0..k).collect();
    let mut ranked = Vec::with_capacity(k);
    while remaining.len() > 1 {
        let view: Vec<&CompositeAction> = remaining.iter().map(|&i| &actions[i]).collect();
        let pick = critic.pick_best(history, &view)?;
        if pick >= view.len() {
            return Err(Error::Protocol(format!(
                "critic picked index {pick} out of {} candidates",
                view.len()
            )));
        }
        ranked.push(remaining.remove(pick));
    }
    ranked.push(remaining[0]);
    Ok(CriticRanking { ranked })
}

/// Linear rank-to-value map: best rank 0 -> 1.0, worst rank k-1 -> 0.0.
pub fn rank_to_value(rank: usize, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "rank_to_value requires k >= 2, got {k}"
        )));
    }
    if rank >= k {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} out of range for k={k}"
        )));
    }
    Ok((k - 1 - rank) as f64 / (k - 1) as f64)
}

// ---------------------------------------------------------------------------
// Oracle critic
// ---------------------------------------------------------------------------

/// Picks by true optimal value: replays the history against the
/// environment, then exactly evaluates each candidate's successor state.
/// Ties break toward the lowest index.
pub struct OracleCritic {
    env: Env,
    env_seed: u64,
    memo: RefCell<HashMap<String, f64>>,
}

impl OracleCritic {
    pub fn new(env: Env, env_seed: u64) -> Self {
        OracleCritic {
            env,
            env_seed,
            memo: RefCell::new(HashMap::new()),
        }
    }

    /// Reconstructs the environment state a history corresponds to by
    /// replaying its past commands from reset.
    pub fn replay(&self, history: &AgentHistory) -> Result<EnvState> {
        history.validate()?;
        let (mut state, _) = self
            .env
            .reset(history.task.world, &history.task, self.env_seed)?;
        for step in &history.past_actions {
            state = self.env.step(&state, &step.env_cmd)?.state;
        }
        Ok(state)
    }

    fn value(&self, state: &EnvState) -> Result<f64> {
        crate::oracle::optimal_value(&self.env, state, &self.memo)
    }
}

impl Critic for OracleCritic {
    fn pick_best(&self, history: &AgentHistory, candidates: &[&CompositeAction]) -> Result<usize> {
        let state = self.replay(history)?;
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (i, action) in candidates.iter().enumerate() {
            let outcome = self.env.step(&state, &action.env_cmd)?;
            let v = if outcome.terminal {
                outcome.reward as f64
            } else {
                self.value(&outcome.state)?
            };
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        Ok(best)
    }
}

// ---------------------------------------------------------------------------
// Noisy critic
// ---------------------------------------------------------------------------

/// Oracle judgment corrupted by an error rate: with probability
/// `noise`, the pick is replaced by a uniformly random candidate. The
/// corruption is deterministic per decision point, derived from (seed,
/// history fingerprint), so reruns reproduce the same mistakes.
pub struct NoisyCritic {
    oracle: OracleCritic,
    noise: f64,
    seed: u64,
}

impl NoisyCritic {
    pub fn new(env: Env, env_seed: u64, noise: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::InvalidArgument(format!(
                "noise must be in [0, 1], got {noise}"
            )));
        }
        Ok(NoisyCritic {
            oracle: OracleCritic::new(env, env_seed),
            noise,
            seed,
        })
    }
}

impl Critic for NoisyCritic {
    fn pick_best(&self, history: &AgentHistory, candidates: &[&CompositeAction]) -> Result<usize> {
        let fingerprint = {
            let mut s = format!("{}|{}", history.task.task_id, history.step_index);
            for c in candidates {
                s.push('|');
                s.push_str(&c.env_cmd.canonical());
            }
            s
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &fingerprint));
        if rng.gen::<f64>() < self.noise {
            Ok(rng.gen_range(0..candidates.len()))
        } else {
            self.oracle.pick_best(history, candidates)
        }
    }
}

// ---------------------------------------------------------------------------
