//! Policy evaluation over task sets.
//!
//! Two modes:
//!
//! * zero-shot: one sampled episode per task at the policy's own
//!   temperature, seeded per task so repeat runs agree byte for byte;
//! * mcts: a full search per task, counting the task solved when any
//!   executed rollout reached the goal. The searcher really took those
//!   actions in the environment, so this scores what search-at-inference
//!   can deliver rather than a post-hoc re-decode.

use crate::agent::{rollout, AgentHistory, RolloutMode, SoftmaxPolicy, Trajectory};
use crate::critic::Critic;
use crate::env::{Env, TaskSpec};
use crate::error::{Error, Result};
use crate::mcts::{run_search, SearchConfig};
use crate::util::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    ZeroShot,
    Mcts,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalOutcome {
    /// Per-task reward, in task order.
    pub successes: Vec<u8>,
    pub rate: f64,
    /// 95% Wilson interval on the rate.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One sampled zero-shot episode for a task.
pub fn eval_task_zero_shot(
    env: &Env,
    task: &TaskSpec,
    policy: &SoftmaxPolicy,
    env_seed: u64,
    seed: u64,
) -> Result<Trajectory> {
    let (state, obs) = env.reset(task.world, task, env_seed)?;
    let history = AgentHistory::new(task.clone(), obs);
    let mut rng = rng_from(seed, &format!("zeroshot|{}", task.task_id));
    rollout(
        env,
        &state,
        &history,
        policy,
        RolloutMode::Sample,
        env.horizon(task.world),
        &mut rng,
    )
}

/// Evaluate `policy` on `tasks`. Mcts mode needs a critic and a search
/// configuration; zero-shot ignores both.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    env: &Env,
    tasks: &[TaskSpec],
    policy: &SoftmaxPolicy,
    mode: EvalMode,
    critic: Option<&dyn Critic>,
    search_cfg: Option<&SearchConfig>,
    env_seed: u64,
    seed: u64,
) -> Result<EvalOutcome> {
    if tasks.is_empty() {
        return Err(Error::MissingData("no evaluation tasks".into()));
    }
    let mut successes = Vec::with_capacity(tasks.len());
    match mode {
        EvalMode::ZeroShot => {
            for task in tasks {
                let traj = eval_task_zero_shot(env, task, policy, env_seed, seed)?;
                successes.push(traj.terminal_reward);
            }
        }
        EvalMode::Mcts => {
            let critic = critic
                .ok_or_else(|| Error::InvalidArgument("mcts evaluation needs a critic".into()))?;
            let base = search_cfg
                .ok_or_else(|| {
                    Error::InvalidArgument("mcts evaluation needs a search config".into())
                })?
                .clone();
            for task in tasks {
                let mut cfg = base.clone();
                cfg.seed = derive_seed(seed, &format!("eval-search|{}", task.task_id));
                let outcome = run_search(env, task, policy, critic, env_seed, &cfg)?;
                let solved = outcome
                    .rollouts
                    .iter()
                    .any(|r| r.trajectory.terminal_reward == 1);
                successes.push(u8::from(solved));
            }
        }
    }
    let n = successes.len() as f64;
    let hits = successes.iter().map(|&s| s as f64).sum::<f64>();
    let rate = hits / n;
    let (ci_low, ci_high) = wilson_interval(hits, n, 1.96);
    Ok(EvalOutcome {
        successes,
        rate,
        ci_low,
        ci_high,
    })
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: f64, n: f64, z: f64) -> (f64, f64) {
    if n <= 0.0 {
        return (0.0, 1.0);
    }
    let p = hits / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_wilson_interval_brackets_rate() {
        let (lo, hi) = wilson_interval(30.0, 100.0, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert!(lo > 0.2 && hi < 0.41);
    }

    #[test]
    fn test_wilson_interval_degenerate() {
        let (lo, hi) = wilson_interval(0.0, 50.0, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.12);
        let (lo, hi) = wilson_interval(50.0, 50.0, 1.96);
        assert!(lo > 0.88 && lo < 1.0);
        assert_eq!(hi, 1.0);
    }
}
