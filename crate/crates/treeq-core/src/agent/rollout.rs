//! Episode rollout and candidate proposal.

use rand_chacha::ChaCha8Rng;

use crate::env::{Env, EnvState};
use crate::error::{Error, Result};

use super::{AgentHistory, CompositeAction, Policy, TrajStep, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Sample,
    Greedy,
}

/// Draws up to `k` candidate actions with pairwise-distinct environment
/// commands, and enforces the proposal contract regardless of where the
/// policy came from: well-formed commands, no duplicates, at least one and
/// at most k actions. Duplicate draws beyond `retry_budget` end the
/// attempt early, so fewer than k distinct candidates is legal.
pub fn propose_actions(
    policy: &dyn Policy,
    history: &AgentHistory,
    k: usize,
    retry_budget: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CompositeAction>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let actions = policy.propose(history, k, retry_budget, rng)?;
    if actions.is_empty() {
        return Err(Error::InvalidArgument("policy proposed no actions".into()));
    }
    if actions.len() > k {
        return Err(Error::InvalidArgument(format!(
            "policy proposed {} actions for k={k}",
            actions.len()
        )));
    }
    for (i, a) in actions.iter().enumerate() {
        a.validate(history.is_first_step())?;
        if actions[..i].iter().any(|b| b.env_cmd == a.env_cmd) {
            return Err(Error::InvalidArgument(format!(
                "duplicate proposed command '{}'",
                a.env_cmd.canonical()
            )));
        }
    }
    Ok(actions)
}

/// Plays the policy from (state, history) until the episode terminates or
/// `max_steps` further steps have been taken. The returned trajectory
/// covers only the steps taken here; callers gluing a tree prefix onto a
/// rollout concatenate steps themselves.
pub fn rollout(
    env: &Env,
    state: &EnvState,
    history: &AgentHistory,
    policy: &dyn Policy,
    mode: RolloutMode,
    max_steps: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut state = state.clone();
    let mut history = history.clone();
    let mut steps: Vec<TrajStep> = Vec::new();
    let mut final_obs = history.current_obs.clone();
    let mut terminal_reward = 0;

    while !state.terminal && (steps.len() as u32) < max_steps {
        let action = match mode {
            RolloutMode::Sample => {
                let mut proposals = propose_actions(policy, &history, 1, 0, rng)?;
                proposals.remove(0)
            }
            RolloutMode::Greedy => policy.greedy(&history)?,
        };
        let outcome = env.step(&state, &action.env_cmd)?;
        steps.push(TrajStep {
            history: history.clone(),
            action: action.clone(),
            reward: outcome.reward,
        });
        terminal_reward = outcome.reward;
        final_obs = outcome.observation.clone();
        history = history.advance(action, outcome.observation);
        state = outcome.state;
    }

    Ok(Trajectory {
        task: history.task.clone(),
        total_steps: steps.len() as u32,
        steps,
        final_obs,
        terminal: state.terminal,
        terminal_reward: if state.terminal { terminal_reward } else { 0 },
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{shaped_policy, SoftmaxPolicy};
    use crate::env::{generate_task_set, Env, EnvCommand, EnvConfig, Verb, World};
    use crate::util::rng_from;

    #[derive(Clone, Copy)]
    enum Misbehavior {
        Empty,
        TooMany,
        Duplicate,
        MissingPlan,
    }

    /// A policy that violates the proposal contract on purpose, to check
    /// that the contract is enforced here and not trusted to callers.
    struct BadPolicy(Misbehavior);

    impl Policy for BadPolicy {
        fn propose(
            &self,
            history: &AgentHistory,
            k: usize,
            _retry_budget: u32,
            _rng: &mut ChaCha8Rng,
        ) -> Result<Vec<CompositeAction>> {
            let mk = |cmd: EnvCommand| CompositeAction {
                plan: history.is_first_step().then(|| "p".to_string()),
                thought: "t".to_string(),
                env_cmd: cmd,
                explanation: "e".to_string(),
                part_logps: Vec::new(),
            };
            Ok(match self.0 {
                Misbehavior::Empty => Vec::new(),
                Misbehavior::TooMany => (0..=k)
                    .map(|i| mk(EnvCommand::click(format!("x{i}"))))
                    .collect(),
                Misbehavior::Duplicate => {
                    vec![mk(EnvCommand::bare(Verb::Next)), mk(EnvCommand::bare(Verb::Next))]
                }
                Misbehavior::MissingPlan => {
                    let mut a = mk(EnvCommand::bare(Verb::Next));
                    a.plan = None;
                    vec![a]
                }
            })
        }

        fn action_logp(&self, _: &AgentHistory, _: &CompositeAction) -> Result<f64> {
            Ok(-1.0)
        }

        fn greedy(&self, history: &AgentHistory) -> Result<CompositeAction> {
            let mut rng = rng_from(0, "bad-greedy");
            Ok(self.propose(history, 1, 0, &mut rng)?.remove(0))
        }
    }

    fn setup() -> (Env, crate::env::EnvState, AgentHistory) {
        let env = Env::new(EnvConfig::default());
        let task = generate_task_set(World::Shop, 1, 17, &env.config)[0].clone();
        let (state, obs) = env.reset(World::Shop, &task, 2).unwrap();
        let h = AgentHistory::new(task, obs);
        (env, state, h)
    }

    #[test]
    fn test_proposal_contract_is_enforced() {
        let (_, _, h) = setup();
        let mut rng = rng_from(1, "contract");
        for mode in [
            Misbehavior::Empty,
            Misbehavior::TooMany,
            Misbehavior::Duplicate,
            Misbehavior::MissingPlan,
        ] {
            let got = propose_actions(&BadPolicy(mode), &h, 2, 4, &mut rng);
            assert!(got.is_err());
        }
        let good = shaped_policy(World::Shop);
        assert!(propose_actions(&good, &h, 0, 4, &mut rng).is_err());
        let actions = propose_actions(&good, &h, 3, 4, &mut rng).unwrap();
        assert!(!actions.is_empty() && actions.len() <= 3);
    }

    #[test]
    fn test_rollout_respects_the_step_budget() {
        let (env, state, h) = setup();
        let policy = SoftmaxPolicy::uniform();
        let mut rng = rng_from(3, "budget");

        let t = rollout(&env, &state, &h, &policy, RolloutMode::Sample, 0, &mut rng).unwrap();
        assert_eq!(t.total_steps, 0);
        assert!(!t.terminal);

        let t = rollout(&env, &state, &h, &policy, RolloutMode::Sample, 3, &mut rng).unwrap();
        assert!(t.total_steps <= 3);
        assert!(t.terminal || t.total_steps == 3);
        for (i, step) in t.steps.iter().enumerate() {
            assert_eq!(step.history.step_index as usize, i + 1);
            assert_eq!(step.history.past_actions.len(), i);
            step.history.validate().unwrap();
            if i + 1 < t.steps.len() {
                assert_eq!(step.reward, 0);
            }
        }
        assert_eq!(t.terminal_reward == 1, t.success());
    }

    #[test]
    fn test_greedy_rollout_is_deterministic() {
        let (env, state, h) = setup();
        let policy = shaped_policy(World::Shop);
        let horizon = env.horizon(World::Shop);
        let mut r1 = rng_from(4, "greedy1");
        let mut r2 = rng_from(99, "greedy2");
        let a = rollout(&env, &state, &h, &policy, RolloutMode::Greedy, horizon, &mut r1).unwrap();
        let b = rollout(&env, &state, &h, &policy, RolloutMode::Greedy, horizon, &mut r2).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
