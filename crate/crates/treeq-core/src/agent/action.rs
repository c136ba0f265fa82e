use serde::{Deserialize, Serialize};

use crate::env::{EnvCommand, Observation, TaskSpec};
use crate::error::{Error, Result};

/// The four parts of a composite action, in generation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPart {
    Plan,
    Thought,
    Env,
    Explanation,
}

impl ActionPart {
    pub fn name(self) -> &'static str {
        match self {
            ActionPart::Plan => "plan",
            ActionPart::Thought => "thought",
            ActionPart::Env => "env",
            ActionPart::Explanation => "explanation",
        }
    }
}

/// One agent action: optional plan (first step only), thought, environment
/// command, explanation. `part_logps` records the log-likelihood each part
/// had under the policy that generated the action; those stored values are
/// what later training stages treat as reference likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeAction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    pub thought: String,
    pub env_cmd: EnvCommand,
    pub explanation: String,
    pub part_logps: Vec<(ActionPart, f64)>,
}

impl CompositeAction {
    /// Joint log-likelihood: the sum over recorded parts. All parts weigh
    /// equally; reasoning text is not down-weighted relative to the
    /// command.
    pub fn joint_logp(&self) -> f64 {
        self.part_logps.iter().map(|(_, lp)| lp).sum()
    }

    pub fn part_logp(&self, part: ActionPart) -> Option<f64> {
        self.part_logps
            .iter()
            .find(|(p, _)| *p == part)
            .map(|(_, lp)| *lp)
    }

    /// Stable one-line form used for fingerprints and logs.
    pub fn canonical(&self) -> String {
        let plan = self.plan.as_deref().unwrap_or("-");
        format!(
            "plan={plan}|thought={}|env={}|expl={}",
            self.thought,
            self.env_cmd.canonical(),
            self.explanation
        )
    }

    pub fn validate(&self, first_step: bool) -> Result<()> {
        if first_step != self.plan.is_some() {
            return Err(Error::InvalidArgument(format!(
                "plan part {} on step where it is {}",
                if self.plan.is_some() { "present" } else { "missing" },
                if first_step { "required" } else { "not allowed" },
            )));
        }
        self.env_cmd.validate()
    }
}

/// Compact history: every past action plus only the current observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHistory {
    pub task: TaskSpec,
    pub past_actions: Vec<CompositeAction>,
    pub current_obs: Observation,
    /// 1-based: the step the agent is about to take.
    pub step_index: u32,
}

impl AgentHistory {
    pub fn new(task: TaskSpec, first_obs: Observation) -> Self {
        AgentHistory {
            task,
            past_actions: Vec::new(),
            current_obs: first_obs,
            step_index: 1,
        }
    }

    /// The history after taking `action` and observing `next_obs`. The
    /// outgoing observation is dropped, not carried.
    pub fn advance(&self, action: CompositeAction, next_obs: Observation) -> Self {
        let mut past = self.past_actions.clone();
        past.push(action);
        AgentHistory {
            task: self.task.clone(),
            past_actions: past,
            current_obs: next_obs,
            step_index: self.step_index + 1,
        }
    }

    pub fn is_first_step(&self) -> bool {
        self.step_index == 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_index as usize != self.past_actions.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "history step_index {} does not match {} past actions",
                self.step_index,
                self.past_actions.len()
            )));
        }
        self.task.validate()
    }
}

/// One trajectory step: the history the agent saw, the action it took, and
/// the reward paid by the transition (0 everywhere except possibly the
/// final step).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajStep {
    pub history: AgentHistory,
    pub action: CompositeAction,
    pub reward: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskSpec,
    pub steps: Vec<TrajStep>,
    /// The observation after the last action; the judge reads this.
    pub final_obs: Observation,
    pub terminal: bool,
    pub terminal_reward: u8,
    pub total_steps: u32,
}

impl Trajectory {
    pub fn success(&self) -> bool {
        self.terminal && self.terminal_reward == 1
    }
}

/// Observation-side verdict on a finished episode. Errors when the
/// trajectory never actually terminated.
pub fn judge_trajectory(traj: &Trajectory) -> Result<u8> {
    if !traj.terminal {
        return Err(Error::NonTerminalTrajectory);
    }
    Ok(crate::env::judge_outcome(&traj.task, &traj.final_obs))
}

// ---------------------------------------------------------------------------
