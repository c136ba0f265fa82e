//! The agent: composite actions, compact histories, policies, rollouts.
//!
//! An action is a composite of four parts generated in order: an optional
//! plan (first step only), a thought, an environment command, and an
//! explanation. Each part is conditioned on the history and on all parts
//! generated before it within the same action, so the joint log-likelihood
//! is the sum of the four conditional part log-likelihoods. The reasoning
//! parts contribute to that likelihood at full weight, the same as the
//! command part.
//!
//! Histories are kept compact on purpose: past observations are dropped
//! and only (past actions, current observation) survives. Serialized size
//! therefore grows with step count, never with how much text earlier pages
//! contained.

mod action;
mod candidates;
mod features;
mod rollout;
mod scripted;
mod softmax;

pub use action::{
    judge_trajectory, ActionPart, AgentHistory, CompositeAction, TrajStep, Trajectory,
};
pub use candidates::{candidates, cmd_token, CandidateSet, PartVocabs};
pub use features::{bias_feature, context_features, page_feature, FEATURE_DIM};
pub use rollout::{propose_actions, rollout, RolloutMode};
pub use scripted::{ScriptKind, ScriptedPolicy};
pub use softmax::{shaped_policy, GradMap, PolicyCheckpoint, SoftmaxPolicy};

use crate::error::Result;
use rand_chacha::ChaCha8Rng;

/// Anything that can act. `propose` draws k distinct-command candidates,
/// `action_logp` scores an arbitrary action against the current
/// parameters, and `greedy` decodes without sampling.
pub trait Policy {
    fn propose(
        &self,
        history: &AgentHistory,
        k: usize,
        retry_budget: u32,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CompositeAction>>;

    fn action_logp(&self, history: &AgentHistory, action: &CompositeAction) -> Result<f64>;

    fn greedy(&self, history: &AgentHistory) -> Result<CompositeAction>;
}
