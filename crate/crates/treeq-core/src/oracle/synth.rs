//! Synthetic decision states with known ground truth.
//!
//! These build agent histories over hand-made observations (small bandits
//! and two-step chains) where the exact action values are assigned rather
//! than discovered. The closed-form preference optimum and the trainers
//! are validated against each other on these states, away from any
//! environment dynamics.

use std::collections::BTreeMap;

use crate::agent::{
    candidates, ActionPart, AgentHistory, CompositeAction, PartVocabs, SoftmaxPolicy,
};
use crate::env::{
    ElementRole, EnvCommand, InteractiveElement, Observation, ObservationKind, TaskSpec, Verb,
    World,
};
use crate::error::{Error, Result};

/// A task shell for synthetic states. Never run against a real world.
pub fn synth_task() -> TaskSpec {
    let mut attrs = BTreeMap::new();
    attrs.insert("category".to_string(), "mug".to_string());
    attrs.insert("color".to_string(), "red".to_string());
    attrs.insert("material".to_string(), "ceramic".to_string());
    TaskSpec {
        task_id: "synth-00000".to_string(),
        world: World::Shop,
        goal_text: "synthetic decision state".to_string(),
        target_attributes: attrs,
    }
}

/// Labels chosen so each arm lands in a different goal-match class, which
/// gives each arm its own scoring token. Arms sharing a token could never
/// be given different probabilities, and the comparisons here need full
/// per-arm control.
const ARM_LABELS: &[&str] = &["red ceramic mug", "red steel mug", "blue wood mug", "green glass lamp"];

/// An observation with `n_arms` click targets (at most 4), one per match
/// class. Different pages occupy different feature rows.
pub fn synth_observation(task: &TaskSpec, page: &str, n_arms: usize) -> Observation {
    assert!(n_arms <= ARM_LABELS.len(), "at most {} distinct arms", ARM_LABELS.len());
    let elements = (0..n_arms)
        .map(|i| InteractiveElement::new(&format!("arm_{i}"), ElementRole::Link, ARM_LABELS[i]))
        .collect();
    Observation {
        kind: ObservationKind::Page,
        text: format!("synthetic state {page}"),
        page_id: format!("synth_{page}"),
        elements,
        task_id: task.task_id.clone(),
    }
}

/// A history sitting at `step_index` on a synthetic page. Past steps are
/// padded with no-op actions so the history validates; with step_index
/// at least 2 the plan part is out of the picture.
pub fn synth_history(task: &TaskSpec, page: &str, n_arms: usize, step_index: u32) -> AgentHistory {
    assert!(step_index >= 1);
    let filler = CompositeAction {
        plan: None,
        thought: "padding".to_string(),
        env_cmd: EnvCommand::bare(Verb::AskUser),
        explanation: "padding".to_string(),
        part_logps: Vec::new(),
    };
    let mut past = vec![filler; (step_index - 1) as usize];
    if let Some(first) = past.first_mut() {
        first.plan = Some("padding".to_string());
    }
    AgentHistory {
        task: task.clone(),
        past_actions: past,
        current_obs: synth_observation(task, page, n_arms),
        step_index,
    }
}

/// One synthetic decision state with an exact Q value per composite
/// action. `actions` aligns index-for-index with `q` and `pi_ref`.
pub struct SynthState {
    pub history: AgentHistory,
    pub actions: Vec<CompositeAction>,
    pub q: Vec<f64>,
    pub pi_ref: Vec<f64>,
}

/// Builds the full composite action space at `history` under `pi_ref`,
/// with additive ground-truth values: Q(a) = q_thought + q_env + q_expl by
/// candidate index. Additive Q keeps the closed-form optimum inside the
/// policy family, so the comparison is exact rather than a best-fit.
pub fn synth_state(
    pi_ref: &SoftmaxPolicy,
    history: &AgentHistory,
    q_thought: &[f64],
    q_env: &[f64],
    q_expl: &[f64],
) -> Result<SynthState> {
    let cands = candidates(history, &pi_ref.vocabs);
    if q_thought.len() != cands.thought.len()
        || q_env.len() != cands.env.len()
        || q_expl.len() != cands.explanation.len()
    {
        return Err(Error::InvalidArgument(
            "q component lengths do not match candidate counts".into(),
        ));
    }
    let enumerated = pi_ref.enumerate_actions(history)?;
    let mut actions = Vec::with_capacity(enumerated.len());
    let mut q = Vec::with_capacity(enumerated.len());
    let mut probs = Vec::with_capacity(enumerated.len());
    for (action, p) in enumerated {
        let ti = cands
            .thought
            .iter()
            .position(|t| *t == action.thought)
            .expect("thought from enumeration");
        let ei = cands
            .env
            .iter()
            .position(|c| *c == action.env_cmd)
            .expect("command from enumeration");
        let xi = cands
            .explanation
            .iter()
            .position(|x| *x == action.explanation)
            .expect("explanation from enumeration");
        q.push(q_thought[ti] + q_env[ei] + q_expl[xi]);
        probs.push(p);
        actions.push(action);
    }
    Ok(SynthState {
        history: history.clone(),
        actions,
        q,
        pi_ref: probs,
    })
}

/// Exact distribution of `policy` over the synthetic state's action space,
/// aligned with `SynthState::actions`.
pub fn policy_distribution(policy: &SoftmaxPolicy, state: &SynthState) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(state.actions.len());
    for action in &state.actions {
        let parts = policy.action_logp_parts(&state.history, action)?;
        out.push(parts.iter().map(|(_, lp)| lp).sum::<f64>().exp());
    }
    let z: f64 = out.iter().sum();
    // Enumeration covers the whole space; renormalize away float dust.
    Ok(out.iter().map(|p| p / z).collect())
}

/// A reference policy with small deterministic weights on the bias rows
/// only, so conditionals do not depend on earlier parts and the tilted
/// optimum stays inside the additive family.
pub fn synth_ref_policy(seed: u64) -> SoftmaxPolicy {
    synth_ref_policy_with(PartVocabs::default(), seed)
}

/// `synth_ref_policy` over custom part vocabularies. Shrinking the
/// vocabularies shrinks the enumerable action space, which keeps exact
/// convergence checks over many states affordable.
pub fn synth_ref_policy_with(vocabs: PartVocabs, seed: u64) -> SoftmaxPolicy {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = SoftmaxPolicy::new(vocabs, 1.0);
    let task = synth_task();
    let toks: Vec<String> = {
        let mut v: Vec<String> = p.vocabs.thought.clone();
        v.extend(p.vocabs.explanation.clone());
        for class in ["full", "most", "some", "none"] {
            v.push(format!("click#{class}"));
        }
        v.push("ask_user".to_string());
        v
    };
    for part in [ActionPart::Thought, ActionPart::Env, ActionPart::Explanation] {
        let f = crate::agent::bias_feature(task.world, part);
        for t in &toks {
            p.set_weight(f, t, rng.gen_range(-0.6..0.6));
        }
    }
    p
}

// ---------------------------------------------------------------------------
