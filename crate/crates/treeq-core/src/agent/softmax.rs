//! Tabular-softmax policy over hashed conjunction features.
//!
//! Every part decision is a softmax over that part's candidates, where a
//! candidate's score is the sum of one weight per active context feature,
//! keyed by the candidate's abstract token. Log-likelihoods and gradients
//! are exact and cheap, which is what lets training claims be checked
//! against finite differences and closed-form results instead of eyeballs.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::World;
use crate::error::{Error, Result};

use super::candidates::{candidates, cmd_token_with, CandidateSet, PartVocabs};
use super::features::{bias_feature, context_features_with, page_feature, FEATURE_DIM};
use super::{ActionPart, AgentHistory, CompositeAction, Policy};

pub const EXTRACTOR_ID: &str = "conj-fnv1a64-4096";

/// Sparse gradient: (feature id << 32 | token id) -> partial derivative.
pub type GradMap = crate::util::U64Map<f64>;

#[derive(Debug, Clone)]
pub struct SoftmaxPolicy {
    weights: crate::util::U64Map<f64>,
    token_ids: HashMap<String, u32>,
    token_names: Vec<String>,
    pub vocabs: PartVocabs,
    pub temperature: f64,
}

/// Tokens `cmd_token` can ever produce. Interned eagerly so gradient keys
/// exist before any data is seen.
fn closed_command_tokens() -> Vec<String> {
    let mut v: Vec<String> = [
        "search", "next", "prev", "back", "submit", "ask_user", "buy#blind", "click#blind",
        "click#continue",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for class in ["full", "most", "some", "none"] {
        v.push(format!("buy#{class}"));
        v.push(format!("click#{class}"));
        v.push(format!("click#{class}#sel"));
    }
    for fit in ["match", "mismatch"] {
        v.push(format!("type#{fit}"));
        v.push(format!("type#{fit}#refill"));
    }
    v
}

impl SoftmaxPolicy {
    pub fn new(vocabs: PartVocabs, temperature: f64) -> Self {
        let mut p = SoftmaxPolicy {
            weights: GradMap::default(),
            token_ids: HashMap::new(),
            token_names: Vec::new(),
            vocabs,
            temperature,
        };
        for t in closed_command_tokens() {
            p.ensure_token(&t);
        }
        let vocab_tokens: Vec<String> = p
            .vocabs
            .plan
            .iter()
            .chain(p.vocabs.thought.iter())
            .chain(p.vocabs.explanation.iter())
            .cloned()
            .collect();
        for t in vocab_tokens {
            p.ensure_token(&t);
        }
        p
    }

    /// All weights start at zero: the uniform starting policy.
    pub fn uniform() -> Self {
        SoftmaxPolicy::new(PartVocabs::default(), 1.0)
    }

    // -- token interning ---------------------------------------------------

    pub fn ensure_token(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_ids.get(token) {
            return id;
        }
        let id = self.token_names.len() as u32;
        self.token_names.push(token.to_string());
        self.token_ids.insert(token.to_string(), id);
        id
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_ids.get(token).copied()
    }

    pub fn token_name(&self, id: u32) -> Option<&str> {
        self.token_names.get(id as usize).map(|s| s.as_str())
    }

    // -- weights -----------------------------------------------------------

    fn key(feat: u32, token_id: u32) -> u64 {
        (feat as u64) << 32 | token_id as u64
    }

    pub fn split_key(key: u64) -> (u32, u32) {
        ((key >> 32) as u32, key as u32)
    }

    fn weight(&self, feat: u32, token_id: u32) -> f64 {
        self.weights.get(&Self::key(feat, token_id)).copied().unwrap_or(0.0)
    }

    pub fn set_weight(&mut self, feat: u32, token: &str, w: f64) {
        let id = self.ensure_token(token);
        self.weights.insert(Self::key(feat, id), w);
    }

    pub fn add_weight(&mut self, key: u64, delta: f64) {
        *self.weights.entry(key).or_insert(0.0) += delta;
    }

    pub fn n_weights(&self) -> usize {
        self.weights.len()
    }

    // -- part-level scoring ------------------------------------------------

    /// Softmax over candidate tokens for one part. Scores share the same
    /// context features; only the token column differs per candidate.
    fn part_probs(
        &self,
        history: &AgentHistory,
        goal_tokens: &[String],
        part: ActionPart,
        prev_parts: &[(ActionPart, &str)],
        tokens: &[String],
    ) -> Result<(Vec<f64>, Vec<u32>)> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no candidates for part {}",
                part.name()
            )));
        }
        let ctx = context_features_with(history, part, prev_parts, goal_tokens);
        let t = self.temperature;
        if t <= 0.0 {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let scores: Vec<f64> = tokens
            .iter()
            .map(|tok| match self.token_id(tok) {
                Some(id) => ctx.iter().map(|&f| self.weight(f, id)).sum::<f64>() / t,
                None => 0.0,
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok((exps.iter().map(|e| e / z).collect(), ctx))
    }

    fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    fn argmax_index(probs: &[f64]) -> usize {
        let mut best = 0;
        for (i, p) in probs.iter().enumerate().skip(1) {
            if *p > probs[best] {
                best = i;
            }
        }
        best
    }

    // -- decision chain ----------------------------------------------------

    /// Runs the part chain, choosing each part with `pick`, threading every
    /// chosen token into the context of the parts after it.
    fn decode(
        &self,
        history: &AgentHistory,
        cands: &CandidateSet,
        mut pick: impl FnMut(&[f64]) -> usize,
    ) -> Result<CompositeAction> {
        let mut prev: Vec<(ActionPart, String)> = Vec::new();
        let mut part_logps: Vec<(ActionPart, f64)> = Vec::new();
        let goal = history.task.goal_tokens();

        let choose_text = |policy: &Self,
                               part: ActionPart,
                               options: &[String],
                               prev: &mut Vec<(ActionPart, String)>,
                               part_logps: &mut Vec<(ActionPart, f64)>,
                               pick: &mut dyn FnMut(&[f64]) -> usize|
         -> Result<String> {
            let prev_refs: Vec<(ActionPart, &str)> =
                prev.iter().map(|(p, t)| (*p, t.as_str())).collect();
            let (probs, _) = policy.part_probs(history, &goal, part, &prev_refs, options)?;
            let i = pick(&probs);
            part_logps.push((part, probs[i].ln()));
            prev.push((part, options[i].clone()));
            Ok(options[i].clone())
        };

        let plan = if history.is_first_step() {
            Some(choose_text(self, ActionPart::Plan, &cands.plan, &mut prev, &mut part_logps, &mut pick)?)
        } else {
            None
        };
        let thought =
            choose_text(self, ActionPart::Thought, &cands.thought, &mut prev, &mut part_logps, &mut pick)?;

        let env_tokens: Vec<String> = cands
            .env
            .iter()
            .map(|c| cmd_token_with(&goal, &history.current_obs, c))
            .collect();
        let prev_refs: Vec<(ActionPart, &str)> =
            prev.iter().map(|(p, t)| (*p, t.as_str())).collect();
        let (probs, _) = self.part_probs(history, &goal, ActionPart::Env, &prev_refs, &env_tokens)?;
        let i = pick(&probs);
        part_logps.push((ActionPart::Env, probs[i].ln()));
        let env_cmd = cands.env[i].clone();
        prev.push((ActionPart::Env, env_tokens[i].clone()));

        let explanation = choose_text(
            self,
            ActionPart::Explanation,
            &cands.explanation,
            &mut prev,
            &mut part_logps,
            &mut pick,
        )?;

        Ok(CompositeAction {
            plan,
            thought,
            env_cmd,
            explanation,
            part_logps,
        })
    }

    pub fn sample(
        &self,
        history: &AgentHistory,
        cands: &CandidateSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<CompositeAction> {
        self.decode(history, cands, |probs| Self::sample_index(probs, rng))
    }

    pub fn greedy_from(&self, history: &AgentHistory, cands: &CandidateSet) -> Result<CompositeAction> {
        self.decode(history, cands, Self::argmax_index)
    }

    // -- exact likelihood and gradient --------------------------------------

    /// Candidate index of each part of `action` within the current
    /// candidate set. Out-of-vocabulary parts are an explicit error.
    fn locate(
        &self,
        history: &AgentHistory,
        cands: &CandidateSet,
        action: &CompositeAction,
    ) -> Result<Vec<(ActionPart, usize)>> {
        action.validate(history.is_first_step())?;
        let mut out = Vec::new();
        if let Some(plan) = &action.plan {
            let i = cands.plan.iter().position(|c| c == plan).ok_or_else(|| {
                Error::OutOfVocabulary(format!("plan '{plan}'"))
            })?;
            out.push((ActionPart::Plan, i));
        }
        let i = cands
            .thought
            .iter()
            .position(|c| *c == action.thought)
            .ok_or_else(|| Error::OutOfVocabulary(format!("thought '{}'", action.thought)))?;
        out.push((ActionPart::Thought, i));
        let i = cands
            .env
            .iter()
            .position(|c| *c == action.env_cmd)
            .ok_or_else(|| {
                Error::OutOfVocabulary(format!("command '{}'", action.env_cmd.canonical()))
            })?;
        out.push((ActionPart::Env, i));
        let i = cands
            .explanation
            .iter()
            .position(|c| *c == action.explanation)
            .ok_or_else(|| {
                Error::OutOfVocabulary(format!("explanation '{}'", action.explanation))
            })?;
        out.push((ActionPart::Explanation, i));
        Ok(out)
    }

    /// Joint log-likelihood of `action` under current weights, with the
    /// per-part breakdown.
    pub fn action_logp_parts(
        &self,
        history: &AgentHistory,
        action: &CompositeAction,
    ) -> Result<Vec<(ActionPart, f64)>> {
        let (parts, _) = self.logp_grad_inner(history, action, false)?;
        Ok(parts)
    }

    /// Joint log-likelihood and its exact gradient with respect to every
    /// touched weight. Unset weights are implicit zeros, and their
    /// gradient entries are still produced.
    pub fn action_logp_grad(
        &self,
        history: &AgentHistory,
        action: &CompositeAction,
    ) -> Result<(f64, GradMap)> {
        let (parts, grad) = self.logp_grad_inner(history, action, true)?;
        Ok((parts.iter().map(|(_, lp)| lp).sum(), grad))
    }

    fn logp_grad_inner(
        &self,
        history: &AgentHistory,
        action: &CompositeAction,
        want_grad: bool,
    ) -> Result<(Vec<(ActionPart, f64)>, GradMap)> {
        let cands = candidates(history, &self.vocabs);
        let located = self.locate(history, &cands, action)?;
        let goal = history.task.goal_tokens();
        let env_tokens: Vec<String> = cands
            .env
            .iter()
            .map(|c| cmd_token_with(&goal, &history.current_obs, c))
            .collect();

        let mut prev: Vec<(ActionPart, String)> = Vec::new();
        let mut part_logps = Vec::new();
        let mut grad = GradMap::default();
        let t = self.temperature;

        for (part, chosen) in located {
            let tokens: &[String] = match part {
                ActionPart::Plan => &cands.plan,
                ActionPart::Thought => &cands.thought,
                ActionPart::Env => &env_tokens,
                ActionPart::Explanation => &cands.explanation,
            };
            let prev_refs: Vec<(ActionPart, &str)> =
                prev.iter().map(|(p, tk)| (*p, tk.as_str())).collect();
            let (probs, ctx) = self.part_probs(history, &goal, part, &prev_refs, tokens)?;
            part_logps.push((part, probs[chosen].ln()));
            if want_grad {
                for (j, tok) in tokens.iter().enumerate() {
                    let id = self.token_id(tok).ok_or_else(|| {
                        Error::OutOfVocabulary(format!("token '{tok}' is not interned"))
                    })?;
                    let coeff = ((j == chosen) as u8 as f64 - probs[j]) / t;
                    if coeff != 0.0 {
                        for &f in &ctx {
                            *grad.entry(Self::key(f, id)).or_insert(0.0) += coeff;
                        }
                    }
                }
            }
            prev.push((part, tokens[chosen].clone()));
        }
        Ok((part_logps, grad))
    }

    /// Every composite action this policy can emit at `history`, with its
    /// exact joint probability. Probabilities sum to 1 (up to float
    /// rounding); used by normalization tests and closed-form comparisons.
    pub fn enumerate_actions(&self, history: &AgentHistory) -> Result<Vec<(CompositeAction, f64)>> {
        let cands = candidates(history, &self.vocabs);
        let plans: Vec<Option<String>> = if history.is_first_step() {
            cands.plan.iter().cloned().map(Some).collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for plan in &plans {
            for thought in &cands.thought {
                for env_cmd in &cands.env {
                    for explanation in &cands.explanation {
                        let mut action = CompositeAction {
                            plan: plan.clone(),
                            thought: thought.clone(),
                            env_cmd: env_cmd.clone(),
                            explanation: explanation.clone(),
                            part_logps: Vec::new(),
                        };
                        let parts = self.action_logp_parts(history, &action)?;
                        let joint: f64 = parts.iter().map(|(_, lp)| lp).sum();
                        action.part_logps = parts;
                        out.push((action, joint.exp()));
                    }
                }
            }
        }
        Ok(out)
    }

    // -- persistence ---------------------------------------------------------

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        let mut weights = BTreeMap::new();
        for (&key, &w) in &self.weights {
            if w != 0.0 {
                let (feat, id) = Self::split_key(key);
                let tok = self.token_name(id).unwrap_or("?");
                weights.insert(format!("{feat}:{tok}"), w);
            }
        }
        PolicyCheckpoint {
            schema_version: 1,
            extractor: EXTRACTOR_ID.to_string(),
            feature_dim: FEATURE_DIM,
            temperature: self.temperature,
            vocabs: self.vocabs.clone(),
            weights,
        }
    }

    pub fn from_checkpoint(ckpt: &PolicyCheckpoint) -> Result<Self> {
        if ckpt.extractor != EXTRACTOR_ID || ckpt.feature_dim != FEATURE_DIM {
            return Err(Error::InvalidArgument(format!(
                "checkpoint extractor {}/{} does not match {}/{}",
                ckpt.extractor, ckpt.feature_dim, EXTRACTOR_ID, FEATURE_DIM
            )));
        }
        let mut p = SoftmaxPolicy::new(ckpt.vocabs.clone(), ckpt.temperature);
        for (key, &w) in &ckpt.weights {
            let (feat, tok) = key.split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("malformed weight key '{key}'"))
            })?;
            let feat: u32 = feat
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("malformed weight key '{key}'")))?;
            p.set_weight(feat, tok, w);
        }
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: PolicyCheckpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ckpt)
    }
}

impl Policy for SoftmaxPolicy {
    fn propose(
        &self,
        history: &AgentHistory,
        k: usize,
        retry_budget: u32,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CompositeAction>> {
        let cands = candidates(history, &self.vocabs);
        let mut out: Vec<CompositeAction> = Vec::new();
        let mut misses = 0;
        while out.len() < k && misses <= retry_budget {
            let action = self.sample(history, &cands, rng)?;
            if out.iter().any(|a| a.env_cmd == action.env_cmd) {
                misses += 1;
            } else {
                out.push(action);
            }
        }
        Ok(out)
    }

    fn action_logp(&self, history: &AgentHistory, action: &CompositeAction) -> Result<f64> {
        Ok(self
            .action_logp_parts(history, action)?
            .iter()
            .map(|(_, lp)| lp)
            .sum())
    }

    fn greedy(&self, history: &AgentHistory) -> Result<CompositeAction> {
        let cands = candidates(history, &self.vocabs);
        self.greedy_from(history, &cands)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub schema_version: u32,
    pub extractor: String,
    pub feature_dim: u32,
    pub temperature: f64,
    pub vocabs: PartVocabs,
    /// "featureid:token" -> weight; zero weights are omitted.
    pub weights: BTreeMap<String, f64>,
}

// ---------------------------------------------------------------------------
// Shaped starting policies
// ---------------------------------------------------------------------------

/// A hand-shaped starting policy for a world: competent enough that
/// sampled rollouts sometimes succeed (so search has signal to propagate)
/// but far from optimal. Only page-family and bias rows are set; training
/// owns everything else.
pub fn shaped_policy(world: World) -> SoftmaxPolicy {
    let mut p = SoftmaxPolicy::uniform();
    let env = ActionPart::Env;
    {
        let b = bias_feature(world, env);
        p.set_weight(b, "ask_user", -1.5);
        // Re-selecting an already-selected option or refilling a field is
        // wasted motion under any goal.
        for class in ["full", "most", "some", "none"] {
            p.set_weight(b, &format!("click#{class}#sel"), -2.0);
        }
        p.set_weight(b, "type#match#refill", -2.0);
        p.set_weight(b, "type#mismatch#refill", -2.0);
    }
    let page = |p: &mut SoftmaxPolicy, kind: &str, token: &str, w: f64| {
        p.set_weight(page_feature(world, env, kind), token, w);
    };
    match world {
        World::Shop => {
            page(&mut p, "landing", "search", 3.0);
            page(&mut p, "results", "click#full", 2.2);
            page(&mut p, "results", "click#most", 1.2);
            page(&mut p, "results", "click#some", 0.3);
            page(&mut p, "results", "next", 1.0);
            page(&mut p, "results", "prev", -1.0);
            page(&mut p, "results", "back", -1.0);
            page(&mut p, "item", "buy#full", 2.4);
            page(&mut p, "item", "buy#most", 1.2);
            page(&mut p, "item", "buy#some", 0.5);
            page(&mut p, "item", "back", 0.6);
        }
        World::Book => {
            page(&mut p, "search", "search", 3.0);
            page(&mut p, "restaurants", "click#full", 1.4);
            page(&mut p, "restaurants", "click#most", 0.8);
            page(&mut p, "restaurants", "next", 0.7);
            page(&mut p, "restaurants", "prev", -0.5);
            page(&mut p, "restaurants", "back", -0.5);
            for kind in ["datetime", "party", "seating"] {
                page(&mut p, kind, "click#full", 1.4);
                page(&mut p, kind, "click#most", 1.2);
                page(&mut p, kind, "click#continue", 0.9);
                page(&mut p, kind, "back", -0.5);
            }
            page(&mut p, "contact", "type#match", 1.6);
            page(&mut p, "contact", "type#mismatch", -0.5);
            page(&mut p, "contact", "submit", 1.0);
            page(&mut p, "contact", "back", -0.5);
        }
    }
    p
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_task_set, Env, EnvConfig, World};
    use crate::util::rng_from;

    fn first_step_history(world: World) -> AgentHistory {
        let env = Env::new(EnvConfig::default());
        let task = generate_task_set(world, 4, 11, &env.config)[0].clone();
        let (_, obs) = env.reset(world, &task, 7).unwrap();
        AgentHistory::new(task, obs)
    }

    /// History after one greedy step, so the plan part is gone and the
    /// page affords a richer command set.
    fn second_step_history(world: World) -> AgentHistory {
        let env = Env::new(EnvConfig::default());
        let task = generate_task_set(world, 4, 11, &env.config)[0].clone();
        let (state, obs) = env.reset(world, &task, 7).unwrap();
        let h = AgentHistory::new(task, obs);
        let policy = shaped_policy(world);
        let action = policy.greedy(&h).unwrap();
        let out = env.step(&state, &action.env_cmd).unwrap();
        h.advance(action, out.observation)
    }

    #[test]
    fn test_enumeration_sums_to_one_and_matches_logp() {
        for world in [World::Shop, World::Book] {
            for h in [first_step_history(world), second_step_history(world)] {
                let policy = shaped_policy(world);
                let all = policy.enumerate_actions(&h).unwrap();
                let total: f64 = all.iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-9, "probs sum to {total}");
                for (action, prob) in &all {
                    let lp = policy.action_logp(&h, action).unwrap();
                    assert!((lp - prob.ln()).abs() < 1e-12);
                    assert!((action.joint_logp() - lp).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn test_uniform_policy_is_uniform_over_the_part_chain() {
        let h = first_step_history(World::Shop);
        let policy = SoftmaxPolicy::uniform();
        let cands = candidates(&h, &policy.vocabs);
        let expect = -((cands.plan.len() as f64).ln()
            + (cands.thought.len() as f64).ln()
            + (cands.env.len() as f64).ln()
            + (cands.explanation.len() as f64).ln());
        for (action, _) in policy.enumerate_actions(&h).unwrap() {
            let lp = policy.action_logp(&h, &action).unwrap();
            assert!((lp - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn test_gradient_matches_finite_differences() {
        let h_step = 1e-5;
        for world in [World::Shop, World::Book] {
            let policy = shaped_policy(world);
            let h = second_step_history(world);
            let cands = candidates(&h, &policy.vocabs);
            let mut rng = rng_from(41, "softmax-fd");
            let action = policy.sample(&h, &cands, &mut rng).unwrap();

            let (lp, grad) = policy.action_logp_grad(&h, &action).unwrap();
            assert!((lp - policy.action_logp(&h, &action).unwrap()).abs() < 1e-12);
            assert!(!grad.is_empty());

            let mut keys: Vec<u64> = grad.keys().copied().collect();
            keys.sort_unstable();
            for key in keys {
                let mut plus = policy.clone();
                plus.add_weight(key, h_step);
                let mut minus = policy.clone();
                minus.add_weight(key, -h_step);
                let fd = (plus.action_logp(&h, &action).unwrap()
                    - minus.action_logp(&h, &action).unwrap())
                    / (2.0 * h_step);
                let analytic = grad[&key];
                let denom = analytic.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((analytic - fd) / denom).abs() < 1e-5,
                    "key {key}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn test_gradient_scales_with_temperature() {
        let h = second_step_history(World::Shop);
        let base = shaped_policy(World::Shop);
        let action = base.greedy(&h).unwrap();
        let (_, g1) = base.action_logp_grad(&h, &action).unwrap();
        let mut cool = base.clone();
        cool.temperature = 2.0;
        // Same logits at half scale flatten the distribution; the chain
        // rule also divides every gradient entry by the temperature.
        let (_, g2) = cool.action_logp_grad(&h, &action).unwrap();
        let k1 = *g1.keys().next().unwrap();
        assert!(g2.contains_key(&k1));
        assert!(g1.len() == g2.len());
    }

    #[test]
    fn test_out_of_vocabulary_parts_are_errors() {
        let h = first_step_history(World::Shop);
        let policy = shaped_policy(World::Shop);
        let good = policy.greedy(&h).unwrap();

        let mut bad = good.clone();
        bad.thought = "a thought nobody taught the policy".to_string();
        assert!(matches!(
            policy.action_logp(&h, &bad),
            Err(Error::OutOfVocabulary(_))
        ));

        let mut bad = good.clone();
        bad.env_cmd = crate::env::EnvCommand::click("no_such_element");
        assert!(matches!(
            policy.action_logp(&h, &bad),
            Err(Error::OutOfVocabulary(_))
        ));

        let mut bad = good.clone();
        bad.plan = None;
        assert!(matches!(
            policy.action_logp(&h, &bad),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn test_later_parts_condition_on_earlier_parts() {
        let h = second_step_history(World::Shop);
        let mut policy = shaped_policy(World::Shop);
        let cands = candidates(&h, &policy.vocabs);
        let thought_a = cands.thought[0].clone();
        let thought_b = cands.thought[1].clone();
        let cmd = cands.env[0].clone();
        let tok = crate::agent::cmd_token(&h.task, &h.current_obs, &cmd);

        let build = |thought: &str| CompositeAction {
            plan: None,
            thought: thought.to_string(),
            env_cmd: cmd.clone(),
            explanation: cands.explanation[0].clone(),
            part_logps: Vec::new(),
        };
        let env_lp = |p: &SoftmaxPolicy, a: &CompositeAction| {
            p.action_logp_parts(&h, a)
                .unwrap()
                .iter()
                .find(|(part, _)| *part == ActionPart::Env)
                .unwrap()
                .1
        };

        let ctx_a = crate::agent::context_features(&h, ActionPart::Env, &[(ActionPart::Thought, &thought_a)]);
        let ctx_b = crate::agent::context_features(&h, ActionPart::Env, &[(ActionPart::Thought, &thought_b)]);
        let only_a: Vec<u32> = ctx_a.iter().filter(|f| !ctx_b.contains(f)).copied().collect();
        assert_eq!(only_a.len(), 1, "one conjunction feature per earlier part");

        let (a, b) = (build(&thought_a), build(&thought_b));
        let (before_a, before_b) = (env_lp(&policy, &a), env_lp(&policy, &b));
        policy.set_weight(only_a[0], &tok, 2.5);
        assert!(env_lp(&policy, &a) > before_a + 0.1);
        assert!((env_lp(&policy, &b) - before_b).abs() < 1e-12);
    }

    #[test]
    fn test_checkpoint_roundtrip_preserves_likelihoods() {
        let policy = shaped_policy(World::Book);
        let h = second_step_history(World::Book);
        let reloaded = SoftmaxPolicy::from_checkpoint(&policy.to_checkpoint()).unwrap();
        for (action, _) in policy.enumerate_actions(&h).unwrap() {
            let a = policy.action_logp(&h, &action).unwrap();
            let b = reloaded.action_logp(&h, &action).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn test_checkpoint_save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let policy = shaped_policy(World::Shop);
        policy.save(&path).unwrap();
        let loaded = SoftmaxPolicy::load(&path).unwrap();
        assert_eq!(policy.to_checkpoint().weights, loaded.to_checkpoint().weights);
        assert_eq!(policy.temperature, loaded.temperature);
    }

    #[test]
    fn test_checkpoint_rejects_extractor_mismatch() {
        let mut ckpt = shaped_policy(World::Shop).to_checkpoint();
        ckpt.extractor = "other-extractor".to_string();
        assert!(SoftmaxPolicy::from_checkpoint(&ckpt).is_err());
        let mut ckpt = shaped_policy(World::Shop).to_checkpoint();
        ckpt.feature_dim = 7;
        assert!(SoftmaxPolicy::from_checkpoint(&ckpt).is_err());
        let mut ckpt = shaped_policy(World::Shop).to_checkpoint();
        ckpt.weights.insert("notanumber".to_string(), 1.0);
        assert!(SoftmaxPolicy::from_checkpoint(&ckpt).is_err());
    }

    #[test]
    fn test_propose_returns_distinct_commands() {
        let h = second_step_history(World::Shop);
        let policy = shaped_policy(World::Shop);
        let mut rng = rng_from(5, "softmax-propose");
        let actions = policy.propose(&h, 5, 8, &mut rng).unwrap();
        assert!(!actions.is_empty() && actions.len() <= 5);
        for i in 0..actions.len() {
            for j in i + 1..actions.len() {
                assert_ne!(actions[i].env_cmd, actions[j].env_cmd);
            }
        }
        for a in &actions {
            a.validate(false).unwrap();
        }
    }

    #[test]
    fn test_sampling_is_seed_deterministic() {
        let h = first_step_history(World::Book);
        let policy = shaped_policy(World::Book);
        let cands = candidates(&h, &policy.vocabs);
        let a = policy.sample(&h, &cands, &mut rng_from(9, "det")).unwrap();
        let b = policy.sample(&h, &cands, &mut rng_from(9, "det")).unwrap();
        assert_eq!(a, b);
        assert_eq!(policy.greedy(&h).unwrap(), policy.greedy(&h).unwrap());
    }

    #[test]
    fn test_nonpositive_temperature_is_an_error() {
        let h = first_step_history(World::Shop);
        let mut policy = shaped_policy(World::Shop);
        policy.temperature = 0.0;
        assert!(policy.greedy(&h).is_err());
    }
}
