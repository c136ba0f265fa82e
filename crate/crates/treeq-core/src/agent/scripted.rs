//! Deterministic scripted policies: reference behaviors with known success
//! profiles, used as baselines and as ground truth in tests.

use rand_chacha::ChaCha8Rng;

use crate::env::{afforded_commands, EnvCommand, Verb};
use crate::error::Result;
use crate::util::tokenize;

use super::candidates::PartVocabs;
use super::{ActionPart, AgentHistory, CompositeAction, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptKind {
    /// Solves shopworld: paginates until the exact target is visible.
    ShopOptimal,
    /// Never paginates: buys the best-looking item on page 0. Succeeds
    /// exactly when the target surfaces on the first page.
    ShopGreedyFirstPage,
    /// Solves bookworld: selects every targeted option, fills contacts,
    /// submits.
    BookOptimal,
}

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub kind: ScriptKind,
    vocabs: PartVocabs,
}

impl ScriptedPolicy {
    pub fn new(kind: ScriptKind) -> Self {
        ScriptedPolicy {
            kind,
            vocabs: PartVocabs::default(),
        }
    }

    /// The single command this script takes at `history`. Always one of
    /// the page's afforded commands.
    pub fn pick_command(&self, history: &AgentHistory) -> EnvCommand {
        let task = &history.task;
        let obs = &history.current_obs;
        let afforded = afforded_commands(task, obs);
        let has = |verb: Verb| afforded.iter().find(|c| c.verb == verb).cloned();
        let goal = task.goal_tokens();

        let cmd = match (self.kind, obs.page_kind()) {
            (_, "landing") | (_, "search") => has(Verb::Search),
            (ScriptKind::ShopOptimal, "results") => obs
                .elements
                .iter()
                .find(|el| {
                    el.element_id.starts_with("item_") && {
                        let toks = tokenize(&el.label);
                        !toks.is_empty() && toks.iter().all(|t| goal.binary_search(t).is_ok())
                    }
                })
                .map(|el| EnvCommand::click(&el.element_id))
                .or_else(|| has(Verb::Next))
                .or_else(|| has(Verb::Back)),
            (ScriptKind::ShopGreedyFirstPage, "results") => {
                let mut best: Option<(usize, &str)> = None;
                for el in &obs.elements {
                    if !el.element_id.starts_with("item_") {
                        continue;
                    }
                    let toks = tokenize(&el.label);
                    let hits = toks.iter().filter(|t| goal.binary_search(t).is_ok()).count();
                    if best.map_or(true, |(b, _)| hits > b) {
                        best = Some((hits, &el.element_id));
                    }
                }
                best.map(|(_, id)| EnvCommand::click(id))
            }
            (ScriptKind::ShopOptimal, "item") | (ScriptKind::ShopGreedyFirstPage, "item") => {
                let full = obs.element("buy").map_or(false, |el| {
                    let toks = tokenize(&el.label);
                    !toks.is_empty() && toks.iter().all(|t| goal.binary_search(t).is_ok())
                });
                if full || self.kind == ScriptKind::ShopGreedyFirstPage {
                    has(Verb::Buy)
                } else {
                    has(Verb::Back)
                }
            }
            (ScriptKind::BookOptimal, "restaurants") => {
                let want = task.target_attributes.get("restaurant");
                obs.elements
                    .iter()
                    .find(|el| el.element_id.starts_with("rest_") && Some(&el.label) == want)
                    .map(|el| EnvCommand::click(&el.element_id))
                    .or_else(|| has(Verb::Next))
                    .or_else(|| {
                        obs.elements
                            .iter()
                            .find(|el| el.element_id.starts_with("rest_"))
                            .map(|el| EnvCommand::click(&el.element_id))
                    })
            }
            (ScriptKind::BookOptimal, "datetime" | "party" | "seating") => {
                // Click the first targeted option not yet selected, then
                // continue. Option labels gain a " *" marker once selected.
                let wants: Vec<String> = match obs.page_kind() {
                    "datetime" => ["date", "time"]
                        .iter()
                        .filter_map(|k| task.target_attributes.get(*k).cloned())
                        .collect(),
                    "party" => task
                        .target_attributes
                        .get("party_size")
                        .map(|v| format!("{v} people"))
                        .into_iter()
                        .collect(),
                    _ => task
                        .target_attributes
                        .get("seating")
                        .cloned()
                        .into_iter()
                        .collect(),
                };
                obs.elements
                    .iter()
                    .find(|el| wants.contains(&el.label))
                    .map(|el| EnvCommand::click(&el.element_id))
                    .or_else(|| Some(EnvCommand::click("continue")))
            }
            (ScriptKind::BookOptimal, "contact") => obs
                .elements
                .iter()
                .find_map(|el| {
                    let field = el.element_id.strip_prefix("field_")?;
                    if el.label.ends_with(" *") {
                        return None;
                    }
                    let value = task.target_attributes.get(&format!("contact_{field}"))?;
                    Some(EnvCommand::type_into(&el.element_id, value))
                })
                .or_else(|| Some(EnvCommand::submit("complete"))),
            _ => None,
        };
        cmd.unwrap_or_else(|| EnvCommand::bare(Verb::AskUser))
    }

    fn compose(&self, history: &AgentHistory, env_cmd: EnvCommand) -> CompositeAction {
        // A script is a point mass: every part has probability 1.
        let mut part_logps = Vec::new();
        let plan = if history.is_first_step() {
            part_logps.push((ActionPart::Plan, 0.0));
            Some(self.vocabs.plan[0].clone())
        } else {
            None
        };
        part_logps.push((ActionPart::Thought, 0.0));
        part_logps.push((ActionPart::Env, 0.0));
        part_logps.push((ActionPart::Explanation, 0.0));
        CompositeAction {
            plan,
            thought: self.vocabs.thought[0].clone(),
            env_cmd,
            explanation: self.vocabs.explanation[0].clone(),
            part_logps,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn propose(
        &self,
        history: &AgentHistory,
        _k: usize,
        _retry_budget: u32,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CompositeAction>> {
        Ok(vec![self.compose(history, self.pick_command(history))])
    }

    fn action_logp(&self, history: &AgentHistory, action: &CompositeAction) -> Result<f64> {
        // Point mass on the scripted choice.
        if action.env_cmd == self.pick_command(history) {
            Ok(0.0)
        } else {
            Ok(f64::NEG_INFINITY)
        }
    }

    fn greedy(&self, history: &AgentHistory) -> Result<CompositeAction> {
        Ok(self.compose(history, self.pick_command(history)))
    }
}
