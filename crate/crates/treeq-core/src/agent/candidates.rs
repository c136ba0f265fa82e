//! Candidate construction for each action part.
//!
//! Plans, thoughts, and explanations come from small fixed template
//! vocabularies. Environment commands come from the page's affordances,
//! and each is given an abstract scoring token (`cmd_token`) describing
//! what the command *is* relative to the goal rather than which concrete
//! element it touches: how well a click target's label matches the goal,
//! whether a typed value fits its field, whether an option was already
//! selected. Policies score tokens, so what is learned on one task's
//! elements transfers to every other task.

use serde::{Deserialize, Serialize};

use crate::env::{afforded_commands, EnvCommand, Observation, TaskSpec, Verb};
use crate::util::tokenize;

use super::AgentHistory;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PartVocabs {
    pub plan: Vec<String>,
    pub thought: Vec<String>,
    pub explanation: Vec<String>,
}

impl Default for PartVocabs {
    fn default() -> Self {
        PartVocabs {
            plan: vec![
                "locate the goal item, verify every attribute, then commit".to_string(),
                "search first, scan all result pages before committing".to_string(),
                "work through each page, fill required details, then finish".to_string(),
            ],
            thought: vec![
                "this page has what the goal needs".to_string(),
                "the goal target is not visible here yet".to_string(),
                "i should keep scanning before committing".to_string(),
                "all required details look satisfied".to_string(),
            ],
            explanation: vec![
                "this moves toward the goal".to_string(),
                "this gathers more options to compare".to_string(),
                "this commits the current choice".to_string(),
            ],
        }
    }
}

/// Per-part candidate lists for one decision point. The `plan` list is
/// empty except on the first step.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub plan: Vec<String>,
    pub thought: Vec<String>,
    pub env: Vec<EnvCommand>,
    pub explanation: Vec<String>,
}

pub fn candidates(history: &AgentHistory, vocabs: &PartVocabs) -> CandidateSet {
    CandidateSet {
        plan: if history.is_first_step() {
            vocabs.plan.clone()
        } else {
            Vec::new()
        },
        thought: vocabs.thought.clone(),
        env: afforded_commands(&history.task, &history.current_obs),
        explanation: vocabs.explanation.clone(),
    }
}

/// How well a label's tokens are covered by the goal token set.
fn match_class(label: &str, goal: &[String]) -> &'static str {
    let toks = tokenize(label);
    if toks.is_empty() {
        return "none";
    }
    let hits = toks.iter().filter(|t| goal.binary_search(t).is_ok()).count();
    if hits == 0 {
        "none"
    } else if hits == toks.len() {
        "full"
    } else if hits * 2 >= toks.len() {
        "most"
    } else {
        "some"
    }
}

/// What kind of value a typed payload looks like.
fn payload_kind(payload: &str) -> &'static str {
    if payload.contains('@') {
        "email"
    } else if payload.chars().all(|c| c.is_ascii_digit() || c == '-') {
        "phone"
    } else {
        "name"
    }
}

/// Abstract scoring token for an environment command on this observation.
pub fn cmd_token(task: &TaskSpec, obs: &Observation, cmd: &EnvCommand) -> String {
    cmd_token_with(&task.goal_tokens(), obs, cmd)
}

/// Same as `cmd_token`, taking the task's goal tokens precomputed; callers
/// scoring many commands against one observation reuse one tokenization.
pub fn cmd_token_with(goal: &[String], obs: &Observation, cmd: &EnvCommand) -> String {
    match cmd.verb {
        Verb::Search => "search".to_string(),
        Verb::Next => "next".to_string(),
        Verb::Prev => "prev".to_string(),
        Verb::Back => "back".to_string(),
        Verb::AskUser => "ask_user".to_string(),
        Verb::Submit => "submit".to_string(),
        Verb::Buy => match obs.element("buy") {
            Some(el) => format!("buy#{}", match_class(&el.label, goal)),
            None => "buy#blind".to_string(),
        },
        Verb::Click => {
            let target = cmd.target.as_deref().unwrap_or_default();
            if target == "continue" {
                return "click#continue".to_string();
            }
            match obs.element(target) {
                Some(el) => {
                    let selected = el.label.ends_with(" *");
                    let class = match_class(&el.label, goal);
                    if selected {
                        format!("click#{class}#sel")
                    } else {
                        format!("click#{class}")
                    }
                }
                None => "click#blind".to_string(),
            }
        }
        Verb::Type => {
            let target = cmd.target.as_deref().unwrap_or_default();
            let field = target.strip_prefix("field_").unwrap_or(target);
            let payload = cmd.payload.as_deref().unwrap_or_default();
            let filled = obs
                .element(target)
                .map_or(false, |el| el.label.ends_with(" *"));
            let fit = if payload_kind(payload) == field {
                "match"
            } else {
                "mismatch"
            };
            if filled {
                format!("type#{fit}#refill")
            } else {
                format!("type#{fit}")
            }
        }
    }
}

// ---------------------------------------------------------------------------
