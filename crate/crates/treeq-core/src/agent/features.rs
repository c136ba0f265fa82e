//! Hashed conjunction features over (history, part, earlier parts).
//!
//! Each feature is a string conjunction hashed into a fixed-size id space
//! with FNV-1a; the policy keeps one weight per (feature id, candidate
//! token). The context for a part includes the world, the page family and
//! exact page id, the goal's attribute tokens, and one conjunction per
//! part already generated within the same composite action. That last
//! group is what makes each part genuinely conditioned on all earlier
//! parts: changing the sampled thought changes the feature set, and with
//! it the command distribution.

use crate::env::World;

use super::{ActionPart, AgentHistory};

pub const FEATURE_DIM: u32 = 4096;

fn feat(parts: &[&str]) -> u32 {
    (crate::util::fnv1a64_parts(parts) % FEATURE_DIM as u64) as u32
}

/// Active feature ids for scoring `part` given the history and the parts
/// already chosen for this action. Sorted and deduplicated.
pub fn context_features(
    history: &AgentHistory,
    part: ActionPart,
    prev_parts: &[(ActionPart, &str)],
) -> Vec<u32> {
    context_features_with(history, part, prev_parts, &history.task.goal_tokens())
}

/// Same as `context_features`, taking the task's goal tokens precomputed.
/// Likelihood evaluation scores several parts against one history and
/// would otherwise re-tokenize the goal for each.
pub fn context_features_with(
    history: &AgentHistory,
    part: ActionPart,
    prev_parts: &[(ActionPart, &str)],
    goal_tokens: &[String],
) -> Vec<u32> {
    let world = match history.task.world {
        World::Shop => "shop",
        World::Book => "book",
    };
    let p = part.name();
    let obs = &history.current_obs;
    let page_kind = obs.page_kind();

    let mut ids = Vec::with_capacity(8 + prev_parts.len() + 8);
    ids.push(feat(&["bias", world, p]));
    ids.push(feat(&["page", world, p, page_kind]));
    ids.push(feat(&["pageid", world, p, &obs.page_id]));
    for (prev, token) in prev_parts {
        ids.push(feat(&["prev", world, p, prev.name(), token]));
    }
    for g in goal_tokens {
        ids.push(feat(&["goal", world, p, page_kind, g]));
    }
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Feature id used by hand-shaped starting policies: the page-family row
/// alone, so a shaped weight speaks for a (world, part, page kind) context
/// regardless of task.
pub fn page_feature(world: World, part: ActionPart, page_kind: &str) -> u32 {
    let world = match world {
        World::Shop => "shop",
        World::Book => "book",
    };
    feat(&["page", world, part.name(), page_kind])
}

/// Feature id for the world-level bias row, also used by shaped policies.
pub fn bias_feature(world: World, part: ActionPart) -> u32 {
    let world = match world {
        World::Shop => "shop",
        World::Book => "book",
    };
    feat(&["bias", world, part.name()])
}
