//! Binary outcome judging.
//!
//! Success is decided two independent ways that must always agree:
//!
//! * `success_from_state` reads the raw environment state (what actually
//!   happened), and is what `Env::step` pays reward from.
//! * `judge_outcome` reads only the final observation the agent saw, the
//!   way an external reviewer would, by parsing the confirmation page.
//!
//! Keeping both routes makes reward hacking through rendering bugs loud:
//! a fuzz test cross-checks them on random trajectories.
//!
//! shopworld judges every target attribute of the purchased product.
//! bookworld judges date, time, party size, and the contact fields; the
//! restaurant chosen and the seating preference are deliberately unjudged.

use super::{Cursor, EnvState, Observation, TaskSpec, World};

/// Target attribute keys the judge enforces for a task.
pub(crate) fn judged_keys(task: &TaskSpec) -> Vec<&str> {
    const BOOK_JUDGED: &[&str] = &[
        "date",
        "time",
        "party_size",
        "contact_name",
        "contact_email",
        "contact_phone",
    ];
    match task.world {
        World::Shop => task.target_attributes.keys().map(|k| k.as_str()).collect(),
        World::Book => task
            .target_attributes
            .keys()
            .map(|k| k.as_str())
            .filter(|k| BOOK_JUDGED.contains(k))
            .collect(),
    }
}

/// Ground-truth success predicate on a raw terminal state.
pub(crate) fn success_from_state(ctx: &super::CatalogCtx<'_>, state: &EnvState) -> bool {
    match &state.cursor {
        Cursor::Shop(super::ShopCursor::Purchased { product_idx }) => {
            let catalog =
                super::ShopCatalog::generate(&state.task, state.seed, &ctx.config.shop);
            match catalog.products.get(*product_idx as usize) {
                Some(p) => p.attributes == state.task.target_attributes,
                None => false,
            }
        }
        Cursor::Shop(_) => false,
        Cursor::Book(cur) => {
            cur.submitted
                && judged_keys(&state.task).iter().all(|k| {
                    cur.fields.get(*k) == state.task.target_attributes.get(*k)
                })
        }
    }
}

/// Observation-side judge: 1 iff the final page is a confirmation whose
/// read-out satisfies every judged target attribute. Anything that is not
/// a confirmation page (ran out of time, never submitted, empty episode)
/// is a failure, not an error.
pub fn judge_outcome(task: &TaskSpec, final_obs: &Observation) -> u8 {
    if final_obs.page_id != "confirmation" {
        return 0;
    }
    let prefix = match task.world {
        World::Shop => "attr_",
        World::Book => "booked_",
    };
    for key in judged_keys(task) {
        let want = &task.target_attributes[key];
        let got = final_obs
            .element(&format!("{prefix}{key}"))
            .and_then(|el| el.label.split_once('=').map(|(_, v)| v.to_string()));
        if got.as_deref() != Some(want.as_str()) {
            return 0;
        }
    }
    1
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        afforded_commands, generate_task_set, ElementRole, Env, EnvConfig, InteractiveElement,
        ObservationKind,
    };
    use crate::util::rng_from;
    use rand::Rng;

    fn confirmation(task: &TaskSpec, fields: &[(&str, &str)]) -> Observation {
        let mut elements = vec![InteractiveElement::new(
            "banner_confirmed",
            ElementRole::Button,
            "reservation confirmed",
        )];
        for (k, v) in fields {
            elements.push(InteractiveElement::new(
                &format!("booked_{k}"),
                ElementRole::Button,
                format!("{k}={v}"),
            ));
        }
        Observation {
            kind: ObservationKind::Page,
            text: "reservation confirmed".to_string(),
            page_id: "confirmation".to_string(),
            elements,
            task_id: task.task_id.clone(),
        }
    }

    #[test]
    fn test_book_judges_details_but_not_restaurant_or_seating() {
        let task = generate_task_set(World::Book, 1, 7, &EnvConfig::default())[0].clone();
        let keys = judged_keys(&task);
        assert!(keys.contains(&"date") && keys.contains(&"contact_email"));
        assert!(!keys.contains(&"restaurant") && !keys.contains(&"seating"));

        let t = &task.target_attributes;
        let mut fields: Vec<(&str, &str)> = keys
            .iter()
            .map(|k| (*k, t[*k].as_str()))
            .collect();
        // A different restaurant and no seating at all still pass: only
        // the listed detail keys are the user's actual requirements.
        fields.push(("restaurant", "some other place"));
        assert_eq!(judge_outcome(&task, &confirmation(&task, &fields)), 1);

        let mut wrong = fields.clone();
        wrong[0] = (wrong[0].0, "not what was asked");
        assert_eq!(judge_outcome(&task, &confirmation(&task, &wrong)), 0);

        let missing: Vec<(&str, &str)> = fields[1..].to_vec();
        assert_eq!(judge_outcome(&task, &confirmation(&task, &missing)), 0);
    }

    #[test]
    fn test_non_confirmation_pages_fail_without_error() {
        let task = generate_task_set(World::Shop, 1, 7, &EnvConfig::default())[0].clone();
        let obs = Observation {
            kind: ObservationKind::Page,
            text: "results".to_string(),
            page_id: "results:0".to_string(),
            elements: vec![InteractiveElement::new("back", ElementRole::Link, "back")],
            task_id: task.task_id.clone(),
        };
        assert_eq!(judge_outcome(&task, &obs), 0);
    }

    #[test]
    fn test_malformed_readouts_fail() {
        let task = generate_task_set(World::Book, 1, 9, &EnvConfig::default())[0].clone();
        let t = &task.target_attributes;
        let mut obs = confirmation(
            &task,
            &judged_keys(&task)
                .iter()
                .map(|k| (*k, t[*k].as_str()))
                .collect::<Vec<_>>(),
        );
        for el in &mut obs.elements {
            if el.element_id == "booked_date" {
                el.label = "date readout with no separator".to_string();
            }
        }
        assert_eq!(judge_outcome(&task, &obs), 0);
    }

    /// Both judging routes, state-side and observation-side, must agree on
    /// every terminal state a random walker can reach.
    #[test]
    fn test_judging_routes_agree_on_random_walks() {
        let env = Env::new(EnvConfig::default());
        let mut rng = rng_from(77, "judge-walks");
        let mut terminals = 0;
        for world in [World::Shop, World::Book] {
            for (i, task) in generate_task_set(world, 12, 13, &env.config).iter().enumerate() {
                let (mut state, mut obs) = env.reset(world, task, i as u64).unwrap();
                while !state.terminal {
                    let cmds = afforded_commands(task, &obs);
                    let cmd = &cmds[rng.gen_range(0..cmds.len())];
                    let out = env.step(&state, cmd).unwrap();
                    state = out.state;
                    obs = out.observation;
                    assert_eq!(
                        judge_outcome(task, &obs) == 1,
                        state.terminal && env.success(&state),
                        "routes disagree after {cmd} on {}",
                        task.task_id
                    );
                }
                terminals += 1;
            }
        }
        assert_eq!(terminals, 24, "every walk ends within the horizon");
    }
}
