//! Deterministic task generation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use super::{book, shop, EnvConfig, TaskSpec, World};
use crate::util::derive_seed;

const CONTACTS: &[(&str, &str)] = &[
    ("ada lovelace", "555-0142"),
    ("grace hopper", "555-0117"),
    ("alan turing", "555-0131"),
    ("edith clarke", "555-0163"),
    ("mary jackson", "555-0195"),
    ("george boole", "555-0178"),
];

/// Generates `count` tasks for a world. The same (world, count, seed,
/// config) always yields the same list, and task ids are unique within it,
/// so a train/eval split by index range is disjoint by construction.
pub fn generate_task_set(world: World, count: u32, seed: u64, cfg: &EnvConfig) -> Vec<TaskSpec> {
    (0..count)
        .map(|i| {
            let task_id = format!("{}-{seed:08x}-{i:05}", world.name());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &task_id));
            match world {
                World::Shop => shop_task(task_id, &mut rng),
                World::Book => book_task(task_id, &mut rng, cfg),
            }
        })
        .collect()
}

fn shop_task(task_id: String, rng: &mut ChaCha8Rng) -> TaskSpec {
    let category = *shop::CATEGORIES.choose(rng).unwrap();
    let color = *shop::COLORS.choose(rng).unwrap();
    let material = *shop::MATERIALS.choose(rng).unwrap();
    let mut attrs = BTreeMap::new();
    attrs.insert("category".to_string(), category.to_string());
    attrs.insert("color".to_string(), color.to_string());
    attrs.insert("material".to_string(), material.to_string());
    TaskSpec {
        task_id,
        world: World::Shop,
        goal_text: format!("find and buy a {color} {material} {category}"),
        target_attributes: attrs,
    }
}

fn book_task(task_id: String, rng: &mut ChaCha8Rng, cfg: &EnvConfig) -> TaskSpec {
    let bc = &cfg.book;
    let restaurant = *book::RESTAURANTS.choose(rng).unwrap();
    let date = *book::DATES[..bc.n_dates.max(1) as usize].choose(rng).unwrap();
    let time = *book::TIMES[..bc.n_times.max(1) as usize].choose(rng).unwrap();
    let party = *book::PARTIES[..bc.n_parties.max(1) as usize].choose(rng).unwrap();
    let seat = *book::SEATS[..bc.n_seats.max(1) as usize].choose(rng).unwrap();
    let (name, phone) = CONTACTS[rng.gen_range(0..CONTACTS.len())];
    let email = format!("{}@example.com", name.split(' ').next().unwrap());

    let mut attrs = BTreeMap::new();
    attrs.insert("restaurant".to_string(), restaurant.to_string());
    attrs.insert("date".to_string(), date.to_string());
    attrs.insert("time".to_string(), time.to_string());
    if bc.include_party {
        attrs.insert("party_size".to_string(), party.to_string());
    }
    if bc.include_seating {
        attrs.insert("seating".to_string(), seat.to_string());
    }
    attrs.insert("contact_name".to_string(), name.to_string());
    if bc.contact_fields >= 3 {
        attrs.insert("contact_email".to_string(), email.clone());
        attrs.insert("contact_phone".to_string(), phone.to_string());
    }

    let goal_text = if bc.include_party {
        format!(
            "book a table at {restaurant} for {party} on {date} at {time}, {seat} seating, contact {name} ({email}, {phone})"
        )
    } else {
        format!("book a table at {restaurant} on {date} at {time}, contact {name}")
    };
    TaskSpec {
        task_id,
        world: World::Book,
        goal_text,
        target_attributes: attrs,
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::BookConfig;
    use std::collections::HashSet;

    #[test]
    fn test_task_sets_are_deterministic_with_unique_ids() {
        let cfg = EnvConfig::default();
        for world in [World::Shop, World::Book] {
            let a = generate_task_set(world, 20, 42, &cfg);
            let b = generate_task_set(world, 20, 42, &cfg);
            assert_eq!(a, b);
            let ids: HashSet<&str> = a.iter().map(|t| t.task_id.as_str()).collect();
            assert_eq!(ids.len(), 20);
            for t in &a {
                t.validate().unwrap();
            }
            let c = generate_task_set(world, 20, 43, &cfg);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn test_longer_sets_extend_shorter_ones() {
        // Index-range splits of one seed are disjoint and stable: task i
        // depends only on (world, seed, i).
        let cfg = EnvConfig::default();
        let short = generate_task_set(World::Shop, 5, 42, &cfg);
        let long = generate_task_set(World::Shop, 20, 42, &cfg);
        assert_eq!(short[..], long[..5]);
    }

    #[test]
    fn test_book_tasks_respect_config_toggles() {
        let full = EnvConfig::default();
        for t in generate_task_set(World::Book, 8, 3, &full) {
            let a = &t.target_attributes;
            assert!(a.contains_key("party_size") && a.contains_key("seating"));
            assert!(a.contains_key("contact_email") && a.contains_key("contact_phone"));
            let name = a["contact_name"].split(' ').next().unwrap();
            assert_eq!(a["contact_email"], format!("{name}@example.com"));
        }

        let mut reduced = EnvConfig::default();
        reduced.book = BookConfig::reduced();
        for t in generate_task_set(World::Book, 8, 3, &reduced) {
            let a = &t.target_attributes;
            assert!(!a.contains_key("party_size") && !a.contains_key("seating"));
            assert!(!a.contains_key("contact_email") && !a.contains_key("contact_phone"));
            assert!(a.contains_key("contact_name"));
        }
    }

    #[test]
    fn test_book_targets_stay_within_configured_option_pools() {
        let mut cfg = EnvConfig::default();
        cfg.book.n_dates = 2;
        cfg.book.n_times = 2;
        for t in generate_task_set(World::Book, 10, 5, &cfg) {
            let a = &t.target_attributes;
            assert!(book::DATES[..2].contains(&a["date"].as_str()));
            assert!(book::TIMES[..2].contains(&a["time"].as_str()));
        }
    }
}
