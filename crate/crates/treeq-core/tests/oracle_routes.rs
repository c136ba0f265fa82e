//! The oracle has two independent routes to every optimal value: a
//! closed-form minimum-steps analysis per world and blind exhaustive search
//! over the real transition function. These tests hold the routes equal on
//! enumerable configurations and spot-check the closed form on full-size
//! ones, so the fast route used by the critic is never trusted on faith.

use std::cell::RefCell;
use std::collections::HashMap;

use proptest::prelude::*;
use rand::Rng as _;
use treeq_core::agent::{rollout, AgentHistory, RolloutMode, ScriptKind, ScriptedPolicy};
use treeq_core::env::{
    generate_task_set, BookConfig, Env, EnvConfig, EnvState, ShopConfig, World,
};
use treeq_core::oracle::{
    min_solution_length, min_steps_bfs, min_steps_to_success, optimal_value, solve_exact,
    uniform_success_probability, ENUMERATION_LIMIT,
};
use treeq_core::util::rng_from;

fn small_shop_env(page_size: u32, catalog: u32, p_deep: f64) -> Env {
    Env::new(EnvConfig {
        shop: ShopConfig {
            page_size,
            catalog_size: catalog,
            max_pages: 3,
            p_deep,
            horizon: 12,
        },
        book: BookConfig::reduced(),
    })
}

fn reduced_book_env() -> Env {
    Env::new(EnvConfig {
        shop: ShopConfig::default(),
        book: BookConfig::reduced(),
    })
}

// ---------------------------------------------------------------------------
// Route equality from the root
// ---------------------------------------------------------------------------

#[test]
fn test_shop_closed_form_equals_bfs_from_root() {
    let env = small_shop_env(3, 8, 0.7);
    let tasks = generate_task_set(World::Shop, 12, 41, &env.config);
    for task in &tasks {
        let (state, _) = env.reset(World::Shop, task, 5).unwrap();
        let closed = min_steps_to_success(&env, &state);
        let blind = min_steps_bfs(&env, &state, ENUMERATION_LIMIT).unwrap();
        let budget = env.horizon(World::Shop);
        let expected = closed.filter(|&n| n <= budget);
        assert_eq!(blind, expected, "task {}", task.task_id);
    }
}

#[test]
fn test_book_closed_form_equals_bfs_from_root() {
    let env = reduced_book_env();
    let tasks = generate_task_set(World::Book, 8, 43, &env.config);
    for task in &tasks {
        let (state, _) = env.reset(World::Book, task, 5).unwrap();
        let closed = min_steps_to_success(&env, &state);
        let blind = min_steps_bfs(&env, &state, ENUMERATION_LIMIT).unwrap();
        let budget = env.horizon(World::Book);
        let expected = closed.filter(|&n| n <= budget);
        assert_eq!(blind, expected, "task {}", task.task_id);
    }
}

// ---------------------------------------------------------------------------
// Route equality on interior states reached by real play
// ---------------------------------------------------------------------------

fn interior_states(env: &Env, world: World, kind: ScriptKind, task_seed: u64) -> Vec<EnvState> {
    let tasks = generate_task_set(world, 4, task_seed, &env.config);
    let policy = ScriptedPolicy::new(kind);
    let mut states = Vec::new();
    for task in &tasks {
        let (state, obs) = env.reset(world, task, 5).unwrap();
        states.push(state.clone());
        let history = AgentHistory::new(task.clone(), obs);
        let mut rng = rng_from(1, &task.task_id);
        let traj = rollout(
            env,
            &state,
            &history,
            &policy,
            RolloutMode::Greedy,
            env.horizon(world),
            &mut rng,
        )
        .unwrap();
        let mut s = state;
        for step in &traj.steps {
            let out = env.step(&s, &step.action.env_cmd).unwrap();
            s = out.state;
            states.push(s.clone());
        }
    }
    states
}

#[test]
fn test_shop_routes_agree_along_played_paths() {
    let env = small_shop_env(3, 8, 0.7);
    // The greedy script wanders off the optimal path, giving interior
    // states where backing out actually matters.
    for kind in [ScriptKind::ShopOptimal, ScriptKind::ShopGreedyFirstPage] {
        for state in interior_states(&env, World::Shop, kind, 47) {
            let closed = min_steps_to_success(&env, &state);
            let blind = min_steps_bfs(&env, &state, ENUMERATION_LIMIT).unwrap();
            let budget = env
                .horizon(World::Shop)
                .saturating_sub(state.step_count);
            let expected = closed.filter(|&n| n <= budget);
            assert_eq!(blind, expected, "cursor {:?}", state.cursor);
        }
    }
}

#[test]
fn test_book_routes_agree_along_played_paths() {
    let env = reduced_book_env();
    for state in interior_states(&env, World::Book, ScriptKind::BookOptimal, 53) {
        let closed = min_steps_to_success(&env, &state);
        let blind = min_steps_bfs(&env, &state, ENUMERATION_LIMIT).unwrap();
        let budget = env.horizon(World::Book).saturating_sub(state.step_count);
        let expected = closed.filter(|&n| n <= budget);
        assert_eq!(blind, expected, "cursor {:?}", state.cursor);
    }
}

// ---------------------------------------------------------------------------
// Exhaustive solve agrees with the closed-form value
// ---------------------------------------------------------------------------

#[test]
fn test_solve_exact_matches_closed_form_values_shop() {
    let env = small_shop_env(3, 8, 0.7);
    let tasks = generate_task_set(World::Shop, 3, 59, &env.config);
    for task in &tasks {
        let solution = solve_exact(&env, task, 5, ENUMERATION_LIMIT).unwrap();
        assert_eq!(solution.value_at_root(&env, task, 5).unwrap(), 1.0);
        assert!(!solution.states.is_empty());
    }
}

#[test]
fn test_solve_exact_matches_closed_form_values_book() {
    let env = reduced_book_env();
    let tasks = generate_task_set(World::Book, 2, 61, &env.config);
    let memo = RefCell::new(HashMap::new());
    for task in &tasks {
        let solution = solve_exact(&env, task, 5, ENUMERATION_LIMIT).unwrap();
        let (root, _) = env.reset(World::Book, task, 5).unwrap();
        let v_closed = optimal_value(&env, &root, &memo).unwrap();
        assert_eq!(solution.value_at_root(&env, task, 5).unwrap(), v_closed);
    }
}

// ---------------------------------------------------------------------------
// Full-size configurations
// ---------------------------------------------------------------------------

#[test]
fn test_default_book_min_solution_is_thirteen_steps() {
    // search + restaurant + (2 picks + continue) + (1 + continue) +
    // (1 + continue) + (3 fields + submit) = 13 under the default config.
    let env = Env::new(EnvConfig::default());
    let tasks = generate_task_set(World::Book, 10, 67, &env.config);
    for task in &tasks {
        assert_eq!(min_solution_length(&env, task, 5).unwrap(), Some(13));
    }
}

#[test]
fn test_default_shop_min_solution_spans_pagination_depths() {
    let env = Env::new(EnvConfig::default());
    let tasks = generate_task_set(World::Shop, 40, 71, &env.config);
    let mut lengths: Vec<u32> = Vec::new();
    for task in &tasks {
        let n = min_solution_length(&env, task, 5).unwrap().unwrap();
        assert!((3..=7).contains(&n), "min {n} outside pagination range");
        lengths.push(n);
    }
    // With p_deep = 0.7 both shallow (3) and deep (>= 4) targets occur.
    assert!(lengths.iter().any(|&n| n == 3));
    assert!(lengths.iter().any(|&n| n >= 4));
}

#[test]
fn test_optimal_scripts_realize_the_closed_form_minimum() {
    // The optimal scripts do not just succeed; on first-page targets they
    // succeed in exactly the closed-form minimum number of steps.
    let env = small_shop_env(3, 8, 0.0);
    let tasks = generate_task_set(World::Shop, 6, 73, &env.config);
    let policy = ScriptedPolicy::new(ScriptKind::ShopOptimal);
    for task in &tasks {
        let (state, obs) = env.reset(World::Shop, task, 5).unwrap();
        let need = min_steps_to_success(&env, &state).unwrap();
        let history = AgentHistory::new(task.clone(), obs);
        let mut rng = rng_from(2, &task.task_id);
        let traj = rollout(
            &env,
            &state,
            &history,
            &policy,
            RolloutMode::Greedy,
            env.horizon(World::Shop),
            &mut rng,
        )
        .unwrap();
        assert_eq!(traj.terminal_reward, 1);
        assert_eq!(traj.total_steps, need, "task {}", task.task_id);
    }
}

#[test]
fn test_uniform_policy_struggles_on_reduced_book() {
    let env = reduced_book_env();
    let tasks = generate_task_set(World::Book, 3, 79, &env.config);
    for task in &tasks {
        let p = uniform_success_probability(&env, task, 5, ENUMERATION_LIMIT).unwrap();
        assert!(p > 0.0, "uniform play can always stumble into success");
        assert!(p < 0.05, "uniform success {p} suspiciously high");
    }
}

// ---------------------------------------------------------------------------
// Property tests: random small configurations, random play prefixes
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_shop_routes_agree_after_random_play(
        page_size in 2u32..4,
        catalog in 6u32..10,
        deep in proptest::bool::ANY,
        task_seed in 0u64..1000,
        walk_seed in 0u64..1000,
        walk_len in 0usize..6,
    ) {
        let env = small_shop_env(page_size, catalog, if deep { 1.0 } else { 0.0 });
        let task = &generate_task_set(World::Shop, 1, task_seed, &env.config)[0];
        let (mut state, _) = env.reset(World::Shop, task, 5).unwrap();
        let mut rng = rng_from(walk_seed, "walk");
        for _ in 0..walk_len {
            if state.terminal {
                break;
            }
            let obs = env.observe(&state).unwrap();
            let cmds = treeq_core::env::afforded_commands(&task, &obs);
            let cmd = &cmds[rng.gen_range(0..cmds.len())];
            state = env.step(&state, cmd).unwrap().state;
        }
        if !state.terminal {
            let closed = min_steps_to_success(&env, &state);
            let blind = min_steps_bfs(&env, &state, ENUMERATION_LIMIT).unwrap();
            let budget = env.horizon(World::Shop).saturating_sub(state.step_count);
            prop_assert_eq!(blind, closed.filter(|&n| n <= budget));
        }
    }

    #[test]
    fn prop_book_routes_agree_after_random_play(
        task_seed in 0u64..1000,
        walk_seed in 0u64..1000,
        walk_len in 0usize..8,
    ) {
        let env = reduced_book_env();
        let task = &generate_task_set(World::Book, 1, task_seed, &env.config)[0];
        let (mut state, _) = env.reset(World::Book, task, 5).unwrap();
        let mut rng = rng_from(walk_seed, "walk");
        for _ in 0..walk_len {
            if state.terminal {
                break;
            }
            let obs = env.observe(&state).unwrap();
            let cmds = treeq_core::env::afforded_commands(&task, &obs);
            let cmd = &cmds[rng.gen_range(0..cmds.len())];
            state = env.step(&state, cmd).unwrap().state;
        }
        if !state.terminal {
            let closed = min_steps_to_success(&env, &state);
            let blind = min_steps_bfs(&env, &state, ENUMERATION_LIMIT).unwrap();
            let budget = env.horizon(World::Book).saturating_sub(state.step_count);
            prop_assert_eq!(blind, closed.filter(|&n| n <= budget));
        }
    }
}
