//! Exact oracles: brute-force solutions, closed-form optima, and the
//! Bradley-Terry machinery the training claims are validated against.
//!
//! Both worlds are deterministic with binary terminal reward, so the
//! optimal value of a state is 1 exactly when success is still reachable
//! within the remaining step budget. That is computed two independent
//! ways: a closed-form minimum-steps analysis per world (fast, used by the
//! oracle critic on full-size configs) and blind exhaustive search over
//! the actual transition function (slow, used to certify the closed form
//! and to solve reduced configs outright). Tests hold the two routes
//! equal; neither is ever silently substituted for the other.

pub mod synth;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    afforded_commands, BookCursor, Cursor, Env, EnvState, ShopCursor, TaskSpec,
};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Default cap on distinct states any exhaustive pass may touch.
pub const ENUMERATION_LIMIT: usize = 2_000_000;

// ---------------------------------------------------------------------------
// Closed-form minimum steps to success
// ---------------------------------------------------------------------------

/// Fewest further steps that reach a successful terminal state, or `None`
/// when success is unreachable from here no matter the budget. This is the
/// closed-form route; `min_steps_bfs` is the blind route it is held equal
/// to in tests.
pub fn min_steps_to_success(env: &Env, state: &EnvState) -> Option<u32> {
    if state.terminal {
        return if env.success(state) { Some(0) } else { None };
    }
    match &state.cursor {
        Cursor::Shop(c) => shop_min_steps(env, state, c),
        Cursor::Book(c) => book_min_steps(env, state, c),
    }
}

fn shop_min_steps(env: &Env, state: &EnvState, cursor: &ShopCursor) -> Option<u32> {
    let cfg = &env.config.shop;
    let catalog = crate::env::ShopCatalog::generate(&state.task, state.seed, cfg);
    let target = &state.task.target_attributes;
    // Page index of the target product within a query's result list.
    let target_page = |query: &str| -> Option<u32> {
        catalog
            .query_results(query, cfg)
            .iter()
            .position(|p| &p.attributes == target)
            .map(|rank| rank as u32 / cfg.page_size.max(1))
    };
    let canonical = state.task.canonical_query();
    // search + paginate to the target page + click + buy
    let via_search = target_page(&canonical).map(|q| 1 + q + 2);

    // Paginate within the current result list (|page gap| + click + buy)
    // versus backing out to the landing page and re-searching.
    let from_results = |query: &str, page: u32| -> Option<u32> {
        let within = target_page(query).map(|q| page.abs_diff(q) + 2);
        min_opt(within, via_search.map(|s| s + 1))
    };

    match cursor {
        ShopCursor::Landing => via_search,
        ShopCursor::Results { query, page } => from_results(query, *page),
        ShopCursor::Item { query, page, product_idx } => {
            let product = catalog.products.get(*product_idx as usize)?;
            if &product.attributes == target {
                Some(1)
            } else {
                from_results(query, *page).map(|s| s + 1)
            }
        }
        // Non-terminal purchased states do not exist.
        ShopCursor::Purchased { .. } => None,
    }
}

fn book_min_steps(env: &Env, state: &EnvState, cursor: &BookCursor) -> Option<u32> {
    let cfg = &env.config.book;
    let stages = cfg.stages();
    let target = &state.task.target_attributes;
    let fields = &cursor.fields;
    // A key needs one action when the stage gate wants a value and none is
    // set, or when the judge checks it and the set value is wrong. A set
    // value for an unjudged key satisfies both.
    let needs_fix = |key: &str| -> bool {
        match (fields.get(key), target.get(key)) {
            (None, _) => true,
            (Some(v), Some(t)) => v != t,
            (Some(_), None) => false,
        }
    };

    // Fix-up actions needed at a stage.
    let fixes = |stage: &str| -> u32 {
        match stage {
            "datetime" => needs_fix("date") as u32 + needs_fix("time") as u32,
            "party" => needs_fix("party_size") as u32,
            "seating" => needs_fix("seating") as u32,
            "contact" => cfg
                .contact_field_names()
                .iter()
                .filter(|f| needs_fix(&format!("contact_{f}")))
                .count() as u32,
            _ => 0,
        }
    };

    // Earliest stage at or before the current one that still needs a fix;
    // going further back than that never pays because selections persist.
    let cur = cursor.stage as usize;
    let start = (0..=cur)
        .find(|&si| si < stages.len() && fixes(stages[si]) > 0)
        .unwrap_or(cur);

    let mut steps = (cur - start) as u32; // back clicks
    for (si, stage) in stages.iter().enumerate().skip(start) {
        debug_assert!(si < stages.len());
        // Each stage costs its fixes plus one advancing action (search,
        // restaurant click, continue, or the final submit).
        steps += fixes(stage) + 1;
    }
    Some(steps)
}

fn min_opt(a: Option<u32>, b: Option<u32>) -> Option<u32> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Optimal state value under the remaining budget: 1.0 iff success is
/// still reachable in the steps left. Memoized by full state key.
pub fn optimal_value(
    env: &Env,
    state: &EnvState,
    memo: &RefCell<HashMap<String, f64>>,
) -> Result<f64> {
    let key = state.state_key();
    if let Some(&v) = memo.borrow().get(&key) {
        return Ok(v);
    }
    let budget = env.horizon(state.world).saturating_sub(state.step_count);
    let v = match min_steps_to_success(env, state) {
        Some(need) if need <= budget => 1.0,
        _ => 0.0,
    };
    memo.borrow_mut().insert(key, v);
    Ok(v)
}

// ---------------------------------------------------------------------------
// Blind search routes
// ---------------------------------------------------------------------------

/// Minimum steps to success by breadth-first search over the real
/// transition function, deduplicating on cursor identity. Depth is capped
/// by the remaining horizon. Independent of the closed form above.
pub fn min_steps_bfs(env: &Env, state: &EnvState, limit: usize) -> Result<Option<u32>> {
    if state.terminal {
        return Ok(if env.success(state) { Some(0) } else { None });
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut queue: VecDeque<(EnvState, u32)> = VecDeque::new();
    seen.insert(state.cursor_key());
    queue.push_back((state.clone(), 0));

    while let Some((s, depth)) = queue.pop_front() {
        if seen.len() > limit {
            return Err(Error::EnumerationLimit { limit });
        }
        let obs = env.observe(&s)?;
        for cmd in afforded_commands(&s.task, &obs) {
            let out = env.step(&s, &cmd)?;
            if out.terminal {
                if out.reward == 1 {
                    return Ok(Some(depth + 1));
                }
                continue;
            }
            let key = out.state.cursor_key();
            if seen.insert(key) {
                queue.push_back((out.state, depth + 1));
            }
        }
    }
    Ok(None)
}

/// Minimum solution length for a task from reset.
pub fn min_solution_length(env: &Env, task: &TaskSpec, seed: u64) -> Result<Option<u32>> {
    let (state, _) = env.reset(task.world, task, seed)?;
    let budget = env.horizon(task.world);
    Ok(match min_steps_to_success(env, &state) {
        Some(n) if n <= budget => Some(n),
        _ => None,
    })
}

// ---------------------------------------------------------------------------
// Exhaustive solve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSolution {
    pub v: f64,
    /// Q*(s, a) keyed by canonical command, in afforded order.
    pub q: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactSolution {
    pub task_id: String,
    pub states: BTreeMap<String, StateSolution>,
}

impl ExactSolution {
    pub fn value_at_root(&self, env: &Env, task: &TaskSpec, seed: u64) -> Result<f64> {
        let (state, _) = env.reset(task.world, task, seed)?;
        self.states
            .get(&state.state_key())
            .map(|s| s.v)
            .ok_or_else(|| Error::MissingData("root state missing from solution".into()))
    }
}

/// Exhaustive optimal Q for every state reachable from reset, by blind
/// recursion over the transition function. No world analysis is consulted;
/// this is the reference the closed form is checked against. Errors when
/// the reachable space exceeds `limit`.
pub fn solve_exact(env: &Env, task: &TaskSpec, seed: u64, limit: usize) -> Result<ExactSolution> {
    let (root, _) = env.reset(task.world, task, seed)?;
    let mut memo: HashMap<String, f64> = HashMap::new();
    let mut states: BTreeMap<String, StateSolution> = BTreeMap::new();
    solve_state(env, &root, limit, &mut memo, &mut states)?;
    Ok(ExactSolution {
        task_id: task.task_id.clone(),
        states,
    })
}

fn solve_state(
    env: &Env,
    state: &EnvState,
    limit: usize,
    memo: &mut HashMap<String, f64>,
    states: &mut BTreeMap<String, StateSolution>,
) -> Result<f64> {
    let key = state.state_key();
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    if memo.len() >= limit {
        return Err(Error::EnumerationLimit { limit });
    }
    if state.terminal {
        let v = if env.success(state) { 1.0 } else { 0.0 };
        memo.insert(key, v);
        return Ok(v);
    }
    // Pre-insert to cut cycles; every command strictly increases
    // step_count, so recursion is finite regardless.
    memo.insert(key.clone(), 0.0);

    let obs = env.observe(state)?;
    let mut q: Vec<(String, f64)> = Vec::new();
    let mut v = 0.0f64;
    for cmd in afforded_commands(&state.task, &obs) {
        let out = env.step(state, &cmd)?;
        let qa = if out.terminal {
            out.reward as f64
        } else {
            solve_state(env, &out.state, limit, memo, states)?
        };
        v = v.max(qa);
        q.push((cmd.canonical(), qa));
    }
    memo.insert(key.clone(), v);
    states.insert(key, StateSolution { v, q });
    Ok(v)
}

/// Success probability of the uniform-over-afforded-commands policy, by
/// exact expectation over the full reachable space.
pub fn uniform_success_probability(
    env: &Env,
    task: &TaskSpec,
    seed: u64,
    limit: usize,
) -> Result<f64> {
    let (root, _) = env.reset(task.world, task, seed)?;
    let mut memo: HashMap<String, f64> = HashMap::new();
    uniform_value(env, &root, limit, &mut memo)
}

fn uniform_value(
    env: &Env,
    state: &EnvState,
    limit: usize,
    memo: &mut HashMap<String, f64>,
) -> Result<f64> {
    let key = state.state_key();
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    if memo.len() >= limit {
        return Err(Error::EnumerationLimit { limit });
    }
    if state.terminal {
        let v = if env.success(state) { 1.0 } else { 0.0 };
        memo.insert(key, v);
        return Ok(v);
    }
    memo.insert(key.clone(), 0.0);
    let obs = env.observe(state)?;
    let cmds = afforded_commands(&state.task, &obs);
    let mut total = 0.0;
    for cmd in &cmds {
        let out = env.step(state, cmd)?;
        total += if out.terminal {
            out.reward as f64
        } else {
            uniform_value(env, &out.state, limit, memo)?
        };
    }
    let v = total / cmds.len() as f64;
    memo.insert(key, v);
    Ok(v)
}

// ---------------------------------------------------------------------------
// Closed-form preference optimum
// ---------------------------------------------------------------------------

/// The closed-form optimal policy for a preference objective with KL
/// anchor beta at one state: tilt the reference by exp(Q/beta) and
/// renormalize.
pub fn theorem1_policy(pi_ref: &[f64], q: &[f64], beta: f64) -> Result<Vec<f64>> {
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if pi_ref.len() != q.len() || pi_ref.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "pi_ref has {} entries, q has {}",
            pi_ref.len(),
            q.len()
        )));
    }
    let sum: f64 = pi_ref.iter().sum();
    if pi_ref.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(
            "pi_ref is not a probability distribution".into(),
        ));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("q contains non-finite values".into()));
    }
    // log-space for stability
    let logits: Vec<f64> = pi_ref
        .iter()
        .zip(q)
        .map(|(&p, &qv)| if p > 0.0 { p.ln() + qv / beta } else { f64::NEG_INFINITY })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::InvalidArgument("pi_ref assigns zero mass everywhere".into()));
    }
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / z).collect())
}

/// Pairwise preferences sampled from a Bradley-Terry model over action
/// values: pairs (i, j) drawn uniformly with i != j, and i wins with
/// probability sigmoid(q_i - q_j). Returns (winner, loser) index pairs.
pub fn sample_bradley_terry_prefs(q: &[f64], n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    assert!(q.len() >= 2, "need at least two actions");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bt-prefs"));
    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let i = rng.gen_range(0..q.len());
        let j = loop {
            let j = rng.gen_range(0..q.len());
            if j != i {
                break j;
            }
        };
        let p_i_wins = 1.0 / (1.0 + (-(q[i] - q[j])).exp());
        if rng.gen::<f64>() < p_i_wins {
            out.push((i, j));
        } else {
            out.push((j, i));
        }
    }
    out
}

/// Total variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "distributions have different supports: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

// ---------------------------------------------------------------------------
