//! Monte Carlo tree search over environment snapshots.
//!
//! Nodes store the agent history and a full environment snapshot, so
//! revisiting a node restores the simulator instead of replaying a prefix.
//! Edges keep integer visit and success counts; the empirical action value
//! is their exact ratio, which keeps "mean of replayed rewards" equal to
//! the stored value bit-for-bit rather than approximately.
//!
//! One iteration: descend by UCB (critic's top pick while a node has no
//! visited child), materialize one new child, roll the policy out to a
//! terminal state, then push the terminal reward back up the path.

use serde::{Deserialize, Serialize};

use crate::agent::{
    propose_actions, rollout, AgentHistory, CompositeAction, Policy, RolloutMode, TrajStep,
    Trajectory,
};
use crate::critic::{rank_actions, Critic};
use crate::env::{Env, EnvState, TaskSpec};
use crate::error::{Error, Result};
use crate::util::rng_from;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Candidate actions proposed per expansion.
    pub k: usize,
    /// UCB exploration constant.
    pub c_exp: f64,
    /// Search iterations per task; each adds one rollout.
    pub rollouts_per_task: u32,
    /// Maximum tree depth; rollouts continue past it to terminal.
    pub max_depth: u32,
    /// Weight on the empirical value when mixing with the critic value.
    pub alpha: f64,
    /// Duplicate proposal draws tolerated per expansion.
    pub retry_budget: u32,
    /// Score selection with the critic-mixed value instead of the pure
    /// empirical mean. Off by default: selection explores on observed
    /// returns, and critic guidance enters through expansion order and
    /// pair construction.
    pub ucb_mixed_q: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: 5,
            c_exp: std::f64::consts::SQRT_2,
            rollouts_per_task: 24,
            max_depth: 64,
            alpha: 0.5,
            retry_budget: 8,
            ucb_mixed_q: false,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("k must be >= 2, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.c_exp < 0.0 || !self.c_exp.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "c_exp must be non-negative, got {}",
                self.c_exp
            )));
        }
        if self.rollouts_per_task == 0 {
            return Err(Error::InvalidArgument("rollouts_per_task must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tree
// ---------------------------------------------------------------------------

pub type NodeId = usize;

/// An action edge out of a node. `n` and `successes` are integers so the
/// empirical mean is an exact ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildEdge {
    pub action: CompositeAction,
    /// Critic value from expansion-time ranking, in [0, 1].
    pub qhat: f64,
    pub n: u32,
    pub successes: u32,
    pub child: Option<NodeId>,
}

impl ChildEdge {
    /// Empirical action value: mean terminal reward of rollouts through
    /// this edge. Zero until first visited.
    pub fn q_emp(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.successes as f64 / self.n as f64
        }
    }

    /// Critic-mixed value used for preference construction.
    pub fn mixed_q(&self, alpha: f64) -> f64 {
        alpha * self.q_emp() + (1.0 - alpha) * self.qhat
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<(NodeId, usize)>,
    pub depth: u32,
    pub history: AgentHistory,
    pub env_snapshot: EnvState,
    pub children: Vec<ChildEdge>,
    pub expanded: bool,
    /// Sum of child edge visits; the N(h) in UCB.
    pub visit_count: u32,
    pub terminal: bool,
    pub terminal_reward: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchTree {
    pub schema_version: u32,
    pub task: TaskSpec,
    pub nodes: Vec<TreeNode>,
    pub root: NodeId,
}

impl SearchTree {
    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    /// Tree-wide bookkeeping invariants; cheap enough to assert in tests
    /// after every search.
    pub fn check_consistency(&self) -> Result<()> {
        for node in &self.nodes {
            let sum: u32 = node.children.iter().map(|e| e.n).sum();
            if sum != node.visit_count {
                return Err(Error::Tree(format!(
                    "node {} visit_count {} != sum of child visits {sum}",
                    node.id, node.visit_count
                )));
            }
            for edge in &node.children {
                if edge.successes > edge.n {
                    return Err(Error::Tree(format!(
                        "node {} edge '{}' has {} successes over {} visits",
                        node.id,
                        edge.action.env_cmd.canonical(),
                        edge.successes,
                        edge.n
                    )));
                }
                if !(0.0..=1.0).contains(&edge.qhat) {
                    return Err(Error::Tree(format!(
                        "node {} edge qhat {} outside [0, 1]",
                        node.id, edge.qhat
                    )));
                }
                if let Some(child) = edge.child {
                    if self.nodes.get(child).is_none() {
                        return Err(Error::Tree(format!("dangling child id {child}")));
                    }
                }
            }
        }
        // Parent pointers match the edges that claim the child.
        for node in &self.nodes {
            if let Some((pid, edge_idx)) = node.parent {
                let parent = self
                    .nodes
                    .get(pid)
                    .ok_or_else(|| Error::Tree(format!("dangling parent id {pid}")))?;
                match parent.children.get(edge_idx) {
                    Some(edge) if edge.child == Some(node.id) => {}
                    _ => {
                        return Err(Error::Tree(format!(
                            "node {} parent edge ({pid}, {edge_idx}) does not point back",
                            node.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

/// UCB over visited statistics: q_emp + c * sqrt(ln N(h) / (1 + n(h,a))).
/// Requires an expanded node with at least one visit recorded; ties break
/// to the lowest index. With `ucb_mixed_q` the exploitation term is the
/// critic-mixed value instead of the pure empirical mean.
pub fn select_child(node: &TreeNode, cfg: &SearchConfig) -> Result<usize> {
    if !node.expanded || node.children.is_empty() {
        return Err(Error::Tree(format!("select_child on unexpanded node {}", node.id)));
    }
    if node.visit_count == 0 {
        return Err(Error::Tree(format!(
            "select_child on node {} with no visited children",
            node.id
        )));
    }
    let ln_n = (node.visit_count as f64).ln();
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, edge) in node.children.iter().enumerate() {
        let exploit = if cfg.ucb_mixed_q {
            edge.mixed_q(cfg.alpha)
        } else {
            edge.q_emp()
        };
        let score = exploit + cfg.c_exp * (ln_n / (1.0 + edge.n as f64)).sqrt();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(best)
}

/// Selection at a node none of whose children has been visited: the
/// critic's top-ranked child (highest qhat, lowest index on ties).
pub fn first_selection(node: &TreeNode) -> Result<usize> {
    if !node.expanded || node.children.is_empty() {
        return Err(Error::Tree(format!("first_selection on unexpanded node {}", node.id)));
    }
    if node.visit_count != 0 {
        return Err(Error::Tree(format!(
            "first_selection on node {} that already has visits",
            node.id
        )));
    }
    let mut best = 0usize;
    for (i, edge) in node.children.iter().enumerate().skip(1) {
        if edge.qhat > node.children[best].qhat {
            best = i;
        }
    }
    Ok(best)
}

/// Adds the terminal reward of one rollout to every edge along `path`,
/// bottom-up, and bumps the matching node counters.
pub fn backpropagate(tree: &mut SearchTree, path: &[(NodeId, usize)], reward: u8) -> Result<()> {
    for &(node_id, edge_idx) in path.iter().rev() {
        let node = tree
            .nodes
            .get_mut(node_id)
            .ok_or_else(|| Error::Tree(format!("backpropagate through missing node {node_id}")))?;
        let edge = node
            .children
            .get_mut(edge_idx)
            .ok_or_else(|| Error::Tree(format!("node {node_id} has no edge {edge_idx}")))?;
        edge.n += 1;
        edge.successes += reward as u32;
        node.visit_count += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Search driver
// ---------------------------------------------------------------------------

/// A stored rollout: the complete trajectory (tree prefix plus rollout
/// tail) and the tree path whose statistics it fed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub trajectory: Trajectory,
    pub tree_path: Vec<(NodeId, usize)>,
}

pub struct SearchOutcome {
    pub tree: SearchTree,
    pub rollouts: Vec<RolloutRecord>,
}

/// Expands a leaf in place: proposes up to k actions, ranks them with the
/// critic, and installs one edge per proposal with its critic value. With
/// a single distinct proposal the lone edge takes value 1.
fn expand(
    node: &mut TreeNode,
    policy: &dyn Policy,
    critic: &dyn Critic,
    cfg: &SearchConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    if node.expanded {
        return Err(Error::Tree(format!("node {} is already expanded", node.id)));
    }
    if node.terminal {
        return Err(Error::Tree(format!("cannot expand terminal node {}", node.id)));
    }
    let actions = propose_actions(policy, &node.history, cfg.k, cfg.retry_budget, rng)?;
    let qhats: Vec<f64> = if actions.len() >= 2 {
        let ranking = rank_actions(critic, &node.history, &actions)?;
        (0..actions.len())
            .map(|i| ranking.value_of(i))
            .collect::<Result<_>>()?
    } else {
        vec![1.0]
    };
    node.children = actions
        .into_iter()
        .zip(qhats)
        .map(|(action, qhat)| ChildEdge {
            action,
            qhat,
            n: 0,
            successes: 0,
            child: None,
        })
        .collect();
    node.expanded = true;
    Ok(())
}

/// Runs MCTS for one task and returns the finished tree plus every stored
/// rollout. Deterministic in (env, task, policy, critic, cfg).
pub fn run_search(
    env: &Env,
    task: &TaskSpec,
    policy: &dyn Policy,
    critic: &dyn Critic,
    env_seed: u64,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed, &format!("search|{}", task.task_id));
    let (root_state, root_obs) = env.reset(task.world, task, env_seed)?;
    let root = TreeNode {
        id: 0,
        parent: None,
        depth: 0,
        history: AgentHistory::new(task.clone(), root_obs),
        env_snapshot: root_state,
        children: Vec::new(),
        expanded: false,
        visit_count: 0,
        terminal: false,
        terminal_reward: 0,
    };
    let mut tree = SearchTree {
        schema_version: 1,
        task: task.clone(),
        nodes: vec![root],
        root: 0,
    };
    let mut rollouts = Vec::with_capacity(cfg.rollouts_per_task as usize);

    for _ in 0..cfg.rollouts_per_task {
        let record = search_iteration(env, &mut tree, policy, critic, cfg, &mut rng)?;
        rollouts.push(record);
    }
    Ok(SearchOutcome { tree, rollouts })
}

fn search_iteration(
    env: &Env,
    tree: &mut SearchTree,
    policy: &dyn Policy,
    critic: &dyn Critic,
    cfg: &SearchConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<RolloutRecord> {
    let mut path: Vec<(NodeId, usize)> = Vec::new();
    let mut prefix: Vec<TrajStep> = Vec::new();
    let mut node_id = tree.root;

    loop {
        // Terminal node re-reached through the tree: its reward stands.
        if tree.nodes[node_id].terminal {
            let reward = tree.nodes[node_id].terminal_reward;
            backpropagate(tree, &path, reward)?;
            return Ok(finish_record(tree, node_id, path, prefix, None, reward));
        }

        // Depth cap: treat as a frontier node and roll out from here.
        if tree.nodes[node_id].depth >= cfg.max_depth {
            return rollout_from(env, tree, policy, node_id, path, prefix, rng);
        }

        if !tree.nodes[node_id].expanded {
            expand(&mut tree.nodes[node_id], policy, critic, cfg, rng)?;
        }

        let node = &tree.nodes[node_id];
        let edge_idx = if node.visit_count == 0 {
            first_selection(node)?
        } else {
            select_child(node, cfg)?
        };
        path.push((node_id, edge_idx));

        let edge = &tree.nodes[node_id].children[edge_idx];
        if let Some(child_id) = edge.child {
            let reward = if tree.nodes[child_id].terminal {
                tree.nodes[child_id].terminal_reward
            } else {
                0
            };
            prefix.push(TrajStep {
                history: tree.nodes[node_id].history.clone(),
                action: tree.nodes[node_id].children[edge_idx].action.clone(),
                reward,
            });
            node_id = child_id;
            continue;
        }

        // Materialize the child by stepping a snapshot clone.
        let action = tree.nodes[node_id].children[edge_idx].action.clone();
        let parent_state = tree.nodes[node_id].env_snapshot.clone();
        let outcome = env.step(&parent_state, &action.env_cmd)?;
        prefix.push(TrajStep {
            history: tree.nodes[node_id].history.clone(),
            action: action.clone(),
            reward: outcome.reward,
        });
        let child_id = tree.nodes.len();
        let child = TreeNode {
            id: child_id,
            parent: Some((node_id, edge_idx)),
            depth: tree.nodes[node_id].depth + 1,
            history: tree.nodes[node_id]
                .history
                .advance(action, outcome.observation.clone()),
            env_snapshot: outcome.state,
            children: Vec::new(),
            expanded: false,
            visit_count: 0,
            terminal: outcome.terminal,
            terminal_reward: outcome.reward,
        };
        tree.nodes.push(child);
        tree.nodes[node_id].children[edge_idx].child = Some(child_id);

        if outcome.terminal {
            backpropagate(tree, &path, outcome.reward)?;
            return Ok(finish_record(tree, child_id, path, prefix, None, outcome.reward));
        }
        return rollout_from(env, tree, policy, child_id, path, prefix, rng);
    }
}

fn rollout_from(
    env: &Env,
    tree: &mut SearchTree,
    policy: &dyn Policy,
    node_id: NodeId,
    path: Vec<(NodeId, usize)>,
    prefix: Vec<TrajStep>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<RolloutRecord> {
    let node = &tree.nodes[node_id];
    let horizon = env.horizon(node.env_snapshot.world);
    let budget = horizon.saturating_sub(node.env_snapshot.step_count);
    let tail = rollout(
        env,
        &node.env_snapshot,
        &node.history,
        policy,
        RolloutMode::Sample,
        budget,
        rng,
    )?;
    let reward = tail.terminal_reward;
    backpropagate(tree, &path, reward)?;
    Ok(finish_record(tree, node_id, path, prefix, Some(tail), reward))
}

fn finish_record(
    tree: &SearchTree,
    frontier: NodeId,
    path: Vec<(NodeId, usize)>,
    mut prefix: Vec<TrajStep>,
    tail: Option<Trajectory>,
    reward: u8,
) -> RolloutRecord {
    let (final_obs, terminal) = match &tail {
        Some(t) => {
            prefix.extend(t.steps.iter().cloned());
            (t.final_obs.clone(), t.terminal)
        }
        None => (tree.nodes[frontier].history.current_obs.clone(), tree.nodes[frontier].terminal),
    };
    RolloutRecord {
        trajectory: Trajectory {
            task: tree.task.clone(),
            total_steps: prefix.len() as u32,
            steps: prefix,
            final_obs,
            terminal,
            terminal_reward: reward,
        },
        tree_path: path,
    }
}

// ---------------------------------------------------------------------------
