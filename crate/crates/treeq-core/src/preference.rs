//! Preference construction from finished search trees, and the replay
//! buffer that training consumes.
//!
//! Step-level pairs come from sibling edges under the same node: both must
//! have been visited at least once, and their critic-mixed values must
//! differ by strictly more than the margin theta. The pair stores the
//! winner's and loser's generation-time likelihoods, so training later is
//! fully off-policy: no reference policy is re-evaluated.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentHistory, CompositeAction, Trajectory};
use crate::error::{Error, Result};
use crate::mcts::SearchTree;
use crate::util::{fnv1a64_str, rng_from};

// ---------------------------------------------------------------------------
// Step-level pairs
// ---------------------------------------------------------------------------

/// Where in a tree a pair came from; part of the pair's identity for
/// deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSource {
    pub task_id: String,
    pub node_id: usize,
    pub winner_edge: usize,
    pub loser_edge: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferencePair {
    pub history: AgentHistory,
    pub winner: CompositeAction,
    pub loser: CompositeAction,
    pub q_winner: f64,
    pub q_loser: f64,
    /// Generation-time joint log-likelihoods; the off-policy reference.
    pub ref_logp_winner: f64,
    pub ref_logp_loser: f64,
    pub source: PairSource,
}

impl PreferencePair {
    /// Stable identity for dedup across repeated builds of the same tree.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64_str(&format!(
            "{}|{}|{}|{}|{}|{}",
            self.source.task_id,
            self.source.node_id,
            self.source.winner_edge,
            self.source.loser_edge,
            self.winner.env_cmd.canonical(),
            self.loser.env_cmd.canonical(),
        ))
    }
}

/// Extracts step-level preference pairs from a finished tree.
///
/// For every node and every unordered pair of its edges where both sides
/// have at least one visit: mix each side's value as
/// alpha * q_emp + (1 - alpha) * qhat, and emit a pair only when the
/// values differ by strictly more than `theta`. Nodes are scanned in id
/// order and edges in index order, so output order is deterministic.
/// Building twice from the same tree yields identical output.
pub fn build_pairs(tree: &SearchTree, alpha: f64, theta: f64) -> Result<Vec<PreferencePair>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if theta < 0.0 || !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("theta must be non-negative, got {theta}")));
    }
    let mut out = Vec::new();
    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    for node in &tree.nodes {
        for i in 0..node.children.len() {
            for j in (i + 1)..node.children.len() {
                let (a, b) = (&node.children[i], &node.children[j]);
                if a.n == 0 || b.n == 0 {
                    continue;
                }
                let (qa, qb) = (a.mixed_q(alpha), b.mixed_q(alpha));
                if (qa - qb).abs() <= theta {
                    continue;
                }
                let (w, l, qw, ql) = if qa > qb { (i, j, qa, qb) } else { (j, i, qb, qa) };
                if !seen.insert((node.id, w, l)) {
                    continue;
                }
                let winner = &node.children[w];
                let loser = &node.children[l];
                out.push(PreferencePair {
                    history: node.history.clone(),
                    winner: winner.action.clone(),
                    loser: loser.action.clone(),
                    q_winner: qw,
                    q_loser: ql,
                    ref_logp_winner: winner.action.joint_logp(),
                    ref_logp_loser: loser.action.joint_logp(),
                    source: PairSource {
                        task_id: tree.task.task_id.clone(),
                        node_id: node.id,
                        winner_edge: w,
                        loser_edge: l,
                    },
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BufferEntry<T> {
    /// Training iteration of the policy that generated this item.
    pub policy_version: u32,
    pub item: T,
}

/// Accumulates pairs and trajectories across iterations. Pairs are
/// deduplicated by fingerprint; trajectories are kept as they come.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub pairs: Vec<BufferEntry<PreferencePair>>,
    pub trajectories: Vec<BufferEntry<Trajectory>>,
    #[serde(skip)]
    seen_pairs: HashSet<u64>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        ReplayBuffer::default()
    }

    /// Adds pairs, dropping any whose fingerprint is already present.
    /// Returns how many were kept.
    pub fn add_pairs(&mut self, pairs: Vec<PreferencePair>, policy_version: u32) -> usize {
        self.rebuild_seen();
        let mut kept = 0;
        for pair in pairs {
            if self.seen_pairs.insert(pair.fingerprint()) {
                self.pairs.push(BufferEntry { policy_version, item: pair });
                kept += 1;
            }
        }
        kept
    }

    pub fn add_trajectory(&mut self, traj: Trajectory, policy_version: u32) {
        self.trajectories.push(BufferEntry { policy_version, item: traj });
    }

    fn rebuild_seen(&mut self) {
        if self.seen_pairs.len() != self.pairs.len() {
            self.seen_pairs = self.pairs.iter().map(|e| e.item.fingerprint()).collect();
        }
    }

    // -- persistence: line-delimited JSON -----------------------------------

    pub fn save_jsonl(&self, pairs_path: &Path, trajs_path: &Path) -> Result<()> {
        write_jsonl(pairs_path, &self.pairs)?;
        write_jsonl(trajs_path, &self.trajectories)?;
        Ok(())
    }

    pub fn load_jsonl(pairs_path: &Path, trajs_path: &Path) -> Result<Self> {
        let mut buffer = ReplayBuffer {
            pairs: read_jsonl(pairs_path)?,
            trajectories: read_jsonl(trajs_path)?,
            seen_pairs: HashSet::new(),
        };
        buffer.rebuild_seen();
        Ok(buffer)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::InvalidArgument(format!(
                "{}:{}: malformed record: {e}",
                path.display(),
                lineno + 1
            ))
        })?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trajectory-level datasets
// ---------------------------------------------------------------------------

/// Successful trajectories only: the rejection-sampling dataset.
pub fn build_rft_dataset(buffer: &ReplayBuffer) -> Vec<&Trajectory> {
    buffer
        .trajectories
        .iter()
        .map(|e| &e.item)
        .filter(|t| t.success())
        .collect()
}

/// Success/failure trajectory pairs within each task, capped per task.
/// All success x failure combinations are formed in buffer order; when a
/// task exceeds `cap`, a seeded shuffle decides which survive, so the
/// same (buffer, cap, seed) always selects the same pairs.
pub fn build_trajectory_pairs(
    buffer: &ReplayBuffer,
    cap: usize,
    seed: u64,
) -> Vec<(Trajectory, Trajectory)> {
    use rand::seq::SliceRandom;

    let mut task_ids: Vec<&str> = buffer
        .trajectories
        .iter()
        .map(|e| e.item.task.task_id.as_str())
        .collect();
    task_ids.sort();
    task_ids.dedup();

    let mut out = Vec::new();
    for task_id in task_ids {
        let of_task: Vec<&Trajectory> = buffer
            .trajectories
            .iter()
            .map(|e| &e.item)
            .filter(|t| t.task.task_id == task_id)
            .collect();
        let mut combos: Vec<(usize, usize)> = Vec::new();
        for (i, s) in of_task.iter().enumerate() {
            if !s.success() {
                continue;
            }
            for (j, f) in of_task.iter().enumerate() {
                if f.terminal && !f.success() {
                    combos.push((i, j));
                }
            }
        }
        if combos.len() > cap {
            let mut rng = rng_from(seed, &format!("traj-pairs|{task_id}"));
            combos.shuffle(&mut rng);
            combos.truncate(cap);
            combos.sort();
        }
        for (i, j) in combos {
            out.push((of_task[i].clone(), of_task[j].clone()));
        }
    }
    out
}

// ---------------------------------------------------------------------------
