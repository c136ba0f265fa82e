//! Experiment configuration: one TOML or JSON file drives every
//! subcommand. Loading resolves all defaults up front; the resolved
//! config is echoed into the output directory and its hash is embedded
//! in every artifact, so an artifact can always be traced to the exact
//! settings that produced it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use treeq_core::agent::{shaped_policy, SoftmaxPolicy};
use treeq_core::critic::{Critic, NoisyCritic, OracleCritic};
use treeq_core::env::{generate_task_set, Env, EnvConfig, TaskSpec, World};
use treeq_core::eval::EvalMode;
use treeq_core::mcts::SearchConfig;
use treeq_core::trainer::TrainConfig;

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

/// Train/eval task split. The two sets are drawn as one batch from
/// `seed` and partitioned by position, so they are disjoint by
/// construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSplit {
    pub train: u32,
    pub eval: u32,
    pub seed: u64,
}

impl Default for TaskSplit {
    fn default() -> Self {
        TaskSplit {
            train: 50,
            eval: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    Uniform,
    Shaped,
    Checkpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub init: PolicyInit,
    /// Required when `init = "checkpoint"`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            init: PolicyInit::Shaped,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    Oracle,
    Noisy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSection {
    pub kind: CriticKind,
    /// Corruption rate for the noisy critic; ignored by the oracle.
    pub noise: f64,
    pub seed: u64,
}

impl Default for CriticSection {
    fn default() -> Self {
        CriticSection {
            kind: CriticKind::Oracle,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub iterations: u32,
    pub tasks_per_iteration: usize,
    /// Minimum mixed-value gap for a node-level pair to count.
    pub theta: f64,
    /// Per-task cap on trajectory pairs.
    pub traj_pair_cap: usize,
    /// Continue from the latest iteration checkpoint in the output
    /// directory instead of starting fresh.
    pub resume: bool,
}

impl Default for LoopSection {
    fn default() -> Self {
        LoopSection {
            iterations: 2,
            tasks_per_iteration: 16,
            theta: 0.25,
            traj_pair_cap: 4,
            resume: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: EvalMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            mode: EvalMode::ZeroShot,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Reachable-state budget; exceeding it aborts with an error naming
    /// the limit rather than grinding on an unenumerable task.
    pub limit: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { limit: 100_000 }
    }
}

/// Input data files for the train subcommand. Relative paths resolve
/// against the process working directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub pairs: PathBuf,
    pub trajectories: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            pairs: PathBuf::from("pairs.jsonl"),
            trajectories: PathBuf::from("trajectories.jsonl"),
        }
    }
}

// ---------------------------------------------------------------------------
// The config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub world: String,
    /// Where artifacts land. Excluded from the resolved echo and the
    /// config hash: location is plumbing, and identical experiments must
    /// hash identically wherever their output goes.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub env_seed: u64,
    pub seed: u64,
    pub env: EnvConfig,
    pub tasks: TaskSplit,
    pub policy: PolicySection,
    pub critic: CriticSection,
    pub search: SearchConfig,
    pub train: TrainConfig,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
    pub eval: EvalSection,
    pub oracle: OracleSection,
    pub data: DataSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            world: "shopworld".into(),
            out_dir: PathBuf::from("out"),
            env_seed: 0,
            seed: 0,
            env: EnvConfig::default(),
            tasks: TaskSplit::default(),
            policy: PolicySection::default(),
            critic: CriticSection::default(),
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            loop_: LoopSection::default(),
            eval: EvalSection::default(),
            oracle: OracleSection::default(),
            data: DataSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file by extension (.toml or .json), applies the
    /// command-line overrides, and validates the result.
    pub fn load(
        path: &Path,
        out_override: Option<&Path>,
        seed_override: Option<u64>,
    ) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let mut cfg: ExperimentConfig = match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            "json" => serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            other => {
                return Err(CliError::Config(format!(
                    "unsupported config extension {other:?} (want .toml or .json)"
                )))
            }
        };
        if let Some(out) = out_override {
            cfg.out_dir = out.to_path_buf();
        }
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} unsupported (this build reads {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        World::parse(&self.world).map_err(|e| CliError::Config(e.to_string()))?;
        self.search
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.policy.init == PolicyInit::Checkpoint && self.policy.checkpoint.is_none() {
            return Err(CliError::Config(
                "policy.init = \"checkpoint\" needs policy.checkpoint".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.critic.noise) {
            return Err(CliError::Config(format!(
                "critic.noise must be in [0, 1], got {}",
                self.critic.noise
            )));
        }
        if self.loop_.iterations == 0 {
            return Err(CliError::Config("loop.iterations must be >= 1".into()));
        }
        if self.loop_.tasks_per_iteration == 0 {
            return Err(CliError::Config("loop.tasks_per_iteration must be >= 1".into()));
        }
        if !self.loop_.theta.is_finite() || self.loop_.theta < 0.0 {
            return Err(CliError::Config(format!(
                "loop.theta must be a finite non-negative number, got {}",
                self.loop_.theta
            )));
        }
        if self.oracle.limit == 0 {
            return Err(CliError::Config("oracle.limit must be >= 1".into()));
        }
        Ok(())
    }

    pub fn world(&self) -> World {
        World::parse(&self.world).expect("validated")
    }

    pub fn env(&self) -> Env {
        Env::new(self.env.clone())
    }

    /// The disjoint train/eval task sets: one draw, partitioned by
    /// position.
    pub fn task_split(&self) -> (Vec<TaskSpec>, Vec<TaskSpec>) {
        let total = self.tasks.train + self.tasks.eval;
        let mut all = generate_task_set(self.world(), total, self.tasks.seed, &self.env);
        let eval = all.split_off(self.tasks.train as usize);
        (all, eval)
    }

    pub fn initial_policy(&self) -> Result<SoftmaxPolicy, CliError> {
        match self.policy.init {
            PolicyInit::Uniform => Ok(SoftmaxPolicy::uniform()),
            PolicyInit::Shaped => Ok(shaped_policy(self.world())),
            PolicyInit::Checkpoint => {
                let path = self.policy.checkpoint.as_ref().expect("validated");
                crate::artifacts::load_policy(path)
            }
        }
    }

    /// A fresh critic instance. The oracle critic memoizes internally
    /// and is not shareable across threads, so parallel sections build
    /// one per task; answers do not depend on cache state.
    pub fn build_critic(&self) -> Result<Box<dyn Critic>, CliError> {
        match self.critic.kind {
            CriticKind::Oracle => Ok(Box::new(OracleCritic::new(self.env(), self.env_seed))),
            CriticKind::Noisy => Ok(Box::new(
                NoisyCritic::new(self.env(), self.env_seed, self.critic.noise, self.critic.seed)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            )),
        }
    }

    /// Canonical JSON of the resolved config; what the hash covers and
    /// what gets echoed to the output directory.
    pub fn resolved_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.resolved_json().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

// ---------------------------------------------------------------------------
