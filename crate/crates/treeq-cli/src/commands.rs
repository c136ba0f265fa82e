//! The five subcommands. Search and eval fan tasks out across a rayon
//! pool (TREEQ_WORKERS overrides its size) and then write artifacts from
//! the main thread in task order, so parallelism never touches bytes on
//! disk. The loop subcommand reuses the exact seed discipline of the
//! library's improvement loop and adds per-iteration artifacts plus
//! resume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use treeq_core::agent::{SoftmaxPolicy, Trajectory};
use treeq_core::env::TaskSpec;
use treeq_core::eval::{eval_task_zero_shot, wilson_interval, EvalMode};
use treeq_core::mcts::{run_search, SearchOutcome};
use treeq_core::oracle::solve_exact;
use treeq_core::preference::{
    build_pairs, build_rft_dataset, build_trajectory_pairs, BufferEntry, PreferencePair,
    ReplayBuffer,
};
use treeq_core::trainer::{train as run_train, IterationMetrics, TrainData, TrainVariant};
use treeq_core::util::{derive_seed, rng_from};

use crate::artifacts::{
    fmt_f64, fmt_opt_f64, load_policy, read_jsonl, write_json, write_jsonl, Csv, OutDir,
};
use crate::config::ExperimentConfig;
use crate::CliError;

// ---------------------------------------------------------------------------
// Workers
// ---------------------------------------------------------------------------

/// A rayon pool sized by TREEQ_WORKERS when set, rayon's default
/// otherwise.
pub fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("TREEQ_WORKERS") {
        let n: usize = value.trim().parse().map_err(|_| {
            CliError::Config(format!(
                "TREEQ_WORKERS must be a positive integer, got {value:?}"
            ))
        })?;
        if n == 0 {
            return Err(CliError::Config("TREEQ_WORKERS must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

/// Ordered parallel map; output index i always corresponds to input i,
/// so downstream writes are deterministic.
fn par_map<T, R, F>(pool: &rayon::ThreadPool, items: &[T], f: F) -> Result<Vec<R>, CliError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, CliError> + Sync,
{
    pool.install(|| items.par_iter().map(&f).collect())
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

pub fn search(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let env = cfg.env();
    let (train_tasks, _) = cfg.task_split();
    if train_tasks.is_empty() {
        return Err(CliError::Config("tasks.train must be >= 1 for search".into()));
    }
    let policy = cfg.initial_policy()?;
    let pool = worker_pool()?;

    let outcomes: Vec<SearchOutcome> = par_map(&pool, &train_tasks, |task| {
        let critic = cfg.build_critic()?;
        let mut search_cfg = cfg.search.clone();
        search_cfg.seed = derive_seed(cfg.seed, &format!("search|{}", task.task_id));
        run_search(&env, task, &policy, critic.as_ref(), cfg.env_seed, &search_cfg)
            .map_err(CliError::from)
    })?;

    let mut buffer = ReplayBuffer::new();
    let mut summary = Csv::new(
        &out.config_hash,
        &["task_id", "nodes", "rollouts", "successes", "pairs"],
    );
    for (task, outcome) in train_tasks.iter().zip(&outcomes) {
        let pairs = build_pairs(&outcome.tree, cfg.search.alpha, cfg.loop_.theta)?;
        let n_pairs = pairs.len();
        buffer.add_pairs(pairs, 0);
        let successes = outcome
            .rollouts
            .iter()
            .filter(|r| r.trajectory.terminal_reward == 1)
            .count();
        for record in &outcome.rollouts {
            buffer.add_trajectory(record.trajectory.clone(), 0);
        }
        write_json(
            &out.path(&format!("tree_{}.json", task.task_id)),
            "search_tree",
            &out.config_hash,
            &outcome.tree,
        )?;
        write_jsonl(
            &out.path(&format!("rollouts_{}.jsonl", task.task_id)),
            "rollouts",
            &out.config_hash,
            &outcome.rollouts,
        )?;
        summary.row(&[
            task.task_id.clone(),
            outcome.tree.nodes.len().to_string(),
            outcome.rollouts.len().to_string(),
            successes.to_string(),
            n_pairs.to_string(),
        ]);
    }
    save_buffer(out, "pairs.jsonl", "trajectories.jsonl", &buffer)?;
    summary.write(&out.path("summary.csv"))?;

    let total_rollouts: usize = outcomes.iter().map(|o| o.rollouts.len()).sum();
    println!(
        "search: {} tasks, {} rollouts, {} pairs, {} trajectories -> {}",
        train_tasks.len(),
        total_rollouts,
        buffer.pairs.len(),
        buffer.trajectories.len(),
        out.root.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn train(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let buffer = load_buffer(&cfg.data.pairs, &cfg.data.trajectories)?;
    let data = assemble_train_data(&buffer, cfg, cfg.seed);
    if data.is_empty() {
        return Err(CliError::Data(format!(
            "{} training has no usable items in {} / {}",
            variant_name(cfg.train.variant),
            cfg.data.pairs.display(),
            cfg.data.trajectories.display()
        )));
    }
    let policy0 = cfg.initial_policy()?;
    let (trained, reports) = run_train(&policy0, &data, &cfg.train)?;

    let mut metrics = Csv::new(
        &out.config_hash,
        &["epoch", "loss", "grad_norm", "pair_accuracy"],
    );
    for r in &reports {
        metrics.row(&[
            r.epoch.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.grad_norm),
            fmt_opt_f64(r.pair_accuracy),
        ]);
    }
    metrics.write(&out.path("train_metrics.csv"))?;
    write_json(
        &out.path("checkpoint.json"),
        "policy_checkpoint",
        &out.config_hash,
        &trained.to_checkpoint(),
    )?;

    let last = reports.last().expect("epochs >= 1");
    println!(
        "train: {} items, {} epochs, final loss {:.6} -> {}",
        data.len(),
        reports.len(),
        last.loss,
        out.root.display()
    );
    Ok(())
}

fn variant_name(variant: TrainVariant) -> &'static str {
    match variant {
        TrainVariant::StepDpo => "step_dpo",
        TrainVariant::TrajectoryDpo => "trajectory_dpo",
        TrainVariant::Rft => "rft",
    }
}

/// Mirrors the improvement loop's per-variant data assembly.
fn assemble_train_data(buffer: &ReplayBuffer, cfg: &ExperimentConfig, seed: u64) -> TrainData {
    match cfg.train.variant {
        TrainVariant::StepDpo => {
            TrainData::StepPairs(buffer.pairs.iter().map(|e| e.item.clone()).collect())
        }
        TrainVariant::TrajectoryDpo => TrainData::TrajectoryPairs(build_trajectory_pairs(
            buffer,
            cfg.loop_.traj_pair_cap,
            seed,
        )),
        TrainVariant::Rft => {
            TrainData::Trajectories(build_rft_dataset(buffer).into_iter().cloned().collect())
        }
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TaskOutcome {
    task_id: String,
    success: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalReport {
    mode: EvalMode,
    n_tasks: usize,
    success_rate: f64,
    ci_low: f64,
    ci_high: f64,
    outcomes: Vec<TaskOutcome>,
}

pub fn eval(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let env = cfg.env();
    let (_, eval_tasks) = cfg.task_split();
    if eval_tasks.is_empty() {
        return Err(CliError::Config("tasks.eval must be >= 1 for eval".into()));
    }
    let policy = cfg.initial_policy()?;
    let pool = worker_pool()?;

    let successes = match cfg.eval.mode {
        EvalMode::ZeroShot => par_map(&pool, &eval_tasks, |task| {
            let traj = eval_task_zero_shot(&env, task, &policy, cfg.env_seed, cfg.seed)?;
            Ok(traj.terminal_reward)
        })?,
        EvalMode::Mcts => {
            cfg.build_critic()?;
            par_map(&pool, &eval_tasks, |task| {
                let critic = cfg.build_critic()?;
                let mut search_cfg = cfg.search.clone();
                search_cfg.seed = derive_seed(cfg.seed, &format!("eval-search|{}", task.task_id));
                let outcome =
                    run_search(&env, task, &policy, critic.as_ref(), cfg.env_seed, &search_cfg)?;
                let solved = outcome
                    .rollouts
                    .iter()
                    .any(|r| r.trajectory.terminal_reward == 1);
                Ok(u8::from(solved))
            })?
        }
    };

    let n = successes.len() as f64;
    let hits = successes.iter().map(|&s| s as f64).sum::<f64>();
    let (ci_low, ci_high) = wilson_interval(hits, n, 1.96);
    let report = EvalReport {
        mode: cfg.eval.mode,
        n_tasks: successes.len(),
        success_rate: hits / n,
        ci_low,
        ci_high,
        outcomes: eval_tasks
            .iter()
            .zip(&successes)
            .map(|(task, &success)| TaskOutcome {
                task_id: task.task_id.clone(),
                success,
            })
            .collect(),
    };

    let mut csv = Csv::new(&out.config_hash, &["task_id", "success"]);
    for o in &report.outcomes {
        csv.row(&[o.task_id.clone(), o.success.to_string()]);
    }
    csv.write(&out.path("eval.csv"))?;
    write_json(&out.path("eval.json"), "eval_report", &out.config_hash, &report)?;

    println!(
        "eval: {} tasks, success rate {:.4} (95% CI {:.4}..{:.4}) -> {}",
        report.n_tasks,
        report.success_rate,
        report.ci_low,
        report.ci_high,
        out.root.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

pub fn oracle(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let env = cfg.env();
    let (_, eval_tasks) = cfg.task_split();
    if eval_tasks.is_empty() {
        return Err(CliError::Config("tasks.eval must be >= 1 for oracle".into()));
    }
    let pool = worker_pool()?;
    let solutions = par_map(&pool, &eval_tasks, |task| {
        solve_exact(&env, task, cfg.env_seed, cfg.oracle.limit).map_err(CliError::from)
    })?;

    let mut summary = Csv::new(&out.config_hash, &["task_id", "states", "root_value"]);
    for (task, solution) in eval_tasks.iter().zip(&solutions) {
        write_json(
            &out.path(&format!("oracle_{}.json", task.task_id)),
            "oracle_solution",
            &out.config_hash,
            solution,
        )?;
        let root_value = solution.value_at_root(&env, task, cfg.env_seed)?;
        summary.row(&[
            task.task_id.clone(),
            solution.states.len().to_string(),
            fmt_f64(root_value),
        ]);
    }
    summary.write(&out.path("oracle_summary.csv"))?;

    println!(
        "oracle: {} tasks solved, {} states total -> {}",
        solutions.len(),
        solutions.iter().map(|s| s.states.len()).sum::<usize>(),
        out.root.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// loop
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct LoopReport {
    iterations: u32,
    baseline_success_rate: f64,
    final_success_rate: f64,
    improvement: f64,
}

fn checkpoint_name(iteration: u32) -> String {
    format!("checkpoint_{iteration:04}.json")
}

fn buffer_names(iteration: u32) -> (String, String) {
    (
        format!("buffer_pairs_{iteration:04}.jsonl"),
        format!("buffer_trajs_{iteration:04}.jsonl"),
    )
}

pub fn improvement_loop(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), CliError> {
    let env = cfg.env();
    let (train_tasks, eval_tasks) = cfg.task_split();
    if train_tasks.is_empty() || eval_tasks.is_empty() {
        return Err(CliError::Config(
            "loop needs tasks.train >= 1 and tasks.eval >= 1".into(),
        ));
    }
    cfg.build_critic()?; // surface critic config problems before any work
    let pool = worker_pool()?;

    let eval_rate = |policy: &SoftmaxPolicy, label: &str| -> Result<f64, CliError> {
        let seed = derive_seed(cfg.seed, label);
        let successes = par_map(&pool, &eval_tasks, |task| {
            let traj = eval_task_zero_shot(&env, task, policy, cfg.env_seed, seed)?;
            Ok(traj.terminal_reward as f64)
        })?;
        Ok(successes.iter().sum::<f64>() / successes.len() as f64)
    };

    // Fresh state, or the latest checkpoint when resuming.
    let mut policy;
    let mut buffer = ReplayBuffer::new();
    let mut metrics: Vec<IterationMetrics>;
    let start;
    match resume_point(cfg, out)? {
        Some(iteration) => {
            policy = load_policy(&out.path(&checkpoint_name(iteration)))?;
            if iteration >= 1 {
                let (pairs_name, trajs_name) = buffer_names(iteration);
                buffer = load_buffer(&out.path(&pairs_name), &out.path(&trajs_name))?;
            }
            let rows: Vec<IterationMetrics> =
                read_jsonl(&out.path("metrics.jsonl"), "loop_metrics")?;
            if rows.len() < iteration as usize + 1 {
                return Err(CliError::Data(format!(
                    "resume artifact missing: metrics.jsonl has {} rows, need {}",
                    rows.len(),
                    iteration + 1
                )));
            }
            metrics = rows[..iteration as usize + 1].to_vec();
            start = iteration + 1;
            out.log(&format!("loop resuming after iteration {iteration}"))?;
        }
        None => {
            policy = cfg.initial_policy()?;
            metrics = vec![IterationMetrics {
                iteration: 0,
                buffer_pairs: 0,
                buffer_trajectories: 0,
                train_items: 0,
                loss: None,
                pair_accuracy: None,
                eval_success_rate: eval_rate(&policy, "eval|0")?,
            }];
            write_json(
                &out.path(&checkpoint_name(0)),
                "policy_checkpoint",
                &out.config_hash,
                &policy.to_checkpoint(),
            )?;
            write_jsonl(&out.path("metrics.jsonl"), "loop_metrics", &out.config_hash, &metrics)?;
            start = 1;
        }
    }

    for iteration in start..=cfg.loop_.iterations {
        // Seeded without-replacement task draw, processed in stable order.
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..train_tasks.len()).collect();
        let mut rng = rng_from(cfg.seed, &format!("loop-tasks|{iteration}"));
        idx.shuffle(&mut rng);
        idx.truncate(cfg.loop_.tasks_per_iteration.max(1).min(train_tasks.len()));
        idx.sort_unstable();
        let picked: Vec<&TaskSpec> = idx.iter().map(|&i| &train_tasks[i]).collect();

        let outcomes: Vec<SearchOutcome> = par_map(&pool, &picked, |task| {
            let critic = cfg.build_critic()?;
            let mut search_cfg = cfg.search.clone();
            search_cfg.seed =
                derive_seed(cfg.seed, &format!("search|{iteration}|{}", task.task_id));
            run_search(&env, task, &policy, critic.as_ref(), cfg.env_seed, &search_cfg)
                .map_err(CliError::from)
        })?;
        for outcome in outcomes {
            let pairs = build_pairs(&outcome.tree, cfg.search.alpha, cfg.loop_.theta)?;
            buffer.add_pairs(pairs, iteration - 1);
            for record in outcome.rollouts {
                buffer.add_trajectory(record.trajectory, iteration - 1);
            }
        }
        let (pairs_name, trajs_name) = buffer_names(iteration);
        save_buffer(out, &pairs_name, &trajs_name, &buffer)?;

        let data = assemble_train_data(&buffer, cfg, cfg.seed);
        let (loss, pair_accuracy, train_items) = if data.is_empty() {
            (None, None, 0)
        } else {
            let mut tcfg = cfg.train.clone();
            tcfg.seed = derive_seed(cfg.train.seed, &format!("train|{iteration}"));
            let (next, reports) = run_train(&policy, &data, &tcfg)?;
            policy = next;
            let last = reports.last().expect("epochs >= 1");
            (Some(last.loss), last.pair_accuracy, data.len())
        };

        write_json(
            &out.path(&checkpoint_name(iteration)),
            "policy_checkpoint",
            &out.config_hash,
            &policy.to_checkpoint(),
        )?;
        metrics.push(IterationMetrics {
            iteration,
            buffer_pairs: buffer.pairs.len(),
            buffer_trajectories: buffer.trajectories.len(),
            train_items,
            loss,
            pair_accuracy,
            eval_success_rate: eval_rate(&policy, &format!("eval|{iteration}"))?,
        });
        write_jsonl(&out.path("metrics.jsonl"), "loop_metrics", &out.config_hash, &metrics)?;
    }

    let mut csv = Csv::new(
        &out.config_hash,
        &[
            "iteration",
            "buffer_pairs",
            "buffer_trajectories",
            "train_items",
            "loss",
            "pair_accuracy",
            "eval_success_rate",
        ],
    );
    for m in &metrics {
        csv.row(&[
            m.iteration.to_string(),
            m.buffer_pairs.to_string(),
            m.buffer_trajectories.to_string(),
            m.train_items.to_string(),
            fmt_opt_f64(m.loss),
            fmt_opt_f64(m.pair_accuracy),
            fmt_f64(m.eval_success_rate),
        ]);
    }
    csv.write(&out.path("metrics.csv"))?;

    let baseline = metrics.first().expect("baseline row").eval_success_rate;
    let final_rate = metrics.last().expect("final row").eval_success_rate;
    let report = LoopReport {
        iterations: cfg.loop_.iterations,
        baseline_success_rate: baseline,
        final_success_rate: final_rate,
        improvement: final_rate - baseline,
    };
    write_json(&out.path("report.json"), "loop_report", &out.config_hash, &report)?;

    println!(
        "loop: {} iterations, eval success {:.4} -> {:.4} ({:+.4}) -> {}",
        report.iterations,
        report.baseline_success_rate,
        report.final_success_rate,
        report.improvement,
        out.root.display()
    );
    Ok(())
}

/// The iteration whose artifacts training should continue from, if
/// resume is on and any checkpoint exists. Fails loudly when a later
/// checkpoint exists without its buffers rather than silently starting
/// over.
fn resume_point(cfg: &ExperimentConfig, out: &OutDir) -> Result<Option<u32>, CliError> {
    if !cfg.loop_.resume {
        return Ok(None);
    }
    let latest = (0..=cfg.loop_.iterations)
        .rev()
        .find(|&i| out.path(&checkpoint_name(i)).exists());
    let Some(iteration) = latest else {
        return Ok(None);
    };
    if iteration >= 1 {
        let (pairs_name, trajs_name) = buffer_names(iteration);
        for name in [&pairs_name, &trajs_name] {
            if !out.path(name).exists() {
                return Err(CliError::Data(format!(
                    "resume artifact missing: {} exists but {} does not",
                    checkpoint_name(iteration),
                    out.path(name).display()
                )));
            }
        }
    }
    Ok(Some(iteration))
}

// ---------------------------------------------------------------------------
// Replay buffer files
// ---------------------------------------------------------------------------

fn save_buffer(
    out: &OutDir,
    pairs_name: &str,
    trajs_name: &str,
    buffer: &ReplayBuffer,
) -> Result<(), CliError> {
    write_jsonl(
        &out.path(pairs_name),
        "replay_pairs",
        &out.config_hash,
        &buffer.pairs,
    )?;
    write_jsonl(
        &out.path(trajs_name),
        "replay_trajectories",
        &out.config_hash,
        &buffer.trajectories,
    )
}

fn load_buffer(
    pairs_path: &std::path::Path,
    trajs_path: &std::path::Path,
) -> Result<ReplayBuffer, CliError> {
    let pairs: Vec<BufferEntry<PreferencePair>> = read_jsonl(pairs_path, "replay_pairs")?;
    let trajs: Vec<BufferEntry<Trajectory>> = read_jsonl(trajs_path, "replay_trajectories")?;
    let mut buffer = ReplayBuffer::new();
    // add_pairs stamps one version per call, so feed it runs of entries
    // that share one.
    let mut i = 0;
    while i < pairs.len() {
        let version = pairs[i].policy_version;
        let mut chunk = Vec::new();
        while i < pairs.len() && pairs[i].policy_version == version {
            chunk.push(pairs[i].item.clone());
            i += 1;
        }
        buffer.add_pairs(chunk, version);
    }
    for entry in trajs {
        buffer.add_trajectory(entry.item, entry.policy_version);
    }
    Ok(buffer)
}

// ---------------------------------------------------------------------------
