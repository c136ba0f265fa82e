//! End-to-end exercises of the compiled binary: artifact layout, exit
//! codes, determinism, resume, and agreement between the loop subcommand
//! and the library's improvement loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use treeq_core::agent::{shaped_policy, SoftmaxPolicy, Trajectory};
use treeq_core::critic::OracleCritic;
use treeq_core::env::{generate_task_set, Env, EnvConfig, World};
use treeq_core::preference::BufferEntry;
use treeq_core::mcts::SearchConfig;
use treeq_core::trainer::{agentq_loop, rft_loss, LoopConfig, TrainConfig};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn treeq(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_treeq"));
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    treeq(args).output().expect("binary runs")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("exit code");
    assert_eq!(
        got,
        want,
        "exit code {got}, want {want}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small shopworld experiment, quick enough to run many times.
const SHOP_CONFIG: &str = r#"
world = "shopworld"
env_seed = 5
seed = 11

[env.shop]
page_size = 4
catalog_size = 12
max_pages = 2
p_deep = 0.7
horizon = 8

[tasks]
train = 2
eval = 3
seed = 21

[search]
k = 3
rollouts_per_task = 6

[train]
epochs = 6

[loop]
iterations = 2
tasks_per_iteration = 2
"#;

/// Reduced bookworld whose state space the oracle enumerates quickly.
const BOOK_CONFIG: &str = r#"
world = "bookworld"
env_seed = 3
seed = 7

[env.book]
n_restaurants = 2
restaurants_per_page = 2
n_dates = 2
n_times = 2
n_parties = 2
n_seats = 2
include_party = false
include_seating = false
contact_fields = 1
horizon = 10

[tasks]
train = 1
eval = 2
seed = 13
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn config_arg(path: &Path) -> String {
    path.display().to_string()
}

/// Every file in a directory keyed by name, except run.log (the one file
/// allowed to differ between reruns).
fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().into_string().unwrap();
        if name == "run.log" {
            continue;
        }
        files.insert(name, std::fs::read(entry.path()).unwrap());
    }
    files
}

/// The payload of an enveloped JSON artifact.
fn payload(path: &Path) -> serde_json::Value {
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    value["payload"].clone()
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

#[test]
fn test_search_writes_one_tree_and_rollout_file_per_task() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", SHOP_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "search",
        "--config",
        &config_arg(&config),
        "--out",
        &out_dir.display().to_string(),
    ]);
    assert_code(&out, 0);

    let files = artifact_bytes(&out_dir);
    let trees: Vec<&String> = files.keys().filter(|n| n.starts_with("tree_")).collect();
    let rollouts: Vec<&String> = files.keys().filter(|n| n.starts_with("rollouts_")).collect();
    assert_eq!(trees.len(), 2, "files: {:?}", files.keys());
    assert_eq!(rollouts.len(), 2);
    for name in rollouts {
        // Header line plus one record per rollout.
        assert_eq!(line_count(&out_dir.join(name)), 1 + 6);
    }
    for required in [
        "config.resolved.json",
        "pairs.jsonl",
        "trajectories.jsonl",
        "summary.csv",
    ] {
        assert!(files.contains_key(required), "missing {required}");
    }
    assert!(out_dir.join("run.log").exists());

    // summary.csv: comment, column header, one row per task.
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 + 2);
    assert!(summary.starts_with("# config_hash="));
    assert_eq!(
        summary.lines().nth(1).unwrap(),
        "task_id,nodes,rollouts,successes,pairs"
    );
}

#[test]
fn test_artifacts_embed_the_hash_of_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", SHOP_CONFIG);
    let out_dir = dir.path().join("out");
    assert_code(
        &run(&["search", "--config", &config_arg(&config), "--out", &out_dir.display().to_string()]),
        0,
    );

    let resolved = std::fs::read(out_dir.join("config.resolved.json")).unwrap();
    let expected = {
        use sha2::Digest as _;
        let digest = sha2::Sha256::digest(&resolved);
        digest.iter().map(|b| format!("{b:02x}")).collect::<String>()
    };
    for (name, bytes) in artifact_bytes(&out_dir) {
        if name == "config.resolved.json" {
            continue;
        }
        let text = String::from_utf8(bytes).unwrap();
        let embedded = if name.ends_with(".csv") {
            text.lines()
                .next()
                .and_then(|l| l.strip_prefix("# config_hash="))
                .map(str::to_string)
        } else if name.ends_with(".jsonl") {
            let header: serde_json::Value =
                serde_json::from_str(text.lines().next().unwrap()).unwrap();
            header["config_hash"].as_str().map(str::to_string)
        } else {
            let envelope: serde_json::Value = serde_json::from_str(&text).unwrap();
            envelope["config_hash"].as_str().map(str::to_string)
        };
        assert_eq!(embedded.as_deref(), Some(expected.as_str()), "{name}");
    }
}

// ---------------------------------------------------------------------------
// search -> train -> eval
// ---------------------------------------------------------------------------

/// Appends a data section pointing at a search output directory.
fn with_data(base: &str, data_dir: &Path) -> String {
    format!(
        "{base}\n[data]\npairs = {:?}\ntrajectories = {:?}\n",
        data_dir.join("pairs.jsonl").display().to_string(),
        data_dir.join("trajectories.jsonl").display().to_string(),
    )
}

#[test]
fn test_search_train_eval_pipeline_runs_and_checkpoint_reproduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let search_out = dir.path().join("search");
    let config = write_config(dir.path(), "exp.toml", SHOP_CONFIG);
    assert_code(
        &run(&["search", "--config", &config_arg(&config), "--out", &search_out.display().to_string()]),
        0,
    );

    // RFT training on the collected trajectories.
    let rft_out = dir.path().join("rft");
    let rft_config = write_config(
        dir.path(),
        "rft.toml",
        &with_data(SHOP_CONFIG, &search_out).replace("[train]\nepochs = 6", "[train]\nepochs = 6\nvariant = \"rft\""),
    );
    assert_code(
        &run(&["train", "--config", &config_arg(&rft_config), "--out", &rft_out.display().to_string()]),
        0,
    );

    // The stored checkpoint round-trips: resuming from it for one epoch
    // reports, as its pre-update loss, exactly the loss the loaded
    // checkpoint yields when recomputed in process.
    let probe_out = dir.path().join("probe");
    let probe_config = write_config(
        dir.path(),
        "probe.toml",
        &format!(
            "{}\n[policy]\ninit = \"checkpoint\"\ncheckpoint = {:?}\n",
            with_data(SHOP_CONFIG, &search_out).replace(
                "[train]\nepochs = 6",
                "[train]\nepochs = 1\nvariant = \"rft\""
            ),
            rft_out.join("checkpoint.json").display().to_string()
        ),
    );
    assert_code(
        &run(&["train", "--config", &config_arg(&probe_config), "--out", &probe_out.display().to_string()]),
        0,
    );
    let metrics = std::fs::read_to_string(probe_out.join("train_metrics.csv")).unwrap();
    let first_row = metrics.lines().nth(2).unwrap();
    let reported: f64 = first_row.split(',').nth(1).unwrap().parse().unwrap();
    let ckpt = payload(&rft_out.join("checkpoint.json"));
    let policy = SoftmaxPolicy::from_checkpoint(&serde_json::from_value(ckpt).unwrap()).unwrap();
    let trajs: Vec<BufferEntry<Trajectory>> =
        std::fs::read_to_string(search_out.join("trajectories.jsonl"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
    let demos: Vec<&Trajectory> = trajs
        .iter()
        .map(|e| &e.item)
        .filter(|t| t.success())
        .collect();
    assert!(!demos.is_empty());
    let (recomputed, _) = rft_loss(&policy, &demos).unwrap();
    assert!(
        (recomputed - reported).abs() < 1e-9,
        "checkpoint loss {recomputed} vs reported {reported}"
    );

    // Step-DPO training, then evaluation from its checkpoint.
    let dpo_out = dir.path().join("dpo");
    let dpo_config = write_config(dir.path(), "dpo.toml", &with_data(SHOP_CONFIG, &search_out));
    assert_code(
        &run(&["train", "--config", &config_arg(&dpo_config), "--out", &dpo_out.display().to_string()]),
        0,
    );
    let eval_out = dir.path().join("eval");
    let eval_config = write_config(
        dir.path(),
        "eval.toml",
        &format!(
            "{SHOP_CONFIG}\n[policy]\ninit = \"checkpoint\"\ncheckpoint = {:?}\n",
            dpo_out.join("checkpoint.json").display().to_string()
        ),
    );
    assert_code(
        &run(&["eval", "--config", &config_arg(&eval_config), "--out", &eval_out.display().to_string()]),
        0,
    );
    let report = payload(&eval_out.join("eval.json"));
    assert_eq!(report["n_tasks"], 3);
    assert_eq!(report["outcomes"].as_array().unwrap().len(), 3);
    let rate = report["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert!(report["ci_low"].as_f64().unwrap() <= rate);
    assert!(report["ci_high"].as_f64().unwrap() >= rate);
    assert_eq!(line_count(&eval_out.join("eval.csv")), 2 + 3);
}

#[test]
fn test_train_resume_from_checkpoint_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let search_out = dir.path().join("search");
    let config = write_config(dir.path(), "exp.toml", SHOP_CONFIG);
    assert_code(
        &run(&["search", "--config", &config_arg(&config), "--out", &search_out.display().to_string()]),
        0,
    );
    let base = with_data(SHOP_CONFIG, &search_out);

    // 6 epochs in one go.
    let full_out = dir.path().join("full");
    let full_config = write_config(dir.path(), "full.toml", &base);
    assert_code(
        &run(&["train", "--config", &config_arg(&full_config), "--out", &full_out.display().to_string()]),
        0,
    );

    // 3 epochs, then 3 more from the stored checkpoint. Default training
    // is full-batch without momentum, so the split run must land on the
    // same weights.
    let half_out = dir.path().join("half");
    let half_config = write_config(
        dir.path(),
        "half.toml",
        &base.replace("epochs = 6", "epochs = 3"),
    );
    assert_code(
        &run(&["train", "--config", &config_arg(&half_config), "--out", &half_out.display().to_string()]),
        0,
    );
    let resumed_out = dir.path().join("resumed");
    let resumed_config = write_config(
        dir.path(),
        "resumed.toml",
        &format!(
            "{}\n[policy]\ninit = \"checkpoint\"\ncheckpoint = {:?}\n",
            base.replace("epochs = 6", "epochs = 3"),
            half_out.join("checkpoint.json").display().to_string()
        ),
    );
    assert_code(
        &run(&["train", "--config", &config_arg(&resumed_config), "--out", &resumed_out.display().to_string()]),
        0,
    );

    assert_eq!(
        payload(&full_out.join("checkpoint.json")),
        payload(&resumed_out.join("checkpoint.json"))
    );
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

#[test]
fn test_oracle_solves_reduced_bookworld_and_respects_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "book.toml", BOOK_CONFIG);
    let out_dir = dir.path().join("out");
    assert_code(
        &run(&["oracle", "--config", &config_arg(&config), "--out", &out_dir.display().to_string()]),
        0,
    );
    let files = artifact_bytes(&out_dir);
    let solutions: Vec<&String> = files
        .keys()
        .filter(|n| n.starts_with("oracle_") && n.ends_with(".json"))
        .collect();
    assert_eq!(solutions.len(), 2, "one solution per eval task");
    for name in solutions {
        let solution = payload(&out_dir.join(name));
        let states = solution["states"].as_object().unwrap();
        assert!(!states.is_empty());
        // Optimal values are success probabilities.
        for state in states.values() {
            let v = state["v"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert_eq!(line_count(&out_dir.join("oracle_summary.csv")), 2 + 2);

    // A tiny budget fails loudly, naming the limit.
    let strict = write_config(
        dir.path(),
        "strict.toml",
        &format!("{BOOK_CONFIG}\n[oracle]\nlimit = 5\n"),
    );
    let out = run(&[
        "oracle",
        "--config",
        &config_arg(&strict),
        "--out",
        &dir.path().join("strict-out").display().to_string(),
    ]);
    assert_code(&out, 3);
    assert!(stderr_of(&out).contains("limit of 5"), "{}", stderr_of(&out));
}

// ---------------------------------------------------------------------------
// loop
// ---------------------------------------------------------------------------

#[test]
fn test_loop_writes_per_iteration_artifacts_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", SHOP_CONFIG);
    let out_dir = dir.path().join("out");
    assert_code(
        &run(&["loop", "--config", &config_arg(&config), "--out", &out_dir.display().to_string()]),
        0,
    );

    for name in [
        "checkpoint_0000.json",
        "checkpoint_0001.json",
        "checkpoint_0002.json",
        "buffer_pairs_0001.jsonl",
        "buffer_trajs_0001.jsonl",
        "buffer_pairs_0002.jsonl",
        "buffer_trajs_0002.jsonl",
        "metrics.jsonl",
        "metrics.csv",
        "report.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    // Baseline row plus one per iteration.
    assert_eq!(line_count(&out_dir.join("metrics.csv")), 2 + 3);
    let report = payload(&out_dir.join("report.json"));
    assert_eq!(report["iterations"], 2);
    let improvement = report["improvement"].as_f64().unwrap();
    assert!(
        (report["final_success_rate"].as_f64().unwrap()
            - report["baseline_success_rate"].as_f64().unwrap()
            - improvement)
            .abs()
            < 1e-12
    );

    // The subcommand is plumbing around the library loop: same split,
    // seeds, and budgets must produce identical metrics.
    let env = Env::new(EnvConfig {
        shop: treeq_core::env::ShopConfig {
            page_size: 4,
            catalog_size: 12,
            max_pages: 2,
            p_deep: 0.7,
            horizon: 8,
        },
        book: Default::default(),
    });
    let mut all = generate_task_set(World::Shop, 5, 21, &env.config);
    let eval_tasks = all.split_off(2);
    let loop_cfg = LoopConfig {
        iterations: 2,
        tasks_per_iteration: 2,
        search: SearchConfig {
            k: 3,
            rollouts_per_task: 6,
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 6,
            ..Default::default()
        },
        theta: 0.25,
        traj_pair_cap: 4,
        env_seed: 5,
        seed: 11,
    };
    let critic = OracleCritic::new(env.clone(), 5);
    let outcome = agentq_loop(
        &env,
        &all,
        &eval_tasks,
        &shaped_policy(World::Shop),
        &critic,
        &loop_cfg,
    )
    .unwrap();

    let stored_rows: Vec<serde_json::Value> =
        std::fs::read_to_string(out_dir.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
    let library_rows: Vec<serde_json::Value> = outcome
        .metrics
        .iter()
        .map(|m| serde_json::to_value(m).unwrap())
        .collect();
    assert_eq!(stored_rows, library_rows);

    // Final checkpoint equals the library's trained policy.
    let stored_ckpt = payload(&out_dir.join("checkpoint_0002.json"));
    let library_ckpt = serde_json::to_value(outcome.policy.to_checkpoint()).unwrap();
    assert_eq!(stored_ckpt, library_ckpt);
}

#[test]
fn test_loop_resume_continues_where_it_stopped() {
    let dir = tempfile::tempdir().unwrap();
    // Full two-iteration reference run.
    let full_config = write_config(dir.path(), "full.toml", SHOP_CONFIG);
    let full_out = dir.path().join("full");
    assert_code(
        &run(&["loop", "--config", &config_arg(&full_config), "--out", &full_out.display().to_string()]),
        0,
    );

    // One iteration, then resume to two.
    let part_config = write_config(
        dir.path(),
        "part.toml",
        &SHOP_CONFIG.replace("iterations = 2", "iterations = 1"),
    );
    let part_out = dir.path().join("part");
    assert_code(
        &run(&["loop", "--config", &config_arg(&part_config), "--out", &part_out.display().to_string()]),
        0,
    );
    let resume_config = write_config(
        dir.path(),
        "resume.toml",
        &SHOP_CONFIG.replace("[loop]\niterations = 2", "[loop]\niterations = 2\nresume = true"),
    );
    assert_code(
        &run(&["loop", "--config", &config_arg(&resume_config), "--out", &part_out.display().to_string()]),
        0,
    );
    assert_eq!(
        payload(&part_out.join("checkpoint_0002.json")),
        payload(&full_out.join("checkpoint_0002.json"))
    );
    assert_eq!(
        payload(&part_out.join("report.json"))["final_success_rate"],
        payload(&full_out.join("report.json"))["final_success_rate"]
    );

    // Deleting an intermediate buffer makes resume fail loudly.
    std::fs::remove_file(part_out.join("buffer_pairs_0002.jsonl")).unwrap();
    std::fs::remove_file(part_out.join("checkpoint_0001.json")).unwrap();
    let out = run(&[
        "loop",
        "--config",
        &config_arg(&resume_config),
        "--out",
        &part_out.display().to_string(),
    ]);
    assert_code(&out, 3);
    assert!(
        stderr_of(&out).contains("buffer_pairs_0002"),
        "{}",
        stderr_of(&out)
    );
}

// ---------------------------------------------------------------------------
// determinism
// ---------------------------------------------------------------------------

#[test]
fn test_reruns_are_byte_identical_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let shop = write_config(dir.path(), "shop.toml", SHOP_CONFIG);
    let book = write_config(dir.path(), "book.toml", BOOK_CONFIG);

    let search_a = dir.path().join("search-a");
    assert_code(&run(&["search", "--config", &config_arg(&shop), "--out", &search_a.display().to_string()]), 0);
    let trained = write_config(dir.path(), "trained.toml", &with_data(SHOP_CONFIG, &search_a));

    let cases: Vec<(&str, &Path)> = vec![
        ("search", &shop),
        ("train", &trained),
        ("eval", &shop),
        ("oracle", &book),
        ("loop", &shop),
    ];
    for (subcommand, config) in cases {
        let out_a = dir.path().join(format!("{subcommand}-1"));
        let out_b = dir.path().join(format!("{subcommand}-2"));
        for out_dir in [&out_a, &out_b] {
            let out = run(&[
                subcommand,
                "--config",
                &config_arg(config),
                "--out",
                &out_dir.display().to_string(),
            ]);
            assert_code(&out, 0);
        }
        let a = artifact_bytes(&out_a);
        let b = artifact_bytes(&out_b);
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "{subcommand}: file sets differ"
        );
        for (name, bytes) in &a {
            assert_eq!(bytes, &b[name], "{subcommand}: {name} differs between reruns");
        }
    }
}

#[test]
fn test_worker_count_does_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", SHOP_CONFIG);
    let one = dir.path().join("w1");
    let four = dir.path().join("w4");
    for (out_dir, workers) in [(&one, "1"), (&four, "4")] {
        let mut cmd = treeq(&[
            "search",
            "--config",
            &config_arg(&config),
            "--out",
            &out_dir.display().to_string(),
        ]);
        cmd.env("TREEQ_WORKERS", workers);
        let out = cmd.output().unwrap();
        assert_code(&out, 0);
    }
    assert_eq!(artifact_bytes(&one), artifact_bytes(&four));
}

// ---------------------------------------------------------------------------
// exit codes
// ---------------------------------------------------------------------------

#[test]
fn test_config_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().join("out").display().to_string();

    // Missing file.
    assert_code(&run(&["search", "--config", "/nope/missing.toml", "--out", &out_arg]), 2);
    // Malformed TOML.
    let broken = write_config(dir.path(), "broken.toml", "world = [unclosed\n");
    assert_code(&run(&["search", "--config", &config_arg(&broken), "--out", &out_arg]), 2);
    // Unknown top-level field.
    let typo = write_config(dir.path(), "typo.toml", "worlds = \"shopworld\"\n");
    assert_code(&run(&["search", "--config", &config_arg(&typo), "--out", &out_arg]), 2);
    // Unsupported extension.
    let yaml = write_config(dir.path(), "exp.yaml", "world: shopworld\n");
    assert_code(&run(&["search", "--config", &config_arg(&yaml), "--out", &out_arg]), 2);
    // Invalid values.
    let bad = write_config(dir.path(), "bad.toml", "world = \"shopworld\"\n[search]\nk = 1\n");
    assert_code(&run(&["eval", "--config", &config_arg(&bad), "--out", &out_arg]), 2);
    // Unknown subcommand (clap reports usage errors as 2 as well).
    assert_code(&run(&["frobnicate"]), 2);
    // Bad worker counts.
    let good = write_config(dir.path(), "good.toml", SHOP_CONFIG);
    for workers in ["0", "many"] {
        let mut cmd = treeq(&["search", "--config", &config_arg(&good), "--out", &out_arg]);
        cmd.env("TREEQ_WORKERS", workers);
        let out = cmd.output().unwrap();
        assert_code(&out, 2);
        assert!(stderr_of(&out).contains("TREEQ_WORKERS"));
    }
}

#[test]
fn test_data_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();

    // Training data files that do not exist.
    let missing = write_config(
        dir.path(),
        "missing.toml",
        &format!(
            "{SHOP_CONFIG}\n[data]\npairs = \"/nope/p.jsonl\"\ntrajectories = \"/nope/t.jsonl\"\n"
        ),
    );
    let out = run(&[
        "train",
        "--config",
        &config_arg(&missing),
        "--out",
        &dir.path().join("o1").display().to_string(),
    ]);
    assert_code(&out, 3);
    assert!(stderr_of(&out).contains("/nope/p.jsonl"));
    assert!(!dir.path().join("o1/checkpoint.json").exists(), "no checkpoint on failure");

    // Data files present but empty of items.
    let empty_pairs = dir.path().join("empty_pairs.jsonl");
    let empty_trajs = dir.path().join("empty_trajs.jsonl");
    std::fs::write(
        &empty_pairs,
        "{\"schema_version\":1,\"kind\":\"replay_pairs\",\"config_hash\":\"x\"}\n",
    )
    .unwrap();
    std::fs::write(
        &empty_trajs,
        "{\"schema_version\":1,\"kind\":\"replay_trajectories\",\"config_hash\":\"x\"}\n",
    )
    .unwrap();
    let empty = write_config(
        dir.path(),
        "empty.toml",
        &format!(
            "{SHOP_CONFIG}\n[data]\npairs = {:?}\ntrajectories = {:?}\n",
            empty_pairs.display().to_string(),
            empty_trajs.display().to_string()
        ),
    );
    let out = run(&[
        "train",
        "--config",
        &config_arg(&empty),
        "--out",
        &dir.path().join("o2").display().to_string(),
    ]);
    assert_code(&out, 3);
    assert!(stderr_of(&out).contains("no usable items"));
    assert!(!dir.path().join("o2/checkpoint.json").exists());

    // A checkpoint path that is not a checkpoint.
    let not_ckpt = dir.path().join("not_ckpt.json");
    std::fs::write(&not_ckpt, "{\"what\": true}\n").unwrap();
    let badckpt = write_config(
        dir.path(),
        "badckpt.toml",
        &format!(
            "{SHOP_CONFIG}\n[policy]\ninit = \"checkpoint\"\ncheckpoint = {:?}\n",
            not_ckpt.display().to_string()
        ),
    );
    let out = run(&[
        "eval",
        "--config",
        &config_arg(&badckpt),
        "--out",
        &dir.path().join("o3").display().to_string(),
    ]);
    assert_code(&out, 3);

    // Output path blocked by an existing file.
    let blocker = dir.path().join("blocked");
    std::fs::write(&blocker, "file in the way").unwrap();
    let cfg = write_config(dir.path(), "blocked.toml", SHOP_CONFIG);
    let out = run(&[
        "eval",
        "--config",
        &config_arg(&cfg),
        "--out",
        &blocker.display().to_string(),
    ]);
    assert_code(&out, 3);
    assert!(stderr_of(&out).contains("blocked"), "{}", stderr_of(&out));
}

#[test]
fn test_training_divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let search_out = dir.path().join("search");
    let config = write_config(dir.path(), "exp.toml", SHOP_CONFIG);
    assert_code(
        &run(&["search", "--config", &config_arg(&config), "--out", &search_out.display().to_string()]),
        0,
    );
    let diverging = write_config(
        dir.path(),
        "diverging.toml",
        &with_data(SHOP_CONFIG, &search_out)
            .replace("[train]\nepochs = 6", "[train]\nepochs = 6\ndivergence_threshold = 1e-12"),
    );
    let out = run(&[
        "train",
        "--config",
        &config_arg(&diverging),
        "--out",
        &dir.path().join("out").display().to_string(),
    ]);
    assert_code(&out, 4);
    assert!(stderr_of(&out).contains("diverged"), "{}", stderr_of(&out));
}
