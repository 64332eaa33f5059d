use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lever_cli::commands::{cmd_explain, error_csv, read_log, ExplainRequest};
use lever_core::agent::{Agent, AgentCheckpoint};
use lever_core::shap::Estimator;

fn lever(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lever")).args(args).output().expect("spawn lever")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small networks and short episodes so a full run takes a few seconds.
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 5
[agent]
hidden_layers = [16, 16]
batch_size = 16
updates_per_cycle = 4
eval_episodes = 2
[env.coarse]
max_steps = 20
[env.fine]
max_steps = 20
[schedule]
epochs = 2
episodes_per_epoch = 4
finetune_episodes = 4
[paths]
checkpoint_dir = "{0}/ckpt"
log_dir = "{0}/logs"
{extra}"#,
        dir.display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn train(dir: &Path, extra: &str) -> PathBuf {
    let config = tiny_config(dir, extra);
    let out = lever(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("ckpt/coarse.json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_reproducible_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(a.path(), "");
    train(b.path(), "");
    let ra = fs::read(a.path().join("logs/train_report.csv")).unwrap();
    let rb = fs::read(b.path().join("logs/train_report.csv")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(String::from_utf8(ra).unwrap().lines().count(), 3);
    let agent_a: Agent<f32> = AgentCheckpoint::load(&a.path().join("ckpt/coarse.json")).unwrap();
    let agent_b: Agent<f32> = AgentCheckpoint::load(&b.path().join("ckpt/coarse.json")).unwrap();
    assert!(agent_a.actor.parameters().eq(agent_b.actor.parameters()));
}

#[test]
fn zero_epochs_writes_checkpoint_and_header_only_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "");
    let out = lever(&["train", "--config", s(&config), "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&config).unwrap().replace("epochs = 2", "epochs = 0");
    fs::write(&config, text).unwrap();
    let out = lever(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("ckpt/coarse.actor.json").is_file());
    let csv = fs::read_to_string(dir.path().join("logs/train_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "{csv}");
}

#[test]
fn invalid_configuration_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "");
    let text = fs::read_to_string(&config).unwrap();
    fs::write(&config, text.replace("[agent]\n", "[agent]\ngamma = 1.5\n")).unwrap();
    let out = lever(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gamma"), "{}", stderr(&out));

    fs::write(&config, text.replace("[agent]\n", "[agent]\nlearning_rte = 0.1\n")).unwrap();
    let out = lever(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rte"), "{}", stderr(&out));
    assert!(!dir.path().join("ckpt").exists());

    assert_eq!(code(&lever(&["train"])), 2);
    assert_eq!(code(&lever(&["train", "--config", "/nonexistent/run.toml"])), 2);
}

#[test]
fn missing_checkpoint_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "");
    let missing = dir.path().join("nope.json");
    let out = lever(&["finetune", "--config", s(&config), "--checkpoint", s(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not found"));
    let out = lever(&["eval", "--checkpoint", s(&missing), "--env", "coarse"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(dir.path(), "");
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = lever(&["eval", "--checkpoint", s(&ckpt), "--env", "coarse", "--out", s(&blocker.join("sub"))]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn finetune_with_zero_episodes_keeps_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(dir.path(), "");
    let config = dir.path().join("run.toml");
    let text = fs::read_to_string(&config).unwrap().replace("finetune_episodes = 4", "finetune_episodes = 0");
    fs::write(&config, text).unwrap();
    let out = lever(&["finetune", "--config", s(&config), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fine = dir.path().join("ckpt/fine.json");
    let before: Agent<f32> = AgentCheckpoint::load(&ckpt).unwrap();
    let after: Agent<f32> = AgentCheckpoint::load(&fine).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let obs: [f64; 20] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        assert_eq!(before.greedy_action(&obs).unwrap(), after.greedy_action(&obs).unwrap());
    }
    let notes = AgentCheckpoint::read_manifest(&fine).unwrap().notes;
    assert!(notes.iter().any(|n| n == "fidelity=fine"), "{notes:?}");
    assert!(notes.iter().any(|n| n == "lr_actor=0.0008"), "{notes:?}");
}

#[test]
fn finetune_reports_one_row_per_thirty_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(dir.path(), "");
    let config = dir.path().join("run.toml");
    let text = fs::read_to_string(&config).unwrap().replace("finetune_episodes = 4", "finetune_episodes = 60");
    fs::write(&config, text).unwrap();
    let out = lever(&["finetune", "--config", s(&config), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("logs/finetune_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

fn eval_five(dir: &Path, ckpt: &Path) -> Vec<PathBuf> {
    let out_dir = dir.join("eval");
    let config = dir.join("run.toml");
    let out = lever(&[
        "eval", "--checkpoint", s(ckpt), "--env", "fine", "--episodes", "5", "--config", s(&config), "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (0..5).map(|i| out_dir.join(format!("episode_{i}.jsonl"))).collect()
}

#[test]
fn eval_writes_five_trajectories_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(dir.path(), "");
    let logs = eval_five(dir.path(), &ckpt);
    let csv = fs::read_to_string(dir.path().join("eval/errors.csv")).unwrap();
    let episodes: Vec<Vec<_>> = logs.iter().map(|p| read_log(p).unwrap()).collect();
    for (e, records) in episodes.iter().enumerate() {
        assert!(!records.is_empty() && records.len() <= 20);
        let rows = csv.lines().filter(|l| l.starts_with(&format!("{e},"))).count();
        assert_eq!(rows, records.len() + 1);
    }
    // replaying the logs reproduces the error trajectories exactly
    assert_eq!(error_csv(&episodes), csv);
}

#[test]
fn scenario_with_start_at_goal_succeeds_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(dir.path(), "");
    let scenarios = dir.path().join("scenarios.toml");
    fs::write(&scenarios, "[[scenario]]\nlever_start = 0.3\ngoal = 0.3\n\n[[scenario]]\nlever_start = -0.5\ngoal = 0.5\n").unwrap();
    let out_dir = dir.path().join("eval");
    let out = lever(&[
        "eval", "--checkpoint", s(&ckpt), "--env", "coarse", "--scenarios", s(&scenarios),
        "--config", s(&dir.path().join("run.toml")), "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = read_log(&out_dir.join("episode_0.jsonl")).unwrap();
    assert!(first[0].is_success);
    let csv = fs::read_to_string(out_dir.join("errors.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "0,0,0"), "{csv}");
    assert!(csv.lines().any(|l| l == "1,0,1"), "{csv}");

    fs::write(&scenarios, "[[scenario]]\nlever_start = 0.3\n").unwrap();
    let out = lever(&["eval", "--checkpoint", s(&ckpt), "--env", "coarse", "--scenarios", s(&scenarios)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn explain_validates_inputs_and_writes_force_plots() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(dir.path(), "");
    let logs = eval_five(dir.path(), &ckpt);
    let log_args: Vec<&str> = logs.iter().map(|p| s(p)).collect();
    let out_dir = dir.path().join("explain");

    let mut args = vec!["explain", "--checkpoint", s(&ckpt), "--explained", "0", "--out", s(&out_dir), "--logs"];
    args.extend(&log_args[..4]);
    assert_eq!(code(&lever(&args)), 2);

    let mut args = vec!["explain", "--checkpoint", s(&ckpt), "--explained", "0", "--estimator", "exact", "--logs"];
    args.extend(&log_args);
    let out = lever(&args);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("20"), "{}", stderr(&out));

    let mut args = vec!["explain", "--checkpoint", s(&ckpt), "--explained", "5", "--logs"];
    args.extend(&log_args);
    assert_eq!(code(&lever(&args)), 2);

    let mut args = vec!["explain", "--checkpoint", s(&ckpt), "--explained", "0", "--out", s(&out_dir), "--logs"];
    args.extend(&log_args);
    let out = lever(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for k in 1..=4 {
        let svg = fs::read_to_string(out_dir.join(format!("force_a{k}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"));
    }
    assert!(out_dir.join("attributions.json").is_file());
}

#[test]
fn explained_episode_is_excluded_from_the_background() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(dir.path(), "");
    let logs = eval_five(dir.path(), &ckpt);
    let explain = |logs: &[PathBuf], out: &str| {
        cmd_explain(&ExplainRequest {
            checkpoint: &ckpt,
            logs,
            explained: 0,
            estimator: Estimator::DeepRescale,
            out_dir: &dir.path().join(out),
            background_max: 0,
            n_permutations: 10,
            seed: 0,
        })
        .unwrap()
    };
    let base = explain(&logs, "a");
    let phi0 = |o: &lever_cli::commands::ExplainOutput| -> Vec<f64> {
        o.steps[0].attributions.iter().map(|a| a.phi0).collect()
    };

    // a different explained episode leaves the base values alone
    let mut swapped = logs.clone();
    swapped[0] = logs[1].clone();
    assert_eq!(phi0(&base), phi0(&explain(&swapped, "b")));

    // while changing a background episode moves them
    let mut changed = logs.clone();
    changed[1] = logs[0].clone();
    assert_ne!(phi0(&base), phi0(&explain(&changed, "c")));
}

#[test]
fn shipped_configuration_files_load() {
    use lever_cli::config::{load_config, RunConfig};
    use lever_cli::scenario::load_scenarios;
    use lever_core::env::Fidelity;

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let config = load_config(&root.join("default.toml")).unwrap();
    assert_eq!(config, RunConfig::default());
    for fidelity in [Fidelity::Coarse, Fidelity::Fine] {
        let scenarios = load_scenarios(&root.join("test_scenarios.toml"), &config.env_config(fidelity)).unwrap();
        assert_eq!(scenarios.len(), 5);
        assert_eq!(scenarios[1].lever_start, -0.78934491);
    }
}
