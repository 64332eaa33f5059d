use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use lever_core::agent::{
    error_trajectory, evaluate, evaluate_scenarios, finetune, train, Agent, AgentCheckpoint, EvalSummary, TrainingReport,
};
use lever_core::env::{read_episode_log, write_episode_log, Fidelity, LeverEnv, StepRecord, FEATURE_NAMES};
use lever_core::seeds::stream_seed;
use lever_core::shap::{
    explain_episode, export_force_plot, normalized_background, rank_features, Estimator, ExplainOptions, ShapError,
    StepExplanation,
};

use crate::config::RunConfig;
use crate::scenario::load_scenarios;
use crate::CliError;

/// Number of episode logs `explain` expects: four background, one explained.
pub const EXPLAIN_LOGS: usize = 5;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_report(report: &TrainingReport, path: &Path) -> Result<(), CliError> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    report.write_csv(BufWriter::new(file)).map_err(runtime)
}

fn load_agent<T: lever_core::Scalar>(checkpoint: &Path) -> Result<Agent<T>, CliError> {
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", checkpoint.display())));
    }
    AgentCheckpoint::load(checkpoint).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug)]
pub struct StageOutput {
    pub checkpoint: PathBuf,
    pub report_csv: PathBuf,
    pub report: TrainingReport,
}

/// Stage one: train from scratch on the coarse simulator.
pub fn cmd_train(config: &RunConfig) -> Result<StageOutput, CliError> {
    let env_config = config.env_config(Fidelity::Coarse);
    let mut env = LeverEnv::new(env_config, config.schedule.curriculum, stream_seed(config.seed, "env"))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut agent = Agent::<f32>::new(&config.agent, stream_seed(config.seed, "init")).map_err(runtime)?;
    log::info!(
        "training: fidelity=coarse epochs={} episodes_per_epoch={} her_k={} seed={}",
        config.schedule.epochs,
        config.schedule.episodes_per_epoch,
        config.agent.her_k,
        config.seed
    );
    let report = train(
        &mut agent,
        &mut env,
        config.schedule.epochs,
        config.schedule.episodes_per_epoch,
        &config.agent,
        config.seed,
    )
    .map_err(runtime)?;
    let checkpoint = config.paths.checkpoint_dir.join("coarse.json");
    let notes = vec!["stage=train".into(), "fidelity=coarse".into(), format!("seed={}", config.seed)];
    AgentCheckpoint::save(&agent, &checkpoint, notes).map_err(runtime)?;
    let report_csv = config.paths.log_dir.join("train_report.csv");
    write_report(&report, &report_csv)?;
    Ok(StageOutput { checkpoint, report_csv, report })
}

/// Stage two: continue training a checkpoint on the fine simulator.
pub fn cmd_finetune(config: &RunConfig, checkpoint: &Path) -> Result<StageOutput, CliError> {
    let mut agent = load_agent::<f32>(checkpoint)?;
    let fine_config = config.fine_agent_config();
    let env_config = config.env_config(Fidelity::Fine);
    let mut env = LeverEnv::new(env_config, config.schedule.curriculum, stream_seed(config.seed, "fine-env"))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    log::info!(
        "fine-tuning: fidelity=fine episodes={} lr_actor={} lr_critic={}",
        config.schedule.finetune_episodes,
        fine_config.lr_actor,
        fine_config.lr_critic
    );
    let report = finetune(
        &mut agent,
        &mut env,
        config.schedule.finetune_episodes,
        &fine_config,
        stream_seed(config.seed, "finetune"),
    )
    .map_err(runtime)?;
    let out = config.paths.checkpoint_dir.join("fine.json");
    let notes = vec![
        "stage=finetune".into(),
        "fidelity=fine".into(),
        format!("lr_actor={}", fine_config.lr_actor),
        format!("lr_critic={}", fine_config.lr_critic),
        format!("source={}", checkpoint.display()),
    ];
    AgentCheckpoint::save(&agent, &out, notes).map_err(runtime)?;
    let report_csv = config.paths.log_dir.join("finetune_report.csv");
    write_report(&report, &report_csv)?;
    Ok(StageOutput { checkpoint: out, report_csv, report })
}

#[derive(Debug)]
pub struct EvalOutput {
    pub summary: EvalSummary,
    pub errors_csv: PathBuf,
    pub episode_logs: Vec<PathBuf>,
}

/// Per-step lever-angle error of every episode, step 0 being the start.
pub fn error_csv(episodes: &[Vec<StepRecord>]) -> String {
    let mut csv = String::from("episode,step,error_rad\n");
    for (e, records) in episodes.iter().enumerate() {
        for (t, err) in error_trajectory(records).iter().enumerate() {
            let _ = writeln!(csv, "{e},{t},{err}");
        }
    }
    csv
}

/// Greedy evaluation from random free starts or a scenario file.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    fidelity: Fidelity,
    scenarios: Option<&Path>,
    episodes: Option<usize>,
    out_dir: &Path,
) -> Result<EvalOutput, CliError> {
    let agent = load_agent::<f32>(checkpoint)?;
    let env_config = config.env_config(fidelity);
    let summary = match scenarios {
        Some(path) => {
            let mut list = load_scenarios(path, &env_config)?;
            if let Some(n) = episodes {
                list.truncate(n);
            }
            evaluate_scenarios(&agent, &env_config, &list).map_err(runtime)?
        }
        None => {
            let n = episodes.unwrap_or(config.eval.n_test_episodes);
            evaluate(&agent, &env_config, n, stream_seed(config.seed, "eval")).map_err(runtime)?
        }
    };
    fs::create_dir_all(out_dir).map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
    let mut episode_logs = Vec::new();
    for (i, run) in summary.runs.iter().enumerate() {
        let path = out_dir.join(format!("episode_{i}.jsonl"));
        let file = File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        write_episode_log(BufWriter::new(file), &run.records).map_err(runtime)?;
        episode_logs.push(path);
    }
    let records: Vec<Vec<StepRecord>> = summary.runs.iter().map(|r| r.records.clone()).collect();
    let errors_csv = out_dir.join("errors.csv");
    fs::write(&errors_csv, error_csv(&records)).map_err(runtime)?;
    log::info!(
        "evaluated {} episodes on {fidelity:?}: success {:.2}, mean final error {:.4} rad",
        summary.runs.len(),
        summary.success_rate,
        summary.mean_final_error
    );
    Ok(EvalOutput { summary, errors_csv, episode_logs })
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    read_episode_log(BufReader::new(file)).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Debug)]
pub struct ExplainOutput {
    pub files: Vec<PathBuf>,
    pub steps: Vec<StepExplanation<f64>>,
    /// Per output: features by decreasing mean |phi|.
    pub ranks: Vec<Vec<(usize, f64)>>,
}

pub struct ExplainRequest<'a> {
    pub checkpoint: &'a Path,
    pub logs: &'a [PathBuf],
    pub explained: usize,
    pub estimator: Estimator,
    pub out_dir: &'a Path,
    pub background_max: usize,
    pub n_permutations: usize,
    pub seed: u64,
}

/// Explains one logged episode against the other four as background.
pub fn cmd_explain(req: &ExplainRequest) -> Result<ExplainOutput, CliError> {
    if req.logs.len() != EXPLAIN_LOGS {
        return Err(CliError::Usage(format!("expected {EXPLAIN_LOGS} episode logs, got {}", req.logs.len())));
    }
    if req.explained >= EXPLAIN_LOGS {
        return Err(CliError::Usage(format!("explained index {} out of range 0..{EXPLAIN_LOGS}", req.explained)));
    }
    let agent = load_agent::<f64>(req.checkpoint)?;
    let episodes = req.logs.iter().map(|p| read_log(p)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut sources = Vec::new();
    for (i, (records, path)) in episodes.iter().zip(req.logs).enumerate() {
        if i != req.explained {
            rows.extend(records.iter().map(|r| r.observation));
            sources.push(path.display().to_string());
        }
    }
    let background = normalized_background::<f64>(&agent.normalizer, &rows, sources)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .truncated(req.background_max);
    let options = ExplainOptions { estimator: req.estimator, n_permutations: req.n_permutations, seed: req.seed };
    let steps = explain_episode(&agent.actor, &agent.normalizer, &episodes[req.explained], &background, &options)
        .map_err(|e| match e {
            ShapError::BudgetExceeded(_) | ShapError::InvalidBackground(_) => CliError::Usage(e.to_string()),
            other => runtime(other),
        })?;
    let files = export_force_plot(&steps, req.out_dir).map_err(runtime)?;
    let ranks = (0..agent.actor.output_width()).map(|k| rank_features(&steps, k)).collect();
    Ok(ExplainOutput { files, steps, ranks })
}

/// Top features per action as a plain-text table.
pub fn rank_table(ranks: &[Vec<(usize, f64)>], top: usize) -> String {
    let mut out = String::new();
    for (k, ranked) in ranks.iter().enumerate() {
        let _ = writeln!(out, "action a{}:", k + 1);
        for (r, (i, v)) in ranked.iter().take(top).enumerate() {
            let _ = writeln!(out, "  {:>2}. {:<24} slot {:>2}  mean|phi| {v:.5}", r + 1, FEATURE_NAMES[*i], i);
        }
    }
    out
}
