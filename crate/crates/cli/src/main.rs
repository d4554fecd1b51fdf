//! `bopl`: simulate bandit logs, train boosted policies, evaluate them, and
//! sweep hyperparameters.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bopl_core::boosting::{train, BoostConfig};
use bopl_core::data_io::{
    read_bandit_log, read_model, read_supervised_csv, write_json, write_model, write_trace, ModelFile, ModelMetadata,
};
use bopl_core::estimators::{dm_reward, ground_truth_reward, ips_risk, snips_reward, BanditDataset};
use bopl_core::experiment::{load_simulation, read_manifest, simulate, sweep, write_simulation, SimulationConfig};
use bopl_core::policy::{Beta, SoftmaxPolicy};
use bopl_core::simulation::{LoggingOptions, RewardSpec, Task};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Grid, RunConfig};

#[derive(Parser)]
#[command(name = "bopl", version, about = "Boosted off-policy learning from logged bandit feedback")]
struct Cli {
    /// Worker threads for parallel trials.
    #[arg(long, global = true, env = "BOPL_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a supervised CSV into per-trial bandit logs.
    Simulate(SimulateArgs),
    /// Train a policy on a bandit log.
    Train(TrainArgs),
    /// Estimate a model's reward.
    Evaluate(EvaluateArgs),
    /// Random search over a hyperparameter grid on a simulation directory.
    Sweep(SweepArgs),
}

/// Flags that map onto run-config keys.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat TOML run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "algo")]
    algorithm: Option<String>,
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    reward_translation: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_child_weight: Option<f64>,
    #[arg(long)]
    reg_lambda: Option<f64>,
    #[arg(long)]
    shrinkage: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    logging_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    clip_cap: Option<f64>,
    #[arg(long)]
    estimator: Option<String>,
}

impl ConfigFlags {
    fn effective(&self) -> Result<RunConfig> {
        let flags = RunConfig {
            algorithm: self.algorithm.clone(),
            base: self.base.clone(),
            rounds: self.rounds,
            omega: self.omega,
            reward_translation: self.reward_translation,
            max_depth: self.max_depth,
            min_child_weight: self.min_child_weight,
            reg_lambda: self.reg_lambda,
            shrinkage: self.shrinkage,
            epsilon: self.epsilon,
            logging_frac: self.logging_frac,
            seed: self.seed,
            trials: self.trials,
            clip_cap: self.clip_cap,
            estimator: self.estimator.clone(),
        };
        Ok(RunConfig::load(self.config.as_deref())?.overlay(&flags).resolved())
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "multiclass")]
    task: Task,
    /// `fashion-mnist`, `covertype`, or explicit groups such as `2,4;0,6`.
    #[arg(long)]
    groups: Option<String>,
    #[arg(long, default_value_t = 0.25)]
    partial_credit: f64,
    #[arg(long)]
    num_actions: Option<usize>,
    /// Train / validation / test fractions.
    #[arg(long, default_value = "0.64,0.16,0.2")]
    split: String,
    #[arg(long, default_value_t = LoggingOptions::default().l2)]
    l2: f64,
    #[arg(long, default_value_t = LoggingOptions::default().max_epochs)]
    max_epochs: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    log: PathBuf,
    /// Defaults to the simulation manifest next to the log, else max action + 1.
    #[arg(long)]
    num_actions: Option<usize>,
    /// Inverse temperature stored in the model: a number or `argmax`.
    #[arg(long, default_value = "argmax")]
    beta: String,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_trace: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Supervised CSV for `truth`, bandit log otherwise.
    #[arg(long)]
    data: PathBuf,
    /// Reward model for `dm`.
    #[arg(long)]
    reward_model: Option<PathBuf>,
    /// Overrides the model's inverse temperature.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long, default_value = "multiclass")]
    task: Task,
    #[arg(long)]
    groups: Option<String>,
    #[arg(long, default_value_t = 0.25)]
    partial_credit: f64,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Directory written by `simulate`.
    #[arg(long)]
    sim_dir: PathBuf,
    #[arg(long, default_value = "validation-reward")]
    metric: String,
    /// Number of configurations to sample from the grid (default: all).
    #[arg(long)]
    samples: Option<usize>,
    /// Stop each run early after this many rounds without validation gain.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
}

fn parse_beta(s: &str) -> Result<Beta> {
    if s == "argmax" {
        return Ok(Beta::Argmax);
    }
    let b: f64 = s.parse().with_context(|| format!("invalid beta {s:?}"))?;
    Ok(Beta::Finite(b).validate()?)
}

fn parse_groups(s: Option<&str>) -> Result<Option<Vec<Vec<usize>>>> {
    let Some(s) = s else { return Ok(None) };
    match s {
        "" | "none" => Ok(None),
        "fashion-mnist" => Ok(RewardSpec::fashion_mnist().groups),
        "covertype" => Ok(RewardSpec::covertype().groups),
        _ => s
            .split(';')
            .map(|g| {
                g.split(',')
                    .map(|v| v.trim().parse::<usize>().with_context(|| format!("invalid group member {v:?}")))
                    .collect()
            })
            .collect::<Result<Vec<Vec<usize>>>>()
            .map(Some),
    }
}

fn parse_fractions(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("invalid fraction {x:?}")))
        .collect::<Result<_>>()?;
    v.try_into().map_err(|_| anyhow::anyhow!("--split needs three fractions"))
}

/// Removes outputs that did not exist before the command when it fails.
struct Outputs(Vec<(PathBuf, bool)>);

impl Outputs {
    fn new(paths: &[&Path]) -> Self {
        Outputs(paths.iter().map(|p| (p.to_path_buf(), p.exists())).collect())
    }

    fn guard<T>(self, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let r = f();
        if r.is_err() {
            for (p, existed) in &self.0 {
                if !existed {
                    if p.is_dir() {
                        let _ = std::fs::remove_dir_all(p);
                    } else {
                        let _ = std::fs::remove_file(p);
                    }
                }
            }
        }
        r
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let run = a.config.effective()?;
    let sim_config = SimulationConfig {
        task: a.task,
        groups: parse_groups(a.groups.as_deref())?,
        partial_credit: a.partial_credit,
        num_actions: a.num_actions,
        split: parse_fractions(&a.split)?,
        logging_frac: run.logging_frac.unwrap(),
        logging: LoggingOptions {
            l2: a.l2,
            max_epochs: a.max_epochs,
            epsilon: run.epsilon.unwrap(),
        },
        trials: run.trials.unwrap(),
        seed: run.seed.unwrap(),
    };
    let examples = read_supervised_csv(&a.input, a.task)?;
    Outputs::new(&[&a.out_dir]).guard(|| {
        let sim = simulate(&examples, &sim_config)?;
        write_simulation(&a.out_dir, &sim, run.to_json())?;
        for t in &sim.trials {
            println!(
                "trial {}: log rows {}, logging policy validation reward {}, test reward {}",
                t.index,
                t.log.len(),
                t.logging_validation_reward,
                t.logging_test_reward
            );
        }
        let mean = |f: fn(&bopl_core::experiment::Trial) -> f64| {
            bopl_core::experiment::mean(sim.trials.iter().map(f))
        };
        println!(
            "logging policy mean validation reward {} mean test reward {}",
            mean(|t| t.logging_validation_reward),
            mean(|t| t.logging_test_reward)
        );
        println!("wrote {}", a.out_dir.display());
        Ok(())
    })
}

/// Action count from the flag, else a simulation manifest two levels up.
fn log_num_actions(log: &Path, flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        let dir = log.parent()?.parent()?;
        read_manifest(dir).ok().map(|m| m.spec.num_actions)
    })
}

fn read_log(path: &Path, num_actions: Option<usize>) -> Result<BanditDataset> {
    read_bandit_log(path, log_num_actions(path, num_actions)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let run = a.config.effective()?;
    let boost = run.boost_config()?;
    let beta = parse_beta(&a.beta)?;
    let log = read_log(&a.log, a.num_actions)?;
    let mut outs: Vec<&Path> = vec![&a.out_model];
    let meta_path;
    if let Some(t) = &a.out_trace {
        meta_path = bopl_core::data_io::trace_meta_path(t);
        outs.push(t);
        outs.push(&meta_path);
    }
    Outputs::new(&outs).guard(|| {
        let (ensemble, trace) = train(&log, &boost, None)?;
        let members = ensemble.len();
        let policy = SoftmaxPolicy::new(ensemble, beta)?;
        let metadata = ModelMetadata {
            algorithm: boost.algorithm.name().to_string(),
            config: run.to_json(),
            seed: run.seed,
        };
        write_model(&a.out_model, &ModelFile::from_policy(&policy, metadata))?;
        if let Some(t) = &a.out_trace {
            write_trace(t, &trace, run.to_json())?;
        }
        println!(
            "{}: {} rounds, {} members; {}",
            boost.algorithm.name(),
            trace.rounds.len(),
            members,
            trace.stop_reason.describe()
        );
        Ok(())
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let run = a.config.effective()?;
    let model = read_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let mut policy = model.to_policy()?;
    if let Some(b) = &a.beta {
        policy.beta = parse_beta(b)?;
    }
    let k = policy.num_actions();
    let estimator = run.estimator.as_deref().unwrap();
    let (value, n) = match estimator {
        "truth" => {
            let data = read_supervised_csv(&a.data, a.task)?;
            let spec = RewardSpec::new(a.task, parse_groups(a.groups.as_deref())?, a.partial_credit, k)?;
            for e in &data {
                spec.validate_example(e)?;
            }
            (ground_truth_reward(&policy, &data, &spec)?, data.len())
        }
        "ips" => {
            let log = read_bandit_log(&a.data, Some(k))?;
            (ips_risk(&policy, &log, run.clip_cap)?.reward(), log.len())
        }
        "snips" => {
            let log = read_bandit_log(&a.data, Some(k))?;
            (snips_reward(&policy, &log)?.reward(), log.len())
        }
        "dm" => {
            let Some(rm) = &a.reward_model else { bail!("dm needs --reward-model") };
            let reward_model = read_model(rm)?.to_policy()?.ensemble;
            let log = read_bandit_log(&a.data, Some(k))?;
            let contexts: Vec<Vec<f64>> = log.examples().iter().map(|e| e.features.clone()).collect();
            (dm_reward(&reward_model, &policy, &contexts)?.reward(), log.len())
        }
        other => bail!("unknown estimator {other:?} (expected truth, ips, snips or dm)"),
    };
    let name = if estimator == "ips" && run.clip_cap.is_some() {
        "ips_clipped"
    } else {
        estimator
    };
    println!("estimator={name} value={value} n={n}");
    println!("config={}", run.to_json());
    Ok(())
}

#[derive(Serialize)]
struct SweepOutRow {
    rank: usize,
    candidate: usize,
    config: RunConfig,
    mean_validation_reward: f64,
    mean_test_reward: f64,
    trials: Vec<bopl_core::experiment::TrialResult>,
}

#[derive(Serialize)]
struct SweepOut {
    metric: String,
    base_config: RunConfig,
    grid_size: usize,
    trials: usize,
    rows: Vec<SweepOutRow>,
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    if a.metric != "validation-reward" {
        bail!("unsupported metric {:?} (only validation-reward)", a.metric);
    }
    let base = a.config.effective()?;
    let grid = Grid::load(&a.grid)?;
    let sim = load_simulation(&a.sim_dir)?;
    let trials = base.trials.unwrap().min(sim.trials.len());
    let runs: Vec<RunConfig> = grid
        .sample(a.samples, base.seed.unwrap())?
        .iter()
        .map(|g| base.clone().overlay(g).resolved())
        .collect();
    let candidates: Vec<BoostConfig> = runs.iter().map(RunConfig::boost_config).collect::<Result<_>>()?;
    Outputs::new(&[&a.out]).guard(|| {
        let rows = sweep(&sim, &candidates, trials, a.patience)?;
        let out = SweepOut {
            metric: a.metric.clone(),
            base_config: base.clone(),
            grid_size: grid.size(),
            trials,
            rows: rows
                .into_iter()
                .map(|r| SweepOutRow {
                    rank: r.rank,
                    candidate: r.candidate,
                    config: runs[r.candidate].clone(),
                    mean_validation_reward: r.mean_validation_reward,
                    mean_test_reward: r.mean_test_reward,
                    trials: r.trials,
                })
                .collect(),
        };
        write_json(&a.out, &out)?;
        for r in &out.rows {
            println!(
                "rank {} candidate {}: mean validation reward {} mean test reward {}",
                r.rank, r.candidate, r.mean_validation_reward, r.mean_test_reward
            );
        }
        let best = &out.rows[0];
        println!("best: {}", serde_json::to_string(&best.config)?);
        Ok(())
    })
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}
