//! Seeded experiment pipeline: split a supervised dataset, simulate bandit
//! logs for several trials, train per trial, and score on held-out labels.
//!
//! Seed layout: the split uses `derive_seed(master, 0)`; trial `k` uses
//! `t = derive_seed(master, k + 1)`, from which the logging-subset split,
//! logging-policy training and conversion take `derive_seed(t, 0..3)`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{train, BoostConfig, StopReason, TrainTrace, Validation, ValidationSource};
use crate::data_io::{read_bandit_log, read_json, read_supervised_csv, write_bandit_log, write_json, write_supervised_csv};
use crate::error::{Error, Result};
use crate::estimators::{ground_truth_reward, BanditDataset};
use crate::policy::{Ensemble, SoftmaxPolicy};
use crate::simulation::{
    convert, derive_seed, split_dataset, train_logging_policy, LoggingOptions, LoggingPolicy, RewardSpec, SupervisedExample,
    Task,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub task: Task,
    pub groups: Option<Vec<Vec<usize>>>,
    pub partial_credit: f64,
    /// Defaults to `max label + 1`.
    pub num_actions: Option<usize>,
    /// Train / validation / test.
    pub split: [f64; 3],
    /// Share of the training split used to fit the logging policy.
    pub logging_frac: f64,
    pub logging: LoggingOptions,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            task: Task::Multiclass,
            groups: None,
            partial_credit: 0.25,
            num_actions: None,
            split: [0.64, 0.16, 0.20],
            logging_frac: 0.1,
            logging: LoggingOptions::default(),
            trials: 10,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if !(self.logging_frac > 0.0 && self.logging_frac < 1.0) {
            return Err(Error::InvalidConfig("logging_frac must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.logging.epsilon) {
            return Err(Error::InvalidConfig("epsilon must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn reward_spec(&self, examples: &[SupervisedExample]) -> Result<RewardSpec> {
        let k = match self.num_actions {
            Some(k) => k,
            None => examples
                .iter()
                .flat_map(|e| e.labels.iter().map(|l| l + 1))
                .max()
                .ok_or(Error::EmptyData)?,
        };
        RewardSpec::new(self.task, self.groups.clone(), self.partial_credit, k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<SupervisedExample>,
    pub validation: Vec<SupervisedExample>,
    pub test: Vec<SupervisedExample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub logging_subset: Vec<SupervisedExample>,
    pub logging_policy: LoggingPolicy,
    pub log: BanditDataset,
    pub logging_validation_reward: f64,
    pub logging_test_reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub config: SimulationConfig,
    pub spec: RewardSpec,
    pub feature_dim: usize,
    pub splits: Splits,
    pub trials: Vec<Trial>,
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, trial as u64 + 1)
}

fn make_trial(
    index: usize,
    train: &[SupervisedExample],
    splits: &Splits,
    spec: &RewardSpec,
    config: &SimulationConfig,
) -> Result<Trial> {
    let seed = trial_seed(config.seed, index);
    let mut parts = split_dataset(train, &[config.logging_frac, 1.0 - config.logging_frac], derive_seed(seed, 0))?;
    let rest = parts.pop().expect("two parts");
    let subset = parts.pop().expect("two parts");
    let logging = train_logging_policy(&subset, spec.num_actions, &config.logging, derive_seed(seed, 1))?;
    let log = convert(&rest, &logging, spec, derive_seed(seed, 2))?;
    Ok(Trial {
        index,
        seed,
        logging_validation_reward: logging.expected_reward(&splits.validation, spec)?,
        logging_test_reward: logging.expected_reward(&splits.test, spec)?,
        logging_subset: subset,
        logging_policy: logging,
        log,
    })
}

/// Splits once, then simulates every trial (in parallel, results in order).
pub fn simulate(examples: &[SupervisedExample], config: &SimulationConfig) -> Result<Simulation> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyData);
    }
    let spec = config.reward_spec(examples)?;
    for e in examples {
        spec.validate_example(e)?;
    }
    let feature_dim = examples[0].features.len();
    let mut parts = split_dataset(examples, &config.split, derive_seed(config.seed, 0))?;
    let splits = Splits {
        test: parts.pop().expect("three parts"),
        validation: parts.pop().expect("three parts"),
        train: parts.pop().expect("three parts"),
    };
    if splits.train.is_empty() || splits.validation.is_empty() || splits.test.is_empty() {
        return Err(Error::InvalidFractions("every split must be nonempty".into()));
    }
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|k| make_trial(k, &splits.train, &splits, &spec, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulation {
        config: config.clone(),
        spec,
        feature_dim,
        splits,
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub index: usize,
    pub seed: u64,
    pub log_rows: usize,
    pub subset_rows: usize,
    pub logging_validation_reward: f64,
    pub logging_test_reward: f64,
}

/// `manifest.json` of a simulation directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: SimulationConfig,
    pub spec: RewardSpec,
    pub feature_dim: usize,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
    pub trials: Vec<TrialManifest>,
    /// Caller-supplied provenance (e.g. the effective run config).
    pub echo: serde_json::Value,
}

pub fn trial_dir(dir: &Path, index: usize) -> std::path::PathBuf {
    dir.join(format!("trial_{index}"))
}

/// Layout: `split/{train,validation,test}.csv`,
/// `trial_k/{log.csv,logging_subset.csv,logging_policy.json}`, `manifest.json`.
pub fn write_simulation(dir: &Path, sim: &Simulation, echo: serde_json::Value) -> Result<()> {
    let task = sim.spec.task;
    std::fs::create_dir_all(dir.join("split"))?;
    write_supervised_csv(&dir.join("split/train.csv"), &sim.splits.train, task)?;
    write_supervised_csv(&dir.join("split/validation.csv"), &sim.splits.validation, task)?;
    write_supervised_csv(&dir.join("split/test.csv"), &sim.splits.test, task)?;
    for t in &sim.trials {
        let td = trial_dir(dir, t.index);
        std::fs::create_dir_all(&td)?;
        write_bandit_log(&td.join("log.csv"), &t.log)?;
        write_supervised_csv(&td.join("logging_subset.csv"), &t.logging_subset, task)?;
        write_json(&td.join("logging_policy.json"), &t.logging_policy)?;
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config: sim.config.clone(),
        spec: sim.spec.clone(),
        feature_dim: sim.feature_dim,
        train_rows: sim.splits.train.len(),
        validation_rows: sim.splits.validation.len(),
        test_rows: sim.splits.test.len(),
        trials: sim
            .trials
            .iter()
            .map(|t| TrialManifest {
                index: t.index,
                seed: t.seed,
                log_rows: t.log.len(),
                subset_rows: t.logging_subset.len(),
                logging_validation_reward: t.logging_validation_reward,
                logging_test_reward: t.logging_test_reward,
            })
            .collect(),
        echo,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(&dir.join("manifest.json"))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::VersionMismatch {
            expected: MANIFEST_VERSION,
            found: m.format_version,
        });
    }
    Ok(m)
}

pub fn load_simulation(dir: &Path) -> Result<Simulation> {
    let m = read_manifest(dir)?;
    let task = m.spec.task;
    let splits = Splits {
        train: read_supervised_csv(&dir.join("split/train.csv"), task)?,
        validation: read_supervised_csv(&dir.join("split/validation.csv"), task)?,
        test: read_supervised_csv(&dir.join("split/test.csv"), task)?,
    };
    let mut trials = Vec::with_capacity(m.trials.len());
    for tm in &m.trials {
        let td = trial_dir(dir, tm.index);
        let log = read_bandit_log(&td.join("log.csv"), Some(m.spec.num_actions))?;
        if log.feature_dim() != m.feature_dim {
            return Err(Error::Schema(format!("trial {} log has the wrong width", tm.index)));
        }
        trials.push(Trial {
            index: tm.index,
            seed: tm.seed,
            logging_subset: read_supervised_csv(&td.join("logging_subset.csv"), task)?,
            logging_policy: read_json(&td.join("logging_policy.json"))?,
            log,
            logging_validation_reward: tm.logging_validation_reward,
            logging_test_reward: tm.logging_test_reward,
        });
    }
    Ok(Simulation {
        config: m.config,
        spec: m.spec,
        feature_dim: m.feature_dim,
        splits,
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub members: usize,
    pub stop_reason: StopReason,
    /// Argmax ground-truth reward on the validation split.
    pub validation_reward: f64,
    /// Argmax ground-truth reward on the test split.
    pub test_reward: f64,
    pub logging_test_reward: f64,
}

pub struct TrialRun {
    pub ensemble: Ensemble,
    pub trace: TrainTrace,
    pub result: TrialResult,
}

/// Trains on one trial's log. With `patience`, stops early on the
/// validation split's ground-truth reward.
pub fn run_trial(sim: &Simulation, trial: usize, config: &BoostConfig, patience: Option<usize>) -> Result<TrialRun> {
    let t = sim
        .trials
        .get(trial)
        .ok_or_else(|| Error::InvalidConfig(format!("no trial {trial}")))?;
    let validation = patience.map(|p| Validation {
        source: ValidationSource::Supervised {
            examples: &sim.splits.validation,
            spec: &sim.spec,
        },
        patience: p,
    });
    let (ensemble, trace) = train(&t.log, config, validation)?;
    let policy = SoftmaxPolicy::argmax(ensemble.clone());
    let result = TrialResult {
        trial,
        members: ensemble.len(),
        stop_reason: trace.stop_reason,
        validation_reward: ground_truth_reward(&policy, &sim.splits.validation, &sim.spec)?,
        test_reward: ground_truth_reward(&policy, &sim.splits.test, &sim.spec)?,
        logging_test_reward: t.logging_test_reward,
    };
    Ok(TrialRun { ensemble, trace, result })
}

/// Runs the first `trials` trials in parallel; results are in trial order.
pub fn run_trials(sim: &Simulation, config: &BoostConfig, trials: usize, patience: Option<usize>) -> Result<Vec<TrialResult>> {
    let n = trials.min(sim.trials.len());
    (0..n)
        .into_par_iter()
        .map(|k| run_trial(sim, k, config, patience).map(|r| r.result))
        .collect()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    /// Position of the configuration in the candidate list.
    pub candidate: usize,
    pub config: BoostConfig,
    pub mean_validation_reward: f64,
    pub mean_test_reward: f64,
    pub trials: Vec<TrialResult>,
}

/// Trains every candidate on the first `trials` trials and ranks by
/// descending mean validation reward (ties keep candidate order).
pub fn sweep(sim: &Simulation, candidates: &[BoostConfig], trials: usize, patience: Option<usize>) -> Result<Vec<SweepRow>> {
    let n = trials.min(sim.trials.len());
    if n == 0 || candidates.is_empty() {
        return Err(Error::EmptyData);
    }
    let jobs: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|c| (0..n).map(move |k| (c, k))).collect();
    let results = jobs
        .par_iter()
        .map(|&(c, k)| run_trial(sim, k, &candidates[c], patience).map(|r| r.result))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<SweepRow> = candidates
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let trials = results[c * n..(c + 1) * n].to_vec();
            SweepRow {
                rank: 0,
                candidate: c,
                config: cfg.clone(),
                mean_validation_reward: mean(trials.iter().map(|t| t.validation_reward)),
                mean_test_reward: mean(trials.iter().map(|t| t.test_reward)),
                trials,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.mean_validation_reward.total_cmp(&a.mean_validation_reward).then(a.candidate.cmp(&b.candidate)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::Algorithm;
    use crate::simulation::synthetic_multilabel;
    use crate::tree::TreeParams;

    fn sim_config() -> SimulationConfig {
        SimulationConfig {
            task: Task::Multilabel,
            num_actions: Some(4),
            trials: 3,
            seed: 17,
            ..SimulationConfig::default()
        }
    }

    fn small_boost() -> BoostConfig {
        BoostConfig {
            rounds: 15,
            tree: TreeParams {
                max_depth: 3,
                min_child_weight: 2.0,
                reg_lambda: 0.01,
            },
            reward_translation: -0.2,
            ..BoostConfig::default()
        }
    }

    #[test]
    fn simulation_is_deterministic_and_consistent() {
        let data = synthetic_multilabel(400, 5, 4, 3);
        let a = simulate(&data, &sim_config()).unwrap();
        let b = simulate(&data, &sim_config()).unwrap();
        assert_eq!(a, b);
        let s = &a.splits;
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 400);
        assert_eq!(s.train.len(), 256);
        for t in &a.trials {
            assert_eq!(t.logging_subset.len() + t.log.len(), s.train.len());
            let recomputed = t.logging_policy.expected_reward(&s.validation, &a.spec).unwrap();
            assert_eq!(recomputed, t.logging_validation_reward);
            for e in t.log.examples() {
                let q = t.logging_policy.probs(&e.features).unwrap();
                assert_eq!(q[e.action], e.propensity);
                assert!(e.propensity >= 0.05 / 4.0);
            }
        }
        assert_ne!(a.trials[0].log, a.trials[1].log);
    }

    #[test]
    fn directory_round_trip() {
        let data = synthetic_multilabel(200, 3, 4, 8);
        let sim = simulate(&data, &sim_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_simulation(dir.path(), &sim, serde_json::json!({"k": "v"})).unwrap();
        assert_eq!(load_simulation(dir.path()).unwrap(), sim);
        assert_eq!(read_manifest(dir.path()).unwrap().echo, serde_json::json!({"k": "v"}));
    }

    #[test]
    fn trials_and_sweep() {
        let data = synthetic_multilabel(300, 4, 4, 5);
        let sim = simulate(&data, &sim_config()).unwrap();
        let base = small_boost();
        let results = run_trials(&sim, &base, 2, None).unwrap();
        assert_eq!(results.len(), 2);
        let one = run_trial(&sim, 1, &base, None).unwrap();
        assert_eq!(one.result, results[1]);

        let candidates = vec![
            base.clone(),
            BoostConfig {
                rounds: 1,
                tree: TreeParams {
                    max_depth: 0,
                    ..base.tree
                },
                ..base.clone()
            },
            BoostConfig {
                algorithm: Algorithm::BoplS,
                ..base.clone()
            },
        ];
        let rows = sweep(&sim, &candidates, 2, None).unwrap();
        assert_eq!(rows.len(), 3);
        for w in rows.windows(2) {
            assert!(w[0].mean_validation_reward >= w[1].mean_validation_reward);
        }
        let best = &rows[0];
        let replay = run_trials(&sim, &best.config, 2, None).unwrap();
        assert_eq!(replay, best.trials);
        assert_eq!(sweep(&sim, &candidates[..1], 2, None).unwrap().len(), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let data = synthetic_multilabel(50, 2, 3, 1);
        let bad = SimulationConfig {
            logging_frac: 1.0,
            ..sim_config()
        };
        assert!(simulate(&data, &bad).is_err());
        assert!(simulate(&[], &sim_config()).is_err());
    }
}
