//! Flat run configuration shared by all subcommands, and sweep grids.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bopl_core::boosting::{Algorithm, BaseKind, BoostConfig};
use bopl_core::tree::TreeParams;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Every key is optional; unset keys fall back to defaults. Flags override
/// values read from a file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Option<String>,
    pub base: Option<String>,
    pub rounds: Option<usize>,
    pub omega: Option<f64>,
    pub reward_translation: Option<f64>,
    pub max_depth: Option<usize>,
    pub min_child_weight: Option<f64>,
    pub reg_lambda: Option<f64>,
    pub shrinkage: Option<f64>,
    pub epsilon: Option<f64>,
    pub logging_frac: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub clip_cap: Option<f64>,
    pub estimator: Option<String>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// Values set in `other` win.
    pub fn overlay(mut self, other: &RunConfig) -> Self {
        let dst = &mut self;
        overlay!(dst, other; algorithm, base, rounds, omega, reward_translation, max_depth,
            min_child_weight, reg_lambda, shrinkage, epsilon, logging_frac, seed, trials,
            clip_cap, estimator);
        self
    }

    /// Fills every unset key with its default.
    pub fn resolved(&self) -> RunConfig {
        let b = BoostConfig::default();
        RunConfig {
            algorithm: Some(self.algorithm.clone().unwrap_or_else(|| "bopl".into())),
            base: Some(self.base.clone().unwrap_or_else(|| "regr".into())),
            rounds: Some(self.rounds.unwrap_or(b.rounds)),
            omega: Some(self.omega.unwrap_or(b.omega)),
            reward_translation: Some(self.reward_translation.unwrap_or(b.reward_translation)),
            max_depth: Some(self.max_depth.unwrap_or(b.tree.max_depth)),
            min_child_weight: Some(self.min_child_weight.unwrap_or(b.tree.min_child_weight)),
            reg_lambda: Some(self.reg_lambda.unwrap_or(b.tree.reg_lambda)),
            shrinkage: Some(self.shrinkage.unwrap_or(b.shrinkage)),
            epsilon: Some(self.epsilon.unwrap_or(0.05)),
            logging_frac: Some(self.logging_frac.unwrap_or(0.1)),
            seed: Some(self.seed.unwrap_or(0)),
            trials: Some(self.trials.unwrap_or(10)),
            clip_cap: self.clip_cap,
            estimator: Some(self.estimator.clone().unwrap_or_else(|| "truth".into())),
        }
    }

    pub fn boost_config(&self) -> Result<BoostConfig> {
        let r = self.resolved();
        let defaults = BoostConfig::default();
        let config = BoostConfig {
            algorithm: r.algorithm.as_deref().unwrap().parse::<Algorithm>()?,
            rounds: r.rounds.unwrap(),
            omega: r.omega.unwrap(),
            reward_translation: r.reward_translation.unwrap(),
            tree: TreeParams {
                max_depth: r.max_depth.unwrap(),
                min_child_weight: r.min_child_weight.unwrap(),
                reg_lambda: r.reg_lambda.unwrap(),
            },
            base: r.base.as_deref().unwrap().parse::<BaseKind>()?,
            shrinkage: r.shrinkage.unwrap(),
            clip_cap: r.clip_cap,
            ..defaults
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// A sweep grid: each run-config key maps to a list of candidate values (a
/// scalar means a single value).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    axes: BTreeMap<String, Vec<toml::Value>>,
}

impl Grid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let mut axes = BTreeMap::new();
        for (k, v) in table {
            let values = match v {
                toml::Value::Array(a) => a,
                other => vec![other],
            };
            if values.is_empty() {
                bail!("grid key {k:?} has no values");
            }
            axes.insert(k, values);
        }
        let grid = Grid { axes };
        // Reject unknown keys and ill-typed values up front.
        for c in grid.enumerate()? {
            c.boost_config()?;
        }
        Ok(grid)
    }

    pub fn size(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    /// Cartesian product in lexicographic key order, last key fastest.
    pub fn enumerate(&self) -> Result<Vec<RunConfig>> {
        let keys: Vec<&String> = self.axes.keys().collect();
        let mut out = Vec::with_capacity(self.size());
        for mut idx in 0..self.size() {
            let mut table = toml::Table::new();
            for k in keys.iter().rev() {
                let vals = &self.axes[*k];
                table.insert((*k).clone(), vals[idx % vals.len()].clone());
                idx /= vals.len();
            }
            let c: RunConfig = table.try_into().context("invalid grid entry")?;
            out.push(c);
        }
        Ok(out)
    }

    /// `samples` configurations drawn uniformly without replacement (all of
    /// them, in grid order, when `samples` is absent or covers the grid).
    pub fn sample(&self, samples: Option<usize>, seed: u64) -> Result<Vec<RunConfig>> {
        let all = self.enumerate()?;
        match samples {
            Some(s) if s < all.len() => {
                let mut idx: Vec<usize> = (0..all.len()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                idx.truncate(s);
                idx.sort_unstable();
                Ok(idx.into_iter().map(|i| all[i].clone()).collect())
            }
            _ => Ok(all),
        }
    }
}
