//! Logged bandit data and off-policy estimators (IPS, clipped IPS, SNIPS,
//! direct method) plus full-information ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Ensemble, SoftmaxPolicy};
use crate::simulation::{RewardSpec, SupervisedExample};

/// One logged interaction `(x, a, p, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedExample {
    pub features: Vec<f64>,
    pub action: usize,
    pub propensity: f64,
    pub reward: f64,
}

impl LoggedExample {
    pub fn new(features: Vec<f64>, action: usize, propensity: f64, reward: f64) -> Result<Self> {
        let e = LoggedExample {
            features,
            action,
            propensity,
            reward,
        };
        e.validate(None)?;
        Ok(e)
    }

    fn validate(&self, num_actions: Option<usize>) -> Result<()> {
        if !(self.propensity > 0.0 && self.propensity <= 1.0) {
            return Err(Error::InvalidPropensity(self.propensity));
        }
        if !self.reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        if let Some(k) = num_actions {
            if self.action >= k {
                return Err(Error::ActionOutOfRange {
                    action: self.action,
                    num_actions: k,
                });
            }
        }
        Ok(())
    }
}

/// A validated collection of logged interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditDataset {
    examples: Vec<LoggedExample>,
    num_actions: usize,
    feature_dim: usize,
}

impl BanditDataset {
    pub fn new(examples: Vec<LoggedExample>, num_actions: usize, feature_dim: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidConfig("num_actions must be positive".into()));
        }
        for e in &examples {
            if e.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: e.features.len(),
                });
            }
            e.validate(Some(num_actions))?;
        }
        Ok(BanditDataset {
            examples,
            num_actions,
            feature_dim,
        })
    }

    pub fn examples(&self) -> &[LoggedExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<LoggedExample> {
        self.examples
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.examples.iter().map(|e| e.reward).sum::<f64>() / self.examples.len() as f64
    }

    /// Same log with every reward replaced by `f(reward)`.
    pub fn map_rewards(&self, f: impl Fn(f64) -> f64) -> BanditDataset {
        let mut out = self.clone();
        for e in &mut out.examples {
            e.reward = f(e.reward);
        }
        out
    }

    fn check_policy(&self, ensemble: &Ensemble) -> Result<()> {
        if ensemble.num_actions() != self.num_actions {
            return Err(Error::DimensionMismatch {
                expected: self.num_actions,
                found: ensemble.num_actions(),
            });
        }
        if ensemble.feature_dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: ensemble.feature_dim(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ips,
    IpsClipped,
    Snips,
    Dm,
    Truth,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ips => "ips",
            EstimatorKind::IpsClipped => "ips_clipped",
            EstimatorKind::Snips => "snips",
            EstimatorKind::Dm => "dm",
            EstimatorKind::Truth => "truth",
        }
    }
}

/// Whether `value` is a risk (lower is better) or a reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Risk,
    Reward,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub estimator: EstimatorKind,
    pub clip_cap: Option<f64>,
    pub orientation: Orientation,
}

impl RiskEstimate {
    pub fn reward(&self) -> f64 {
        match self.orientation {
            Orientation::Reward => self.value,
            Orientation::Risk => -self.value,
        }
    }

    pub fn risk(&self) -> f64 {
        -self.reward()
    }
}

/// Importance weights `pi(a_i|x_i) / p_i`.
pub fn importance_weights(policy: &SoftmaxPolicy, data: &BanditDataset) -> Result<Vec<f64>> {
    data.check_policy(&policy.ensemble)?;
    let k = data.num_actions();
    let mut scores = vec![0.0; k];
    let mut probs = vec![0.0; k];
    Ok(data
        .examples()
        .iter()
        .map(|e| {
            policy.ensemble.score_into(&e.features, &mut scores);
            policy.distribution_from_scores(&scores, &mut probs);
            probs[e.action] / e.propensity
        })
        .collect())
}

/// `(1/n) sum -r_i w_i`, with `w_i` capped at `clip_cap` when given.
pub fn ips_risk(policy: &SoftmaxPolicy, data: &BanditDataset, clip_cap: Option<f64>) -> Result<RiskEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some(c) = clip_cap {
        if !(c > 0.0) {
            return Err(Error::InvalidConfig(format!("clip cap must be positive, got {c}")));
        }
    }
    let w = importance_weights(policy, data)?;
    let total: f64 = data
        .examples()
        .iter()
        .zip(&w)
        .map(|(e, &w)| -e.reward * clip_cap.map_or(w, |c| w.min(c)))
        .sum();
    Ok(RiskEstimate {
        value: total / data.len() as f64,
        estimator: if clip_cap.is_some() {
            EstimatorKind::IpsClipped
        } else {
            EstimatorKind::Ips
        },
        clip_cap,
        orientation: Orientation::Risk,
    })
}

/// `sum r_i w_i / sum w_i`, as a reward.
pub fn snips_reward(policy: &SoftmaxPolicy, data: &BanditDataset) -> Result<RiskEstimate> {
    let w = importance_weights(policy, data)?;
    snips_from_weights(data, &w)
}

pub(crate) fn snips_from_weights(data: &BanditDataset, w: &[f64]) -> Result<RiskEstimate> {
    let den: f64 = w.iter().sum();
    if !(den > 0.0) {
        return Err(Error::ZeroImportanceWeight);
    }
    let num: f64 = data.examples().iter().zip(w).map(|(e, &w)| e.reward * w).sum();
    Ok(RiskEstimate {
        value: num / den,
        estimator: EstimatorKind::Snips,
        clip_cap: None,
        orientation: Orientation::Reward,
    })
}

/// `(1/m) sum_x sum_a pi(a|x) g(x, a)` with `g` the reward model's scores.
pub fn dm_reward(reward_model: &Ensemble, policy: &SoftmaxPolicy, contexts: &[Vec<f64>]) -> Result<RiskEstimate> {
    if contexts.is_empty() {
        return Err(Error::EmptyData);
    }
    let k = policy.num_actions();
    if reward_model.num_actions() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: reward_model.num_actions(),
        });
    }
    let mut total = 0.0;
    for x in contexts {
        let g = reward_model.score(x)?;
        let pi = policy.distribution(x)?;
        total += pi.probs.iter().zip(&g.values).map(|(p, g)| p * g).sum::<f64>();
    }
    Ok(RiskEstimate {
        value: total / contexts.len() as f64,
        estimator: EstimatorKind::Dm,
        clip_cap: None,
        orientation: Orientation::Reward,
    })
}

/// Mean full-information reward of the policy's actions on labeled data.
/// A finite-`beta` policy contributes its expected reward.
pub fn ground_truth_reward(policy: &SoftmaxPolicy, test: &[SupervisedExample], spec: &RewardSpec) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut total = 0.0;
    for ex in test {
        let pi = policy.distribution(&ex.features)?;
        for (a, &p) in pi.probs.iter().enumerate() {
            if p > 0.0 {
                total += p * spec.reward(&ex.labels, a);
            }
        }
    }
    Ok(total / test.len() as f64)
}
