//! Boosted off-policy learning.
//!
//! Each round fits a tree to the functional gradient of the IPS risk (BOPL)
//! or of the composite surrogate risk (BOPL-S), rescales it to the fixed
//! scale `omega`, and appends it with the weight minimizing the quadratic
//! upper bound of the objective. Scores on the training contexts are cached
//! so a round costs one tree fit plus one pass over the log.

use serde::{Deserialize, Serialize};

use crate::base_learners::{
    classification_rows, fit_classification_rows, fit_regression_rows, gradient_coefficient, probs_from_scores,
    regression_rows, regression_weight, row_error_rate, smoothness_switch, surrogate_switch, TreeParams, Variant,
};
use crate::error::{Error, Result};
use crate::estimators::BanditDataset;
use crate::policy::{argmax, log_softmax_at, softmax_into, Ensemble, Predictor};
use crate::simulation::{RewardSpec, SupervisedExample};
use crate::tree::{ActionDesign, DenseDesign, SortedIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bopl,
    BoplS,
    Brr,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bopl => "bopl",
            Algorithm::BoplS => "bopl-s",
            Algorithm::Brr => "brr",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bopl" => Ok(Algorithm::Bopl),
            "bopl-s" | "bopl_s" => Ok(Algorithm::BoplS),
            "brr" => Ok(Algorithm::Brr),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Regression,
    Classification,
}

impl std::str::FromStr for BaseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regr" | "regression" => Ok(BaseKind::Regression),
            "class" | "classification" => Ok(BaseKind::Classification),
            _ => Err(Error::InvalidConfig(format!("unknown base learner {s:?}"))),
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub omega: f64,
    /// Added to every training reward (`-0.2` means rewards `r - 0.2`).
    pub reward_translation: f64,
    pub tree: TreeParams,
    pub base: BaseKind,
    pub shrinkage: f64,
    pub stop_threshold: f64,
    /// Recorded for provenance; the training objective is the unclipped risk.
    pub clip_cap: Option<f64>,
    /// Rescale every predictor to `omega` exactly; otherwise use its own scale.
    pub rescale: bool,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            algorithm: Algorithm::Bopl,
            rounds: 100,
            omega: 1.0,
            reward_translation: 0.0,
            tree: TreeParams::default(),
            base: BaseKind::Regression,
            shrinkage: 1.0,
            stop_threshold: 1e-10,
            clip_cap: None,
            rescale: true,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad("omega must be positive");
        }
        if !self.reward_translation.is_finite() {
            return bad("reward_translation must be finite");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must lie in (0, 1]");
        }
        if !(self.stop_threshold >= 0.0) {
            return bad("stop_threshold must be >= 0");
        }
        if let Some(c) = self.clip_cap {
            if !(c > 0.0) {
                return bad("clip_cap must be positive");
            }
        }
        self.tree.validate()
    }

    fn variant(&self) -> Variant {
        match self.algorithm {
            Algorithm::BoplS => Variant::BoplS,
            _ => Variant::Bopl,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RoundsExhausted,
    GradientVanished,
    PredictorVanished,
    WeightVanished,
    ValidationPatience,
}

impl StopReason {
    pub fn describe(self) -> &'static str {
        match self {
            StopReason::RoundsExhausted => "rounds exhausted",
            StopReason::GradientVanished => "early stop: gradient term below threshold",
            StopReason::PredictorVanished => "early stop: base predictor vanished",
            StopReason::WeightVanished => "early stop: ensemble weight below threshold",
            StopReason::ValidationPatience => "early stop: validation reward stopped improving",
        }
    }
}

/// Diagnostics of one completed round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    /// Weight actually appended (after shrinkage).
    pub alpha: f64,
    pub grad_term: f64,
    /// Norm of the objective's gradient at the start of the round.
    pub grad_norm: f64,
    pub emp_risk: f64,
    pub surrogate_risk: Option<f64>,
    pub snips_train: Option<f64>,
    pub bound: Option<f64>,
    pub error_rate: Option<f64>,
    /// Scale of the fitted predictor before rescaling.
    pub raw_omega: f64,
    /// `xi_i` of this round (BOPL-S only).
    pub surrogate_switch: Vec<f64>,
    pub validation_reward: Option<f64>,
}

/// Per-run diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub algorithm: Algorithm,
    pub omega: f64,
    pub min_emp_risk: f64,
    /// `Delta_0 = R(pi_0) - R*`.
    pub initial_excess_risk: f64,
    pub initial_emp_risk: f64,
    pub initial_surrogate_risk: f64,
    /// `rho_i` (BOPL-S only).
    pub smoothness_switch: Vec<f64>,
    pub rounds: Vec<RoundStats>,
    pub stop_reason: StopReason,
    /// Number of members kept after validation-based truncation.
    pub kept_rounds: usize,
}

impl TrainTrace {
    pub fn alphas(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.alpha).collect()
    }
}

/// Source of the validation reward for patience-based stopping.
#[derive(Clone, Copy, Debug)]
pub enum ValidationSource<'a> {
    /// SNIPS of the argmax policy on the untranslated training log.
    TrainSnips,
    /// Full-information argmax reward on labeled validation data.
    Supervised {
        examples: &'a [SupervisedExample],
        spec: &'a RewardSpec,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct Validation<'a> {
    pub source: ValidationSource<'a>,
    pub patience: usize,
}

impl<'a> Validation<'a> {
    pub fn new(source: ValidationSource<'a>) -> Self {
        Validation { source, patience: 10 }
    }
}

/// Every reward becomes `r - c`.
pub fn translate_rewards(data: &BanditDataset, c: f64) -> BanditDataset {
    data.map_rewards(|r| r - c)
}

/// `R* = (1/n) sum_i min(0, -r_i / p_i)`.
pub fn min_emp_risk(data: &BanditDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.examples()
        .iter()
        .map(|e| (-e.reward / e.propensity).min(0.0))
        .sum::<f64>()
        / data.len() as f64
}

/// `alpha = (2 / omega) grad_term`.
pub fn bopl_ensemble_weight(grad_term: f64, omega: f64) -> f64 {
    2.0 / omega * grad_term
}

/// `alpha = grad_term / omega`.
pub fn bopls_ensemble_weight(grad_term: f64, omega: f64) -> f64 {
    grad_term / omega
}

fn exp_bound(alphas: &[f64], omega: f64, delta0: f64, divisor: f64) -> Vec<f64> {
    if !(delta0 > 0.0) {
        return vec![0.0; alphas.len()];
    }
    let mut sum = 0.0;
    alphas
        .iter()
        .map(|a| {
            sum += a * a;
            delta0 * (-(omega / (divisor * delta0)) * sum).exp()
        })
        .collect()
}

/// `Delta_0 exp(-(omega / (4 Delta_0)) sum_{t <= T} alpha_t^2)` for every prefix `T`.
pub fn excess_risk_bound(alphas: &[f64], omega: f64, delta0: f64) -> Vec<f64> {
    exp_bound(alphas, omega, delta0, 4.0)
}

/// Surrogate counterpart: bounds `R~(pi_T) - R*` given `Delta~_0 = R~(pi_0) - R*`.
pub fn surrogate_bound(alphas: &[f64], omega: f64, delta0: f64) -> Vec<f64> {
    exp_bound(alphas, omega, delta0, 2.0)
}

/// IPS risk at `beta = 1` from cached scores (row-major `n x |A|`).
pub fn emp_risk_from_scores(data: &BanditDataset, scores: &[f64]) -> f64 {
    let k = data.num_actions();
    let mut pi = vec![0.0; k];
    let mut total = 0.0;
    for (e, s) in data.examples().iter().zip(scores.chunks(k)) {
        softmax_into(s, 1.0, &mut pi);
        total += -(e.reward / e.propensity) * pi[e.action];
    }
    total / data.len() as f64
}

/// Composite surrogate risk: the loss where `r < 0`, the surrogate loss elsewhere.
pub fn surrogate_risk_from_scores(data: &BanditDataset, scores: &[f64]) -> f64 {
    let k = data.num_actions();
    let mut pi = vec![0.0; k];
    let mut total = 0.0;
    for (e, s) in data.examples().iter().zip(scores.chunks(k)) {
        let c = e.reward / e.propensity;
        if e.reward < 0.0 {
            softmax_into(s, 1.0, &mut pi);
            total += -c * pi[e.action];
        } else if e.reward > 0.0 {
            total += -c * (log_softmax_at(s, e.action) + 1.0);
        }
    }
    total / data.len() as f64
}

fn ensemble_scores(ensemble: &Ensemble, data: &BanditDataset) -> Result<Vec<f64>> {
    let k = data.num_actions();
    let mut out = vec![0.0; data.len() * k];
    for (e, s) in data.examples().iter().zip(out.chunks_mut(k)) {
        ensemble.check_features(&e.features)?;
        ensemble.score_into(&e.features, s);
    }
    Ok(out)
}

/// `R(pi_f, S)` at `beta = 1`.
pub fn emp_risk(data: &BanditDataset, ensemble: &Ensemble) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(emp_risk_from_scores(data, &ensemble_scores(ensemble, data)?))
}

/// `R~(pi_f, S)` at `beta = 1`.
pub fn surrogate_risk(data: &BanditDataset, ensemble: &Ensemble) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(surrogate_risk_from_scores(data, &ensemble_scores(ensemble, data)?))
}

/// SNIPS reward of the argmax policy from cached scores; `None` when no
/// logged action agrees with it.
fn argmax_snips(data: &BanditDataset, scores: &[f64]) -> Option<f64> {
    let k = data.num_actions();
    let (mut num, mut den) = (0.0, 0.0);
    for (e, s) in data.examples().iter().zip(scores.chunks(k)) {
        if argmax(s) == e.action {
            num += e.reward / e.propensity;
            den += 1.0 / e.propensity;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Patience bookkeeping plus cached validation scores.
struct Validator<'a> {
    validation: Validation<'a>,
    scores: Vec<f64>,
    best: f64,
    best_len: usize,
}

impl<'a> Validator<'a> {
    fn new(validation: Validation<'a>, k: usize, d: usize) -> Result<Self> {
        let m = match validation.source {
            ValidationSource::TrainSnips => 0,
            ValidationSource::Supervised { examples, spec } => {
                if spec.num_actions != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        found: spec.num_actions,
                    });
                }
                if let Some(e) = examples.iter().find(|e| e.features.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: e.features.len(),
                    });
                }
                examples.len()
            }
        };
        Ok(Validator {
            validation,
            scores: vec![0.0; m * k],
            best: f64::NEG_INFINITY,
            best_len: 0,
        })
    }

    fn add(&mut self, weight: f64, predictor: &Predictor, k: usize) {
        if let ValidationSource::Supervised { examples, .. } = self.validation.source {
            for (ex, s) in examples.iter().zip(self.scores.chunks_mut(k)) {
                for (a, v) in s.iter_mut().enumerate() {
                    *v += weight * predictor.predict(&ex.features, a);
                }
            }
        }
    }

    fn reward(&self, raw_log: &BanditDataset, train_scores: &[f64], k: usize) -> f64 {
        match self.validation.source {
            ValidationSource::TrainSnips => argmax_snips(raw_log, train_scores).unwrap_or(f64::NEG_INFINITY),
            ValidationSource::Supervised { examples, spec } => {
                if examples.is_empty() {
                    return f64::NEG_INFINITY;
                }
                examples
                    .iter()
                    .zip(self.scores.chunks(k))
                    .map(|(ex, s)| spec.reward(&ex.labels, argmax(s)))
                    .sum::<f64>()
                    / examples.len() as f64
            }
        }
    }

    /// Records the reward after `len` members; true when patience ran out.
    fn update(&mut self, reward: f64, len: usize) -> bool {
        if reward > self.best || self.best_len == 0 {
            self.best = reward;
            self.best_len = len;
        }
        len - self.best_len >= self.validation.patience
    }
}

/// Trains with BOPL / BOPL-S (or BRR, which ignores the objective-specific
/// settings).
pub fn train(
    data: &BanditDataset,
    config: &BoostConfig,
    validation: Option<Validation>,
) -> Result<(Ensemble, TrainTrace)> {
    config.validate()?;
    if config.algorithm == Algorithm::Brr {
        return train_brr(data, config, validation);
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let log = data.map_rewards(|r| r + config.reward_translation);
    if log.examples().iter().all(|e| e.reward == 0.0) {
        return Err(Error::AllZeroRewards);
    }
    let variant = config.variant();
    let (n, k, d) = (log.len(), log.num_actions(), log.feature_dim());
    let m = n * k;
    let contexts: Vec<f64> = log.examples().iter().flat_map(|e| e.features.iter().copied()).collect();
    let design = ActionDesign::new(contexts, d, k)?;
    let index = SortedIndex::build(&design);

    let mut ensemble = Ensemble::new(k, d)?;
    let mut scores = vec![0.0; m];
    let mut probs = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mut targets = vec![0.0; m];
    let mut raw = vec![0.0; m];

    let min_risk = min_emp_risk(&log);
    let initial_emp = emp_risk_from_scores(&log, &scores);
    let initial_sur = surrogate_risk_from_scores(&log, &scores);
    let delta0 = match variant {
        Variant::Bopl => initial_emp - min_risk,
        Variant::BoplS => initial_sur - min_risk,
    }
    .max(0.0);
    let rho: Vec<f64> = match variant {
        Variant::BoplS => log.examples().iter().map(|e| smoothness_switch(variant, e.reward)).collect(),
        Variant::Bopl => Vec::new(),
    };
    let mut validator = validation.map(|v| Validator::new(v, k, d)).transpose()?;
    let mut rounds: Vec<RoundStats> = Vec::new();
    let mut stop = StopReason::RoundsExhausted;
    let mut sum_sq_alpha = 0.0;
    let thr = config.stop_threshold;

    for t in 1..=config.rounds {
        probs_from_scores(&scores, k, &mut probs);
        let coef: Vec<f64> = log
            .examples()
            .iter()
            .enumerate()
            .map(|(i, e)| gradient_coefficient(variant, e.reward, e.propensity, probs[i * k + e.action]))
            .collect();
        let grad_norm = {
            let mut s = 0.0;
            for (i, (e, c)) in log.examples().iter().zip(&coef).enumerate() {
                let pi = &probs[i * k..(i + 1) * k];
                let sq: f64 = (0..k).map(|a| ((a == e.action) as u8 as f64 - pi[a]).powi(2)).sum();
                s += c * c * sq;
            }
            s.sqrt() / n as f64
        };
        let xi: Vec<f64> = match variant {
            Variant::BoplS => log
                .examples()
                .iter()
                .enumerate()
                .map(|(i, e)| surrogate_switch(variant, e.reward, probs[i * k + e.action]))
                .collect(),
            Variant::Bopl => Vec::new(),
        };

        let fitted = match config.base {
            BaseKind::Regression => {
                regression_rows(variant, &log, &probs, &mut weights, &mut targets);
                fit_regression_rows(&design, &index, &weights, &targets, &config.tree)
            }
            BaseKind::Classification => {
                classification_rows(variant, &log, &probs, &mut weights, &mut targets);
                fit_classification_rows(&design, &index, &weights, &targets, &config.tree)
            }
        };
        let predictor = match fitted {
            Ok(p) => p,
            Err(Error::ZeroTotalWeight) => {
                stop = StopReason::GradientVanished;
                break;
            }
            Err(e) => return Err(e),
        };

        for (i, e) in log.examples().iter().enumerate() {
            for a in 0..k {
                raw[i * k + a] = predictor.raw(&e.features, a);
            }
        }
        let error_rate = (config.base == BaseKind::Classification).then(|| row_error_rate(&weights, &targets, &raw));
        let mut grad_raw = 0.0;
        let mut omega_raw = 0.0;
        let mut max_raw: f64 = 0.0;
        for (i, (e, c)) in log.examples().iter().zip(&coef).enumerate() {
            let h = &raw[i * k..(i + 1) * k];
            let pi = &probs[i * k..(i + 1) * k];
            let mean: f64 = pi.iter().zip(h).map(|(p, v)| p * v).sum();
            grad_raw += c * (h[e.action] - mean);
            omega_raw += regression_weight(variant, e.reward, e.propensity) * h.iter().map(|v| v * v).sum::<f64>();
            max_raw = h.iter().fold(max_raw, |m, v| m.max(v.abs()));
        }
        grad_raw /= n as f64;
        omega_raw /= n as f64;

        let factor = if config.rescale && omega_raw > 0.0 {
            (config.omega / omega_raw).sqrt()
        } else {
            1.0
        };
        let grad_term = grad_raw * factor;
        let denom = if config.rescale { config.omega } else { omega_raw };
        if grad_term.abs() < thr {
            stop = StopReason::GradientVanished;
            break;
        }
        if max_raw * factor < thr || !(omega_raw > 0.0) {
            stop = StopReason::PredictorVanished;
            break;
        }
        let alpha_star = match variant {
            Variant::Bopl => bopl_ensemble_weight(grad_term, denom),
            Variant::BoplS => bopls_ensemble_weight(grad_term, denom),
        };
        let alpha = config.shrinkage * alpha_star;
        if alpha.abs() < thr {
            stop = StopReason::WeightVanished;
            break;
        }
        let predictor = predictor.scaled(factor)?;
        for (s, r) in scores.iter_mut().zip(&raw) {
            *s += alpha * (factor * r);
        }
        if let Some(v) = validator.as_mut() {
            v.add(alpha, &predictor, k);
        }
        ensemble.push(alpha, predictor)?;

        sum_sq_alpha += alpha * alpha;
        let emp = emp_risk_from_scores(&log, &scores);
        let sur = surrogate_risk_from_scores(&log, &scores);
        let bound = config.rescale.then(|| {
            let div = if variant == Variant::Bopl { 4.0 } else { 2.0 };
            if delta0 > 0.0 {
                delta0 * (-(config.omega / (div * delta0)) * sum_sq_alpha).exp()
            } else {
                0.0
            }
        });
        let snips = argmax_snips(data, &scores);
        let mut stats = RoundStats {
            round: t,
            alpha,
            grad_term,
            grad_norm,
            emp_risk: emp,
            surrogate_risk: Some(sur),
            snips_train: snips,
            bound,
            error_rate,
            raw_omega: omega_raw,
            surrogate_switch: xi,
            validation_reward: None,
        };
        let mut exhausted = false;
        if let Some(v) = validator.as_mut() {
            let r = v.reward(data, &scores, k);
            stats.validation_reward = Some(r);
            exhausted = v.update(r, ensemble.len());
        }
        rounds.push(stats);
        if exhausted {
            stop = StopReason::ValidationPatience;
            break;
        }
    }

    let kept = validator.as_ref().map_or(ensemble.len(), |v| v.best_len);
    ensemble.truncate(kept);
    Ok((
        ensemble,
        TrainTrace {
            algorithm: config.algorithm,
            omega: config.omega,
            min_emp_risk: min_risk,
            initial_excess_risk: delta0,
            initial_emp_risk: initial_emp,
            initial_surrogate_risk: initial_sur,
            smoothness_switch: rho,
            rounds,
            stop_reason: stop,
            kept_rounds: kept,
        },
    ))
}

/// Boosted reward regression: least-squares gradient boosting of `r` on the
/// logged `[x_i; e_{a_i}]` rows, fixed learning rate `shrinkage`.
pub fn train_brr(
    data: &BanditDataset,
    config: &BoostConfig,
    validation: Option<Validation>,
) -> Result<(Ensemble, TrainTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let log = data.map_rewards(|r| r + config.reward_translation);
    let (n, k, d) = (log.len(), log.num_actions(), log.feature_dim());
    let rows: Vec<Vec<f64>> = log
        .examples()
        .iter()
        .map(|e| {
            let mut f = e.features.clone();
            f.extend((0..k).map(|a| (a == e.action) as u8 as f64));
            f
        })
        .collect();
    let design = DenseDesign::from_rows(rows.iter().map(|r| r.as_slice()))?;
    let index = SortedIndex::build(&design);
    let ones = vec![1.0; n];
    let mut fitted = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut scores = vec![0.0; n * k];
    let mut ensemble = Ensemble::new(k, d)?;
    let min_risk = min_emp_risk(&log);
    let initial_emp = emp_risk_from_scores(&log, &scores);
    let initial_sur = surrogate_risk_from_scores(&log, &scores);
    let mut validator = validation.map(|v| Validator::new(v, k, d)).transpose()?;
    let mut rounds = Vec::new();
    let mut stop = StopReason::RoundsExhausted;
    let thr = config.stop_threshold;
    let eta = config.shrinkage;

    for t in 1..=config.rounds {
        for ((res, e), f) in residual.iter_mut().zip(log.examples()).zip(&fitted) {
            *res = e.reward - f;
        }
        let grad_norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt() / n as f64;
        let predictor = fit_regression_rows(&design, &index, &ones, &residual, &config.tree)?;
        let h: Vec<f64> = rows.iter().map(|r| predictor.tree().predict(|j| r[j])).collect();
        let grad_term = residual.iter().zip(&h).map(|(r, h)| r * h).sum::<f64>() / n as f64;
        let max_h = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_term.abs() < thr {
            stop = StopReason::GradientVanished;
            break;
        }
        if max_h < thr {
            stop = StopReason::PredictorVanished;
            break;
        }
        for (f, v) in fitted.iter_mut().zip(&h) {
            *f += eta * v;
        }
        for (e, s) in log.examples().iter().zip(scores.chunks_mut(k)) {
            for (a, v) in s.iter_mut().enumerate() {
                *v += eta * predictor.predict(&e.features, a);
            }
        }
        if let Some(v) = validator.as_mut() {
            v.add(eta, &predictor, k);
        }
        ensemble.push(eta, predictor)?;
        let mut stats = RoundStats {
            round: t,
            alpha: eta,
            grad_term,
            grad_norm,
            emp_risk: emp_risk_from_scores(&log, &scores),
            surrogate_risk: Some(surrogate_risk_from_scores(&log, &scores)),
            snips_train: argmax_snips(data, &scores),
            bound: None,
            error_rate: None,
            raw_omega: 0.0,
            surrogate_switch: Vec::new(),
            validation_reward: None,
        };
        let mut exhausted = false;
        if let Some(v) = validator.as_mut() {
            let r = v.reward(data, &scores, k);
            stats.validation_reward = Some(r);
            exhausted = v.update(r, ensemble.len());
        }
        rounds.push(stats);
        if exhausted {
            stop = StopReason::ValidationPatience;
            break;
        }
    }
    let kept = validator.as_ref().map_or(ensemble.len(), |v| v.best_len);
    ensemble.truncate(kept);
    Ok((
        ensemble,
        TrainTrace {
            algorithm: Algorithm::Brr,
            omega: config.omega,
            min_emp_risk: min_risk,
            initial_excess_risk: (initial_emp - min_risk).max(0.0),
            initial_emp_risk: initial_emp,
            initial_surrogate_risk: initial_sur,
            smoothness_switch: Vec::new(),
            rounds,
            stop_reason: stop,
            kept_rounds: kept,
        },
    ))
}
