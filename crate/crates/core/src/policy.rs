//! Ensemble scores, softmax policies, and the per-example IPS losses.
//!
//! Gradients are taken with respect to the score vector `f(x_i)`, not the
//! ensemble parameters. Training always evaluates the softmax at `beta = 1`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LoggedExample;
use crate::tree::{augmented_feature, Tree};

/// Scores `f(x, a)` for every action.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionScores {
    pub values: Vec<f64>,
}

/// A distribution over actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    RegressionTree,
    ClassificationTree,
}

/// A tree over `[x; e_a]` times a positive scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    kind: PredictorKind,
    tree: Tree,
    scale: f64,
}

impl Predictor {
    pub fn new(kind: PredictorKind, tree: Tree, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("predictor scale must be positive, got {scale}")));
        }
        if kind == PredictorKind::ClassificationTree
            && tree.leaf_values().any(|v| v != 1.0 && v != -1.0)
        {
            return Err(Error::Schema("classification leaves must be +1 or -1".into()));
        }
        Ok(Predictor { kind, tree, scale })
    }

    /// Constant regression predictor.
    pub fn constant(value: f64) -> Self {
        Predictor {
            kind: PredictorKind::RegressionTree,
            tree: Tree::leaf(value),
            scale: 1.0,
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Same tree with the scale multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Predictor::new(self.kind, self.tree.clone(), self.scale * factor)
    }

    /// Unscaled tree output at `(x, a)`.
    #[inline]
    pub fn raw(&self, x: &[f64], action: usize) -> f64 {
        self.tree.predict(|j| augmented_feature(x, action, j))
    }

    #[inline]
    pub fn predict(&self, x: &[f64], action: usize) -> f64 {
        self.scale * self.raw(x, action)
    }
}

/// One ensemble member `alpha_t * h_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub weight: f64,
    pub predictor: Predictor,
}

/// `f(x, a) = sum_t alpha_t h_t(x, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<Member>,
    num_actions: usize,
    feature_dim: usize,
}

impl Ensemble {
    pub fn new(num_actions: usize, feature_dim: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidConfig("num_actions must be positive".into()));
        }
        Ok(Ensemble {
            members: Vec::new(),
            num_actions,
            feature_dim,
        })
    }

    pub fn push(&mut self, weight: f64, predictor: Predictor) -> Result<()> {
        if !weight.is_finite() {
            return Err(Error::NonFinite("ensemble weight"));
        }
        if let Some(j) = predictor.tree().max_feature() {
            let width = self.feature_dim + self.num_actions;
            if j >= width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    found: j + 1,
                });
            }
        }
        self.members.push(Member { weight, predictor });
        Ok(())
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.members.truncate(len);
    }

    /// Prefix of the first `len` members.
    pub fn prefix(&self, len: usize) -> Ensemble {
        Ensemble {
            members: self.members[..len.min(self.members.len())].to_vec(),
            num_actions: self.num_actions,
            feature_dim: self.feature_dim,
        }
    }

    /// Every member weight multiplied by `c`.
    pub fn scaled_weights(&self, c: f64) -> Ensemble {
        let mut out = self.clone();
        for m in &mut out.members {
            m.weight *= c;
        }
        out
    }

    pub fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<ActionScores> {
        self.check_features(x)?;
        let mut values = vec![0.0; self.num_actions];
        self.score_into(x, &mut values);
        Ok(ActionScores { values })
    }

    /// Unchecked scoring into `out` (length `num_actions`).
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for m in &self.members {
            for (a, v) in out.iter_mut().enumerate() {
                *v += m.weight * m.predictor.predict(x, a);
            }
        }
    }
}

pub fn ensemble_score(ensemble: &Ensemble, features: &[f64]) -> Result<ActionScores> {
    ensemble.score(features)
}

/// Softmax of `beta * scores`, computed with max-subtraction.
pub fn softmax(scores: &ActionScores, beta: f64) -> ActionDistribution {
    let mut probs = vec![0.0; scores.values.len()];
    softmax_into(&scores.values, beta, &mut probs);
    ActionDistribution { probs }
}

pub fn softmax_into(scores: &[f64], beta: f64, out: &mut [f64]) {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(beta * s));
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (beta * s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `ln softmax(scores)[action]` at `beta = 1`.
pub fn log_softmax_at(scores: &[f64], action: usize) -> f64 {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let lse = scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
    scores[action] - lse
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = a;
        }
    }
    best
}

/// Inverse temperature; `Argmax` is the `beta = +inf` limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Beta {
    Finite(f64),
    Argmax,
}

impl Beta {
    pub fn validate(self) -> Result<Self> {
        match self {
            Beta::Finite(b) if !(b >= 0.0 && b.is_finite()) => {
                Err(Error::InvalidConfig(format!("beta must be finite and >= 0, got {b}")))
            }
            other => Ok(other),
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(b) => s.serialize_f64(*b),
            Beta::Argmax => s.serialize_str("argmax"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Beta::Finite(b).validate().map_err(serde::de::Error::custom),
            Raw::Str(s) if s == "argmax" => Ok(Beta::Argmax),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid beta {s:?}"))),
        }
    }
}

/// `pi(a | x) = softmax(beta f(x))[a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxPolicy {
    pub ensemble: Ensemble,
    pub beta: Beta,
}

impl SoftmaxPolicy {
    pub fn new(ensemble: Ensemble, beta: Beta) -> Result<Self> {
        Ok(SoftmaxPolicy {
            ensemble,
            beta: beta.validate()?,
        })
    }

    pub fn argmax(ensemble: Ensemble) -> Self {
        SoftmaxPolicy {
            ensemble,
            beta: Beta::Argmax,
        }
    }

    /// The policy used during training (`beta = 1`).
    pub fn training(ensemble: Ensemble) -> Self {
        SoftmaxPolicy {
            ensemble,
            beta: Beta::Finite(1.0),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.ensemble.num_actions()
    }

    /// Action distribution; a point mass in argmax mode.
    pub fn distribution(&self, x: &[f64]) -> Result<ActionDistribution> {
        let scores = self.ensemble.score(x)?;
        let mut probs = vec![0.0; scores.values.len()];
        self.distribution_from_scores(&scores.values, &mut probs);
        Ok(ActionDistribution { probs })
    }

    pub(crate) fn distribution_from_scores(&self, scores: &[f64], out: &mut [f64]) {
        match self.beta {
            Beta::Finite(b) => softmax_into(scores, b, out),
            Beta::Argmax => {
                out.iter_mut().for_each(|p| *p = 0.0);
                out[argmax(scores)] = 1.0;
            }
        }
    }

    pub fn select(&self, x: &[f64], rng: Option<&mut dyn RngCore>) -> Result<usize> {
        action_select(self, x, rng)
    }
}

/// Samples from the policy, or takes the argmax (lowest index on ties) when
/// `beta` is infinite.
pub fn action_select(policy: &SoftmaxPolicy, x: &[f64], rng: Option<&mut dyn RngCore>) -> Result<usize> {
    let scores = policy.ensemble.score(x)?;
    match policy.beta {
        Beta::Argmax => Ok(argmax(&scores.values)),
        Beta::Finite(b) => {
            let rng = rng.ok_or(Error::MissingRng)?;
            let dist = softmax(&scores, b);
            Ok(sample_index(&dist.probs, rng.gen::<f64>()))
        }
    }
}

/// Inverse-CDF draw for `u` in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = a;
        }
        acc += p;
        if u < acc {
            return a;
        }
    }
    last_positive
}

fn check_example(e: &LoggedExample, num_actions: usize) -> Result<()> {
    if !(e.propensity > 0.0) {
        return Err(Error::InvalidPropensity(e.propensity));
    }
    if e.action >= num_actions {
        return Err(Error::ActionOutOfRange {
            action: e.action,
            num_actions,
        });
    }
    Ok(())
}

/// `-(r/p) pi(a|x)` at the given scores.
pub fn loss_at(e: &LoggedExample, scores: &[f64]) -> Result<f64> {
    check_example(e, scores.len())?;
    let mut pi = vec![0.0; scores.len()];
    softmax_into(scores, 1.0, &mut pi);
    Ok(-(e.reward / e.propensity) * pi[e.action])
}

/// `-(r/p) pi(a|x) (e_a - pi(x))`.
pub fn loss_gradient_at(e: &LoggedExample, scores: &[f64]) -> Result<Vec<f64>> {
    check_example(e, scores.len())?;
    let mut pi = vec![0.0; scores.len()];
    softmax_into(scores, 1.0, &mut pi);
    let c = -(e.reward / e.propensity) * pi[e.action];
    Ok(pi
        .iter()
        .enumerate()
        .map(|(a, &p)| c * ((a == e.action) as u8 as f64 - p))
        .collect())
}

/// `-(r/p) (ln pi(a|x) + 1)`.
pub fn surrogate_loss_at(e: &LoggedExample, scores: &[f64]) -> Result<f64> {
    check_example(e, scores.len())?;
    if e.reward == 0.0 {
        return Ok(0.0);
    }
    Ok(-(e.reward / e.propensity) * (log_softmax_at(scores, e.action) + 1.0))
}

/// `-(r/p) (e_a - pi(x))`.
pub fn surrogate_loss_gradient_at(e: &LoggedExample, scores: &[f64]) -> Result<Vec<f64>> {
    check_example(e, scores.len())?;
    let mut pi = vec![0.0; scores.len()];
    softmax_into(scores, 1.0, &mut pi);
    let c = -(e.reward / e.propensity);
    Ok(pi
        .iter()
        .enumerate()
        .map(|(a, &p)| c * ((a == e.action) as u8 as f64 - p))
        .collect())
}

pub fn loss(e: &LoggedExample, ensemble: &Ensemble) -> Result<f64> {
    loss_at(e, &ensemble.score(&e.features)?.values)
}

pub fn loss_gradient(e: &LoggedExample, ensemble: &Ensemble) -> Result<Vec<f64>> {
    loss_gradient_at(e, &ensemble.score(&e.features)?.values)
}

pub fn surrogate_loss(e: &LoggedExample, ensemble: &Ensemble) -> Result<f64> {
    surrogate_loss_at(e, &ensemble.score(&e.features)?.values)
}

pub fn surrogate_loss_gradient(e: &LoggedExample, ensemble: &Ensemble) -> Result<Vec<f64>> {
    surrogate_loss_gradient_at(e, &ensemble.score(&e.features)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Node;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(action: usize, propensity: f64, reward: f64) -> LoggedExample {
        LoggedExample {
            features: vec![0.3],
            action,
            propensity,
            reward,
        }
    }

    fn stump(feature: usize, threshold: f64, lo: f64, hi: f64) -> Predictor {
        let tree = Tree::from_nodes(vec![
            Node::Split {
                feature,
                threshold,
                left: 1,
                right: 2,
            },
            Node::Leaf { value: lo },
            Node::Leaf { value: hi },
        ])
        .unwrap();
        Predictor::new(PredictorKind::RegressionTree, tree, 1.0).unwrap()
    }

    #[test]
    fn empty_ensemble_scores_zero() {
        let e = Ensemble::new(3, 2).unwrap();
        assert_eq!(e.score(&[1.0, -4.0]).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn constant_member_is_linear() {
        let mut e = Ensemble::new(4, 1).unwrap();
        e.push(2.0, Predictor::constant(1.0)).unwrap();
        assert_eq!(e.score(&[7.0]).unwrap().values, vec![2.0; 4]);
    }

    #[test]
    fn two_stumps_match_direct_sum() {
        // features: x0, then one-hot e_0 (index 1), e_1 (index 2)
        let mut e = Ensemble::new(2, 1).unwrap();
        e.push(0.5, stump(0, 0.0, -1.0, 3.0)).unwrap();
        e.push(-2.0, stump(2, 0.5, 0.25, 1.0)).unwrap();
        let x = [0.7];
        // action 0: x0=0.7 -> 3.0; e_1=0 -> 0.25 ; action 1: 3.0 and 1.0
        let expect = [0.5 * 3.0 - 2.0 * 0.25, 0.5 * 3.0 - 2.0 * 1.0];
        assert_eq!(e.score(&x).unwrap().values, expect.to_vec());
        assert!(matches!(e.score(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn push_rejects_out_of_range_features() {
        let mut e = Ensemble::new(2, 1).unwrap();
        assert!(e.push(1.0, stump(3, 0.0, 0.0, 1.0)).is_err());
        assert!(e.push(f64::NAN, Predictor::constant(1.0)).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&ActionScores { values: vec![0.0; 3] }, 1.0);
        for v in p.probs {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&ActionScores { values: vec![2f64.ln(), 0.0] }, 1.0);
        assert!((p.probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.probs[1] - 1.0 / 3.0).abs() < 1e-15);
        // reference: e^k / (e + e^2 + e^3) evaluated to 20 digits
        let p = softmax(&ActionScores { values: vec![1.0, 2.0, 3.0] }, 1.0);
        let reference = [0.090_030_573_170_380_458, 0.244_728_471_054_797_652, 0.665_240_955_774_821_890];
        for (a, b) in p.probs.iter().zip(reference) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_survives_large_scores() {
        let p = softmax(&ActionScores { values: vec![1000.0, 999.0] }, 1.0);
        assert!(p.probs.iter().all(|v| v.is_finite()));
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0, 5.0, 5.0]), 1);
        assert_eq!(argmax(&[3.0, 1.0]), 0);
    }

    #[test]
    fn argmax_select_needs_no_rng() {
        let mut e = Ensemble::new(3, 1).unwrap();
        e.push(1.0, stump(2, 0.5, 0.0, 5.0)).unwrap();
        let p = SoftmaxPolicy::argmax(e);
        assert_eq!(p.select(&[0.0], None).unwrap(), 1);
    }

    #[test]
    fn stochastic_select_requires_rng_and_is_fair() {
        let p = SoftmaxPolicy::new(Ensemble::new(2, 1).unwrap(), Beta::Finite(1.0)).unwrap();
        assert!(matches!(p.select(&[0.0], None), Err(Error::MissingRng)));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let ones: usize = (0..draws)
            .map(|_| p.select(&[0.0], Some(&mut rng)).unwrap())
            .sum();
        let freq = ones as f64 / draws as f64;
        let sigma = (0.25 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * sigma, "{freq}");
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(p.select(&[0.0], Some(&mut a)).unwrap(), p.select(&[0.0], Some(&mut b)).unwrap());
        }
    }

    #[test]
    fn loss_examples() {
        let e2 = Ensemble::new(2, 1).unwrap();
        assert_eq!(loss(&ex(0, 0.5, 0.0), &e2).unwrap(), 0.0);
        assert_eq!(loss(&ex(0, 0.5, 1.0), &e2).unwrap(), -1.0);
        assert!(matches!(loss(&ex(0, 0.0, 1.0), &e2), Err(Error::InvalidPropensity(_))));
        assert_eq!(loss_gradient(&ex(0, 0.5, 1.0), &e2).unwrap(), vec![-0.5, 0.5]);
        assert_eq!(loss_gradient(&ex(1, 0.5, 0.0), &e2).unwrap().iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn loss_composes_score_and_softmax() {
        let mut e = Ensemble::new(3, 1).unwrap();
        e.push(0.7, stump(0, 0.1, -1.0, 2.0)).unwrap();
        e.push(-0.3, stump(3, 0.5, 0.5, 4.0)).unwrap();
        let x = ex(2, 0.4, 0.9);
        let pi = softmax(&e.score(&x.features).unwrap(), 1.0);
        assert_eq!(loss(&x, &e).unwrap(), -(0.9 / 0.4) * pi.probs[2]);
    }

    #[test]
    fn surrogate_examples() {
        let e2 = Ensemble::new(2, 1).unwrap();
        assert_eq!(surrogate_loss(&ex(0, 0.5, 0.0), &e2).unwrap(), 0.0);
        let expect = -2.0 * (0.5f64.ln() + 1.0);
        assert!((surrogate_loss(&ex(0, 0.5, 1.0), &e2).unwrap() - expect).abs() < 1e-15);
        assert_eq!(surrogate_loss_gradient(&ex(0, 0.5, 1.0), &e2).unwrap(), vec![-1.0, 1.0]);
        // single action: pi = 1, surrogate equals loss
        let e1 = Ensemble::new(1, 1).unwrap();
        let x = ex(0, 0.25, 0.5);
        assert_eq!(surrogate_loss(&x, &e1).unwrap(), loss(&x, &e1).unwrap());
        assert_eq!(surrogate_loss(&x, &e1).unwrap(), -2.0);
    }

    #[test]
    fn temperature_folds_into_scores() {
        let s = [0.3, -1.2, 2.5];
        for beta in [0.0, 0.5, 2.0] {
            let a = softmax(&ActionScores { values: s.to_vec() }, beta);
            let b = softmax(&ActionScores { values: s.iter().map(|v| beta * v).collect() }, 1.0);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn beta_serde_round_trip() {
        let s = serde_json::to_string(&Beta::Argmax).unwrap();
        assert_eq!(s, "\"argmax\"");
        assert_eq!(serde_json::from_str::<Beta>(&s).unwrap(), Beta::Argmax);
        assert_eq!(serde_json::from_str::<Beta>("1.5").unwrap(), Beta::Finite(1.5));
        assert!(serde_json::from_str::<Beta>("-1").is_err());
    }
}
