//! Reductions of the per-round base objective to weighted regression and
//! weighted binary classification over `[x_i; e_a]` rows, and the tree
//! learners that solve them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::BanditDataset;
use crate::policy::{softmax_into, Predictor, PredictorKind, SoftmaxPolicy};
use crate::tree::{self, BinaryGini, DenseDesign, Design, SortedIndex, SquaredError};

pub use crate::tree::TreeParams;

/// Which objective the targets serve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Bopl,
    BoplS,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedRegressionSample {
    pub features: Vec<f64>,
    pub weight: f64,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedClassificationSample {
    pub features: Vec<f64>,
    pub weight: f64,
    pub label: f64,
}

/// `rho_i`: 1/2 for negative rewards under BOPL-S, else 1.
#[inline]
pub fn smoothness_switch(variant: Variant, reward: f64) -> f64 {
    match variant {
        Variant::BoplS if reward < 0.0 => 0.5,
        _ => 1.0,
    }
}

/// `xi_i`: `pi(a_i|x_i)` for negative rewards under BOPL-S, else 1.
#[inline]
pub fn surrogate_switch(variant: Variant, reward: f64, pi_logged: f64) -> f64 {
    match variant {
        Variant::BoplS if reward < 0.0 => pi_logged,
        _ => 1.0,
    }
}

/// Per-example coefficient `c_i` such that the base objective is
/// `(1/n) sum_i c_i (e_{a_i} - pi_i)^T h(x_i)`.
#[inline]
pub fn gradient_coefficient(variant: Variant, reward: f64, propensity: f64, pi_logged: f64) -> f64 {
    match variant {
        Variant::Bopl => reward / propensity * pi_logged,
        Variant::BoplS => reward / propensity * surrogate_switch(variant, reward, pi_logged),
    }
}

/// Least-squares row weight `|r| rho / p` for example `i`.
#[inline]
pub fn regression_weight(variant: Variant, reward: f64, propensity: f64) -> f64 {
    reward.abs() * smoothness_switch(variant, reward) / propensity
}

#[inline]
fn sgn(r: f64) -> f64 {
    if r < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[inline]
fn indicator(b: bool) -> f64 {
    b as u8 as f64
}

/// Writes the weights and targets of the `n * |A|` regression rows given the
/// current probabilities `probs` (row-major `n x |A|`).
pub(crate) fn regression_rows(
    variant: Variant,
    data: &BanditDataset,
    probs: &[f64],
    weights: &mut [f64],
    targets: &mut [f64],
) {
    let k = data.num_actions();
    for (i, e) in data.examples().iter().enumerate() {
        let pi = &probs[i * k..(i + 1) * k];
        let w = regression_weight(variant, e.reward, e.propensity);
        let c = match variant {
            Variant::Bopl => pi[e.action],
            Variant::BoplS => {
                surrogate_switch(variant, e.reward, pi[e.action]) / smoothness_switch(variant, e.reward)
            }
        } * sgn(e.reward);
        for a in 0..k {
            weights[i * k + a] = w;
            targets[i * k + a] = c * (indicator(a == e.action) - pi[a]);
        }
    }
}

/// Writes the weights and `+-1` labels of the classification rows.
pub(crate) fn classification_rows(
    variant: Variant,
    data: &BanditDataset,
    probs: &[f64],
    weights: &mut [f64],
    labels: &mut [f64],
) {
    let k = data.num_actions();
    for (i, e) in data.examples().iter().enumerate() {
        let pi = &probs[i * k..(i + 1) * k];
        let c = gradient_coefficient(variant, e.reward, e.propensity, pi[e.action]);
        for a in 0..k {
            let hit = a == e.action;
            weights[i * k + a] = (c * (indicator(hit) - pi[a])).abs();
            labels[i * k + a] = sgn(e.reward) * (2.0 * indicator(hit) - 1.0);
        }
    }
}

fn training_probs(data: &BanditDataset, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
    let k = data.num_actions();
    if policy.num_actions() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: policy.num_actions(),
        });
    }
    let mut probs = vec![0.0; data.len() * k];
    for (i, e) in data.examples().iter().enumerate() {
        if !(e.propensity > 0.0) {
            return Err(Error::InvalidPropensity(e.propensity));
        }
        let p = policy.distribution(&e.features)?;
        probs[i * k..(i + 1) * k].copy_from_slice(&p.probs);
    }
    Ok(probs)
}

fn expand(data: &BanditDataset) -> Vec<Vec<f64>> {
    let k = data.num_actions();
    let mut rows = Vec::with_capacity(data.len() * k);
    for e in data.examples() {
        for a in 0..k {
            let mut f = e.features.clone();
            f.extend((0..k).map(|b| indicator(a == b)));
            rows.push(f);
        }
    }
    rows
}

/// Regression rows for every `(i, a)`, in row order `i * |A| + a`.
pub fn regression_targets(
    data: &BanditDataset,
    policy: &SoftmaxPolicy,
    variant: Variant,
) -> Result<Vec<WeightedRegressionSample>> {
    let probs = training_probs(data, policy)?;
    let m = probs.len();
    let (mut w, mut y) = (vec![0.0; m], vec![0.0; m]);
    regression_rows(variant, data, &probs, &mut w, &mut y);
    Ok(expand(data)
        .into_iter()
        .zip(w.into_iter().zip(y))
        .map(|(features, (weight, target))| WeightedRegressionSample {
            features,
            weight,
            target,
        })
        .collect())
}

/// Classification rows for every `(i, a)`, in row order `i * |A| + a`.
pub fn classification_targets(
    data: &BanditDataset,
    policy: &SoftmaxPolicy,
    variant: Variant,
) -> Result<Vec<WeightedClassificationSample>> {
    let probs = training_probs(data, policy)?;
    let m = probs.len();
    let (mut w, mut y) = (vec![0.0; m], vec![0.0; m]);
    classification_rows(variant, data, &probs, &mut w, &mut y);
    Ok(expand(data)
        .into_iter()
        .zip(w.into_iter().zip(y))
        .map(|(features, (weight, label))| WeightedClassificationSample {
            features,
            weight,
            label,
        })
        .collect())
}

/// Regression tree on presorted rows.
pub fn fit_regression_rows<D: Design>(
    design: &D,
    index: &SortedIndex,
    weights: &[f64],
    targets: &[f64],
    params: &TreeParams,
) -> Result<Predictor> {
    check_rows(design, weights.len(), targets.len())?;
    let wy: Vec<f64> = weights.iter().zip(targets).map(|(w, y)| w * y).collect();
    let crit = SquaredError {
        weights,
        weighted_targets: &wy,
        reg_lambda: params.reg_lambda,
    };
    let t = tree::grow(design, index, &crit, params)?;
    Predictor::new(PredictorKind::RegressionTree, t, 1.0)
}

/// Classification tree (`+-1` leaves) on presorted rows.
pub fn fit_classification_rows<D: Design>(
    design: &D,
    index: &SortedIndex,
    weights: &[f64],
    labels: &[f64],
    params: &TreeParams,
) -> Result<Predictor> {
    check_rows(design, weights.len(), labels.len())?;
    let pos: Vec<f64> = weights.iter().zip(labels).map(|(&w, &y)| if y > 0.0 { w } else { 0.0 }).collect();
    let neg: Vec<f64> = weights.iter().zip(labels).map(|(&w, &y)| if y > 0.0 { 0.0 } else { w }).collect();
    let crit = BinaryGini { pos: &pos, neg: &neg };
    let t = tree::grow(design, index, &crit, params)?;
    Predictor::new(PredictorKind::ClassificationTree, t, 1.0)
}

fn check_rows<D: Design>(design: &D, a: usize, b: usize) -> Result<()> {
    for len in [a, b] {
        if len != design.num_rows() {
            return Err(Error::DimensionMismatch {
                expected: design.num_rows(),
                found: len,
            });
        }
    }
    Ok(())
}

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for w in weights {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidConfig(format!("sample weight must be finite and >= 0, got {w}")));
        }
        total += w;
    }
    if total > 0.0 {
        Ok(())
    } else {
        Err(Error::ZeroTotalWeight)
    }
}

pub fn fit_regression_tree(samples: &[WeightedRegressionSample], params: &TreeParams) -> Result<Predictor> {
    check_weights(samples.iter().map(|s| s.weight))?;
    let design = DenseDesign::from_rows(samples.iter().map(|s| s.features.as_slice()))?;
    let index = SortedIndex::build(&design);
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.target).collect();
    fit_regression_rows(&design, &index, &w, &y, params)
}

pub fn fit_classification_tree(samples: &[WeightedClassificationSample], params: &TreeParams) -> Result<Predictor> {
    check_weights(samples.iter().map(|s| s.weight))?;
    if samples.iter().any(|s| s.label != 1.0 && s.label != -1.0) {
        return Err(Error::Schema("classification labels must be +1 or -1".into()));
    }
    let design = DenseDesign::from_rows(samples.iter().map(|s| s.features.as_slice()))?;
    let index = SortedIndex::build(&design);
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.label).collect();
    fit_classification_rows(&design, &index, &w, &y, params)
}

/// `(1/n) sum_i |r_i| rho_i / p_i ||h(x_i)||^2`.
pub fn predictor_scale(predictor: &Predictor, data: &BanditDataset, variant: Variant) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let k = data.num_actions();
    let mut total = 0.0;
    for e in data.examples() {
        let sq: f64 = (0..k).map(|a| predictor.predict(&e.features, a).powi(2)).sum();
        total += regression_weight(variant, e.reward, e.propensity) * sq;
    }
    Ok(total / data.len() as f64)
}

/// Multiplies the predictor's scale by `sqrt(omega / omega')` so the scale
/// constraint holds with equality.
pub fn rescale_to_omega(predictor: &Predictor, data: &BanditDataset, omega: f64, variant: Variant) -> Result<Predictor> {
    if !(omega > 0.0) {
        return Err(Error::InvalidConfig(format!("omega must be positive, got {omega}")));
    }
    let current = predictor_scale(predictor, data, variant)?;
    if !(current > 0.0) {
        return Err(Error::VanishingPredictor);
    }
    predictor.scaled((omega / current).sqrt())
}

/// `sum w^ 1{y != sign h}` with normalized weights; `h >= 0` reads as `+1`.
pub fn weighted_error_rate(predictor: &Predictor, samples: &[WeightedClassificationSample]) -> Result<f64> {
    check_weights(samples.iter().map(|s| s.weight))?;
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let wrong: f64 = samples
        .iter()
        .filter(|s| {
            let h = predictor.tree().predict(|j| s.features[j]);
            (h >= 0.0) != (s.label > 0.0)
        })
        .map(|s| s.weight)
        .sum();
    Ok(wrong / total)
}

/// Row-level weighted error from raw `+-1` tree outputs.
pub(crate) fn row_error_rate(weights: &[f64], labels: &[f64], outputs: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wrong = 0.0;
    for ((&w, &y), &h) in weights.iter().zip(labels).zip(outputs) {
        total += w;
        if (h >= 0.0) != (y > 0.0) {
            wrong += w;
        }
    }
    if total > 0.0 {
        wrong / total
    } else {
        0.0
    }
}

/// Current softmax probabilities from cached scores.
pub(crate) fn probs_from_scores(scores: &[f64], k: usize, out: &mut [f64]) {
    for (s, p) in scores.chunks(k).zip(out.chunks_mut(k)) {
        softmax_into(s, 1.0, p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::LoggedExample;
    use crate::policy::Ensemble;

    fn one(a: usize, p: f64, r: f64) -> BanditDataset {
        BanditDataset::new(vec![LoggedExample::new(vec![0.0], a, p, r).unwrap()], 2, 1).unwrap()
    }

    fn uniform() -> SoftmaxPolicy {
        SoftmaxPolicy::training(Ensemble::new(2, 1).unwrap())
    }

    #[test]
    fn regression_target_examples() {
        let s = regression_targets(&one(0, 0.5, 1.0), &uniform(), Variant::Bopl).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].weight, 2.0);
        assert_eq!(s[1].weight, 2.0);
        assert_eq!(s[0].target, 0.25);
        assert_eq!(s[1].target, -0.25);
        assert_eq!(s[0].features, vec![0.0, 1.0, 0.0]);
        let z = regression_targets(&one(0, 0.5, 0.0), &uniform(), Variant::Bopl).unwrap();
        assert!(z.iter().all(|s| s.weight == 0.0));
        let neg = regression_targets(&one(0, 0.5, -1.0), &uniform(), Variant::Bopl).unwrap();
        for (a, b) in s.iter().zip(&neg) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.target, -b.target);
        }
    }

    #[test]
    fn surrogate_regression_targets_use_switches() {
        // r < 0: weight |r| rho / p = 1, target -(xi / rho)(e - pi) with xi = 1/2
        let s = regression_targets(&one(0, 0.5, -1.0), &uniform(), Variant::BoplS).unwrap();
        assert_eq!(s[0].weight, 1.0);
        assert_eq!(s[0].target, -0.5);
        assert_eq!(s[1].target, 0.5);
        // r > 0: weight |r|/p, target (e - pi)
        let s = regression_targets(&one(1, 0.25, 0.5), &uniform(), Variant::BoplS).unwrap();
        assert_eq!(s[0].weight, 2.0);
        assert_eq!(s[0].target, -0.5);
        assert_eq!(s[1].target, 0.5);
    }

    #[test]
    fn classification_target_examples() {
        let s = classification_targets(&one(0, 0.5, 1.0), &uniform(), Variant::Bopl).unwrap();
        assert_eq!(s.iter().map(|s| s.weight).collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(s.iter().map(|s| s.label).collect::<Vec<_>>(), vec![1.0, -1.0]);
        let neg = classification_targets(&one(0, 0.5, -1.0), &uniform(), Variant::Bopl).unwrap();
        assert_eq!(neg.iter().map(|s| s.label).collect::<Vec<_>>(), vec![-1.0, 1.0]);
        let three = BanditDataset::new(vec![LoggedExample::new(vec![0.0], 2, 0.5, 0.3).unwrap()], 3, 1).unwrap();
        let pol = SoftmaxPolicy::training(Ensemble::new(3, 1).unwrap());
        let s = classification_targets(&three, &pol, Variant::Bopl).unwrap();
        assert_eq!(s.iter().map(|s| s.label).collect::<Vec<_>>(), vec![-1.0, -1.0, 1.0]);
    }

    fn reg(xs: &[f64], ws: &[f64], ys: &[f64]) -> Vec<WeightedRegressionSample> {
        xs.iter()
            .zip(ws)
            .zip(ys)
            .map(|((&x, &w), &y)| WeightedRegressionSample {
                features: vec![x],
                weight: w,
                target: y,
            })
            .collect()
    }

    #[test]
    fn depth_zero_is_weighted_mean() {
        let s = reg(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], &[3.0, -1.0, 2.0]);
        let p = TreeParams {
            max_depth: 0,
            min_child_weight: 0.0,
            reg_lambda: 0.0,
        };
        let h = fit_regression_tree(&s, &p).unwrap();
        assert!((h.predict(&[0.0], 0) - 7.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn huge_lambda_shrinks_leaves() {
        let s = reg(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4], &[1.0, 2.0, 3.0, 4.0]);
        let p = TreeParams {
            max_depth: 3,
            min_child_weight: 0.0,
            reg_lambda: 1e12,
        };
        let h = fit_regression_tree(&s, &p).unwrap();
        assert!(h.tree().leaf_values().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn four_point_split_matches_enumeration() {
        let xs = [0.1, 0.4, 0.35, 0.8];
        let ws = [1.0, 2.0, 0.5, 1.5];
        let ys = [1.0, -2.0, 0.5, 3.0];
        let p = TreeParams {
            max_depth: 1,
            min_child_weight: 0.0,
            reg_lambda: 0.0,
        };
        let h = fit_regression_tree(&reg(&xs, &ws, &ys), &p).unwrap();
        let sse = |f: &dyn Fn(f64) -> f64| -> f64 {
            xs.iter().zip(&ws).zip(&ys).map(|((x, w), y)| w * (y - f(*x)).powi(2)).sum()
        };
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut best = f64::INFINITY;
        for t in sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])) {
            let mean = |left: bool| {
                let (mut a, mut b) = (0.0, 0.0);
                for ((x, w), y) in xs.iter().zip(&ws).zip(&ys) {
                    if (*x < t) == left {
                        a += w * y;
                        b += w;
                    }
                }
                a / b
            };
            let (l, r) = (mean(true), mean(false));
            best = best.min(sse(&|x| if x < t { l } else { r }));
        }
        assert!((sse(&|x| h.predict(&[x], 0)) - best).abs() < 1e-10);
    }

    #[test]
    fn zero_weight_is_an_error() {
        let s = reg(&[0.0, 1.0], &[0.0, 0.0], &[1.0, 2.0]);
        assert!(matches!(fit_regression_tree(&s, &TreeParams::default()), Err(Error::ZeroTotalWeight)));
    }

    fn cls(xs: &[f64], ws: &[f64], ys: &[f64]) -> Vec<WeightedClassificationSample> {
        xs.iter()
            .zip(ws)
            .zip(ys)
            .map(|((&x, &w), &y)| WeightedClassificationSample {
                features: vec![x],
                weight: w,
                label: y,
            })
            .collect()
    }

    #[test]
    fn separable_stump_has_zero_error() {
        let s = cls(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.3, 2.0, 0.7], &[-1.0, -1.0, 1.0, 1.0]);
        let p = TreeParams {
            max_depth: 1,
            min_child_weight: 0.0,
            reg_lambda: 0.0,
        };
        let h = fit_classification_tree(&s, &p).unwrap();
        assert_eq!(weighted_error_rate(&h, &s).unwrap(), 0.0);
        let all_pos = cls(&[0.0, 1.0, 2.0], &[1.0; 3], &[1.0; 3]);
        let h = fit_classification_tree(&all_pos, &p).unwrap();
        assert_eq!(h.tree().num_leaves(), 1);
        assert_eq!(h.predict(&[5.0], 0), 1.0);
    }

    #[test]
    fn error_rate_extremes() {
        let s = cls(&[0.0, 1.0], &[1.0, 3.0], &[1.0, -1.0]);
        let right = Predictor::new(
            PredictorKind::ClassificationTree,
            crate::tree::Tree::from_nodes(vec![
                crate::tree::Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                crate::tree::Node::Leaf { value: 1.0 },
                crate::tree::Node::Leaf { value: -1.0 },
            ])
            .unwrap(),
            1.0,
        )
        .unwrap();
        assert_eq!(weighted_error_rate(&right, &s).unwrap(), 0.0);
        let flipped: Vec<_> = s.iter().cloned().map(|mut r| {
            r.label = -r.label;
            r
        }).collect();
        assert_eq!(weighted_error_rate(&right, &flipped).unwrap(), 1.0);
    }

    #[test]
    fn rescale_examples() {
        let data = BanditDataset::new(
            vec![
                LoggedExample::new(vec![0.0], 0, 0.5, 1.0).unwrap(),
                LoggedExample::new(vec![1.0], 1, 0.25, -0.5).unwrap(),
            ],
            2,
            1,
        )
        .unwrap();
        // constant +-1 predictor: omega' = (|A|/n) sum |r|/p
        let ones = Predictor::new(PredictorKind::ClassificationTree, crate::tree::Tree::leaf(1.0), 1.0).unwrap();
        let expect = 2.0 / 2.0 * (1.0 / 0.5 + 0.5 / 0.25);
        assert!((predictor_scale(&ones, &data, Variant::Bopl).unwrap() - expect).abs() < 1e-15);
        let at = rescale_to_omega(&ones, &data, expect, Variant::Bopl).unwrap();
        assert_eq!(at.scale(), 1.0);
        let r = rescale_to_omega(&ones, &data, 3.0, Variant::Bopl).unwrap();
        assert!((predictor_scale(&r, &data, Variant::Bopl).unwrap() - 3.0).abs() < 3e-12);
        let again = rescale_to_omega(&r.scaled(7.5).unwrap(), &data, 3.0, Variant::Bopl).unwrap();
        assert!((again.scale() - r.scale()).abs() < 1e-12 * r.scale());
        // rho-weighted: negative reward counts half
        let s = predictor_scale(&ones, &data, Variant::BoplS).unwrap();
        assert!((s - (2.0 * 2.0 + 0.5 * 2.0 * 2.0) / 2.0).abs() < 1e-15);
        let zero = Predictor::constant(0.0);
        assert!(matches!(rescale_to_omega(&zero, &data, 1.0, Variant::Bopl), Err(Error::VanishingPredictor)));
    }
}
