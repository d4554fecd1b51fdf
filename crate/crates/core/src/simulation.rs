//! Supervised-to-bandit conversion.
//!
//! A multinomial logistic logging policy is fit on a small labeled subset,
//! mixed with uniform exploration, and used to sample one action per example;
//! only that action's reward is kept.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{BanditDataset, LoggedExample};
use crate::policy::{sample_index, softmax_into};

/// A labeled example; multiclass examples carry exactly one label.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedExample {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl SupervisedExample {
    /// Labels are sorted and deduplicated.
    pub fn new(features: Vec<f64>, mut labels: Vec<usize>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        SupervisedExample { features, labels }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multiclass,
    Multilabel,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(Task::Multiclass),
            "multilabel" => Ok(Task::Multilabel),
            _ => Err(Error::InvalidConfig(format!("unknown task {s:?}"))),
        }
    }
}

/// Full-information reward structure of a supervised task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub task: Task,
    pub groups: Option<Vec<Vec<usize>>>,
    pub partial_credit: f64,
    pub num_actions: usize,
}

impl RewardSpec {
    pub fn new(task: Task, groups: Option<Vec<Vec<usize>>>, partial_credit: f64, num_actions: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidConfig("num_actions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&partial_credit) {
            return Err(Error::InvalidConfig(format!(
                "partial_credit must lie in [0, 1], got {partial_credit}"
            )));
        }
        if let Some(gs) = &groups {
            let mut seen = vec![false; num_actions];
            for &c in gs.iter().flatten() {
                if c >= num_actions {
                    return Err(Error::InvalidConfig(format!("group class {c} out of range")));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::InvalidConfig(format!("class {c} appears in two groups")));
                }
            }
        }
        Ok(RewardSpec {
            task,
            groups,
            partial_credit,
            num_actions,
        })
    }

    /// Outerwear (pullover, coat), tops (T-shirt/top, shirt), footwear (sandal,
    /// sneaker, ankle boot); trouser, dress and bag stand alone.
    pub fn fashion_mnist() -> Self {
        RewardSpec::new(
            Task::Multiclass,
            Some(vec![vec![2, 4], vec![0, 6], vec![5, 7, 9]]),
            0.25,
            10,
        )
        .expect("static groups are valid")
    }

    /// Cover types 1..7 mapped to 0..6: firs (spruce/fir, Douglas-fir), pines
    /// (lodgepole, ponderosa), populus (cottonwood/willow, aspen); krummholz alone.
    pub fn covertype() -> Self {
        RewardSpec::new(
            Task::Multiclass,
            Some(vec![vec![0, 5], vec![1, 2], vec![3, 4]]),
            0.25,
            7,
        )
        .expect("static groups are valid")
    }

    fn group_of(&self, class: usize) -> Option<usize> {
        self.groups
            .as_ref()?
            .iter()
            .position(|g| g.contains(&class))
    }

    pub fn reward(&self, labels: &[usize], action: usize) -> f64 {
        match self.task {
            Task::Multilabel => labels.contains(&action) as u8 as f64,
            Task::Multiclass => {
                let Some(&label) = labels.first() else {
                    return 0.0;
                };
                if action == label {
                    1.0
                } else if self.group_of(label).is_some() && self.group_of(label) == self.group_of(action) {
                    self.partial_credit
                } else {
                    0.0
                }
            }
        }
    }

    pub fn validate_example(&self, ex: &SupervisedExample) -> Result<()> {
        if let Some(&c) = ex.labels.iter().find(|&&c| c >= self.num_actions) {
            return Err(Error::ActionOutOfRange {
                action: c,
                num_actions: self.num_actions,
            });
        }
        if self.task == Task::Multiclass && ex.labels.len() != 1 {
            return Err(Error::Schema(format!(
                "multiclass example has {} labels",
                ex.labels.len()
            )));
        }
        Ok(())
    }
}

pub fn reward(spec: &RewardSpec, labels: &[usize], action: usize) -> f64 {
    spec.reward(labels, action)
}

/// Multinomial logistic model mixed with uniform exploration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggingPolicy {
    pub num_actions: usize,
    pub feature_dim: usize,
    /// Row-major `num_actions x (feature_dim + 1)`; the last column is the bias.
    pub weights: Vec<f64>,
    pub epsilon: f64,
}

impl LoggingPolicy {
    pub fn uniform(num_actions: usize, feature_dim: usize) -> Self {
        LoggingPolicy {
            num_actions,
            feature_dim,
            weights: vec![0.0; num_actions * (feature_dim + 1)],
            epsilon: 0.0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidConfig(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let w = self.feature_dim + 1;
        for (a, o) in out.iter_mut().enumerate() {
            let row = &self.weights[a * w..(a + 1) * w];
            *o = row[..self.feature_dim].iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + row[self.feature_dim];
        }
    }

    /// Unmixed softmax probabilities.
    pub fn softmax_probs(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.num_actions];
        self.logits(x, &mut z);
        let mut p = vec![0.0; self.num_actions];
        softmax_into(&z, 1.0, &mut p);
        p
    }

    /// `q = (1 - eps) softmax + eps / |A|`.
    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        let u = self.epsilon / self.num_actions as f64;
        Ok(self
            .softmax_probs(x)
            .into_iter()
            .map(|p| (1.0 - self.epsilon) * p + u)
            .collect())
    }

    /// Expected full-information reward of the mixed policy.
    pub fn expected_reward(&self, examples: &[SupervisedExample], spec: &RewardSpec) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut total = 0.0;
        for ex in examples {
            let q = self.probs(&ex.features)?;
            total += q.iter().enumerate().map(|(a, p)| p * spec.reward(&ex.labels, a)).sum::<f64>();
        }
        Ok(total / examples.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggingOptions {
    pub l2: f64,
    pub max_epochs: usize,
    pub epsilon: f64,
}

impl Default for LoggingOptions {
    fn default() -> Self {
        LoggingOptions {
            l2: 1e-2,
            max_epochs: 500,
            epsilon: 0.05,
        }
    }
}

/// Training targets: the label, or one uniformly drawn positive label for
/// multilabel examples. Examples without labels are skipped.
fn logging_targets(subset: &[SupervisedExample], seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subset
        .iter()
        .enumerate()
        .filter_map(|(i, ex)| match ex.labels.len() {
            0 => None,
            1 => Some((i, ex.labels[0])),
            k => Some((i, ex.labels[rng.gen_range(0..k)])),
        })
        .collect()
}

/// Mean cross-entropy plus `(l2/2) ||W||^2`, and its gradient.
pub fn logging_objective(
    weights: &[f64],
    subset: &[SupervisedExample],
    targets: &[(usize, usize)],
    num_actions: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = subset.first().map_or(0, |e| e.features.len());
    let w = d + 1;
    let mut grad = vec![0.0; weights.len()];
    let mut z = vec![0.0; num_actions];
    let mut loss = 0.0;
    for &(i, y) in targets {
        let x = &subset[i].features;
        for (a, za) in z.iter_mut().enumerate() {
            let row = &weights[a * w..(a + 1) * w];
            *za = row[..d].iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + row[d];
        }
        loss -= crate::policy::log_softmax_at(&z, y);
        let mut p = vec![0.0; num_actions];
        softmax_into(&z, 1.0, &mut p);
        for a in 0..num_actions {
            let c = p[a] - (a == y) as u8 as f64;
            let g = &mut grad[a * w..(a + 1) * w];
            for (gj, xj) in g[..d].iter_mut().zip(x) {
                *gj += c * xj;
            }
            g[d] += c;
        }
    }
    let n = targets.len().max(1) as f64;
    loss /= n;
    for (g, wv) in grad.iter_mut().zip(weights) {
        *g = *g / n + l2 * wv;
    }
    loss += 0.5 * l2 * weights.iter().map(|v| v * v).sum::<f64>();
    (loss, grad)
}

/// L2-regularized multinomial logistic regression by full-batch gradient
/// descent from zero with step `1 / (max ||x~||^2 / 2 + l2)`.
pub fn train_logging_policy(
    subset: &[SupervisedExample],
    num_actions: usize,
    options: &LoggingOptions,
    seed: u64,
) -> Result<LoggingPolicy> {
    Ok(train_logging_policy_traced(subset, num_actions, options, seed)?.0)
}

/// As [`train_logging_policy`], also returning the objective after each epoch
/// (index 0 is the initial value).
pub fn train_logging_policy_traced(
    subset: &[SupervisedExample],
    num_actions: usize,
    options: &LoggingOptions,
    seed: u64,
) -> Result<(LoggingPolicy, Vec<f64>)> {
    if subset.is_empty() {
        return Err(Error::EmptyData);
    }
    if !(options.l2 > 0.0 && options.l2.is_finite()) {
        return Err(Error::InvalidConfig("l2 strength must be positive".into()));
    }
    let d = subset[0].features.len();
    if let Some(e) = subset.iter().find(|e| e.features.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: e.features.len(),
        });
    }
    if let Some(&c) = subset.iter().flat_map(|e| &e.labels).find(|&&c| c >= num_actions) {
        return Err(Error::ActionOutOfRange {
            action: c,
            num_actions,
        });
    }
    let targets = logging_targets(subset, seed);
    if targets.is_empty() {
        return Err(Error::EmptyData);
    }
    let max_sq = targets
        .iter()
        .map(|&(i, _)| 1.0 + subset[i].features.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (0.5 * max_sq + options.l2);
    let mut weights = vec![0.0; num_actions * (d + 1)];
    let (mut loss, mut grad) = logging_objective(&weights, subset, &targets, num_actions, options.l2);
    let mut history = vec![loss];
    for _ in 0..options.max_epochs {
        let candidate: Vec<f64> = weights.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
        let (next_loss, next_grad) = logging_objective(&candidate, subset, &targets, num_actions, options.l2);
        let improvement = (loss - next_loss) / loss.abs().max(f64::MIN_POSITIVE);
        weights = candidate;
        loss = next_loss;
        grad = next_grad;
        history.push(loss);
        if improvement < 1e-6 {
            break;
        }
    }
    let policy = LoggingPolicy {
        num_actions,
        feature_dim: d,
        weights,
        epsilon: 0.0,
    }
    .with_epsilon(options.epsilon)?;
    Ok((policy, history))
}

/// Samples one action per example from the mixed logging distribution and
/// records its exact propensity and reward.
pub fn convert(
    examples: &[SupervisedExample],
    logging: &LoggingPolicy,
    spec: &RewardSpec,
    seed: u64,
) -> Result<BanditDataset> {
    if logging.num_actions != spec.num_actions {
        return Err(Error::DimensionMismatch {
            expected: spec.num_actions,
            found: logging.num_actions,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        spec.validate_example(ex)?;
        let q = logging.probs(&ex.features)?;
        let a = sample_index(&q, rng.gen::<f64>());
        assert!(q[a] > 0.0, "sampled an action with zero propensity");
        out.push(LoggedExample::new(
            ex.features.clone(),
            a,
            q[a].min(1.0),
            spec.reward(&ex.labels, a),
        )?);
    }
    BanditDataset::new(out, logging.num_actions, logging.feature_dim)
}

/// Seeded shuffle followed by contiguous slices; boundaries are
/// `round(cumulative_fraction * n)`.
pub fn split_dataset<T: Clone>(items: &[T], fractions: &[f64], seed: u64) -> Result<Vec<Vec<T>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::InvalidFractions(format!("{fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(format!("{fractions:?} sums to {sum}")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (k, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if k + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).clamp(start, n)
        };
        parts.push(order[start..end].iter().map(|&i| items[i].clone()).collect());
        start = end;
    }
    Ok(parts)
}

/// Golden-ratio increment of the splitmix64 generator.
pub const SEED_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Per-stream seed: the `index + 1`-th splitmix64 output from `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(SEED_GAMMA.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Toy multilabel task: label `k` is on when a noisy linear score of the
/// context exceeds a per-label threshold. For demos and tests.
pub fn synthetic_multilabel(n: usize, feature_dim: usize, num_labels: usize, seed: u64) -> Vec<SupervisedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..num_labels)
        .map(|_| (0..feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..feature_dim).map(|_| rng.gen::<f64>()).collect();
            let scores: Vec<f64> = dirs
                .iter()
                .map(|d| {
                    let s: f64 = d.iter().zip(&x).map(|(a, b)| a * (b - 0.5)).sum();
                    s / (feature_dim as f64).sqrt() + 0.1 * rng.gen_range(-1.0..1.0)
                })
                .collect();
            let best = crate::policy::argmax(&scores);
            let labels = (0..num_labels).filter(|&k| k == best || scores[k] > 0.15).collect();
            SupervisedExample::new(x, labels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ml(n: usize) -> RewardSpec {
        RewardSpec::new(Task::Multilabel, None, 0.25, n).unwrap()
    }

    #[test]
    fn fashion_partial_credit() {
        let s = RewardSpec::fashion_mnist();
        assert_eq!(s.reward(&[6], 0), 0.25);
        assert_eq!(s.reward(&[6], 6), 1.0);
        assert_eq!(s.reward(&[1], 3), 0.0);
        assert_eq!(s.reward(&[9], 5), 0.25);
        let c = RewardSpec::covertype();
        assert_eq!(c.reward(&[1], 2), 0.25);
        assert_eq!(c.reward(&[6], 0), 0.0);
    }

    #[test]
    fn multilabel_reward() {
        let s = ml(4);
        assert_eq!(s.reward(&[1, 3], 3), 1.0);
        assert_eq!(s.reward(&[1, 3], 2), 0.0);
    }

    #[test]
    fn groups_must_be_disjoint_and_in_range() {
        assert!(RewardSpec::new(Task::Multiclass, Some(vec![vec![0, 1], vec![1]]), 0.25, 3).is_err());
        assert!(RewardSpec::new(Task::Multiclass, Some(vec![vec![5]]), 0.25, 3).is_err());
        assert!(RewardSpec::new(Task::Multiclass, None, 1.5, 3).is_err());
    }

    #[test]
    fn uniform_logging_records_half() {
        let spec = ml(2);
        let ex: Vec<_> = (0..20).map(|i| SupervisedExample::new(vec![i as f64], vec![i % 2])).collect();
        let log = convert(&ex, &LoggingPolicy::uniform(2, 1), &spec, 1).unwrap();
        assert!(log.examples().iter().all(|e| e.propensity == 0.5));
    }

    #[test]
    fn full_exploration_ignores_weights() {
        let mut p = LoggingPolicy::uniform(3, 1).with_epsilon(1.0).unwrap();
        p.weights = vec![5.0, -2.0, 0.0, 1.0, 3.0, 3.0];
        let ex = vec![SupervisedExample::new(vec![0.7], vec![0]); 10];
        let log = convert(&ex, &p, &ml(3), 9).unwrap();
        assert!(log.examples().iter().all(|e| e.propensity == 1.0 / 3.0));
    }

    #[test]
    fn conversion_frequencies_match_q() {
        let mut p = LoggingPolicy::uniform(3, 1).with_epsilon(0.1).unwrap();
        p.weights = vec![1.0, 0.0, 0.0, 0.5, -1.0, 0.3];
        let x = vec![0.4];
        let q = p.probs(&x).unwrap();
        let n = 100_000;
        let ex = vec![SupervisedExample::new(x, vec![0]); n];
        let log = convert(&ex, &p, &ml(3), 42).unwrap();
        let mut counts = [0usize; 3];
        for e in log.examples() {
            counts[e.action] += 1;
            assert_eq!(e.propensity, q[e.action]);
        }
        for a in 0..3 {
            let f = counts[a] as f64 / n as f64;
            let sigma = (q[a] * (1.0 - q[a]) / n as f64).sqrt();
            assert!((f - q[a]).abs() < 3.0 * sigma, "action {a}: {f} vs {}", q[a]);
        }
    }

    #[test]
    fn conversion_is_deterministic() {
        let ex = synthetic_multilabel(50, 3, 4, 5);
        let p = train_logging_policy(&ex, 4, &LoggingOptions::default(), 1).unwrap();
        let a = convert(&ex, &p, &ml(4), 77).unwrap();
        let b = convert(&ex, &p, &ml(4), 77).unwrap();
        assert_eq!(a, b);
        assert!(a.examples().iter().all(|e| e.propensity >= 0.05 / 4.0));
    }

    #[test]
    fn single_class_logging_prefers_it() {
        let ex: Vec<_> = (0..10)
            .map(|i| SupervisedExample::new(vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0], vec![2]))
            .collect();
        let opts = LoggingOptions {
            l2: 10.0,
            max_epochs: 1000,
            epsilon: 0.0,
        };
        let p = train_logging_policy(&ex, 3, &opts, 0).unwrap();
        for e in &ex {
            let q = p.probs(&e.features).unwrap();
            assert_eq!(crate::policy::argmax(&q), 2);
            assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 0.1));
        }
    }

    #[test]
    fn logging_loss_decreases_monotonically() {
        let ex: Vec<_> = (0..20)
            .map(|i| {
                let x = i as f64 / 20.0;
                SupervisedExample::new(vec![x], vec![(x > 0.5) as usize])
            })
            .collect();
        let opts = LoggingOptions {
            l2: 1e-3,
            max_epochs: 300,
            epsilon: 0.0,
        };
        let (_, hist) = train_logging_policy_traced(&ex, 2, &opts, 0).unwrap();
        assert!(hist.len() > 2);
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn logging_gradient_matches_finite_differences() {
        let ex = synthetic_multilabel(30, 3, 3, 11);
        let targets = logging_targets(&ex, 4);
        let mut w: Vec<f64> = vec![0.0; 3 * 4];
        // evaluate at init and at a perturbed point
        for round in 0..2 {
            let (_, g) = logging_objective(&w, &ex, &targets, 3, 0.1);
            for j in 0..w.len() {
                let h = 1e-5;
                let mut up = w.clone();
                up[j] += h;
                let mut dn = w.clone();
                dn[j] -= h;
                let fd = (logging_objective(&up, &ex, &targets, 3, 0.1).0
                    - logging_objective(&dn, &ex, &targets, 3, 0.1).0)
                    / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-8);
                assert!(rel <= 1e-6, "round {round} coord {j}: {fd} vs {}", g[j]);
            }
            w = w.iter().enumerate().map(|(j, _)| 0.1 * (j as f64 - 5.0)).collect();
        }
    }

    #[test]
    fn empty_subset_errors() {
        assert!(matches!(
            train_logging_policy(&[], 2, &LoggingOptions::default(), 0),
            Err(Error::EmptyData)
        ));
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..4).collect();
        let id = split_dataset(&items, &[1.0], 3).unwrap();
        assert_eq!(id.len(), 1);
        let mut sorted = id[0].clone();
        sorted.sort();
        assert_eq!(sorted, items);
        let halves = split_dataset(&items, &[0.5, 0.5], 3).unwrap();
        assert_eq!(halves[0].len(), 2);
        assert_eq!(halves[1].len(), 2);
        let mut all: Vec<u32> = halves.concat();
        all.sort();
        assert_eq!(all, items);
        assert!(split_dataset(&items, &[0.5, 0.6], 3).is_err());
        assert!(split_dataset(&items, &[1.5, -0.5], 3).is_err());
    }

    #[test]
    fn split_seeds() {
        let items: Vec<u32> = (0..20).collect();
        let a = split_dataset(&items, &[0.3, 0.7], 1).unwrap();
        assert_eq!(a, split_dataset(&items, &[0.3, 0.7], 1).unwrap());
        assert_ne!(a, split_dataset(&items, &[0.3, 0.7], 2).unwrap());
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: Vec<u64> = (0..100).map(|k| derive_seed(7, k)).collect();
        let mut s = seeds.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 100);
        // first splitmix64 output for state 0
        assert_eq!(derive_seed(0, 0), 0xE220_A839_7B1D_CDAF);
    }
}
