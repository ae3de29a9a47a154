//! Desk-scale GRPO on a tabular softmax policy over an enumerated set of
//! candidate completions.
//!
//! A "completion" is a whole candidate string, so the policy is a single
//! categorical distribution `softmax(logits / temperature)`. The clipped
//! surrogate uses per-sequence ratios `π_θ(o) / π_old(o)` and the KL penalty
//! toward the reference policy is computed exactly over the candidates.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::group_advantages;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("old policy assigns zero probability to sampled candidate {0}")]
    ZeroOldProbability(usize),
    #[error("{samples} samples but {advantages} advantages")]
    LengthMismatch { samples: usize, advantages: usize },
    #[error("policies disagree on the number of candidates")]
    ShapeMismatch,
    #[error("reward for candidate {index}: {message}")]
    Reward { index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl TabularPolicy {
    pub fn uniform(size: usize, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self {
            logits: vec![0.0; size],
            temperature,
        }
    }

    pub fn from_logits(logits: Vec<f64>, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self { logits, temperature }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        let scaled: Vec<f64> = self.logits.iter().map(|z| z / self.temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    fn check_index(&self, index: usize) -> Result<(), SimError> {
        if index < self.len() {
            Ok(())
        } else {
            Err(SimError::IndexOutOfRange { index, len: self.len() })
        }
    }
}

/// Exact `KL(p || q)` over a finite support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

// ---------------------------------------------------------------------------
// Supervised warm start

/// Gradient of `-log p(target)` with respect to the logits: `(p - onehot) / T`.
pub fn cross_entropy_grad(policy: &TabularPolicy, target: usize) -> Result<Vec<f64>, SimError> {
    policy.check_index(target)?;
    let p = policy.probs();
    Ok(p.iter()
        .enumerate()
        .map(|(k, pk)| (pk - f64::from(u8::from(k == target))) / policy.temperature)
        .collect())
}

pub fn cross_entropy(policy: &TabularPolicy, target: usize) -> Result<f64, SimError> {
    policy.check_index(target)?;
    Ok(-policy.probs()[target].ln())
}

/// One gradient-descent step on the cross-entropy of `target`.
pub fn sft_step(policy: &TabularPolicy, target: usize, lr: f64) -> Result<TabularPolicy, SimError> {
    let grad = cross_entropy_grad(policy, target)?;
    let logits = policy.logits.iter().zip(&grad).map(|(z, g)| z - lr * g).collect();
    Ok(TabularPolicy::from_logits(logits, policy.temperature))
}

// ---------------------------------------------------------------------------
// Sampling

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random mantissa bits.
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Draws `n` i.i.d. candidate indices from the policy.
pub fn sample_with(policy: &TabularPolicy, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let p = policy.probs();
    (0..n)
        .map(|_| {
            let u = uniform01(rng);
            let mut acc = 0.0;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    return k;
                }
            }
            // Rounding left `acc` a hair below 1: take the last non-zero entry.
            p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
        })
        .collect()
}

pub fn sample_completions(policy: &TabularPolicy, n: usize, seed: u64) -> Vec<usize> {
    sample_with(policy, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

// ---------------------------------------------------------------------------
// Objective

/// Inputs to the clipped surrogate that stay fixed during an update.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateBatch<'a> {
    pub reference: &'a TabularPolicy,
    pub old: &'a TabularPolicy,
    pub samples: &'a [usize],
    pub advantages: &'a [f64],
    pub epsilon: f64,
    pub beta: f64,
}

impl SurrogateBatch<'_> {
    fn validate(&self, policy: &TabularPolicy) -> Result<Vec<f64>, SimError> {
        if self.samples.len() != self.advantages.len() {
            return Err(SimError::LengthMismatch {
                samples: self.samples.len(),
                advantages: self.advantages.len(),
            });
        }
        if self.reference.len() != policy.len() || self.old.len() != policy.len() {
            return Err(SimError::ShapeMismatch);
        }
        let old = self.old.probs();
        for &o in self.samples {
            policy.check_index(o)?;
            if old[o] <= 0.0 {
                return Err(SimError::ZeroOldProbability(o));
            }
        }
        Ok(old)
    }
}

fn clipped_term(s: f64, a: f64, eps: f64) -> (f64, bool) {
    let unclipped = s * a;
    let clipped = s.clamp(1.0 - eps, 1.0 + eps) * a;
    // `true` when the gradient flows through the unclipped branch.
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, s == s.clamp(1.0 - eps, 1.0 + eps))
    }
}

/// `J = mean_i min(s_i A_i, clip(s_i, 1-ε, 1+ε) A_i) - β KL(π_θ || π_ref)`.
pub fn grpo_objective(policy: &TabularPolicy, batch: &SurrogateBatch<'_>) -> Result<f64, SimError> {
    let old = batch.validate(policy)?;
    let p = policy.probs();
    let n = batch.samples.len();
    let surrogate = if n == 0 {
        0.0
    } else {
        let mut terms: Vec<f64> = batch
            .samples
            .iter()
            .zip(batch.advantages)
            .map(|(&o, &a)| clipped_term(p[o] / old[o], a, batch.epsilon).0)
            .collect();
        // Summing in sorted order makes J independent of sample order.
        terms.sort_by(f64::total_cmp);
        terms.iter().sum::<f64>() / n as f64
    };
    Ok(surrogate - batch.beta * kl_divergence(&p, &batch.reference.probs()))
}

/// Analytic gradient of [`grpo_objective`] with respect to the policy logits.
pub fn grpo_gradient(policy: &TabularPolicy, batch: &SurrogateBatch<'_>) -> Result<Vec<f64>, SimError> {
    let old = batch.validate(policy)?;
    let p = policy.probs();
    let q = batch.reference.probs();
    let t = policy.temperature;
    let v = policy.len();
    let mut grad = vec![0.0; v];
    let n = batch.samples.len();
    if n > 0 {
        for (&o, &a) in batch.samples.iter().zip(batch.advantages) {
            let s = p[o] / old[o];
            let (_, flows) = clipped_term(s, a, batch.epsilon);
            if !flows || a == 0.0 {
                continue;
            }
            // d s / d z_m = s (δ_om - p_m) / T
            for (m, g) in grad.iter_mut().enumerate() {
                let delta = f64::from(u8::from(m == o));
                *g += a * s * (delta - p[m]) / t / n as f64;
            }
        }
    }
    let kl = kl_divergence(&p, &q);
    for m in 0..v {
        if p[m] > 0.0 {
            grad[m] -= batch.beta * p[m] * (p[m].ln() - q[m].ln() - kl) / t;
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Training loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Completions per group.
    pub group_size: usize,
    pub temperature: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub steps: usize,
    pub sft_steps: usize,
    pub sft_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            temperature: 0.9,
            beta: 0.04,
            epsilon: 0.2,
            lr: 0.5,
            steps: 200,
            sft_steps: 0,
            sft_lr: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub samples: Vec<usize>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub mean_reward: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub reference_probs: Vec<f64>,
    pub steps: Vec<StepTrace>,
    pub final_policy: TabularPolicy,
    pub final_probs: Vec<f64>,
}

/// One GRPO update with `π_old` equal to the current policy.
pub fn grpo_step<F>(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step: usize,
    reward_fn: &mut F,
) -> Result<(TabularPolicy, StepTrace), SimError>
where
    F: FnMut(usize) -> Result<f64, SimError>,
{
    let old = policy.clone();
    let samples = sample_with(&old, cfg.group_size, rng);
    let rewards = samples.iter().map(|&o| reward_fn(o)).collect::<Result<Vec<_>, _>>()?;
    let advantages = group_advantages(&rewards);
    let batch = SurrogateBatch {
        reference,
        old: &old,
        samples: &samples,
        advantages: &advantages,
        epsilon: cfg.epsilon,
        beta: cfg.beta,
    };
    let before = grpo_objective(policy, &batch)?;
    let grad = grpo_gradient(policy, &batch)?;
    let logits = policy.logits.iter().zip(&grad).map(|(z, g)| z + cfg.lr * g).collect();
    let next = TabularPolicy::from_logits(logits, policy.temperature);
    let after = grpo_objective(&next, &batch)?;
    let mean_reward = if rewards.is_empty() {
        0.0
    } else {
        rewards.iter().sum::<f64>() / rewards.len() as f64
    };
    let trace = StepTrace {
        step,
        samples,
        rewards,
        advantages,
        mean_reward,
        objective_before: before,
        objective_after: after,
        probs: next.probs(),
    };
    Ok((next, trace))
}

/// Optional supervised warm start on `sft_target`, then `cfg.steps` GRPO
/// updates against a reference frozen at the post-SFT policy.
pub fn run_training<F>(
    initial: &TabularPolicy,
    sft_target: Option<usize>,
    cfg: &TrainConfig,
    mut reward_fn: F,
) -> Result<TrainingTrace, SimError>
where
    F: FnMut(usize) -> Result<f64, SimError>,
{
    let mut policy = initial.clone();
    if let Some(target) = sft_target {
        for _ in 0..cfg.sft_steps {
            policy = sft_step(&policy, target, cfg.sft_lr)?;
        }
    }
    let reference = policy.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut steps = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (next, trace) = grpo_step(&policy, &reference, cfg, &mut rng, step, &mut reward_fn)?;
        policy = next;
        steps.push(trace);
    }
    Ok(TrainingTrace {
        reference_probs: reference.probs(),
        steps,
        final_probs: policy.probs(),
        final_policy: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(f: impl Fn(&TabularPolicy) -> f64, p: &TabularPolicy, h: f64) -> Vec<f64> {
        (0..p.len())
            .map(|m| {
                let mut up = p.clone();
                let mut dn = p.clone();
                up.logits[m] += h;
                dn.logits[m] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn sft_raises_target_probability() {
        let p = TabularPolicy::uniform(2, 1.0);
        let next = sft_step(&p, 0, 1.0).unwrap();
        assert!(next.probs()[0] > 0.5);
        assert!(matches!(
            sft_step(&p, 2, 1.0),
            Err(SimError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn sft_saturated_policy_barely_moves() {
        let p = TabularPolicy::from_logits(vec![40.0, 0.0, 0.0], 1.0);
        let next = sft_step(&p, 0, 1.0).unwrap();
        for (a, b) in p.logits.iter().zip(&next.logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let p = TabularPolicy::from_logits(vec![0.3, -1.2, 0.8, 0.05], 0.9);
        let analytic = cross_entropy_grad(&p, 2).unwrap();
        let numeric = fd_grad(|q| cross_entropy(q, 2).unwrap(), &p, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn sampling_is_seeded_and_degenerate_policies_are_deterministic() {
        let p = TabularPolicy::from_logits(vec![0.1, 0.5, -0.3], 0.9);
        assert_eq!(sample_completions(&p, 16, 3), sample_completions(&p, 16, 3));
        let sharp = TabularPolicy::from_logits(vec![0.0, 50.0, 0.0], 1.0);
        assert_eq!(sample_completions(&sharp, 8, 1), vec![1; 8]);
    }

    #[test]
    fn objective_identities() {
        let theta = TabularPolicy::from_logits(vec![0.2, -0.4, 0.9], 0.9);
        let reference = TabularPolicy::from_logits(vec![0.0, 0.1, 0.0], 0.9);
        let samples = [0, 2, 2, 1];
        let adv = [1.0, -0.5, 0.7, -1.2];
        let batch = SurrogateBatch {
            reference: &reference,
            old: &theta,
            samples: &samples,
            advantages: &adv,
            epsilon: 0.2,
            beta: 0.04,
        };
        let kl = kl_divergence(&theta.probs(), &reference.probs());
        let mean_a = adv.iter().sum::<f64>() / 4.0;
        let j = grpo_objective(&theta, &batch).unwrap();
        assert!((j - (mean_a - 0.04 * kl)).abs() < 1e-12);

        let same = SurrogateBatch {
            reference: &theta,
            ..batch
        };
        assert!((grpo_objective(&theta, &same).unwrap() - mean_a).abs() < 1e-12);

        let zeros = [0.0; 4];
        let flat = SurrogateBatch {
            advantages: &zeros,
            ..batch
        };
        let j0 = grpo_objective(&theta, &flat).unwrap();
        assert!((j0 + 0.04 * kl).abs() < 1e-15 && j0 <= 0.0);
    }

    #[test]
    fn zero_epsilon_leaves_only_the_kl_gradient() {
        let theta = TabularPolicy::from_logits(vec![0.5, -0.2, 0.1], 0.9);
        let old = TabularPolicy::from_logits(vec![0.3, 0.0, 0.0], 0.9);
        let reference = TabularPolicy::uniform(3, 0.9);
        let samples = [0, 1, 1, 2];
        let adv = [1.2, -0.4, -0.4, 0.5];
        let batch = SurrogateBatch {
            reference: &reference,
            old: &old,
            samples: &samples,
            advantages: &adv,
            epsilon: 0.0,
            beta: 0.04,
        };
        let g = grpo_gradient(&theta, &batch).unwrap();
        let kl_only = fd_grad(|q| -0.04 * kl_divergence(&q.probs(), &reference.probs()), &theta, 1e-6);
        for (a, b) in g.iter().zip(&kl_only) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_old_probability_is_an_error() {
        let theta = TabularPolicy::uniform(2, 1.0);
        let old = TabularPolicy::from_logits(vec![0.0, -1e6], 1.0);
        let batch = SurrogateBatch {
            reference: &theta,
            old: &old,
            samples: &[1],
            advantages: &[1.0],
            epsilon: 0.2,
            beta: 0.0,
        };
        assert!(matches!(
            grpo_objective(&theta, &batch),
            Err(SimError::ZeroOldProbability(1))
        ));
    }

    #[test]
    fn zero_steps_leave_the_policy_unchanged() {
        let p = TabularPolicy::from_logits(vec![0.4, -0.1], 0.9);
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let trace = run_training(&p, None, &cfg, |_| Ok(0.0)).unwrap();
        assert_eq!(trace.final_policy, p);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn uniform_rewards_only_pull_toward_reference() {
        let p = TabularPolicy::uniform(3, 0.9);
        let cfg = TrainConfig {
            steps: 5,
            ..TrainConfig::default()
        };
        let trace = run_training(&p, None, &cfg, |_| Ok(1.0)).unwrap();
        for s in &trace.steps {
            assert!(s.advantages.iter().all(|&a| a == 0.0));
        }
        // Policy starts at the reference, so the KL pull is zero too.
        assert_eq!(trace.final_policy, p);
    }
}
