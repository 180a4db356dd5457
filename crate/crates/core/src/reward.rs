//! Matching-driven rewards, group-normalized advantages, the sigmoid-gated
//! policy objective, and the generation loss.
//!
//! A prediction is scored by parsing outcome and match tier: an unparseable
//! response scores −1; a parseable one scores by the smallest site tolerance
//! at which it matches the reference — `1 + 0.5·e^(−4·RMSE)` at 0.5, flat
//! 0.6 at 0.75, flat 0.3 at 1.0, and 0 when even the loosest tier fails.
//! Rewards therefore live in {−1} ∪ [0, 1.5].
//!
//! The policy objective replaces hard ratio clipping with a smooth gate
//! `f(x) = σ(τ(x−1)) · 4/τ`, which passes through `2/τ` at `x = 1` with unit
//! slope for every temperature, so the first-order behavior matches the
//! ungated ratio while extreme ratios saturate instead of being cut off.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble, Structure};
use crate::codec::{ParseError, ParsedPrediction};
use crate::frames::BuildingBlock;
use crate::matching::{structures_match, MatchReport, MatchTier, MatchTolerances};

/// Reward for a response that could not be parsed into a structure.
pub const PARSE_FAILURE_REWARD: f64 = -1.0;
/// Flat reward for a match at site tolerance 0.75 but not 0.5.
pub const THREE_QUARTER_TIER_REWARD: f64 = 0.6;
/// Flat reward for a match at site tolerance 1.0 but not 0.75.
pub const FULL_TIER_REWARD: f64 = 0.3;
/// Reward when no tier matches.
pub const UNMATCHED_REWARD: f64 = 0.0;
/// Symmetric clamp on log-ratio differences before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 50.0;
/// A token's gate counts as saturated when |τ(x−1)| exceeds this bound
/// (the sigmoid is within ~2% of its asymptote there).
pub const GATE_SATURATION_BOUND: f64 = 4.0;

/// Errors from group objective evaluation.
#[derive(Debug, Error)]
pub enum RewardError {
    /// A sample carried no tokens.
    #[error("sample {index} has an empty token sequence")]
    EmptySequence { index: usize },
    /// Policy and reference log-prob lists disagree in length.
    #[error("log-prob length mismatch: policy {policy} vs reference {reference}")]
    LengthMismatch { policy: usize, reference: usize },
    /// The group does not have the configured number of samples.
    #[error("group has {actual} samples but the configuration requires {expected}")]
    GroupSizeMismatch { expected: usize, actual: usize },
    /// A configuration field was out of range.
    #[error("configuration field {name} must be {requirement}, got {value}")]
    InvalidConfig { name: &'static str, requirement: &'static str, value: f64 },
    /// A log-probability was positive.
    #[error("log-probability {value} is positive")]
    InvalidLogProb { value: f64 },
}

/// One sampled rollout: per-token log-probabilities under the current policy
/// and under the reference, plus its scalar reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub logp_policy: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub reward: f64,
}

impl GroupSample {
    fn validate(&self, index: usize) -> Result<(), RewardError> {
        if self.logp_policy.len() != self.logp_ref.len() {
            return Err(RewardError::LengthMismatch {
                policy: self.logp_policy.len(),
                reference: self.logp_ref.len(),
            });
        }
        if self.logp_policy.is_empty() {
            return Err(RewardError::EmptySequence { index });
        }
        for &lp in self.logp_policy.iter().chain(self.logp_ref.iter()) {
            if lp > 1e-9 || !lp.is_finite() {
                return Err(RewardError::InvalidLogProb { value: lp });
            }
        }
        Ok(())
    }
}

/// Group optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SapoConfig {
    /// Number of rollouts per group.
    pub group_size: usize,
    /// Gate temperature for positive advantages.
    pub tau_pos: f64,
    /// Gate temperature for non-positive advantages.
    pub tau_neg: f64,
    /// Stabilizer added to the advantage denominator.
    pub advantage_epsilon: f64,
}

impl Default for SapoConfig {
    fn default() -> Self {
        Self { group_size: 8, tau_pos: 1.0, tau_neg: 1.05, advantage_epsilon: 1e-6 }
    }
}

impl SapoConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.group_size < 2 {
            return Err(RewardError::InvalidConfig {
                name: "group_size",
                requirement: "at least 2",
                value: self.group_size as f64,
            });
        }
        for (name, value) in [
            ("tau_pos", self.tau_pos),
            ("tau_neg", self.tau_neg),
            ("advantage_epsilon", self.advantage_epsilon),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(RewardError::InvalidConfig {
                    name,
                    requirement: "positive and finite",
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Maps a match report to the tier component of the reward.
///
/// The tier is graded on the standard ladder: the half tier decays with the
/// match RMSE, the looser tiers are flat, and no tier means zero.
pub fn reward_from_report(report: &MatchReport) -> f64 {
    match report.tier {
        Some(MatchTier::Half) => {
            let rmse = report
                .rmse
                .expect("a half-tier report from the tight tolerance set is matched");
            1.0 + 0.5 * (-4.0 * rmse).exp()
        }
        Some(MatchTier::ThreeQuarter) => THREE_QUARTER_TIER_REWARD,
        Some(MatchTier::Full) => FULL_TIER_REWARD,
        None => UNMATCHED_REWARD,
    }
}

/// Scores a parsed-or-failed prediction against the reference structure.
///
/// Every failure path maps to a reward value rather than an error: a parse
/// error or an unassemblable prediction scores −1, and a structure the
/// matcher cannot process (degenerate reduction) scores as unmatched.
pub fn compute_reward(
    parse_result: &Result<ParsedPrediction, ParseError>,
    blocks: &[BuildingBlock],
    gt: &Structure,
) -> f64 {
    let prediction = match parse_result {
        Ok(p) => p,
        Err(_) => return PARSE_FAILURE_REWARD,
    };
    let assembled = match assemble(&prediction.lattice, blocks, &prediction.poses) {
        Ok(s) => s,
        Err(_) => return PARSE_FAILURE_REWARD,
    };
    match structures_match(&assembled, gt, &MatchTolerances::tight()) {
        Ok(report) => reward_from_report(&report),
        Err(_) => UNMATCHED_REWARD,
    }
}

/// Rewards for a batch of predictions, evaluated in parallel.
pub fn compute_rewards(
    parse_results: &[Result<ParsedPrediction, ParseError>],
    blocks: &[BuildingBlock],
    gt: &Structure,
) -> Vec<f64> {
    parse_results
        .par_iter()
        .map(|r| compute_reward(r, blocks, gt))
        .collect()
}

/// Group-normalized advantages: `(r − mean) / (population std + eps)`.
///
/// A zero-variance group yields all-zero advantages through the epsilon.
/// The epsilon must be positive and finite.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Vec<f64> {
    assert!(epsilon.is_finite() && epsilon > 0.0, "epsilon must be positive, got {epsilon}");
    let n = rewards.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let denom = variance.sqrt() + epsilon;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// The smooth gate `f(x) = σ(τ(x−1)) · 4/τ`.
///
/// For every temperature, `f(1) = 2/τ` and `f′(1) = 1`, so near the on-policy
/// point the gated ratio behaves like the raw ratio up to an additive
/// constant; far from it the gate saturates toward `0` or `4/τ`.
pub fn gate(x: f64, tau: f64) -> f64 {
    debug_assert!(tau.is_finite() && tau > 0.0);
    sigmoid(tau * (x - 1.0)) * 4.0 / tau
}

/// Derivative of [`gate`] with respect to `x`: `4·σ(τ(x−1))·(1 − σ(τ(x−1)))`.
pub fn gate_slope(x: f64, tau: f64) -> f64 {
    debug_assert!(tau.is_finite() && tau > 0.0);
    let s = sigmoid(tau * (x - 1.0));
    4.0 * s * (1.0 - s)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-token importance ratios `exp(logp_policy − logp_ref)`, computed in log
/// space with a symmetric clamp at ±[`LOG_RATIO_CLAMP`].
pub fn importance_ratios(sample: &GroupSample) -> Result<Vec<f64>, RewardError> {
    if sample.logp_policy.len() != sample.logp_ref.len() {
        return Err(RewardError::LengthMismatch {
            policy: sample.logp_policy.len(),
            reference: sample.logp_ref.len(),
        });
    }
    Ok(sample
        .logp_policy
        .iter()
        .zip(&sample.logp_ref)
        .map(|(p, r)| (p - r).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP).exp())
        .collect())
}

/// Per-sample diagnostics attached to an objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub advantage: f64,
    /// Gate temperature selected for this sample's advantage sign.
    pub tau: f64,
    pub mean_ratio: f64,
    pub mean_gate: f64,
    /// Fraction of tokens whose gate argument exceeds the saturation bound.
    pub gate_saturation: f64,
}

/// An evaluated group objective with its per-sample breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapoEvaluation {
    pub objective: f64,
    pub advantages: Vec<f64>,
    pub per_sample: Vec<SampleDiagnostics>,
}

/// The group objective
/// `J = (1/G) Σ_i (1/|Rᵢ|) Σ_t f_{τ(i)}(x_{i,t}) · Aᵢ`,
/// with `τ(i) = tau_pos` for positive advantages and `tau_neg` otherwise,
/// and advantages computed from the sample rewards.
pub fn sapo_objective(
    group: &[GroupSample],
    cfg: &SapoConfig,
) -> Result<SapoEvaluation, RewardError> {
    cfg.validate()?;
    if group.len() != cfg.group_size {
        return Err(RewardError::GroupSizeMismatch {
            expected: cfg.group_size,
            actual: group.len(),
        });
    }
    for (i, sample) in group.iter().enumerate() {
        sample.validate(i)?;
    }
    let rewards: Vec<f64> = group.iter().map(|s| s.reward).collect();
    let advantages = group_advantages(&rewards, cfg.advantage_epsilon);
    let mut objective = 0.0;
    let mut per_sample = Vec::with_capacity(group.len());
    for (sample, &advantage) in group.iter().zip(&advantages) {
        let tau = if advantage > 0.0 { cfg.tau_pos } else { cfg.tau_neg };
        let ratios = importance_ratios(sample)?;
        let len = ratios.len() as f64;
        let mut gate_sum = 0.0;
        let mut saturated = 0usize;
        for &x in &ratios {
            gate_sum += gate(x, tau);
            if (tau * (x - 1.0)).abs() > GATE_SATURATION_BOUND {
                saturated += 1;
            }
        }
        objective += gate_sum / len * advantage;
        per_sample.push(SampleDiagnostics {
            advantage,
            tau,
            mean_ratio: ratios.iter().sum::<f64>() / len,
            mean_gate: gate_sum / len,
            gate_saturation: saturated as f64 / len,
        });
    }
    objective /= group.len() as f64;
    Ok(SapoEvaluation { objective, advantages, per_sample })
}

/// Generation loss of a target sequence: the negative sum of its per-token
/// log-probabilities. Non-negative for genuine log-probabilities.
pub fn sft_nll(token_logprobs: &[f64]) -> Result<f64, RewardError> {
    if token_logprobs.is_empty() {
        return Err(RewardError::EmptySequence { index: 0 });
    }
    for &lp in token_logprobs {
        if lp > 1e-9 || !lp.is_finite() {
            return Err(RewardError::InvalidLogProb { value: lp });
        }
    }
    Ok(-token_logprobs.iter().sum::<f64>())
}
