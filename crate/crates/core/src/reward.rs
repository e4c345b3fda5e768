//! Composite terminal reward: quality + depth incentive − redundancy penalty,
//! optionally observed through additive Gaussian noise.

use std::collections::HashSet;

use rand::Rng;

use crate::domain::{PlannerConfig, RewardBreakdown, SequenceState, TokenId, WorldInstance};
use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Noise draws are clipped to this many standard deviations.
pub const NOISE_CLIP_SIGMAS: f64 = 6.0;

/// Pluggable quality term. Implementations must be pure and return a value in `[0, 1]`.
pub trait QualityScorer<F: Scalar>: Send + Sync {
    fn score(&self, state: &SequenceState, world: &WorldInstance<F>) -> F;
}

/// Saliency-weighted fraction of fully described regions.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoverageScorer;

impl<F: Scalar> QualityScorer<F> for CoverageScorer {
    fn score(&self, state: &SequenceState, world: &WorldInstance<F>) -> F {
        coverage_quality(state, world)
    }
}

pub fn coverage_quality<F: Scalar>(state: &SequenceState, world: &WorldInstance<F>) -> F {
    world
        .regions
        .iter()
        .filter(|r| r.is_covered_by(state))
        .map(|r| r.saliency_weight)
        .sum()
}

/// `alpha * ln(1 + len)`.
pub fn depth_reward<F: Scalar>(state: &SequenceState, alpha: F) -> F {
    depth_reward_for_len(state.len(), alpha)
}

pub fn depth_reward_for_len<F: Scalar>(len: usize, alpha: F) -> F {
    alpha * F::from_usize_lossy(len).ln_1p()
}

/// Largest repetition ratio `1 - distinct/total` over n-gram orders `1..=max_order`.
/// Orders with no complete n-gram contribute 0.
pub fn redundancy_penalty<F: Scalar>(state: &SequenceState, max_order: usize) -> F {
    redundancy_of(state.tokens(), max_order)
}

pub fn redundancy_of<F: Scalar>(tokens: &[TokenId], max_order: usize) -> F {
    let mut worst = F::zero();
    for n in 1..=max_order {
        if tokens.len() < n {
            break;
        }
        let total = tokens.len() - n + 1;
        let distinct = tokens.windows(n).collect::<HashSet<_>>().len();
        let ratio = F::one() - F::from_usize_lossy(distinct) / F::from_usize_lossy(total);
        if ratio > worst {
            worst = ratio;
        }
    }
    worst
}

/// Noiseless reward of a terminal state (no random draw).
pub fn noiseless_reward<F: Scalar, Q: QualityScorer<F> + ?Sized>(
    state: &SequenceState,
    world: &WorldInstance<F>,
    config: &PlannerConfig<F>,
    scorer: &Q,
) -> Result<RewardBreakdown<F>> {
    if !state.is_terminal() {
        return Err(contract(format!(
            "terminal reward requested for non-terminal state of length {}",
            state.len()
        )));
    }
    Ok(RewardBreakdown::compose(
        scorer.score(state, world),
        depth_reward(state, config.alpha),
        redundancy_penalty(state, config.max_ngram_order),
    ))
}

/// Reward of a terminal state. When the world has `reward_noise_sigma > 0` the
/// observed total carries a clipped Gaussian perturbation drawn from `rng`.
pub fn terminal_reward<F: Scalar, Q: QualityScorer<F> + ?Sized, R: Rng + ?Sized>(
    state: &SequenceState,
    world: &WorldInstance<F>,
    config: &PlannerConfig<F>,
    scorer: &Q,
    rng: &mut R,
) -> Result<RewardBreakdown<F>> {
    let breakdown = noiseless_reward(state, world, config, scorer)?;
    let sigma = world.reward_noise_sigma;
    if sigma > F::zero() {
        let clip = F::lit(NOISE_CLIP_SIGMAS);
        let z = F::standard_normal(rng).max(-clip).min(clip);
        Ok(breakdown.with_observation(breakdown.total + sigma * z))
    } else {
        Ok(breakdown)
    }
}
