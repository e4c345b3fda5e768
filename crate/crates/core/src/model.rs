//! Sequence-model contract (policy prior + coarse value) and the synthetic
//! models shipped with the planner.
//!
//! A model is queried once per salient region when a leaf is expanded. The
//! region id plays the role of an exploratory prompt: it tells the model which
//! part of the world to describe next.

use serde::{Deserialize, Serialize};

use crate::domain::{RegionId, SequenceState, TokenId, WorldInstance};
use crate::error::{contract, validation, Result};
use crate::reward::coverage_quality;
use crate::scalar::Scalar;

/// Probability distribution over a world's vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyVector<F> {
    probabilities: Vec<F>,
}

impl<F: Scalar> PolicyVector<F> {
    pub fn new(probabilities: Vec<F>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(validation("policy vector is empty"));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= F::zero())) {
            return Err(validation("policy entries must be finite and >= 0"));
        }
        let sum: F = probabilities.iter().copied().sum();
        if (sum.as_f64() - 1.0).abs() > F::SIMPLEX_TOL {
            return Err(validation(format!("policy sums to {sum}, not 1")));
        }
        Ok(Self { probabilities })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform policy over zero actions");
        let p = F::one() / F::from_usize_lossy(n);
        Self { probabilities: vec![p; n] }
    }

    /// Numerically stable softmax.
    pub fn softmax(logits: &[F]) -> Self {
        assert!(!logits.is_empty(), "softmax of no logits");
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: F = exps.iter().copied().sum();
        Self { probabilities: exps.into_iter().map(|e| e / z).collect() }
    }

    pub fn probabilities(&self) -> &[F] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> F {
        self.probabilities[token.index()]
    }
}

/// One prompted evaluation inside an expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionEntry<F> {
    pub region_id: RegionId,
    /// Saliency weight of the prompted region, used to merge priors.
    pub saliency_weight: F,
    pub policy: PolicyVector<F>,
    pub coarse_value: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionResult<F> {
    pub entries: Vec<ExpansionEntry<F>>,
}

impl<F: Scalar> ExpansionResult<F> {
    /// Saliency-weighted mean of the entries' coarse values.
    pub fn weighted_coarse_value(&self) -> F {
        let wsum: F = self.entries.iter().map(|e| e.saliency_weight).sum();
        if wsum <= F::zero() {
            let n = F::from_usize_lossy(self.entries.len().max(1));
            return self.entries.iter().map(|e| e.coarse_value).sum::<F>() / n;
        }
        self.entries.iter().map(|e| e.saliency_weight * e.coarse_value).sum::<F>() / wsum
    }
}

/// Policy/value oracle standing in for the vision-language model.
///
/// `evaluate` must be pure; implementations are shared across threads.
pub trait SequenceModel<F: Scalar>: Send + Sync {
    fn evaluate(
        &self,
        region: RegionId,
        state: &SequenceState,
        world: &WorldInstance<F>,
    ) -> Result<(PolicyVector<F>, F)>;

    /// Inclusive range of `coarse_value`.
    fn value_bounds(&self) -> (F, F) {
        (F::zero(), F::one())
    }
}

impl<F: Scalar, M: SequenceModel<F> + ?Sized> SequenceModel<F> for &M {
    fn evaluate(&self, region: RegionId, state: &SequenceState, world: &WorldInstance<F>) -> Result<(PolicyVector<F>, F)> {
        (**self).evaluate(region, state, world)
    }

    fn value_bounds(&self) -> (F, F) {
        (**self).value_bounds()
    }
}

/// Up to `k` regions not yet fully described, by descending weight then id.
pub fn identify_salient_regions<F: Scalar>(
    state: &SequenceState,
    world: &WorldInstance<F>,
    k: usize,
) -> Vec<RegionId> {
    let mut open: Vec<_> = world.regions.iter().filter(|r| !r.is_covered_by(state)).collect();
    open.sort_by(|a, b| {
        b.saliency_weight
            .partial_cmp(&a.saliency_weight)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.region_id.cmp(&b.region_id))
    });
    open.into_iter().take(k).map(|r| r.region_id).collect()
}

/// Stage one and two of expansion: pick salient regions, then query the model
/// once per region. A fully described state falls back to the single most
/// salient region so the result is never empty.
pub fn saliency_expansion<F: Scalar, M: SequenceModel<F> + ?Sized>(
    model: &M,
    state: &SequenceState,
    world: &WorldInstance<F>,
    k: usize,
) -> Result<ExpansionResult<F>> {
    let mut regions = identify_salient_regions(state, world, k);
    if regions.is_empty() {
        let top = world
            .regions
            .iter()
            .max_by(|a, b| {
                a.saliency_weight
                    .partial_cmp(&b.saliency_weight)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.region_id.cmp(&a.region_id))
            })
            .ok_or_else(|| validation("world has no regions"))?;
        regions.push(top.region_id);
    }
    let (lo, hi) = model.value_bounds();
    let entries = regions
        .into_iter()
        .map(|rid| {
            let (policy, coarse_value) = model.evaluate(rid, state, world)?;
            if policy.len() != world.vocab_size {
                return Err(contract(format!(
                    "model returned {} probabilities for vocab_size {}",
                    policy.len(),
                    world.vocab_size
                )));
            }
            let saliency_weight = world.region(rid).map(|r| r.saliency_weight).unwrap_or(F::zero());
            Ok(ExpansionEntry { region_id: rid, saliency_weight, policy, coarse_value: coarse_value.max(lo).min(hi) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpansionResult { entries })
}

/// Default synthetic model: a softmax over affinity logits.
///
/// The prompted region's still-missing attribute tokens get logit `affinity`,
/// EOS gets `eos_slope * coverage`, everything else 0. The coarse value is the
/// current coverage of the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabularModel<F> {
    pub affinity: F,
    pub eos_slope: F,
}

impl<F: Scalar> Default for TabularModel<F> {
    fn default() -> Self {
        Self { affinity: F::lit(2.0), eos_slope: F::lit(3.0) }
    }
}

impl<F: Scalar> TabularModel<F> {
    pub fn logits(&self, region: RegionId, state: &SequenceState, world: &WorldInstance<F>) -> Result<Vec<F>> {
        let spec = world
            .region(region)
            .ok_or_else(|| validation(format!("unknown region id {region}")))?;
        let mut logits = vec![F::zero(); world.vocab_size];
        for &t in &spec.attribute_tokens {
            if !state.contains(t) {
                logits[t.index()] = self.affinity;
            }
        }
        logits[world.eos_token.index()] = self.eos_slope * coverage_quality(state, world);
        Ok(logits)
    }
}

impl<F: Scalar> SequenceModel<F> for TabularModel<F> {
    fn evaluate(&self, region: RegionId, state: &SequenceState, world: &WorldInstance<F>) -> Result<(PolicyVector<F>, F)> {
        let logits = self.logits(region, state, world)?;
        Ok((PolicyVector::softmax(&logits), coverage_quality(state, world)))
    }
}

/// Depth-one worlds where every token is an arm: uniform policy, zero coarse value.
#[derive(Debug, Clone, Copy, Default)]
pub struct BanditModel;

impl<F: Scalar> SequenceModel<F> for BanditModel {
    fn evaluate(&self, _region: RegionId, _state: &SequenceState, world: &WorldInstance<F>) -> Result<(PolicyVector<F>, F)> {
        if world.max_length != 1 {
            return Err(contract(format!(
                "bandit model used on world '{}' with max_length {}",
                world.world_id, world.max_length
            )));
        }
        Ok((PolicyVector::uniform(world.vocab_size), F::zero()))
    }
}

/// Prior-free model: uniform policy, coverage as coarse value. Used as the
/// unguided baseline in branching comparisons.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformModel;

impl<F: Scalar> SequenceModel<F> for UniformModel {
    fn evaluate(&self, region: RegionId, state: &SequenceState, world: &WorldInstance<F>) -> Result<(PolicyVector<F>, F)> {
        if world.region(region).is_none() {
            return Err(validation(format!("unknown region id {region}")));
        }
        Ok((PolicyVector::uniform(world.vocab_size), coverage_quality(state, world)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RegionSpec;

    fn w3() -> WorldInstance<f64> {
        WorldInstance {
            world_id: "w3".into(),
            vocab_size: 6,
            eos_token: TokenId(5),
            max_length: 5,
            reward_noise_sigma: 0.0,
            regions: vec![
                RegionSpec::new(7, [0], 0.3),
                RegionSpec::new(3, [1, 2], 0.5),
                RegionSpec::new(4, [3], 0.2),
            ],
        }
    }

    #[test]
    fn salient_regions_sorted() {
        let w = w3();
        let e = SequenceState::empty();
        assert_eq!(identify_salient_regions(&e, &w, 2), vec![3, 7]);
        assert_eq!(identify_salient_regions(&e, &w, 10), vec![3, 7, 4]);
        let s = SequenceState::from_tokens(&[0, 1, 2, 3].map(TokenId), &w).unwrap();
        assert!(identify_salient_regions(&s, &w, 3).is_empty());
        // partially described region still counts as open
        let s = SequenceState::from_tokens(&[TokenId(1)], &w).unwrap();
        assert_eq!(identify_salient_regions(&s, &w, 1), vec![3]);
    }

    #[test]
    fn salient_tie_break_by_id() {
        let mut w = w3();
        w.regions[0].saliency_weight = 0.25;
        w.regions[1].saliency_weight = 0.5;
        w.regions[2].saliency_weight = 0.25;
        assert_eq!(identify_salient_regions(&SequenceState::empty(), &w, 3), vec![3, 4, 7]);
    }

    #[test]
    fn tabular_eos_dominates_when_covered() {
        let w = w3();
        let m = TabularModel::default();
        let s = SequenceState::from_tokens(&[0, 1, 2, 3].map(TokenId), &w).unwrap();
        let (p, v) = m.evaluate(3, &s, &w).unwrap();
        assert_eq!(v, 1.0);
        // hand softmax: EOS logit 3, five tokens at 0
        let e3 = 3f64.exp();
        let expected = e3 / (e3 + 5.0);
        assert!((p.prob(TokenId(5)) - expected).abs() < 1e-12);
        for t in 0..5 {
            assert!(p.prob(TokenId(t)) < p.prob(TokenId(5)));
        }
    }

    #[test]
    fn tabular_uniform_and_empty() {
        let w = WorldInstance::<f64> {
            world_id: "v2".into(),
            vocab_size: 2,
            eos_token: TokenId(1),
            max_length: 3,
            reward_noise_sigma: 0.0,
            regions: vec![RegionSpec::new(0, [0], 1.0)],
        };
        let flat = TabularModel { affinity: 0.0, eos_slope: 3.0 };
        let (p, v) = flat.evaluate(0, &SequenceState::empty(), &w).unwrap();
        assert_eq!(p.probabilities(), &[0.5, 0.5]);
        assert_eq!(v, 0.0);
        assert!(TabularModel::default().evaluate(9, &SequenceState::empty(), &w).is_err());
    }

    #[test]
    fn bandit_model() {
        let mut w = w3();
        w.max_length = 1;
        let (p, v) = BanditModel.evaluate(3, &SequenceState::empty(), &w).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.probabilities().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(v, 0.0);
        assert_eq!(PolicyVector::<f64>::uniform(4).probabilities(), &[0.25; 4]);
        assert_eq!(PolicyVector::<f64>::uniform(1).probabilities(), &[1.0]);
        let w = w3();
        assert!(matches!(
            SequenceModel::<f64>::evaluate(&BanditModel, 3, &SequenceState::empty(), &w),
            Err(crate::PlanError::Contract(_))
        ));
    }

    #[test]
    fn expansion_falls_back_when_covered() {
        let w = w3();
        let s = SequenceState::from_tokens(&[0, 1, 2, 3].map(TokenId), &w).unwrap();
        let exp = saliency_expansion(&TabularModel::default(), &s, &w, 4).unwrap();
        assert_eq!(exp.entries.len(), 1);
        assert_eq!(exp.entries[0].region_id, 3);
        let exp = saliency_expansion(&TabularModel::default(), &SequenceState::empty(), &w, 2).unwrap();
        assert_eq!(exp.entries.iter().map(|e| e.region_id).collect::<Vec<_>>(), vec![3, 7]);
        assert_eq!(exp.weighted_coarse_value(), 0.0);
    }

    #[test]
    fn policy_validation() {
        assert!(PolicyVector::<f64>::new(vec![0.5, 0.5]).is_ok());
        assert!(PolicyVector::<f64>::new(vec![0.5, 0.4]).is_err());
        assert!(PolicyVector::<f64>::new(vec![1.5, -0.5]).is_err());
        assert!(PolicyVector::<f64>::new(vec![]).is_err());
    }
}
