//! Shared value types: tokens, sequence states, synthetic worlds, planner
//! configuration and reward records.
//!
//! Everything here is an immutable record once built. Worlds are symbolic
//! stand-ins for an image: weighted regions, each described by a set of
//! attribute tokens.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, validation, Result};
use crate::scalar::Scalar;

/// Index into a world's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

pub type RegionId = u32;

/// A caption prefix. `terminal` is set once the last token is EOS or the
/// world's length limit is reached.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceState {
    tokens: Vec<TokenId>,
    terminal: bool,
}

impl SequenceState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Replays `tokens` through [`append_token`], so every prefix must be legal.
    pub fn from_tokens<F: Scalar>(tokens: &[TokenId], world: &WorldInstance<F>) -> Result<Self> {
        tokens
            .iter()
            .try_fold(Self::empty(), |s, &t| append_token(&s, t, world))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.tokens.contains(&token)
    }
}

/// Deterministic transition `s' = s ⊕ token`.
pub fn append_token<F: Scalar>(
    state: &SequenceState,
    token: TokenId,
    world: &WorldInstance<F>,
) -> Result<SequenceState> {
    if state.terminal {
        return Err(contract(format!(
            "cannot append token {token} to a terminal state of length {}",
            state.len()
        )));
    }
    if token.index() >= world.vocab_size {
        return Err(validation(format!(
            "token {token} out of range for vocab_size {}",
            world.vocab_size
        )));
    }
    let mut tokens = Vec::with_capacity(state.tokens.len() + 1);
    tokens.extend_from_slice(&state.tokens);
    tokens.push(token);
    let terminal = token == world.eos_token || tokens.len() >= world.max_length;
    Ok(SequenceState { tokens, terminal })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec<F> {
    pub region_id: RegionId,
    pub attribute_tokens: BTreeSet<TokenId>,
    pub saliency_weight: F,
}

impl<F: Scalar> RegionSpec<F> {
    pub fn new(region_id: RegionId, tokens: impl IntoIterator<Item = u32>, saliency_weight: F) -> Self {
        Self {
            region_id,
            attribute_tokens: tokens.into_iter().map(TokenId).collect(),
            saliency_weight,
        }
    }

    /// True when every attribute token of the region appears in the state.
    pub fn is_covered_by(&self, state: &SequenceState) -> bool {
        self.attribute_tokens.iter().all(|t| state.contains(*t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldInstance<F> {
    pub world_id: String,
    pub vocab_size: usize,
    pub eos_token: TokenId,
    pub max_length: usize,
    pub reward_noise_sigma: F,
    pub regions: Vec<RegionSpec<F>>,
}

impl<F: Scalar> WorldInstance<F> {
    pub fn region(&self, id: RegionId) -> Option<&RegionSpec<F>> {
        self.regions.iter().find(|r| r.region_id == id)
    }

    /// Returns the world if [`validate_world`] reports nothing.
    pub fn validated(self) -> Result<Self> {
        let report = validate_world(&self);
        if report.is_empty() {
            Ok(self)
        } else {
            let msgs: Vec<String> = report.iter().map(ToString::to_string).collect();
            Err(validation(format!("world '{}': {}", self.world_id, msgs.join("; "))))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let world: Self = serde_json::from_str(text)?;
        world.validated()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Same world with the reward noise removed.
    pub fn noiseless(&self) -> Self {
        Self { reward_noise_sigma: F::zero(), ..self.clone() }
    }
}

/// One broken world invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum WorldViolation {
    VocabTooSmall { vocab_size: usize },
    EosOutOfRange { eos: TokenId },
    MaxLengthZero,
    NegativeNoise,
    NoRegions,
    DuplicateRegionId { region_id: RegionId },
    EmptyRegion { region_id: RegionId },
    TokenOutOfRange { region_id: RegionId, token: TokenId },
    WeightOutOfRange { region_id: RegionId, weight: f64 },
    WeightSum { sum: f64 },
}

impl fmt::Display for WorldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VocabTooSmall { vocab_size } => write!(f, "vocab_size {vocab_size} < 2"),
            Self::EosOutOfRange { eos } => write!(f, "token-range: eos_token {eos} >= vocab_size"),
            Self::MaxLengthZero => write!(f, "max_length must be >= 1"),
            Self::NegativeNoise => write!(f, "reward_noise_sigma must be finite and >= 0"),
            Self::NoRegions => write!(f, "weight-sum: world has no regions"),
            Self::DuplicateRegionId { region_id } => write!(f, "region id {region_id} is not unique"),
            Self::EmptyRegion { region_id } => {
                write!(f, "region {region_id} has no attribute tokens")
            }
            Self::TokenOutOfRange { region_id, token } => {
                write!(f, "token-range: region {region_id} attribute token {token} >= vocab_size")
            }
            Self::WeightOutOfRange { region_id, weight } => {
                write!(f, "region {region_id} saliency weight {weight} outside (0, 1]")
            }
            Self::WeightSum { sum } => write!(f, "weight-sum: saliency weights sum to {sum}, not 1"),
        }
    }
}

/// Lists every invariant the world breaks; empty iff well-formed.
pub fn validate_world<F: Scalar>(world: &WorldInstance<F>) -> Vec<WorldViolation> {
    let mut out = Vec::new();
    if world.vocab_size < 2 {
        out.push(WorldViolation::VocabTooSmall { vocab_size: world.vocab_size });
    }
    if world.eos_token.index() >= world.vocab_size {
        out.push(WorldViolation::EosOutOfRange { eos: world.eos_token });
    }
    if world.max_length == 0 {
        out.push(WorldViolation::MaxLengthZero);
    }
    let sigma = world.reward_noise_sigma;
    if !(sigma.is_finite() && sigma >= F::zero()) {
        out.push(WorldViolation::NegativeNoise);
    }
    if world.regions.is_empty() {
        out.push(WorldViolation::NoRegions);
        return out;
    }
    let mut seen = BTreeSet::new();
    let mut sum = 0.0f64;
    for r in &world.regions {
        if !seen.insert(r.region_id) {
            out.push(WorldViolation::DuplicateRegionId { region_id: r.region_id });
        }
        if r.attribute_tokens.is_empty() {
            out.push(WorldViolation::EmptyRegion { region_id: r.region_id });
        }
        for &t in &r.attribute_tokens {
            if t.index() >= world.vocab_size {
                out.push(WorldViolation::TokenOutOfRange { region_id: r.region_id, token: t });
            }
        }
        let w = r.saliency_weight.as_f64();
        if !(w > 0.0 && w <= 1.0) {
            out.push(WorldViolation::WeightOutOfRange { region_id: r.region_id, weight: w });
        }
        sum += w;
    }
    if (sum - 1.0).abs() > F::SIMPLEX_TOL {
        out.push(WorldViolation::WeightSum { sum });
    }
    out
}

fn default_c_puct<F: Scalar>() -> F {
    F::lit(1.5)
}
fn default_alpha<F: Scalar>() -> F {
    F::lit(0.1)
}
fn default_lambda_v<F: Scalar>() -> F {
    F::lit(0.5)
}
fn default_eps_stop<F: Scalar>() -> F {
    F::lit(1e-4)
}
fn default_gamma<F: Scalar>() -> F {
    F::lit(0.99)
}

/// Every search hyperparameter. Missing JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "F: Scalar"))]
pub struct PlannerConfig<F> {
    #[serde(default = "default_c_puct")]
    pub c_puct: F,
    #[serde(default = "default_alpha")]
    pub alpha: F,
    #[serde(default = "default_lambda_v")]
    pub lambda_v: F,
    #[serde(default = "d_branching_k")]
    pub branching_k: usize,
    #[serde(default = "d_top_m")]
    pub top_m_actions: usize,
    #[serde(default = "d_n_max")]
    pub n_max_iterations: usize,
    #[serde(default = "default_eps_stop")]
    pub eps_stop: F,
    #[serde(default = "d_stop_window")]
    pub stop_window: usize,
    #[serde(default = "default_gamma")]
    pub gamma: F,
    #[serde(default = "d_ngram")]
    pub max_ngram_order: usize,
    #[serde(default)]
    pub seed: u64,
    /// Disables the convergence check; every step then runs `n_max_iterations`.
    #[serde(default = "d_true")]
    pub adaptive_stop: bool,
    /// Prefix the caption starts from (empty by default).
    #[serde(default)]
    pub initial_tokens: Vec<TokenId>,
}

fn d_branching_k() -> usize {
    4
}
fn d_top_m() -> usize {
    8
}
fn d_n_max() -> usize {
    200
}
fn d_stop_window() -> usize {
    5
}
fn d_ngram() -> usize {
    3
}
fn d_true() -> bool {
    true
}

impl<F: Scalar> Default for PlannerConfig<F> {
    fn default() -> Self {
        Self {
            c_puct: default_c_puct(),
            alpha: default_alpha(),
            lambda_v: default_lambda_v(),
            branching_k: d_branching_k(),
            top_m_actions: d_top_m(),
            n_max_iterations: d_n_max(),
            eps_stop: default_eps_stop(),
            stop_window: d_stop_window(),
            gamma: default_gamma(),
            max_ngram_order: d_ngram(),
            seed: 0,
            adaptive_stop: true,
            initial_tokens: Vec::new(),
        }
    }
}

impl<F: Scalar> PlannerConfig<F> {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let zero = F::zero();
        let one = F::one();
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(validation(msg.to_string())) };
        check(self.c_puct > zero, "c_puct must be > 0")?;
        check(self.alpha >= zero, "alpha must be >= 0")?;
        check(self.lambda_v >= zero && self.lambda_v <= one, "lambda_v must lie in [0, 1]")?;
        check(self.branching_k >= 1, "branching_k must be >= 1")?;
        check(self.top_m_actions >= 1, "top_m_actions must be >= 1")?;
        check(self.n_max_iterations >= 1, "n_max_iterations must be >= 1")?;
        check(self.eps_stop > zero, "eps_stop must be > 0")?;
        check(self.stop_window >= 1, "stop_window must be >= 1")?;
        check(self.gamma > zero && self.gamma <= one, "gamma must lie in (0, 1]")?;
        check(self.max_ngram_order >= 1, "max_ngram_order must be >= 1")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The three reward terms and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<F> {
    pub quality: F,
    pub depth: F,
    pub redundancy: F,
    pub total: F,
    pub observed_total: F,
}

impl<F: Scalar> RewardBreakdown<F> {
    pub fn compose(quality: F, depth: F, redundancy: F) -> Self {
        let total = Self::combine(quality, depth, redundancy);
        Self { quality, depth, redundancy, total, observed_total: total }
    }

    #[inline]
    pub fn combine(quality: F, depth: F, redundancy: F) -> F {
        quality + depth - redundancy
    }

    pub fn with_observation(mut self, observed: F) -> Self {
        self.observed_total = observed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn world(vocab: usize, max_len: usize) -> WorldInstance<f64> {
        WorldInstance {
            world_id: "t".into(),
            vocab_size: vocab,
            eos_token: TokenId(vocab as u32 - 1),
            max_length: max_len,
            reward_noise_sigma: 0.0,
            regions: vec![
                RegionSpec::new(0, [0], 0.5),
                RegionSpec::new(1, [1], 0.3),
                RegionSpec::new(2, [2, 3], 0.2),
            ],
        }
    }

    #[test]
    fn append_below_limits() {
        let w = world(10, 5);
        let s = append_token(&SequenceState::empty(), TokenId(3), &w).unwrap();
        assert_eq!(s.tokens(), &[TokenId(3)]);
        assert!(!s.is_terminal());
    }

    #[test]
    fn eos_forces_terminal() {
        let w = world(10, 5);
        let s = SequenceState::from_tokens(&[TokenId(1), TokenId(2)], &w).unwrap();
        let s = append_token(&s, w.eos_token, &w).unwrap();
        assert_eq!(s.tokens(), &[TokenId(1), TokenId(2), TokenId(9)]);
        assert!(s.is_terminal());
    }

    #[test]
    fn length_limit_forces_terminal() {
        let w = world(10, 5);
        let s = SequenceState::from_tokens(&[1, 2, 3, 4].map(TokenId), &w).unwrap();
        assert!(!s.is_terminal());
        let s = append_token(&s, TokenId(7), &w).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.is_terminal());
    }

    #[test]
    fn append_errors() {
        let w = world(10, 5);
        let term = SequenceState::from_tokens(&[TokenId(9)], &w).unwrap();
        assert!(matches!(
            append_token(&term, TokenId(0), &w),
            Err(crate::PlanError::Contract(_))
        ));
        assert!(matches!(
            append_token(&SequenceState::empty(), TokenId(10), &w),
            Err(crate::PlanError::Validation(_))
        ));
    }

    #[test]
    fn validate_reports() {
        assert!(validate_world(&world(10, 5)).is_empty());

        let mut w = world(10, 5);
        w.regions[2].saliency_weight = 0.1;
        let r = validate_world(&w);
        assert_eq!(r.len(), 1);
        assert!(matches!(r[0], WorldViolation::WeightSum { .. }));
        assert!(r[0].to_string().contains("weight-sum"));

        let mut w = world(10, 5);
        w.regions[1].attribute_tokens.insert(TokenId(12));
        let r = validate_world(&w);
        assert_eq!(r.len(), 1);
        assert!(r[0].to_string().contains("token-range"));
    }

    #[test]
    fn config_defaults_and_partial_json() {
        let c: PlannerConfig<f64> = PlannerConfig::default();
        assert_eq!(c.c_puct, 1.5);
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.lambda_v, 0.5);
        assert_eq!(c.branching_k, 4);
        assert_eq!(c.top_m_actions, 8);
        assert_eq!(c.n_max_iterations, 200);
        assert_eq!(c.eps_stop, 1e-4);
        assert_eq!(c.stop_window, 5);
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.max_ngram_order, 3);

        let p = PlannerConfig::<f64>::from_json(r#"{"c_puct": 2.5, "seed": 9}"#).unwrap();
        assert_eq!(p.c_puct, 2.5);
        assert_eq!(p.seed, 9);
        assert_eq!(p.gamma, 0.99);
        assert!(PlannerConfig::<f64>::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(PlannerConfig::<f64>::from_json(r#"{"lambda_v": 1.5}"#).is_err());
    }

    #[test]
    fn world_json_round_trip() {
        let w = world(10, 5);
        let text = w.to_json().unwrap();
        for key in ["world_id", "vocab_size", "eos_token", "max_length", "reward_noise_sigma", "regions", "region_id", "attribute_tokens", "saliency_weight"] {
            assert!(text.contains(key), "missing {key}");
        }
        assert_eq!(WorldInstance::<f64>::from_json(&text).unwrap(), w);
    }

    #[test]
    fn f32_world_validates() {
        let w: WorldInstance<f32> = WorldInstance {
            world_id: "f".into(),
            vocab_size: 4,
            eos_token: TokenId(3),
            max_length: 3,
            reward_noise_sigma: 0.0,
            regions: vec![RegionSpec::new(0, [0], 0.7), RegionSpec::new(1, [1], 0.3)],
        };
        assert!(validate_world(&w).is_empty());
    }
}
