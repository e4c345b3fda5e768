//! Synthetic world families used by tests and experiments.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::domain::{RegionSpec, TokenId, WorldInstance};
use crate::error::{validation, Result};
use crate::scalar::Scalar;

fn normalise<F: Scalar>(raw: &[F]) -> Vec<F> {
    let z: F = raw.iter().copied().sum();
    let mut w: Vec<F> = raw.iter().map(|&r| r / z).collect();
    // push rounding residue into the largest weight so the sum is as close to 1 as the type allows
    let residue = F::one() - w.iter().copied().sum::<F>();
    if let Some(i) = (0..w.len()).max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap()) {
        w[i] += residue;
    }
    w
}

/// Random small world: vocabulary 3..=8, length limit 1..=6, one to three
/// regions of one or two distinct non-EOS attribute tokens, random weights.
pub fn random_small_world<F: Scalar, R: Rng + ?Sized>(rng: &mut R, world_id: impl Into<String>) -> WorldInstance<F> {
    let vocab_size = rng.random_range(3..=8usize);
    let max_length = rng.random_range(1..=6usize);
    let eos = TokenId(rng.random_range(0..vocab_size as u32));
    let mut pool: Vec<u32> = (0..vocab_size as u32).filter(|&t| t != eos.0).collect();
    pool.shuffle(rng);
    let n_regions = rng.random_range(1..=3usize).min(pool.len());
    let mut regions = Vec::with_capacity(n_regions);
    let mut raw = Vec::with_capacity(n_regions);
    for id in 0..n_regions {
        let remaining_regions = n_regions - id - 1;
        let max_take = (pool.len() - remaining_regions).clamp(1, 2);
        let take = rng.random_range(1..=max_take);
        let toks: Vec<u32> = pool.drain(..take).collect();
        regions.push(RegionSpec::new(id as u32, toks, F::zero()));
        raw.push(F::uniform(rng, F::lit(0.1), F::one()));
    }
    for (r, w) in regions.iter_mut().zip(normalise(&raw)) {
        r.saliency_weight = w;
    }
    WorldInstance { world_id: world_id.into(), vocab_size, eos_token: eos, max_length, reward_noise_sigma: F::zero(), regions }
}

/// Depth-one world where token `i` is an arm whose quality is
/// `c - gaps[i]`, with `c` chosen so the qualities sum to one. The last arm
/// doubles as EOS.
pub fn bandit_world<F: Scalar>(gaps: &[F], sigma: F) -> Result<WorldInstance<F>> {
    if gaps.len() < 2 {
        return Err(validation("a bandit world needs at least two arms"));
    }
    let k = F::from_usize_lossy(gaps.len());
    let c = (F::one() + gaps.iter().copied().sum::<F>()) / k;
    let raw: Vec<F> = gaps.iter().map(|&g| c - g).collect();
    if raw.iter().any(|&w| w <= F::zero()) {
        return Err(validation("gaps too large: some arm would get non-positive quality"));
    }
    let weights = normalise(&raw);
    let regions = weights.into_iter().enumerate().map(|(i, w)| RegionSpec::new(i as u32, [i as u32], w)).collect();
    WorldInstance {
        world_id: format!("bandit-k{}", gaps.len()),
        vocab_size: gaps.len(),
        eos_token: TokenId(gaps.len() as u32 - 1),
        max_length: 1,
        reward_noise_sigma: sigma,
        regions,
    }
    .validated()
}

/// Two-arm world: arm 0 is the best, arm 1 sits `delta_h` below it.
pub fn hallucination_world<F: Scalar>(delta_h: F, sigma: F) -> Result<WorldInstance<F>> {
    let mut w = bandit_world(&[F::zero(), delta_h], sigma)?;
    w.world_id = format!("hallucination-d{delta_h}");
    Ok(w)
}

/// Arm index of the hallucination arm in [`hallucination_world`].
pub const HALLUCINATION_ARM: TokenId = TokenId(1);

/// Single region of two tokens; short captions suffice.
pub fn easy_world<F: Scalar>(sigma: F) -> WorldInstance<F> {
    WorldInstance {
        world_id: "easy".into(),
        vocab_size: 6,
        eos_token: TokenId(5),
        max_length: 4,
        reward_noise_sigma: sigma,
        regions: vec![RegionSpec::new(0, [0, 1], F::one())],
    }
}

/// Three regions of decreasing saliency over a ten-token vocabulary.
pub fn saliency_world<F: Scalar>(sigma: F) -> WorldInstance<F> {
    WorldInstance {
        world_id: "saliency".into(),
        vocab_size: 10,
        eos_token: TokenId(9),
        max_length: 6,
        reward_noise_sigma: sigma,
        regions: vec![
            RegionSpec::new(0, [0, 1], F::lit(0.5)),
            RegionSpec::new(1, [2], F::lit(0.3)),
            RegionSpec::new(2, [3, 4], F::lit(0.2)),
        ],
    }
}

/// Large-vocabulary world: `vocab_size` tokens, `regions` single-token regions
/// at random positions, decreasing weights, length limit `max_length`.
pub fn branching_world<F: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    vocab_size: usize,
    regions: usize,
    max_length: usize,
    sigma: F,
) -> Result<WorldInstance<F>> {
    if regions == 0 || regions >= vocab_size {
        return Err(validation("branching world needs 1 <= regions < vocab_size"));
    }
    let eos = TokenId(vocab_size as u32 - 1);
    let mut pool: Vec<u32> = (0..vocab_size as u32 - 1).collect();
    pool.shuffle(rng);
    let raw: Vec<F> = (0..regions).map(|i| F::from_usize_lossy(regions - i)).collect();
    let specs = normalise(&raw)
        .into_iter()
        .enumerate()
        .map(|(i, w)| RegionSpec::new(i as u32, [pool[i]], w))
        .collect();
    WorldInstance {
        world_id: format!("branching-k{vocab_size}-r{regions}"),
        vocab_size,
        eos_token: eos,
        max_length,
        reward_noise_sigma: sigma,
        regions: specs,
    }
    .validated()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_world;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_worlds_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..500 {
            let w: WorldInstance<f64> = random_small_world(&mut rng, format!("r{i}"));
            assert!(validate_world(&w).is_empty(), "{w:?}");
            assert!(w.vocab_size <= 8 && w.max_length <= 6);
            let w32: WorldInstance<f32> = random_small_world(&mut rng, "f");
            assert!(validate_world(&w32).is_empty());
        }
    }

    #[test]
    fn bandit_qualities() {
        let w = bandit_world(&[0.0, 0.1, 0.2, 0.3], 0.5).unwrap();
        let q: Vec<f64> = w.regions.iter().map(|r| r.saliency_weight).collect();
        for (a, b) in q.iter().zip([0.4, 0.3, 0.2, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(w.max_length, 1);
        assert!(bandit_world(&[0.0, 3.0], 0.0).is_err());
        let h = hallucination_world(0.2f64, 0.5).unwrap();
        assert!((h.regions[0].saliency_weight - h.regions[1].saliency_weight - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fixed_worlds_validate() {
        assert!(validate_world(&easy_world::<f64>(0.0)).is_empty());
        assert!(validate_world(&saliency_world::<f64>(0.0)).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b: WorldInstance<f64> = branching_world(&mut rng, 64, 4, 3, 0.1).unwrap();
        assert_eq!(b.regions.len(), 4);
    }
}
