//! Where experiment worlds come from: a JSON file or a named built-in family.
//! Some built-ins draw a fresh world per seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use capplan_core::worlds::{
    bandit_world, branching_world, easy_world, hallucination_world, random_small_world, saliency_world,
};
use capplan_core::World;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{usage, HarnessError, Result};

pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// One two-token region, length limit 4.
    Easy,
    /// Three regions of decreasing weight over ten tokens.
    Saliency,
    /// Four arms with gaps {0, 0.1, 0.2, 0.3}.
    Bandit,
    /// Two arms `delta_h` apart.
    Hallucination,
    /// Large vocabulary with a few single-token regions; drawn per seed.
    Branching,
    /// Small random world (vocabulary <= 8, length <= 6); drawn per seed.
    Random,
}

impl Builtin {
    const NAMES: [(&'static str, Builtin); 6] = [
        ("easy", Builtin::Easy),
        ("saliency", Builtin::Saliency),
        ("bandit", Builtin::Bandit),
        ("hallucination", Builtin::Hallucination),
        ("branching", Builtin::Branching),
        ("random", Builtin::Random),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, b)| *b == self).map(|(n, _)| *n).unwrap()
    }

    pub fn per_seed(self) -> bool {
        matches!(self, Builtin::Branching | Builtin::Random)
    }

    fn default_sigma(self) -> f64 {
        match self {
            Builtin::Easy | Builtin::Saliency | Builtin::Branching => 0.1,
            Builtin::Bandit | Builtin::Hallucination => 0.5,
            Builtin::Random => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorldSource {
    File(PathBuf),
    Builtin(Builtin),
}

impl FromStr for WorldSource {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix(BUILTIN_PREFIX) {
            Some(name) => Builtin::NAMES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, b)| WorldSource::Builtin(*b))
                .ok_or_else(|| {
                    let known: Vec<&str> = Builtin::NAMES.iter().map(|(n, _)| *n).collect();
                    usage(format!("unknown built-in world '{name}' (known: {})", known.join(", ")))
                }),
            None => Ok(WorldSource::File(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for WorldSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorldSource::File(p) => write!(f, "{}", p.display()),
            WorldSource::Builtin(b) => write!(f, "{BUILTIN_PREFIX}{}", b.name()),
        }
    }
}

/// Shape of the per-seed branching world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchingShape {
    pub vocab_size: usize,
    pub regions: usize,
    pub max_length: usize,
}

impl Default for BranchingShape {
    fn default() -> Self {
        Self { vocab_size: 64, regions: 4, max_length: 3 }
    }
}

/// Knobs that parameterise built-in worlds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    /// Overrides the reward noise of any world, file or built-in.
    pub sigma: Option<f64>,
    pub delta_h: f64,
    pub branching: BranchingShape,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self { sigma: None, delta_h: 0.2, branching: BranchingShape::default() }
    }
}

pub fn read_world_file(path: &Path) -> Result<World> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.into(), source })?;
    World::from_json(&text).map_err(|source| HarnessError::Parse { path: path.into(), source })
}

/// Resolves a [`WorldSource`] to concrete worlds, loading files once.
#[derive(Debug, Clone)]
pub struct WorldFactory {
    source: WorldSource,
    params: WorldParams,
    fixed: Option<World>,
}

impl WorldFactory {
    pub fn new(source: WorldSource, params: WorldParams) -> Result<Self> {
        let mut f = Self { source, params, fixed: None };
        if !f.per_seed() {
            f.fixed = Some(f.build(0)?);
        }
        Ok(f)
    }

    pub fn source(&self) -> &WorldSource {
        &self.source
    }

    /// True when each seed gets its own world.
    pub fn per_seed(&self) -> bool {
        matches!(self.source, WorldSource::Builtin(b) if b.per_seed())
    }

    pub fn world(&self, seed: u64) -> Result<World> {
        match &self.fixed {
            Some(w) => Ok(w.clone()),
            None => self.build(seed),
        }
    }

    fn build(&self, seed: u64) -> Result<World> {
        let p = &self.params;
        let mut world = match &self.source {
            WorldSource::File(path) => read_world_file(path)?,
            WorldSource::Builtin(b) => {
                let sigma = p.sigma.unwrap_or(b.default_sigma());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                match b {
                    Builtin::Easy => easy_world(sigma),
                    Builtin::Saliency => saliency_world(sigma),
                    Builtin::Bandit => bandit_world(&[0.0, 0.1, 0.2, 0.3], sigma)?,
                    Builtin::Hallucination => hallucination_world(p.delta_h, sigma)?,
                    Builtin::Branching => {
                        let s = p.branching;
                        let mut w = branching_world(&mut rng, s.vocab_size, s.regions, s.max_length, sigma)?;
                        w.world_id = format!("{}-s{seed}", w.world_id);
                        w
                    }
                    Builtin::Random => {
                        let mut w: World = random_small_world(&mut rng, format!("random-s{seed}"));
                        w.reward_noise_sigma = sigma;
                        w
                    }
                }
            }
        };
        if let Some(s) = p.sigma {
            world.reward_noise_sigma = s;
        }
        Ok(world.validated()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sources() {
        assert_eq!("builtin:easy".parse::<WorldSource>().unwrap(), WorldSource::Builtin(Builtin::Easy));
        assert_eq!("w.json".parse::<WorldSource>().unwrap(), WorldSource::File("w.json".into()));
        assert!("builtin:nope".parse::<WorldSource>().is_err());
        assert_eq!(WorldSource::Builtin(Builtin::Random).to_string(), "builtin:random");
    }

    #[test]
    fn per_seed_worlds_differ_and_repeat() {
        let f = WorldFactory::new(WorldSource::Builtin(Builtin::Random), WorldParams::default()).unwrap();
        assert!(f.per_seed());
        assert_eq!(f.world(3).unwrap(), f.world(3).unwrap());
        assert_ne!(f.world(3).unwrap().world_id, f.world(4).unwrap().world_id);
    }

    #[test]
    fn sigma_override_applies() {
        let p = WorldParams { sigma: Some(0.0), ..Default::default() };
        let f = WorldFactory::new(WorldSource::Builtin(Builtin::Bandit), p).unwrap();
        assert_eq!(f.world(0).unwrap().reward_noise_sigma, 0.0);
    }

    #[test]
    fn missing_file_names_path() {
        let err = WorldFactory::new(WorldSource::File("/no/such/world.json".into()), WorldParams::default()).unwrap_err();
        assert!(err.to_string().contains("/no/such/world.json"));
    }
}
