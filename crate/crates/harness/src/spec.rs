//! What to run: experiment kind, world source, config with overrides, seeds
//! and output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use capplan_core::Config;
use serde_json::Value;

use crate::error::{usage, HarnessError, Result};
use crate::worlds::WorldSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Plan,
    Sweep,
    Regret,
    Hallucination,
    Branching,
    TrainValue,
    Oracle,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Plan,
        Self::Sweep,
        Self::Regret,
        Self::Hallucination,
        Self::Branching,
        Self::TrainValue,
        Self::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plan => "plan",
            Self::Sweep => "sweep",
            Self::Regret => "regret",
            Self::Hallucination => "hallucination",
            Self::Branching => "branching",
            Self::TrainValue => "train-value",
            Self::Oracle => "oracle",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| usage(format!("unknown experiment kind '{s}'")))
    }
}

/// Non-empty, duplicate-free list of run seeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(Vec<u64>);

impl SeedList {
    pub fn new(seeds: Vec<u64>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(usage("seed list is empty"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(usage("seed list contains duplicates"));
        }
        Ok(Self(seeds))
    }

    /// Seeds `0..n`.
    pub fn first(n: u64) -> Result<Self> {
        Self::new((0..n).collect())
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `N` means seeds `0..N`; `a..b` is a half-open range; anything with a comma
/// is an explicit list (`7,` is the single seed 7).
impl FromStr for SeedList {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |e: std::num::ParseIntError| usage(format!("bad seed list '{s}': {e}"));
        if s.contains(',') {
            let seeds = s
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<u64>().map_err(bad))
                .collect::<Result<Vec<_>>>()?;
            Self::new(seeds)
        } else if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (a.trim().parse::<u64>().map_err(bad)?, b.trim().parse::<u64>().map_err(bad)?);
            Self::new((a..b).collect())
        } else {
            Self::first(s.parse().map_err(bad)?)
        }
    }
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| usage(format!("override '{text}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(usage(format!("override '{text}' has an empty key")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}

/// Applies overrides on top of `base` and re-validates. Unknown keys are
/// rejected by the config's own deserializer.
pub fn apply_overrides(base: &Config, overrides: &[(String, Value)]) -> Result<Config> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("config serializes to an object");
    for (k, val) in overrides {
        obj.insert(k.clone(), val.clone());
    }
    let cfg = Config::from_json(&v.to_string()).map_err(|e| usage(format!("config override rejected: {e}")))?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| HarnessError::Read { path: p.into(), source })?;
            Config::from_json(&text).map_err(|source| HarnessError::Parse { path: p.into(), source })
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub world: WorldSource,
    pub config: Config,
    pub overrides: Vec<(String, Value)>,
    pub seeds: SeedList,
    pub out: PathBuf,
}

impl ExperimentSpec {
    /// Base config with overrides applied, seed still the base one.
    pub fn effective_config(&self) -> Result<Config> {
        apply_overrides(&self.config, &self.overrides)
    }
}
