//! Experiment runners. Each returns plain records keyed by their inputs, in
//! input order, so file output is independent of how runs are scheduled.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use capplan_core::model::{BanditModel, SequenceModel, TabularModel, UniformModel};
use capplan_core::oracle::{enumerate_optimal, OracleResult};
use capplan_core::planner::{generate, PlanContext};
use capplan_core::reward::{noiseless_reward, CoverageScorer};
use capplan_core::{Config, Net, SequenceState, Trace, World};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{usage, HarnessError, Result};
use crate::spec::SeedList;
use crate::worlds::WorldFactory;

pub const DEFAULT_BUDGETS: [usize; 5] = [16, 64, 256, 1024, 4096];
/// Budgets searched for iterations-to-95%.
pub const BRANCHING_BUDGETS: [usize; 11] = [4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096];
pub const BRANCHING_TARGET: f64 = 0.95;
/// Slack when comparing a regret against the hallucination gap.
const GAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Bandit evaluator on length-1 worlds, tabular otherwise.
    #[default]
    Auto,
    Tabular,
    Uniform,
    Bandit,
}

impl FromStr for ModelKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "tabular" => Ok(Self::Tabular),
            "uniform" => Ok(Self::Uniform),
            "bandit" => Ok(Self::Bandit),
            _ => Err(usage(format!("unknown model '{s}' (auto, tabular, uniform, bandit)"))),
        }
    }
}

pub fn model_for(kind: ModelKind, world: &World) -> Box<dyn SequenceModel<f64>> {
    match kind {
        ModelKind::Auto if world.max_length == 1 => Box::new(BanditModel),
        ModelKind::Auto | ModelKind::Tabular => Box::new(TabularModel::default()),
        ModelKind::Uniform => Box::new(UniformModel),
        ModelKind::Bandit => Box::new(BanditModel),
    }
}

pub fn noiseless_total(state: &SequenceState, world: &World, config: &Config) -> Result<f64> {
    Ok(noiseless_reward(state, world, config, &CoverageScorer)?.total)
}

/// Median with the midpoint convention for even counts; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn budget_config(base: &Config, budget: usize, seed: u64) -> Config {
    Config { n_max_iterations: budget, adaptive_stop: false, ..base.clone() }.with_seed(seed)
}

/// Oracle results per seed, computed once when the world does not vary.
fn oracles(worlds: &WorldFactory, config: &Config, seeds: &SeedList) -> Result<Vec<Arc<(World, OracleResult<f64>)>>> {
    if worlds.per_seed() {
        seeds
            .as_slice()
            .par_iter()
            .map(|&s| {
                let w = worlds.world(s)?;
                let o = enumerate_optimal(&w, config)?;
                Ok(Arc::new((w, o)))
            })
            .collect()
    } else {
        let w = worlds.world(seeds.as_slice()[0])?;
        let o = enumerate_optimal(&w, config)?;
        Ok(vec![Arc::new((w, o)); seeds.len()])
    }
}

// ---------------------------------------------------------------- plan

/// One full planner run per seed.
pub fn run_plans(
    worlds: &WorldFactory,
    config: &Config,
    seeds: &SeedList,
    model: ModelKind,
    net: Option<&Net>,
) -> Result<Vec<(World, Trace)>> {
    seeds
        .as_slice()
        .par_iter()
        .map(|&seed| {
            let world = worlds.world(seed)?;
            let cfg = config.clone().with_seed(seed);
            let m = model_for(model, &world);
            let zeros;
            let net = match net {
                Some(n) => n,
                None => {
                    zeros = Net::zeros_for(&world);
                    &zeros
                }
            };
            let (_, trace) = generate(&PlanContext::new(&world, m.as_ref(), net, &cfg))?;
            Ok((world, trace))
        })
        .collect()
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    CPuct,
    Alpha,
    LambdaV,
}

impl SweepParam {
    pub const ALL: [SweepParam; 3] = [Self::CPuct, Self::Alpha, Self::LambdaV];

    pub fn name(self) -> &'static str {
        match self {
            Self::CPuct => "c_puct",
            Self::Alpha => "alpha",
            Self::LambdaV => "lambda_v",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::CPuct => vec![0.5, 1.0, 1.5, 2.0, 2.5],
            Self::Alpha => vec![0.0, 0.05, 0.1, 0.2, 0.3],
            Self::LambdaV => vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }

    pub fn apply(self, config: &Config, value: f64) -> Config {
        let mut c = config.clone();
        match self {
            Self::CPuct => c.c_puct = value,
            Self::Alpha => c.alpha = value,
            Self::LambdaV => c.lambda_v = value,
        }
        c
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| usage(format!("unknown sweep parameter '{s}' (c_puct, alpha, lambda_v)")))
    }
}

/// One planner run at one grid point. Header:
/// `param,value,seed,total_reward,length,iterations,model_calls,mean_leaf_value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub seed: u64,
    /// Noiseless total of the final caption.
    pub total_reward: f64,
    pub length: usize,
    pub iterations: usize,
    pub model_calls: usize,
    /// Mean of the values backed up over all iterations.
    pub mean_leaf_value: f64,
}

/// Header: `param,value,runs,mean_total_reward,mean_length,mean_iterations,mean_model_calls`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummaryRow {
    pub param: String,
    pub value: f64,
    pub runs: usize,
    pub mean_total_reward: f64,
    pub mean_length: f64,
    pub mean_iterations: f64,
    pub mean_model_calls: f64,
}

pub fn run_sweep(
    worlds: &WorldFactory,
    base: &Config,
    grids: &[(SweepParam, Vec<f64>)],
    seeds: &SeedList,
    model: ModelKind,
) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(SweepParam, f64, u64)> = grids
        .iter()
        .flat_map(|(p, g)| g.iter().flat_map(move |&v| seeds.as_slice().iter().map(move |&s| (*p, v, s))))
        .collect();
    jobs.par_iter()
        .map(|&(param, value, seed)| {
            let world = worlds.world(seed)?;
            let cfg = param.apply(base, value).with_seed(seed);
            cfg.validate()?;
            let m = model_for(model, &world);
            let net = Net::zeros_for(&world);
            let (state, trace) = generate(&PlanContext::new(&world, m.as_ref(), &net, &cfg))?;
            let leaf_values = trace.steps.iter().flat_map(|s| s.iteration_log.iter().map(|r| r.value));
            Ok(SweepRow {
                param: param.name().into(),
                value,
                seed,
                total_reward: noiseless_total(&state, &world, &cfg)?,
                length: state.len(),
                iterations: trace.total_iterations(),
                model_calls: trace.model_calls(),
                mean_leaf_value: mean(leaf_values),
            })
        })
        .collect()
}

/// Per grid point means, in first-appearance order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummaryRow> {
    let mut keys: Vec<(&str, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(p, v)| p == r.param && v == r.value) {
            keys.push((&r.param, r.value));
        }
    }
    keys.into_iter()
        .map(|(p, v)| {
            let g: Vec<&SweepRow> = rows.iter().filter(|r| r.param == p && r.value == v).collect();
            SweepSummaryRow {
                param: p.into(),
                value: v,
                runs: g.len(),
                mean_total_reward: mean(g.iter().map(|r| r.total_reward)),
                mean_length: mean(g.iter().map(|r| r.length as f64)),
                mean_iterations: mean(g.iter().map(|r| r.iterations as f64)),
                mean_model_calls: mean(g.iter().map(|r| r.model_calls as f64)),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- regret

/// Simple regret of one budgeted run. Header: `budget,seed,regret`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRecord {
    pub budget: usize,
    pub seed: u64,
    pub regret: f64,
}

/// Header: `budget,runs,median_regret,mean_regret`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretSummary {
    pub budget: usize,
    pub runs: usize,
    pub median_regret: f64,
    pub mean_regret: f64,
}

/// Planner runs with a fixed iteration budget and no early stopping.
pub fn run_regret(
    worlds: &WorldFactory,
    base: &Config,
    budgets: &[usize],
    seeds: &SeedList,
    model: ModelKind,
) -> Result<Vec<RegretRecord>> {
    let truth = oracles(worlds, base, seeds)?;
    let jobs: Vec<(usize, usize)> =
        budgets.iter().flat_map(|&b| (0..seeds.len()).map(move |i| (b, i))).collect();
    jobs.par_iter()
        .map(|&(budget, i)| {
            let seed = seeds.as_slice()[i];
            let (world, oracle) = &*truth[i];
            let cfg = budget_config(base, budget, seed);
            let m = model_for(model, world);
            let net = Net::zeros_for(world);
            let (state, _) = generate(&PlanContext::new(world, m.as_ref(), &net, &cfg))?;
            Ok(RegretRecord { budget, seed, regret: oracle.simple_regret(&state)? })
        })
        .collect()
}

pub fn summarize_regret(records: &[RegretRecord]) -> Vec<RegretSummary> {
    let mut budgets: Vec<usize> = records.iter().map(|r| r.budget).collect();
    budgets.dedup();
    budgets
        .into_iter()
        .map(|b| {
            let v: Vec<f64> = records.iter().filter(|r| r.budget == b).map(|r| r.regret).collect();
            RegretSummary { budget: b, runs: v.len(), median_regret: median(&v), mean_regret: mean(v.iter().copied()) }
        })
        .collect()
}

// ---------------------------------------------------------------- hallucination

/// Header: `budget,seed,regret,hallucinated`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HallucinationRecord {
    pub budget: usize,
    pub seed: u64,
    pub regret: f64,
    /// Final caption is worse than the optimum by at least `delta_h`.
    pub hallucinated: bool,
}

/// Header: `budget,runs,fraction`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HallucinationSummary {
    pub budget: usize,
    pub runs: usize,
    pub fraction: f64,
}

pub fn run_hallucination(
    worlds: &WorldFactory,
    base: &Config,
    budgets: &[usize],
    seeds: &SeedList,
    model: ModelKind,
    delta_h: f64,
) -> Result<Vec<HallucinationRecord>> {
    if !(delta_h > 0.0) {
        return Err(usage("delta_h must be > 0"));
    }
    Ok(run_regret(worlds, base, budgets, seeds, model)?
        .into_iter()
        .map(|r| HallucinationRecord {
            budget: r.budget,
            seed: r.seed,
            regret: r.regret,
            hallucinated: r.regret >= delta_h - GAP_TOL,
        })
        .collect())
}

pub fn summarize_hallucination(records: &[HallucinationRecord]) -> Vec<HallucinationSummary> {
    let mut budgets: Vec<usize> = records.iter().map(|r| r.budget).collect();
    budgets.dedup();
    budgets
        .into_iter()
        .map(|b| {
            let g: Vec<&HallucinationRecord> = records.iter().filter(|r| r.budget == b).collect();
            let hits = g.iter().filter(|r| r.hallucinated).count();
            HallucinationSummary { budget: b, runs: g.len(), fraction: hits as f64 / g.len() as f64 }
        })
        .collect()
}

// ---------------------------------------------------------------- branching

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionMode {
    /// Tabular priors, only the top few actions expanded.
    Restricted,
    /// Uniform priors over every action.
    Full,
}

impl ExpansionMode {
    pub const ALL: [ExpansionMode; 2] = [Self::Restricted, Self::Full];
}

/// Header: `mode,seed,budget,total_reward,optimal_value,reached`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingRun {
    pub mode: ExpansionMode,
    pub seed: u64,
    pub budget: usize,
    pub total_reward: f64,
    pub optimal_value: f64,
    pub reached: bool,
}

/// Smallest searched budget reaching the target; empty when none did.
/// Header: `mode,seed,iterations_to_target`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingRecord {
    pub mode: ExpansionMode,
    pub seed: u64,
    pub iterations_to_target: Option<usize>,
}

/// Header: `mode,runs,reached,median_iterations`. Runs that never reach the
/// target count as infinite in the median.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingSummary {
    pub mode: ExpansionMode,
    pub runs: usize,
    pub reached: usize,
    pub median_iterations: f64,
}

fn mode_config(base: &Config, mode: ExpansionMode, vocab_size: usize, restricted_top_m: usize) -> Config {
    let top_m = match mode {
        ExpansionMode::Restricted => restricted_top_m,
        ExpansionMode::Full => vocab_size,
    };
    Config { top_m_actions: top_m, ..base.clone() }
}

/// For every mode and seed, runs budgets in increasing order until the
/// final caption's noiseless total reaches `BRANCHING_TARGET` of the optimum.
pub fn run_branching(
    worlds: &WorldFactory,
    base: &Config,
    budgets: &[usize],
    seeds: &SeedList,
    restricted_top_m: usize,
) -> Result<(Vec<BranchingRecord>, Vec<BranchingRun>)> {
    let mut sorted = budgets.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let truth = oracles(worlds, base, seeds)?;
    let jobs: Vec<(ExpansionMode, usize)> =
        ExpansionMode::ALL.iter().flat_map(|&m| (0..seeds.len()).map(move |i| (m, i))).collect();
    let results: Vec<(BranchingRecord, Vec<BranchingRun>)> = jobs
        .par_iter()
        .map(|&(mode, i)| {
            let seed = seeds.as_slice()[i];
            let (world, oracle) = &*truth[i];
            let model: Box<dyn SequenceModel<f64>> = match mode {
                ExpansionMode::Restricted => Box::new(TabularModel::default()),
                ExpansionMode::Full => Box::new(UniformModel),
            };
            let net = Net::zeros_for(world);
            let mut runs = Vec::new();
            let mut hit = None;
            for &budget in &sorted {
                let cfg = budget_config(&mode_config(base, mode, world.vocab_size, restricted_top_m), budget, seed);
                let (state, _) = generate(&PlanContext::new(world, model.as_ref(), &net, &cfg))?;
                let total = noiseless_total(&state, world, &cfg)?;
                let reached = total >= BRANCHING_TARGET * oracle.optimal_value;
                runs.push(BranchingRun {
                    mode,
                    seed,
                    budget,
                    total_reward: total,
                    optimal_value: oracle.optimal_value,
                    reached,
                });
                if reached {
                    hit = Some(budget);
                    break;
                }
            }
            Ok((BranchingRecord { mode, seed, iterations_to_target: hit }, runs))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(results.len());
    let mut runs = Vec::new();
    for (r, mut rs) in results {
        records.push(r);
        runs.append(&mut rs);
    }
    Ok((records, runs))
}

pub fn summarize_branching(records: &[BranchingRecord]) -> Vec<BranchingSummary> {
    ExpansionMode::ALL
        .iter()
        .map(|&mode| {
            let v: Vec<f64> = records
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.iterations_to_target.map_or(f64::INFINITY, |t| t as f64))
                .collect();
            BranchingSummary {
                mode,
                runs: v.len(),
                reached: v.iter().filter(|x| x.is_finite()).count(),
                median_iterations: median(&v),
            }
        })
        .collect()
}
