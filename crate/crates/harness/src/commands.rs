//! One function per subcommand: run the experiment, write its files, return a
//! one-paragraph report for the terminal.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use capplan_core::oracle::{enumerate_optimal, search_space_size, terminal_sequence_count};
use capplan_core::planner::{RunSummary, StepRecord};
use capplan_core::training::collect_training_data;
use capplan_core::value_net::train;
use capplan_core::{Hyper, Net, TokenId, Trace, World};
use log::info;
use serde::Serialize;

use crate::error::{usage, HarnessError, Result};
use crate::experiments::{self, ModelKind, SweepParam};
use crate::spec::ExperimentSpec;
use crate::worlds::{WorldFactory, WorldParams};

pub const EXPERIMENT_FILE: &str = "experiment.json";

/// Written to every output directory so a run can be reproduced from its files.
#[derive(Debug, Serialize)]
struct ExperimentRecord<'a> {
    kind: &'a str,
    world: String,
    seeds: &'a [u64],
    config: capplan_core::Config,
}

fn prepare(spec: &ExperimentSpec) -> Result<()> {
    fs::create_dir_all(&spec.out)?;
    let rec = ExperimentRecord {
        kind: spec.kind.name(),
        world: spec.world.to_string(),
        seeds: spec.seeds.as_slice(),
        config: spec.effective_config()?,
    };
    write_json(&spec.out.join(EXPERIMENT_FILE), &rec)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes `header` explicitly so an empty table still has one.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn factory(spec: &ExperimentSpec, params: WorldParams) -> Result<WorldFactory> {
    WorldFactory::new(spec.world.clone(), params)
}

// ---------------------------------------------------------------- plan

pub const PLAN_HEADER: [&str; 8] =
    ["seed", "world_id", "total_reward", "observed_total", "length", "steps", "total_iterations", "model_calls"];

#[derive(Debug, Serialize)]
struct PlanRow {
    seed: u64,
    world_id: String,
    total_reward: f64,
    observed_total: f64,
    length: usize,
    steps: usize,
    total_iterations: usize,
    model_calls: usize,
}

pub fn steps_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.steps.jsonl"))
}

pub fn summary_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.summary.json"))
}

pub fn read_net(path: &Path) -> Result<Net> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.into(), source })?;
    Net::from_json(&text).map_err(|source| HarnessError::Parse { path: path.into(), source })
}

pub fn cmd_plan(spec: &ExperimentSpec, params: WorldParams, model: ModelKind, value_net: Option<&Path>) -> Result<String> {
    let worlds = factory(spec, params)?;
    let config = spec.effective_config()?;
    let net = value_net.map(read_net).transpose()?;
    prepare(spec)?;
    let runs = experiments::run_plans(&worlds, &config, &spec.seeds, model, net.as_ref())?;
    let mut rows = Vec::with_capacity(runs.len());
    for (world, trace) in &runs {
        let seed = trace.config.seed;
        let mut f = BufWriter::new(File::create(steps_path(&spec.out, seed))?);
        trace.write_steps_jsonl(&mut f)?;
        f.flush()?;
        write_json(&summary_path(&spec.out, seed), &trace.summary())?;
        let reward = trace.final_reward.expect("planner records a final reward");
        rows.push(PlanRow {
            seed,
            world_id: world.world_id.clone(),
            total_reward: reward.total,
            observed_total: reward.observed_total,
            length: trace.final_state.len(),
            steps: trace.steps.len(),
            total_iterations: trace.total_iterations(),
            model_calls: trace.model_calls(),
        });
    }
    write_csv(&spec.out.join("plan.csv"), &PLAN_HEADER, &rows)?;
    let mean = rows.iter().map(|r| r.total_reward).sum::<f64>() / rows.len() as f64;
    Ok(format!("planned {} run(s); mean noiseless total {mean:.4}; files in {}", rows.len(), spec.out.display()))
}

/// Loads every `seed-*.summary.json` / `.steps.jsonl` pair in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<(RunSummary<f64>, Vec<StepRecord<f64>>)>> {
    let entries = fs::read_dir(dir).map_err(|source| HarnessError::Read { path: dir.into(), source })?;
    let mut summaries: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".summary.json")))
        .collect();
    summaries.sort();
    let mut out = Vec::with_capacity(summaries.len());
    for sp in summaries {
        let text = fs::read_to_string(&sp).map_err(|source| HarnessError::Read { path: sp.clone(), source })?;
        let summary: RunSummary<f64> = serde_json::from_str(&text)?;
        let name = sp.file_name().and_then(|n| n.to_str()).unwrap().trim_end_matches(".summary.json");
        let stp = sp.with_file_name(format!("{name}.steps.jsonl"));
        let file = File::open(&stp).map_err(|source| HarnessError::Read { path: stp.clone(), source })?;
        let mut steps = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                steps.push(serde_json::from_str(&line)?);
            }
        }
        out.push((summary, steps));
    }
    Ok(out)
}

// ---------------------------------------------------------------- sweep

pub const SWEEP_HEADER: [&str; 8] =
    ["param", "value", "seed", "total_reward", "length", "iterations", "model_calls", "mean_leaf_value"];
pub const SWEEP_SUMMARY_HEADER: [&str; 7] =
    ["param", "value", "runs", "mean_total_reward", "mean_length", "mean_iterations", "mean_model_calls"];

pub fn cmd_sweep(
    spec: &ExperimentSpec,
    params: WorldParams,
    model: ModelKind,
    grids: &[(SweepParam, Vec<f64>)],
) -> Result<String> {
    let worlds = factory(spec, params)?;
    let config = spec.effective_config()?;
    prepare(spec)?;
    let rows = experiments::run_sweep(&worlds, &config, grids, &spec.seeds, model)?;
    let summary = experiments::summarize_sweep(&rows);
    write_csv(&spec.out.join("sweep.csv"), &SWEEP_HEADER, &rows)?;
    write_csv(&spec.out.join("sweep_summary.csv"), &SWEEP_SUMMARY_HEADER, &summary)?;
    let lines: Vec<String> = summary
        .iter()
        .map(|s| format!("{}={}: total {:.4}, length {:.2}", s.param, s.value, s.mean_total_reward, s.mean_length))
        .collect();
    Ok(format!("{} sweep rows\n{}", rows.len(), lines.join("\n")))
}

// ---------------------------------------------------------------- regret / hallucination

pub const REGRET_HEADER: [&str; 3] = ["budget", "seed", "regret"];
pub const REGRET_SUMMARY_HEADER: [&str; 4] = ["budget", "runs", "median_regret", "mean_regret"];

pub fn cmd_regret(spec: &ExperimentSpec, params: WorldParams, model: ModelKind, budgets: &[usize]) -> Result<String> {
    check_budgets(budgets)?;
    let worlds = factory(spec, params)?;
    let config = spec.effective_config()?;
    prepare(spec)?;
    let records = experiments::run_regret(&worlds, &config, budgets, &spec.seeds, model)?;
    let summary = experiments::summarize_regret(&records);
    write_csv(&spec.out.join("regret.csv"), &REGRET_HEADER, &records)?;
    write_csv(&spec.out.join("regret_summary.csv"), &REGRET_SUMMARY_HEADER, &summary)?;
    let lines: Vec<String> =
        summary.iter().map(|s| format!("T={}: median regret {:.4}", s.budget, s.median_regret)).collect();
    Ok(lines.join("\n"))
}

pub const HALLUCINATION_HEADER: [&str; 4] = ["budget", "seed", "regret", "hallucinated"];
pub const HALLUCINATION_SUMMARY_HEADER: [&str; 3] = ["budget", "runs", "fraction"];

pub fn cmd_hallucination(
    spec: &ExperimentSpec,
    params: WorldParams,
    model: ModelKind,
    budgets: &[usize],
) -> Result<String> {
    check_budgets(budgets)?;
    let worlds = factory(spec, params)?;
    let config = spec.effective_config()?;
    prepare(spec)?;
    let records = experiments::run_hallucination(&worlds, &config, budgets, &spec.seeds, model, params.delta_h)?;
    let summary = experiments::summarize_hallucination(&records);
    write_csv(&spec.out.join("hallucination.csv"), &HALLUCINATION_HEADER, &records)?;
    write_csv(&spec.out.join("hallucination_summary.csv"), &HALLUCINATION_SUMMARY_HEADER, &summary)?;
    let lines: Vec<String> =
        summary.iter().map(|s| format!("T={}: hallucination fraction {:.3}", s.budget, s.fraction)).collect();
    Ok(lines.join("\n"))
}

fn check_budgets(budgets: &[usize]) -> Result<()> {
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(usage("budgets must be a non-empty list of positive integers"));
    }
    Ok(())
}

// ---------------------------------------------------------------- branching

pub const BRANCHING_HEADER: [&str; 3] = ["mode", "seed", "iterations_to_target"];
pub const BRANCHING_RUNS_HEADER: [&str; 6] = ["mode", "seed", "budget", "total_reward", "optimal_value", "reached"];
pub const BRANCHING_SUMMARY_HEADER: [&str; 4] = ["mode", "runs", "reached", "median_iterations"];

pub fn cmd_branching(
    spec: &ExperimentSpec,
    params: WorldParams,
    budgets: &[usize],
    restricted_top_m: usize,
) -> Result<String> {
    check_budgets(budgets)?;
    if restricted_top_m == 0 {
        return Err(usage("restricted top-m must be >= 1"));
    }
    let worlds = factory(spec, params)?;
    let config = spec.effective_config()?;
    prepare(spec)?;
    let (records, runs) = experiments::run_branching(&worlds, &config, budgets, &spec.seeds, restricted_top_m)?;
    let summary = experiments::summarize_branching(&records);
    write_csv(&spec.out.join("branching.csv"), &BRANCHING_HEADER, &records)?;
    write_csv(&spec.out.join("branching_runs.csv"), &BRANCHING_RUNS_HEADER, &runs)?;
    write_csv(&spec.out.join("branching_summary.csv"), &BRANCHING_SUMMARY_HEADER, &summary)?;
    let lines: Vec<String> = summary
        .iter()
        .map(|s| format!("{:?}: median iterations {} ({} of {} reached)", s.mode, s.median_iterations, s.reached, s.runs))
        .collect();
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------- train-value

pub const LOSS_HEADER: [&str; 2] = ["epoch", "mse"];

#[derive(Debug, Serialize)]
struct LossRow {
    epoch: usize,
    mse: f64,
}

pub fn cmd_train_value(spec: &ExperimentSpec, params: WorldParams, traces_dir: &Path, hyper: &Hyper) -> Result<String> {
    let worlds = factory(spec, params)?;
    let persisted = load_traces(traces_dir)?;
    let mut by_id: BTreeMap<String, World> = BTreeMap::new();
    let mut traces: Vec<Trace> = Vec::with_capacity(persisted.len());
    for (summary, steps) in persisted {
        let world = worlds.world(summary.seed)?;
        if world.world_id != summary.world_id {
            return Err(usage(format!(
                "trace for seed {} was planned on world '{}', but {} gives '{}'",
                summary.seed, summary.world_id, spec.world, world.world_id
            )));
        }
        traces.push(Trace::from_persisted(summary, steps, &world)?);
        by_id.entry(world.world_id.clone()).or_insert(world);
    }
    let mut vocab: Vec<usize> = by_id.values().map(|w| w.vocab_size).collect();
    vocab.sort_unstable();
    vocab.dedup();
    if vocab.len() > 1 {
        return Err(usage(format!("traces span worlds of different vocabulary sizes {vocab:?}; one value net needs one")));
    }
    let data = collect_training_data(&traces, |id| by_id.get(id));
    if data.pairs.is_empty() {
        return Err(HarnessError::EmptyDataset(format!("no usable traces in {}", traces_dir.display())));
    }
    info!("training on {} pairs from {} traces ({} skipped)", data.pairs.len(), traces.len(), data.skipped);
    let outcome = train(&data.pairs, hyper)?;
    fs::create_dir_all(&spec.out)?;
    fs::write(spec.out.join("value_net.json"), outcome.params.to_json()? + "\n")?;
    let rows: Vec<LossRow> =
        outcome.loss_curve.iter().enumerate().map(|(i, &mse)| LossRow { epoch: i + 1, mse }).collect();
    write_csv(&spec.out.join("loss_curve.csv"), &LOSS_HEADER, &rows)?;
    let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
    Ok(format!("trained on {} pairs; final mse {last:.3e}; files in {}", data.pairs.len(), spec.out.display()))
}

// ---------------------------------------------------------------- oracle

#[derive(Debug, Serialize)]
pub struct OracleSummary {
    pub world_id: String,
    pub search_space: u64,
    pub terminal_sequences: u64,
    pub optimal_value: f64,
    pub best_sequence: Vec<TokenId>,
}

pub fn cmd_oracle(spec: &ExperimentSpec, params: WorldParams, value_table: bool) -> Result<String> {
    let worlds = factory(spec, params)?;
    let config = spec.effective_config()?;
    let seeds: Vec<u64> = if worlds.per_seed() { spec.seeds.as_slice().to_vec() } else { vec![spec.seeds.as_slice()[0]] };
    let mut summaries = Vec::with_capacity(seeds.len());
    let mut tables = Vec::new();
    for &seed in &seeds {
        let world = worlds.world(seed)?;
        let result = enumerate_optimal(&world, &config)?;
        summaries.push(OracleSummary {
            world_id: world.world_id.clone(),
            search_space: search_space_size(world.vocab_size, world.max_length) as u64,
            terminal_sequences: terminal_sequence_count(world.vocab_size, world.max_length) as u64,
            optimal_value: result.optimal_value,
            best_sequence: result.best_sequence.tokens().to_vec(),
        });
        if value_table {
            tables.push((seed, result));
        }
    }
    prepare(spec)?;
    write_json(&spec.out.join("oracle.json"), &summaries)?;
    for (seed, result) in tables {
        let name = if worlds.per_seed() { format!("value_table-seed-{seed}.csv") } else { "value_table.csv".into() };
        let mut f = BufWriter::new(File::create(spec.out.join(name))?);
        result.write_value_table_csv(&mut f)?;
        f.flush()?;
    }
    let lines: Vec<String> =
        summaries
        .iter()
        .map(|s| {
            let toks: Vec<u32> = s.best_sequence.iter().map(|t| t.0).collect();
            format!("{}: V* = {:.6} via {toks:?}", s.world_id, s.optimal_value)
        })
        .collect();
    Ok(lines.join("\n"))
}
