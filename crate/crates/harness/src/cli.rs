//! Argument parsing and dispatch for the `capplan` binary.

use std::path::PathBuf;

use capplan_core::value_net::Optimizer;
use capplan_core::Hyper;
use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::error::{usage, Result};
use crate::experiments::{ModelKind, SweepParam, BRANCHING_BUDGETS, DEFAULT_BUDGETS};
use crate::spec::{load_config, parse_override, ExperimentKind, ExperimentSpec};
use crate::worlds::{BranchingShape, WorldParams, WorldSource};

pub const OUT_ENV: &str = "CAPPLAN_OUT";

#[derive(Debug, Parser)]
#[command(name = "capplan", version, about = "Tree-search caption planner: experiments on synthetic worlds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// World JSON file, or `builtin:<easy|saliency|bandit|hallucination|branching|random>`.
    #[arg(long)]
    pub world: Option<String>,
    /// Planner config JSON; unspecified fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `N` (seeds 0..N), `a..b`, or a comma list such as `3,8,` .
    #[arg(long, default_value = "1")]
    pub seeds: String,
    #[arg(long, env = OUT_ENV, default_value = "capplan-out")]
    pub out: PathBuf,
    /// Config field override, e.g. `--override c_puct=2.0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replace the world's reward noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Sequence model: auto, tabular, uniform or bandit.
    #[arg(long, default_value = "auto")]
    pub model: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a caption per seed; writes step logs, summaries and plan.csv.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Trained value-net JSON (default: a zero net).
        #[arg(long)]
        value_net: Option<PathBuf>,
    },
    /// One-at-a-time hyperparameter grids.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter(s) to sweep; default all three.
        #[arg(long = "param")]
        params: Vec<String>,
        /// Custom grid, e.g. `--grid alpha=0,0.1,0.5`. Repeatable.
        #[arg(long = "grid", value_name = "PARAM=V1,V2,..")]
        grids: Vec<String>,
    },
    /// Simple regret against the brute-force optimum over iteration budgets.
    Regret {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
    },
    /// How often the final choice falls `delta_h` or more below the optimum.
    Hallucination {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.2)]
        delta_h: f64,
    },
    /// Iterations to reach 95% of optimum: restricted vs full expansion.
    Branching {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        #[arg(long, default_value_t = 64)]
        vocab: usize,
        #[arg(long, default_value_t = 4)]
        regions: usize,
        #[arg(long, default_value_t = 3)]
        max_length: usize,
        /// Actions kept per expansion in restricted mode.
        #[arg(long, default_value_t = 4)]
        restricted_top_m: usize,
    },
    /// Fit the value net on persisted plan traces.
    TrainValue {
        #[command(flatten)]
        common: Common,
        /// Directory written by `plan`.
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = capplan_core::value_net::DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = 0.01)]
        weight_decay: f64,
        /// adamw or sgd.
        #[arg(long, default_value = "adamw")]
        optimizer: String,
    },
    /// Exhaustive optimum (and optionally the full value table) of a small world.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        value_table: bool,
    },
}

impl Command {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Command::Plan { .. } => ExperimentKind::Plan,
            Command::Sweep { .. } => ExperimentKind::Sweep,
            Command::Regret { .. } => ExperimentKind::Regret,
            Command::Hallucination { .. } => ExperimentKind::Hallucination,
            Command::Branching { .. } => ExperimentKind::Branching,
            Command::TrainValue { .. } => ExperimentKind::TrainValue,
            Command::Oracle { .. } => ExperimentKind::Oracle,
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Plan { common, .. }
            | Command::Sweep { common, .. }
            | Command::Regret { common, .. }
            | Command::Hallucination { common, .. }
            | Command::Branching { common, .. }
            | Command::TrainValue { common, .. }
            | Command::Oracle { common, .. } => common,
        }
    }

    fn default_world(&self) -> Option<&'static str> {
        match self {
            Command::Regret { .. } => Some("builtin:bandit"),
            Command::Hallucination { .. } => Some("builtin:hallucination"),
            Command::Branching { .. } => Some("builtin:branching"),
            _ => None,
        }
    }
}

pub fn build_spec(command: &Command) -> Result<ExperimentSpec> {
    let c = command.common();
    let world = c
        .world
        .as_deref()
        .or(command.default_world())
        .ok_or_else(|| usage(format!("`{}` needs --world", command.kind())))?
        .parse::<WorldSource>()?;
    let overrides = c.overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
    let spec = ExperimentSpec {
        kind: command.kind(),
        world,
        config: load_config(c.config.as_deref())?,
        overrides,
        seeds: c.seeds.parse()?,
        out: c.out.clone(),
    };
    spec.effective_config()?;
    Ok(spec)
}

fn parse_grids(params: &[String], grids: &[String]) -> Result<Vec<(SweepParam, Vec<f64>)>> {
    let mut chosen: Vec<SweepParam> = params.iter().map(|p| p.parse()).collect::<Result<_>>()?;
    let mut custom: Vec<(SweepParam, Vec<f64>)> = Vec::new();
    for g in grids {
        let (name, values) = g.split_once('=').ok_or_else(|| usage(format!("grid '{g}' is not PARAM=V1,V2,..")))?;
        let param: SweepParam = name.trim().parse()?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| usage(format!("grid '{g}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(usage(format!("grid '{g}' is empty")));
        }
        custom.push((param, values));
        if !chosen.contains(&param) {
            chosen.push(param);
        }
    }
    if chosen.is_empty() {
        chosen = SweepParam::ALL.to_vec();
    }
    Ok(chosen
        .into_iter()
        .map(|p| {
            let grid = custom.iter().rev().find(|(q, _)| *q == p).map(|(_, g)| g.clone()).unwrap_or_else(|| p.default_grid());
            (p, grid)
        })
        .collect())
}

/// Runs the parsed command; returns the report printed on success.
pub fn run(cli: &Cli) -> Result<String> {
    let command = &cli.command;
    let spec = build_spec(command)?;
    let c = command.common();
    let model: ModelKind = c.model.parse()?;
    let mut params = WorldParams { sigma: c.sigma, ..WorldParams::default() };
    match command {
        Command::Plan { value_net, .. } => commands::cmd_plan(&spec, params, model, value_net.as_deref()),
        Command::Sweep { params: names, grids, .. } => {
            commands::cmd_sweep(&spec, params, model, &parse_grids(names, grids)?)
        }
        Command::Regret { budgets, .. } => {
            commands::cmd_regret(&spec, params, model, budgets.as_deref().unwrap_or(&DEFAULT_BUDGETS))
        }
        Command::Hallucination { budgets, delta_h, .. } => {
            params.delta_h = *delta_h;
            commands::cmd_hallucination(&spec, params, model, budgets.as_deref().unwrap_or(&DEFAULT_BUDGETS))
        }
        Command::Branching { budgets, vocab, regions, max_length, restricted_top_m, .. } => {
            params.branching = BranchingShape { vocab_size: *vocab, regions: *regions, max_length: *max_length };
            commands::cmd_branching(&spec, params, budgets.as_deref().unwrap_or(&BRANCHING_BUDGETS), *restricted_top_m)
        }
        Command::TrainValue { traces, epochs, lr, batch_size, hidden, weight_decay, optimizer, .. } => {
            let optimizer = match optimizer.as_str() {
                "adamw" => Optimizer::AdamW,
                "sgd" => Optimizer::Sgd,
                o => return Err(usage(format!("unknown optimizer '{o}' (adamw, sgd)"))),
            };
            let hyper = Hyper {
                optimizer,
                learning_rate: *lr,
                weight_decay: *weight_decay,
                batch_size: *batch_size,
                epochs: *epochs,
                hidden_dim: *hidden,
                seed: spec.seeds.as_slice()[0],
            };
            commands::cmd_train_value(&spec, params, traces, &hyper)
        }
        Command::Oracle { value_table, .. } => commands::cmd_oracle(&spec, params, *value_table),
    }
}
