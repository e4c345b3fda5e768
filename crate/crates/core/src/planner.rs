//! Token-by-token planning loop.
//!
//! Every outer step builds a fresh tree rooted at the current prefix, runs
//! select → expand → evaluate → fuse → backpropagate iterations until the
//! budget runs out or the root statistic stops improving, and then commits the
//! most visited root action.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{append_token, PlannerConfig, RewardBreakdown, SequenceState, TokenId, WorldInstance};
use crate::error::{validation, Result};
use crate::model::{saliency_expansion, SequenceModel};
use crate::reward::{terminal_reward, CoverageScorer, QualityScorer};
use crate::scalar::Scalar;
use crate::tree::{NodeId, SearchTree};
use crate::value_net::{featurize, fuse_value, ValueNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<F> {
    pub index: usize,
    pub best_root_uct: F,
    pub leaf_depth: usize,
    pub value: F,
    pub terminal_leaf: bool,
    #[serde(skip)]
    pub model_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootChild<F> {
    pub token: TokenId,
    pub n: u64,
    pub w: F,
    pub p: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<F> {
    pub step: usize,
    pub root_tokens: Vec<TokenId>,
    pub chosen: TokenId,
    pub iterations: usize,
    pub converged: bool,
    pub model_calls: usize,
    pub root_children: Vec<RootChild<F>>,
    pub iteration_log: Vec<IterationRecord<F>>,
}

/// Everything one planner run did. Wall-clock timings are kept in memory only
/// so persisted traces stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
pub struct RunTrace<F> {
    pub world_id: String,
    pub config: PlannerConfig<F>,
    pub steps: Vec<StepRecord<F>>,
    /// Prefix at the start of every outer step.
    pub intermediate_states: Vec<SequenceState>,
    pub final_state: SequenceState,
    pub final_reward: Option<RewardBreakdown<F>>,
    #[serde(skip)]
    pub step_wall_clock: Vec<Duration>,
}

/// Compact per-run summary written next to the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
pub struct RunSummary<F> {
    pub world_id: String,
    pub seed: u64,
    pub config: PlannerConfig<F>,
    pub initial_tokens: Vec<TokenId>,
    pub final_tokens: Vec<TokenId>,
    pub final_reward: Option<RewardBreakdown<F>>,
    pub steps: usize,
    pub iterations_per_step: Vec<usize>,
    pub total_iterations: usize,
    pub model_calls: usize,
}

impl<F: Scalar> RunTrace<F> {
    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }

    pub fn model_calls(&self) -> usize {
        self.steps.iter().map(|s| s.model_calls).sum()
    }

    pub fn mean_iterations_per_step(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.total_iterations() as f64 / self.steps.len() as f64
        }
    }

    pub fn chosen_tokens(&self) -> Vec<TokenId> {
        self.steps.iter().map(|s| s.chosen).collect()
    }

    /// Re-applies the chosen tokens to the initial prefix.
    pub fn replay(&self, world: &WorldInstance<F>) -> Result<SequenceState> {
        let start = SequenceState::from_tokens(&self.config.initial_tokens, world)?;
        self.steps.iter().try_fold(start, |s, step| append_token(&s, step.chosen, world))
    }

    pub fn summary(&self) -> RunSummary<F> {
        RunSummary {
            world_id: self.world_id.clone(),
            seed: self.config.seed,
            config: self.config.clone(),
            initial_tokens: self.config.initial_tokens.clone(),
            final_tokens: self.final_state.tokens().to_vec(),
            final_reward: self.final_reward,
            steps: self.steps.len(),
            iterations_per_step: self.steps.iter().map(|s| s.iterations).collect(),
            total_iterations: self.total_iterations(),
            model_calls: self.model_calls(),
        }
    }

    /// One JSON line per outer step.
    pub fn write_steps_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds the persisted part of a trace from its summary and step log.
    pub fn from_persisted(summary: RunSummary<F>, steps: Vec<StepRecord<F>>, world: &WorldInstance<F>) -> Result<Self> {
        let mut state = SequenceState::from_tokens(&summary.initial_tokens, world)?;
        let mut intermediate = Vec::with_capacity(steps.len());
        for s in &steps {
            intermediate.push(state.clone());
            state = append_token(&state, s.chosen, world)?;
        }
        if state.tokens() != summary.final_tokens.as_slice() {
            return Err(validation("step log does not replay to the summary's final tokens"));
        }
        Ok(Self {
            world_id: summary.world_id,
            config: summary.config,
            steps,
            intermediate_states: intermediate,
            final_state: state,
            final_reward: summary.final_reward,
            step_wall_clock: Vec::new(),
        })
    }
}

/// True when there are at least `window + 1` values and each of the last
/// `window` successive differences is below `eps_stop`.
pub fn check_converged<F: Scalar>(history: &[F], eps_stop: F, window: usize) -> bool {
    if window == 0 || history.len() < window + 1 {
        return false;
    }
    history[history.len() - window - 1..].windows(2).all(|w| w[1] - w[0] < eps_stop)
}

/// Borrowed pieces one planner run works with.
pub struct PlanContext<'a, F: Scalar> {
    pub world: &'a WorldInstance<F>,
    pub model: &'a dyn SequenceModel<F>,
    pub value_net: &'a ValueNet<F>,
    pub scorer: &'a dyn QualityScorer<F>,
    pub config: &'a PlannerConfig<F>,
}

impl<F: Scalar> Clone for PlanContext<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<F: Scalar> Copy for PlanContext<'_, F> {}

impl<'a, F: Scalar> PlanContext<'a, F> {
    pub fn new(
        world: &'a WorldInstance<F>,
        model: &'a dyn SequenceModel<F>,
        value_net: &'a ValueNet<F>,
        config: &'a PlannerConfig<F>,
    ) -> Self {
        Self { world, model, value_net, scorer: &CoverageScorer, config }
    }

    pub fn with_scorer(mut self, scorer: &'a dyn QualityScorer<F>) -> Self {
        self.scorer = scorer;
        self
    }

    /// Expands `node` via saliency-guided prompting; returns the number of
    /// model calls and the fused-in coarse value.
    fn expand(&self, tree: &mut SearchTree<F>, node: NodeId) -> Result<(usize, F)> {
        let state = tree.node(node).state.clone();
        let expansion = saliency_expansion(self.model, &state, self.world, self.config.branching_k)?;
        tree.expand_node(node, &expansion, self.world, self.config)?;
        Ok((expansion.entries.len(), expansion.weighted_coarse_value()))
    }
}

/// One select/expand/evaluate/backpropagate pass. An unexpanded root is
/// expanded first and the pass then continues below it.
pub fn mcts_iteration<F: Scalar, R: rand::Rng + ?Sized>(
    tree: &mut SearchTree<F>,
    root: NodeId,
    ctx: &PlanContext<'_, F>,
    rng: &mut R,
    index: usize,
) -> Result<IterationRecord<F>> {
    let mut calls = 0;
    let root_node = tree.node(root);
    if !root_node.expanded && !root_node.state.is_terminal() {
        calls += ctx.expand(tree, root)?.0;
    }
    let path = tree.select_leaf(root, ctx.config);
    let leaf = path.leaf().expect("path has a leaf");
    let terminal = tree.node(leaf).state.is_terminal();
    let value = if terminal {
        terminal_reward(&tree.node(leaf).state, ctx.world, ctx.config, ctx.scorer, rng)?.observed_total
    } else {
        let (n, v_vlm) = ctx.expand(tree, leaf)?;
        calls += n;
        let v_hat = ctx.value_net.predict(&featurize(&tree.node(leaf).state, ctx.world))?;
        fuse_value(v_vlm, v_hat, ctx.config.lambda_v)?
    };
    tree.backpropagate(&path, value, ctx.config.gamma);
    Ok(IterationRecord {
        index,
        best_root_uct: tree.best_root_uct(root, ctx.config.c_puct).unwrap_or_else(F::zero),
        leaf_depth: path.depth(),
        value,
        terminal_leaf: terminal,
        model_calls: calls,
    })
}

/// Runs the full planning loop from `config.initial_tokens` until the caption
/// is terminal.
pub fn generate<F: Scalar>(ctx: &PlanContext<'_, F>) -> Result<(SequenceState, RunTrace<F>)> {
    let config = ctx.config;
    config.validate()?;
    let world = ctx.world;
    if ctx.value_net.input_dim != crate::value_net::feature_dim(world.vocab_size) {
        return Err(validation(format!(
            "value net expects {} features, world '{}' produces {}",
            ctx.value_net.input_dim,
            world.world_id,
            crate::value_net::feature_dim(world.vocab_size)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = SequenceState::from_tokens(&config.initial_tokens, world)?;
    let mut steps = Vec::new();
    let mut intermediate = Vec::new();
    let mut clocks = Vec::new();

    while !state.is_terminal() {
        let started = Instant::now();
        intermediate.push(state.clone());
        let mut tree = SearchTree::new(state.clone());
        let mut history = Vec::with_capacity(config.n_max_iterations);
        let mut log = Vec::with_capacity(config.n_max_iterations);
        let mut calls = 0;
        let mut converged = false;
        for i in 1..=config.n_max_iterations {
            let rec = mcts_iteration(&mut tree, SearchTree::<F>::ROOT, ctx, &mut rng, i)?;
            calls += rec.model_calls;
            history.push(rec.best_root_uct);
            log.push(rec);
            if config.adaptive_stop && check_converged(&history, config.eps_stop, config.stop_window) {
                converged = true;
                break;
            }
        }
        let chosen = tree.best_action_by_visits(SearchTree::<F>::ROOT)?;
        let root_children = tree
            .node(SearchTree::<F>::ROOT)
            .children
            .iter()
            .map(|c| RootChild { token: c.token, n: c.stats.visits, w: c.stats.total_value, p: c.stats.prior })
            .collect();
        steps.push(StepRecord {
            step: steps.len() + 1,
            root_tokens: state.tokens().to_vec(),
            chosen,
            iterations: log.len(),
            converged,
            model_calls: calls,
            root_children,
            iteration_log: log,
        });
        state = append_token(&state, chosen, world)?;
        clocks.push(started.elapsed());
    }

    let final_reward = Some(terminal_reward(&state, world, config, ctx.scorer, &mut rng)?);
    let trace = RunTrace {
        world_id: world.world_id.clone(),
        config: config.clone(),
        steps,
        intermediate_states: intermediate,
        final_state: state.clone(),
        final_reward,
        step_wall_clock: clocks,
    };
    Ok((state, trace))
}
