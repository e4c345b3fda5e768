//! MCTS tree stored in an index-addressed node pool.
//!
//! Each node keeps its children sorted by token; every edge carries the visit
//! count `N`, total value `W` and prior `P`. Parent links are not stored: a
//! [`SelectionPath`] records the way down and is replayed for backpropagation.

use std::cmp::Ordering;
use std::io::Write;

use serde::Serialize;

use crate::domain::{append_token, PlannerConfig, SequenceState, TokenId, WorldInstance};
use crate::error::{contract, Result};
use crate::model::ExpansionResult;
use crate::scalar::Scalar;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeStats<F> {
    pub visits: u64,
    pub total_value: F,
    pub prior: F,
}

impl<F: Scalar> EdgeStats<F> {
    pub fn with_prior(prior: F) -> Self {
        Self { visits: 0, total_value: F::zero(), prior }
    }

    /// `W / N`, or 0 for an unvisited edge.
    pub fn mean_value(&self) -> F {
        if self.visits == 0 {
            F::zero()
        } else {
            self.total_value / F::from_u64(self.visits).expect("visit count fits")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Child<F> {
    pub token: TokenId,
    pub stats: EdgeStats<F>,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode<F> {
    pub node_id: NodeId,
    pub state: SequenceState,
    /// Sorted by token.
    pub children: Vec<Child<F>>,
    pub expanded: bool,
}

impl<F: Scalar> SearchNode<F> {
    pub fn visit_total(&self) -> u64 {
        self.children.iter().map(|c| c.stats.visits).sum()
    }

    pub fn child(&self, token: TokenId) -> Option<&Child<F>> {
        self.children
            .binary_search_by_key(&token, |c| c.token)
            .ok()
            .map(|i| &self.children[i])
    }
}

/// Root-to-leaf walk: `(node, action taken from it)`. The last entry is the
/// leaf and carries no action.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionPath {
    pub steps: Vec<(NodeId, Option<TokenId>)>,
}

impl SelectionPath {
    pub fn leaf(&self) -> Option<NodeId> {
        self.steps.last().map(|s| s.0)
    }

    /// Number of edges traversed.
    pub fn depth(&self) -> usize {
        self.steps.iter().filter(|s| s.1.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct SearchTree<F> {
    nodes: Vec<SearchNode<F>>,
}

/// PUCT score `Q + c * P * sqrt(parent_total) / (1 + N)`.
pub fn uct_score<F: Scalar>(edge: &EdgeStats<F>, parent_visit_total: u64, c_puct: F) -> F {
    let parent = F::from_u64(parent_visit_total).expect("visit count fits").sqrt();
    let n = F::from_u64(edge.visits).expect("visit count fits");
    edge.mean_value() + c_puct * edge.prior * parent / (F::one() + n)
}

/// Index of the child to descend into: highest score, then highest prior,
/// then lowest token.
fn argmax_child<F: Scalar>(node: &SearchNode<F>, c_puct: F) -> Option<usize> {
    let total = node.visit_total();
    let mut best: Option<(usize, F)> = None;
    for (i, c) in node.children.iter().enumerate() {
        let s = uct_score(&c.stats, total, c_puct);
        best = match best {
            None => Some((i, s)),
            Some((bi, bs)) => {
                let prev = &node.children[bi];
                let better = match s.partial_cmp(&bs).unwrap_or(Ordering::Equal) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => c.stats.prior > prev.stats.prior,
                };
                if better {
                    Some((i, s))
                } else {
                    Some((bi, bs))
                }
            }
        };
    }
    best.map(|b| b.0)
}

impl<F: Scalar> SearchTree<F> {
    pub fn new(root_state: SequenceState) -> Self {
        Self {
            nodes: vec![SearchNode { node_id: 0, state: root_state, children: Vec::new(), expanded: false }],
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn node(&self, id: NodeId) -> &SearchNode<F> {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SearchNode<F>] {
        &self.nodes
    }

    /// Descends by PUCT from `root` until an unexpanded or terminal node.
    pub fn select_leaf(&self, root: NodeId, config: &PlannerConfig<F>) -> SelectionPath {
        let mut steps = Vec::new();
        let mut id = root;
        loop {
            let node = &self.nodes[id];
            if !node.expanded || node.state.is_terminal() || node.children.is_empty() {
                steps.push((id, None));
                return SelectionPath { steps };
            }
            let i = argmax_child(node, config.c_puct).expect("expanded node has children");
            let child = &node.children[i];
            steps.push((id, Some(child.token)));
            id = child.node;
        }
    }

    /// Creates children for the `top_m_actions` tokens of the merged prior.
    ///
    /// The merged prior is the saliency-weighted average of the expansion's
    /// policy vectors; the kept priors are renormalised to sum to one.
    pub fn expand_node(
        &mut self,
        node_id: NodeId,
        expansion: &ExpansionResult<F>,
        world: &WorldInstance<F>,
        config: &PlannerConfig<F>,
    ) -> Result<usize> {
        let node = &self.nodes[node_id];
        if node.expanded {
            return Err(contract(format!("node {node_id} is already expanded")));
        }
        if node.state.is_terminal() {
            return Err(contract(format!("node {node_id} is terminal and cannot be expanded")));
        }
        if expansion.entries.is_empty() {
            return Err(contract("expansion has no entries"));
        }
        let merged = merge_priors(expansion, world.vocab_size)?;

        let mut order: Vec<usize> = (0..merged.len()).collect();
        order.sort_by(|&a, &b| merged[b].partial_cmp(&merged[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        order.truncate(config.top_m_actions.min(merged.len()));
        order.sort_unstable();

        let kept: F = order.iter().map(|&t| merged[t]).sum();
        let uniform = F::one() / F::from_usize_lossy(order.len());
        let parent_state = node.state.clone();
        let mut children = Vec::with_capacity(order.len());
        for t in order {
            let token = TokenId(t as u32);
            let state = append_token(&parent_state, token, world)?;
            let prior = if kept > F::zero() { merged[t] / kept } else { uniform };
            let id = self.nodes.len();
            self.nodes.push(SearchNode { node_id: id, state, children: Vec::new(), expanded: false });
            children.push(Child { token, stats: EdgeStats::with_prior(prior), node: id });
        }
        let count = children.len();
        let node = &mut self.nodes[node_id];
        node.children = children;
        node.expanded = true;
        Ok(count)
    }

    /// Adds one visit and `gamma^d * value` to each edge on the path, where `d`
    /// counts edges above the leaf (0 for the edge into the leaf).
    pub fn backpropagate(&mut self, path: &SelectionPath, value: F, gamma: F) {
        let mut discount = F::one();
        for &(id, token) in path.steps.iter().rev() {
            let Some(token) = token else { continue };
            let node = &mut self.nodes[id];
            let i = node
                .children
                .binary_search_by_key(&token, |c| c.token)
                .expect("path follows existing edges");
            let stats = &mut node.children[i].stats;
            stats.visits += 1;
            stats.total_value += discount * value;
            discount *= gamma;
        }
    }

    /// Most visited child of `root`; ties go to the lowest token.
    pub fn best_action_by_visits(&self, root: NodeId) -> Result<TokenId> {
        let node = &self.nodes[root];
        if !node.expanded || node.children.is_empty() {
            return Err(contract(format!("node {root} has no children to choose from")));
        }
        let mut best = &node.children[0];
        for c in &node.children[1..] {
            if c.stats.visits > best.stats.visits {
                best = c;
            }
        }
        Ok(best.token)
    }

    /// Highest PUCT score among the root's children.
    pub fn best_root_uct(&self, root: NodeId, c_puct: F) -> Option<F> {
        let node = &self.nodes[root];
        let total = node.visit_total();
        node.children.iter().map(|c| uct_score(&c.stats, total, c_puct)).reduce(F::max)
    }

    /// One JSON object per node: id, state tokens and per-child statistics.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct ChildRow {
            token: TokenId,
            n: u64,
            w: f64,
            p: f64,
        }
        #[derive(Serialize)]
        struct NodeRow<'a> {
            node_id: NodeId,
            tokens: &'a [TokenId],
            children: Vec<ChildRow>,
        }
        for n in &self.nodes {
            let row = NodeRow {
                node_id: n.node_id,
                tokens: n.state.tokens(),
                children: n
                    .children
                    .iter()
                    .map(|c| ChildRow {
                        token: c.token,
                        n: c.stats.visits,
                        w: c.stats.total_value.as_f64(),
                        p: c.stats.prior.as_f64(),
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn edge_mut(&mut self, node: NodeId, token: TokenId) -> &mut EdgeStats<F> {
        let n = &mut self.nodes[node];
        let i = n.children.binary_search_by_key(&token, |c| c.token).unwrap();
        &mut n.children[i].stats
    }
}

/// Saliency-weighted average of the entries' policies, renormalised.
pub fn merge_priors<F: Scalar>(expansion: &ExpansionResult<F>, vocab_size: usize) -> Result<Vec<F>> {
    let mut merged = vec![F::zero(); vocab_size];
    let wsum: F = expansion.entries.iter().map(|e| e.saliency_weight).sum();
    let equal = F::one() / F::from_usize_lossy(expansion.entries.len());
    for e in &expansion.entries {
        if e.policy.len() != vocab_size {
            return Err(contract(format!("policy length {} != vocab_size {vocab_size}", e.policy.len())));
        }
        let w = if wsum > F::zero() { e.saliency_weight / wsum } else { equal };
        for (m, &p) in merged.iter_mut().zip(e.policy.probabilities()) {
            *m += w * p;
        }
    }
    let z: F = merged.iter().copied().sum();
    if z > F::zero() {
        for m in &mut merged {
            *m /= z;
        }
    }
    Ok(merged)
}
