//! Exhaustive enumeration of terminal sequences on small worlds.
//!
//! This is the ground truth the planner is checked against. It shares the
//! transition rule and reward code with the planner and nothing else.

use std::collections::BTreeMap;
use std::io::Write;

use crate::domain::{append_token, PlannerConfig, SequenceState, TokenId, WorldInstance};
use crate::error::{PlanError, Result};
use crate::reward::{noiseless_reward, CoverageScorer, QualityScorer};
use crate::scalar::Scalar;

/// Largest `vocab_size^max_length` the oracle accepts.
pub const ORACLE_GUARD: u128 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<F> {
    pub best_sequence: SequenceState,
    pub optimal_value: F,
    /// Noiseless total per terminal sequence, in lexicographic token order.
    pub value_table: BTreeMap<Vec<TokenId>, F>,
}

/// `vocab_size^max_length`, saturating.
pub fn search_space_size(vocab_size: usize, max_length: usize) -> u128 {
    let mut size: u128 = 1;
    for _ in 0..max_length {
        size = size.saturating_mul(vocab_size as u128);
    }
    size
}

/// Closed-form number of terminal sequences: every length below the limit
/// ending in EOS, plus all full-length sequences without an earlier EOS.
pub fn terminal_sequence_count(vocab_size: usize, max_length: usize) -> u128 {
    if max_length == 0 || vocab_size == 0 {
        return 0;
    }
    let non_eos = (vocab_size - 1) as u128;
    let mut count = 0u128;
    let mut prefixes = 1u128;
    for _ in 1..max_length {
        count += prefixes;
        prefixes *= non_eos;
    }
    count + prefixes * vocab_size as u128
}

pub fn enumerate_optimal<F: Scalar>(world: &WorldInstance<F>, config: &PlannerConfig<F>) -> Result<OracleResult<F>> {
    enumerate_optimal_with(world, config, &CoverageScorer)
}

pub fn enumerate_optimal_with<F: Scalar, Q: QualityScorer<F> + ?Sized>(
    world: &WorldInstance<F>,
    config: &PlannerConfig<F>,
    scorer: &Q,
) -> Result<OracleResult<F>> {
    let size = search_space_size(world.vocab_size, world.max_length);
    if size > ORACLE_GUARD {
        return Err(PlanError::OracleGuard { size, limit: ORACLE_GUARD });
    }
    let quiet = world.noiseless();
    let mut table = BTreeMap::new();
    let mut stack = vec![SequenceState::empty()];
    while let Some(state) = stack.pop() {
        for t in 0..world.vocab_size {
            let next = append_token(&state, TokenId(t as u32), &quiet)?;
            if next.is_terminal() {
                let total = noiseless_reward(&next, &quiet, config, scorer)?.total;
                table.insert(next.tokens().to_vec(), total);
            } else {
                stack.push(next);
            }
        }
    }
    let mut best: Option<(&Vec<TokenId>, F)> = None;
    for (seq, &v) in &table {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((seq, v));
        }
    }
    let (seq, optimal_value) = best.expect("at least one terminal sequence");
    let best_sequence = SequenceState::from_tokens(seq, &quiet)?;
    Ok(OracleResult { best_sequence, optimal_value, value_table: table })
}

impl<F: Scalar> OracleResult<F> {
    /// `V* - value(final)`; the final sequence must be in the table.
    pub fn simple_regret(&self, final_state: &SequenceState) -> Result<F> {
        let v = self.value_table.get(final_state.tokens()).ok_or_else(|| {
            PlanError::Validation(format!("sequence {:?} is not a terminal sequence of this world", final_state.tokens()))
        })?;
        Ok((self.optimal_value - *v).max(F::zero()))
    }

    /// CSV with columns `tokens,total`; tokens are space separated.
    pub fn write_value_table_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "tokens,total")?;
        for (seq, v) in &self.value_table {
            let toks: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
            writeln!(out, "{},{}", toks.join(" "), v)?;
        }
        Ok(())
    }
}

/// Regret of a planner's final sequence against a fresh enumeration.
pub fn simple_regret<F: Scalar>(world: &WorldInstance<F>, config: &PlannerConfig<F>, final_state: &SequenceState) -> Result<F> {
    enumerate_optimal(world, config)?.simple_regret(final_state)
}
