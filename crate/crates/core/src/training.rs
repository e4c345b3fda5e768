//! Turning planner traces into value-network training data.

use log::warn;

use crate::domain::WorldInstance;
use crate::planner::RunTrace;
use crate::scalar::Scalar;
use crate::value_net::{featurize, TrainingPair};

#[derive(Debug, Clone, PartialEq)]
pub struct CollectedData<F> {
    pub pairs: Vec<TrainingPair<F>>,
    /// Traces dropped for lacking a terminal reward or a known world.
    pub skipped: usize,
}

/// One pair per intermediate state of every trace, targeting that trace's
/// noiseless terminal total.
pub fn collect_training_data<'w, F, L>(traces: &[RunTrace<F>], world_for: L) -> CollectedData<F>
where
    F: Scalar,
    L: Fn(&str) -> Option<&'w WorldInstance<F>>,
{
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for trace in traces {
        let Some(reward) = trace.final_reward else {
            warn!("trace for world '{}' has no terminal reward; skipped", trace.world_id);
            skipped += 1;
            continue;
        };
        let Some(world) = world_for(&trace.world_id) else {
            warn!("no world named '{}' for trace; skipped", trace.world_id);
            skipped += 1;
            continue;
        };
        pairs.extend(
            trace
                .intermediate_states
                .iter()
                .map(|s| TrainingPair { features: featurize(s, world), target: reward.total }),
        );
    }
    CollectedData { pairs, skipped }
}
