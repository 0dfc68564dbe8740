//! Independent checks on the extreme-value algorithms: a Gillespie simulator
//! and an exact solver over the chain augmented with its running maximum.
//! Neither uses the level-by-level elimination of [`crate::extremes`].

mod exact;
mod simulate;

pub use exact::{exact_augmented_law, AugmentedChainLaw, AUGMENTED_STATE_LIMIT};
pub use simulate::{
    simulate_extremes, CellStats, Estimate, SimulationOptions, TrajectoryStats,
    DEFAULT_EVENT_BUDGET,
};

use crate::error::{Error, Result};
use crate::model::{has_level_above, QbdModel, StateCoord};

/// Outgoing transitions of one state, read row-wise off the generator.
#[derive(Debug, Clone)]
pub(crate) struct StateRow {
    /// `-q_{x,x}`.
    pub(crate) total: f64,
    /// Off-diagonal positive rates, in level-then-phase order.
    pub(crate) jumps: Vec<(StateCoord, f64)>,
}

pub(crate) fn level_rows(model: &(impl QbdModel + ?Sized), level: usize) -> Result<Vec<StateRow>> {
    let mut targets = vec![level - 1, level];
    if has_level_above(model, level) {
        targets.push(level + 1);
    }
    let blocks = targets
        .iter()
        .map(|&to| model.block(level, to).map(|b| (to, b)))
        .collect::<Result<Vec<_>>>()?;
    (0..model.phases(level))
        .map(|phase| {
            let mut row = StateRow {
                total: 0.0,
                jumps: Vec::new(),
            };
            for (to, b) in &blocks {
                for (col, &rate) in b.row(phase).iter().enumerate() {
                    if *to == level && col == phase {
                        row.total = -rate;
                    } else if rate > 0.0 {
                        row.jumps.push((StateCoord::new(*to, col), rate));
                    } else if rate < 0.0 {
                        return Err(Error::Model(format!(
                            "negative rate {rate} from ({level}, {phase}) to ({to}, {col})"
                        )));
                    }
                }
            }
            Ok(row)
        })
        .collect()
}
