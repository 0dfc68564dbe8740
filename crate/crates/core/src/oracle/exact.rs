//! Exact joint law of `(I_max, J(τ_max))` and restricted moments of `τ_max`
//! from first-step equations on the chain augmented with its running maximum.
//!
//! For each target `(i, j)` the augmented states are `(k, phase, m)`, `m` the
//! running maximum. Trajectories that climb above `i`, or first reach `i` in a
//! phase other than `j`, are killed; success is absorption in level 0 with
//! `m = i`. With `ρ = 1{m < i}` (time still counts towards `τ_max`):
//!
//! ```text
//! -Q u_0 = r,   -Q u_n = n ρ u_{n-1}
//! ```
//!
//! where `r` is the success rate out of each state.

use std::collections::{BTreeMap, HashMap, VecDeque};

use super::{level_rows, StateRow};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Lu};
use crate::model::{check_coord, CappedModel, QbdModel, StateCoord};

/// Largest `c(cap) · cap` accepted; the systems are solved densely.
pub const AUGMENTED_STATE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedChainLaw {
    pub initial: StateCoord,
    /// Level at which the model was capped.
    pub cap: usize,
    /// `(i, j) -> (P(I_max = i, J = j), [E[τ_max; ·], E[τ_max^2; ·]])`.
    entries: BTreeMap<StateCoord, (f64, [f64; 2])>,
}

impl AugmentedChainLaw {
    pub fn probability(&self, at: StateCoord) -> f64 {
        self.entries.get(&at).map_or(0.0, |e| e.0)
    }

    /// Restricted moment `E[τ_max^order; I_max = i, J = j]`, `order` 1 or 2.
    pub fn moment(&self, at: StateCoord, order: usize) -> f64 {
        assert!((1..=2).contains(&order), "moments of order 1 and 2 are stored");
        self.entries.get(&at).map_or(0.0, |e| e.1[order - 1])
    }

    pub fn level_probability(&self, level: usize) -> f64 {
        self.entries
            .range(StateCoord::new(level, 0)..StateCoord::new(level + 1, 0))
            .map(|(_, e)| e.0)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().map(|e| e.0).sum()
    }

    /// `((i, j), probability, [moment1, moment2])` in level-major order.
    pub fn iter(&self) -> impl Iterator<Item = (StateCoord, f64, [f64; 2])> + '_ {
        self.entries.iter().map(|(k, v)| (*k, v.0, v.1))
    }
}

/// Solves the augmented chain of `model` capped at level `cap`.
pub fn exact_augmented_law(
    model: &(impl QbdModel + ?Sized),
    initial: StateCoord,
    cap: usize,
) -> Result<AugmentedChainLaw> {
    if initial.level == 0 {
        return Err(Error::InvalidArgument("initial state lies in level 0".into()));
    }
    check_coord(model, initial)?;
    let capped = CappedModel::new(model, cap);
    let top = capped.cap();
    if top < initial.level {
        return Err(Error::InvalidArgument(format!(
            "cap {top} is below the initial level {}",
            initial.level
        )));
    }
    let states: usize = (1..=top).map(|k| capped.phases(k)).sum();
    if states.saturating_mul(top) > AUGMENTED_STATE_LIMIT {
        return Err(Error::Resource(format!(
            "augmented chain would have {states} x {top} states, above {AUGMENTED_STATE_LIMIT}"
        )));
    }
    let rows: Vec<Vec<StateRow>> = std::iter::once(Ok(Vec::new()))
        .chain((1..=top).map(|k| level_rows(&capped, k)))
        .collect::<Result<_>>()?;

    let mut entries = BTreeMap::new();
    for level in initial.level..=top {
        for phase in 0..capped.phases(level) {
            let target = StateCoord::new(level, phase);
            if level == initial.level && phase != initial.phase {
                entries.insert(target, (0.0, [0.0; 2]));
                continue;
            }
            entries.insert(target, solve_target(&rows, initial, target)?);
        }
    }
    Ok(AugmentedChainLaw {
        initial,
        cap: top,
        entries,
    })
}

/// Augmented state `(level, phase, running max)`.
type Node = (usize, usize, usize);

fn solve_target(rows: &[Vec<StateRow>], initial: StateCoord, target: StateCoord) -> Result<(f64, [f64; 2])> {
    let start: Node = (initial.level, initial.phase, initial.level);
    let mut index: HashMap<Node, usize> = HashMap::from([(start, 0)]);
    let mut nodes = vec![start];
    // (from, to, rate) among kept states; success rate per state
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    let mut success = vec![0.0];
    let mut queue = VecDeque::from([0usize]);
    while let Some(x) = queue.pop_front() {
        let (k, p, m) = nodes[x];
        for &(to, rate) in &rows[k][p].jumps {
            if to.level == 0 {
                if m == target.level {
                    success[x] += rate;
                }
                continue;
            }
            if to.level > target.level {
                continue;
            }
            let new_max = to.level > m;
            if new_max && to.level == target.level && to.phase != target.phase {
                continue;
            }
            let node = (to.level, to.phase, m.max(to.level));
            let y = *index.entry(node).or_insert_with(|| {
                nodes.push(node);
                success.push(0.0);
                queue.push_back(nodes.len() - 1);
                nodes.len() - 1
            });
            links.push((x, y, rate));
        }
    }

    let n = nodes.len();
    let mut a = DenseMatrix::zeros(n, n);
    for (x, &(k, p, _)) in nodes.iter().enumerate() {
        a[(x, x)] = rows[k][p].total;
    }
    for (x, y, rate) in links {
        a[(x, y)] -= rate;
    }
    let lu = Lu::factor(&a).map_err(|e| Error::Model(format!("augmented system for target {target}: {e}")))?;
    let reward: Vec<f64> = nodes
        .iter()
        .map(|&(_, _, m)| if m < target.level { 1.0 } else { 0.0 })
        .collect();
    let u0 = lu.solve_vec(&success);
    let weighted = |u: &[f64], scale: f64| -> Vec<f64> {
        u.iter().zip(&reward).map(|(v, r)| scale * v * r).collect()
    };
    let u1 = lu.solve_vec(&weighted(&u0, 1.0));
    let u2 = lu.solve_vec(&weighted(&u1, 2.0));
    Ok((u0[0], [u1[0], u2[0]]))
}
