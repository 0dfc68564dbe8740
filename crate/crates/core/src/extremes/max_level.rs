//! Distribution of the maximum level reached before absorption in level 0.

use std::cmp::Ordering;

use super::taboo::ForwardStep;
use crate::error::{Error, Result};
use crate::linalg::{extend_inverse, TruncatedGeneratorInverse};
use crate::model::{check_coord, exit_rates, QbdModel, StateCoord};

/// `F_max(i; i0, j0)` and the mass function of `I_max` for one initial state.
#[derive(Debug, Clone)]
pub struct MaxLevelDistribution {
    pub initial: StateCoord,
    pub epsilon: f64,
    cdf: Vec<f64>,
    pmf: Vec<f64>,
    /// `closure[i][j] = F_max(i; i, j)`: from `(i, j)`, level 0 is reached
    /// before level `i + 1`.
    closure: Vec<Vec<f64>>,
    finite_closure: bool,
}

impl MaxLevelDistribution {
    /// Highest level for which the distribution was computed.
    pub fn top_level(&self) -> usize {
        self.cdf.len() - 1
    }

    /// `true` when the last level was closed off at the bound of a finite model.
    pub fn is_finite_closure(&self) -> bool {
        self.finite_closure
    }

    /// `F_max(i; i0, j0)`; `None` above the computed range.
    pub fn cdf(&self, level: usize) -> Option<f64> {
        self.cdf.get(level).copied()
    }

    /// `P(I_max = i)`; zero below the initial level, `None` above the computed range.
    pub fn pmf(&self, level: usize) -> Option<f64> {
        self.pmf.get(level).copied()
    }

    /// `(level, cdf, pmf)` for levels from the initial level up to the top.
    pub fn rows(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (self.initial.level..=self.top_level()).map(|i| (i, self.cdf[i], self.pmf[i]))
    }

    /// Probability mass accounted for, `F_max(top)`.
    pub fn total_mass(&self) -> f64 {
        self.cdf[self.top_level()]
    }

    /// `P_{(i,j)}(i) = F_max(i; i, j)`.
    pub fn stay_below(&self, at: StateCoord) -> Option<f64> {
        self.closure.get(at.level)?.get(at.phase).copied()
    }

    /// Smallest level `n` with `F_max(n) >= q`.
    pub fn quantile_level(&self, q: f64) -> Option<usize> {
        self.rows().find(|&(_, cdf, _)| cdf >= q).map(|(i, _, _)| i)
    }
}

/// Computes the distribution of `I_max` one level at a time until
/// `F_max(i) >= 1 - epsilon`.
///
/// Level `k` contributes `P(I_max = k) = φ(0; k, ·) · P_{(k,·)}(k)`: the
/// probability of first entering level `k` in each phase, times the
/// probability of then returning to 0 without climbing further. Both come out
/// of the forward elimination, so memory stays at a few blocks of the current
/// level, with
///
/// ```text
/// K_k P_{(k,·)}(k) = Q_{k,k-1} P_{(k-1,·)}(k-1),    K_1 P_{(1,·)}(1) = Q_{1,0} 1.
/// ```
///
/// For a finite model whose bound `N` does not exceed `level_cap`, levels are
/// built up to `N - 1` and `F_max(N) = 1` closes the distribution.
pub fn algorithm_c(
    model: &(impl QbdModel + ?Sized),
    initial: StateCoord,
    epsilon: f64,
    level_cap: usize,
) -> Result<MaxLevelDistribution> {
    if initial.level == 0 {
        return Err(Error::InvalidArgument("initial state lies in level 0".into()));
    }
    check_coord(model, initial)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if level_cap < initial.level {
        return Err(Error::InvalidArgument(format!(
            "level cap {level_cap} is below the initial level {}",
            initial.level
        )));
    }
    let finite = model.level_bound().filter(|&n| n <= level_cap);
    let (i0, j0) = (initial.level, initial.phase);

    let mut cdf = vec![0.0];
    let mut pmf = vec![0.0];
    let mut closure: Vec<Vec<f64>> = vec![Vec::new()];
    let mut prev: Option<ForwardStep> = None;
    // φ(0; k, ·) from the initial state once k > i0
    let mut reach: Vec<f64> = Vec::new();
    let mut k = 1;
    loop {
        if finite == Some(k) {
            let mass = if k == i0 { 1.0 } else { 1.0 - cdf[k - 1] };
            cdf.push(1.0);
            pmf.push(mass);
            closure.push(vec![1.0; model.phases(k)]);
            break;
        }
        let mut step = ForwardStep::factor(model, 0.0, k, prev.as_ref())?;
        let rhs = if k == 1 {
            exit_rates(model)?
        } else {
            step.down.matvec(&closure[k - 1])
        };
        let back = step.resolvent.solve_vec(&rhs);
        let mass = match k.cmp(&i0) {
            Ordering::Less => 0.0,
            Ordering::Equal => back[j0],
            Ordering::Greater => reach.iter().zip(&back).map(|(a, b)| a * b).sum(),
        };
        let total = cdf[k - 1] + mass;
        cdf.push(total);
        pmf.push(mass);
        closure.push(back);
        if finite.is_none() && k >= i0 && total >= 1.0 - epsilon {
            break;
        }
        if k >= level_cap {
            return Err(Error::NonConvergence { level: k, cdf: total });
        }
        step.solve_passage(model, k, prev.as_ref(), 0)?;
        let h = &step.passage[0];
        match k.cmp(&i0) {
            Ordering::Less => {}
            Ordering::Equal => reach = h.row(j0).to_vec(),
            Ordering::Greater => reach = h.vecmat(&reach),
        }
        prev = Some(step);
        k += 1;
    }

    Ok(MaxLevelDistribution {
        initial,
        epsilon,
        cdf,
        pmf,
        closure,
        finite_closure: finite.is_some(),
    })
}

/// Builds `-T^{-1}(top_level)` level by level with [`extend_inverse`].
///
/// Memory is `O(c(i)^2)`; meant for validation on small truncations.
pub fn truncated_inverse(
    model: &(impl QbdModel + ?Sized),
    top_level: usize,
) -> Result<TruncatedGeneratorInverse> {
    if top_level == 0 {
        return Err(Error::InvalidArgument("top level must be at least 1".into()));
    }
    let mut inverse = TruncatedGeneratorInverse::first_level(&model.block(1, 1)?)?;
    for i in 1..top_level {
        inverse = extend_inverse(
            &inverse,
            &model.block(i, i + 1)?,
            &model.block(i + 1, i)?,
            &model.block(i + 1, i + 1)?,
        )?;
    }
    Ok(inverse)
}

/// `F_max(top; i0, j0)` read off `-T^{-1}(top) t_0(top)`.
pub fn cdf_from_inverse(
    model: &(impl QbdModel + ?Sized),
    inverse: &TruncatedGeneratorInverse,
    initial: StateCoord,
) -> Result<f64> {
    let idx = inverse
        .index_of(initial.level, initial.phase)
        .ok_or_else(|| Error::InvalidArgument(format!("{initial} is outside the truncation")))?;
    Ok(inverse.absorption_probabilities(&exit_rates(model)?)[idx])
}
