//! Joint law of `(τ_max, I_max, J(τ_max))`.

use rayon::prelude::*;

use super::max_level::{algorithm_c, MaxLevelDistribution};
use super::taboo::ForwardStep;
use crate::error::{Error, Result};
use crate::model::{QbdModel, StateCoord};

/// LST arguments reported when none are given.
pub const DEFAULT_THETA_GRID: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq)]
pub struct LawOptions {
    pub theta_grid: Vec<f64>,
    /// Highest order of the restricted moments of `τ_max`.
    pub max_moment: usize,
    pub epsilon: f64,
    pub level_cap: usize,
}

impl Default for LawOptions {
    fn default() -> Self {
        Self {
            theta_grid: DEFAULT_THETA_GRID.to_vec(),
            max_moment: 2,
            epsilon: 1e-8,
            level_cap: 5000,
        }
    }
}

/// Restricted quantities on `{I_max = i, J(τ_max) = j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakEntry {
    pub phase: usize,
    pub probability: f64,
    /// `ψ(θ; i, j)` for each `θ` of the grid, in grid order.
    pub lst: Vec<f64>,
    /// `E[τ_max^n; I_max = i, J(τ_max) = j]` for `n = 1..=max_moment`.
    pub moments: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct JointExtremeLaw {
    pub initial: StateCoord,
    pub theta_grid: Vec<f64>,
    pub max_moment: usize,
    /// `P(I_max = i0)`, carried by the initial state with `τ_max = 0`.
    pub atom_at_origin: f64,
    /// Entries of level `initial.level + 1 + k` at index `k`.
    levels: Vec<Vec<PeakEntry>>,
    max_level: MaxLevelDistribution,
}

impl JointExtremeLaw {
    pub fn max_level(&self) -> &MaxLevelDistribution {
        &self.max_level
    }

    pub fn top_level(&self) -> usize {
        self.max_level.top_level()
    }

    /// Entries of level `i > i0`.
    pub fn level_entries(&self, level: usize) -> Option<&[PeakEntry]> {
        let k = level.checked_sub(self.initial.level + 1)?;
        self.levels.get(k).map(Vec::as_slice)
    }

    pub fn entry(&self, at: StateCoord) -> Option<&PeakEntry> {
        self.level_entries(at.level)?.get(at.phase)
    }

    /// All entries above the initial level in level-major order.
    pub fn iter(&self) -> impl Iterator<Item = (StateCoord, &PeakEntry)> + '_ {
        self.levels.iter().enumerate().flat_map(move |(k, entries)| {
            let level = self.initial.level + 1 + k;
            entries.iter().map(move |e| (StateCoord::new(level, e.phase), e))
        })
    }

    /// Origin atom plus every stored entry's probability.
    pub fn total_mass(&self) -> f64 {
        self.atom_at_origin + self.iter().map(|(_, e)| e.probability).sum::<f64>()
    }

    /// `P(I_max = i, J(τ_max) = j)` including the origin atom.
    pub fn probability(&self, at: StateCoord) -> f64 {
        if at == self.initial {
            self.atom_at_origin
        } else {
            self.entry(at).map_or(0.0, |e| e.probability)
        }
    }
}

/// Assembles the joint law from one pass of the maximum-level recursion and
/// sweeps of the taboo transforms.
///
/// Probabilities are `φ(0; i, j) P_{(i,j)}(i)` and LSTs `φ(θ; i, j) P_{(i,j)}(i)`,
/// where `P_{(i,j)}(i)` is read off the same incrementally grown inverse.
pub fn assemble_joint_law(
    model: &(impl QbdModel + ?Sized),
    initial: StateCoord,
    opts: &LawOptions,
) -> Result<JointExtremeLaw> {
    if let Some(bad) = opts.theta_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(format!("θ grid entries must be >= 0, got {bad}")));
    }
    let dist = algorithm_c(model, initial, opts.epsilon, opts.level_cap)?;
    let i0 = initial.level;
    let top = dist.top_level();
    let atom = dist.pmf(i0).expect("initial level is computed");
    if top == i0 {
        return Ok(JointExtremeLaw {
            initial,
            theta_grid: opts.theta_grid.clone(),
            max_moment: opts.max_moment,
            atom_at_origin: atom,
            levels: Vec::new(),
            max_level: dist,
        });
    }

    // Sweep 0 is always θ = 0 and carries the moments; grid points reuse it
    // or get their own.
    let mut thetas = vec![0.0];
    let grid_sweep: Vec<usize> = opts
        .theta_grid
        .iter()
        .map(|&t| {
            if t == 0.0 {
                0
            } else {
                thetas.push(t);
                thetas.len() - 1
            }
        })
        .collect();
    let reach: Vec<Vec<Vec<Vec<f64>>>> = thetas
        .par_iter()
        .enumerate()
        .map(|(s, &t)| {
            let order = if s == 0 { opts.max_moment } else { 0 };
            reach_rows(model, initial, t, top, order)
        })
        .collect::<Result<_>>()?;

    let levels = (i0 + 1..=top)
        .map(|i| {
            let k = i - i0 - 1;
            let at_zero = &reach[0][k];
            (0..model.phases(i))
                .map(|j| {
                    let stay = dist.stay_below(StateCoord::new(i, j)).expect("level computed");
                    PeakEntry {
                        phase: j,
                        probability: at_zero[0][j] * stay,
                        lst: grid_sweep.iter().map(|&s| reach[s][k][0][j] * stay).collect(),
                        moments: at_zero[1..].iter().map(|m| m[j] * stay).collect(),
                    }
                })
                .collect()
        })
        .collect();

    Ok(JointExtremeLaw {
        initial,
        theta_grid: opts.theta_grid.clone(),
        max_moment: opts.max_moment,
        atom_at_origin: atom,
        levels,
        max_level: dist,
    })
}

/// `(-d/dθ)^n φ_{(i0,j0)}(θ; i, ·)` for `n = 0..=order` and `i = i0+1..=top`,
/// entry `i - i0 - 1` of the result.
///
/// `φ(θ; i, ·) = e_{j0}^T H_{i0} ⋯ H_{i-1}`, so the derivatives of the row
/// follow from those of each factor by the Leibniz rule.
fn reach_rows(
    model: &(impl QbdModel + ?Sized),
    initial: StateCoord,
    theta: f64,
    top: usize,
    order: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let i0 = initial.level;
    let mut out = Vec::with_capacity(top - i0);
    let mut prev: Option<ForwardStep> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for k in 1..top {
        let mut step = ForwardStep::factor(model, theta, k, prev.as_ref())?;
        step.solve_passage(model, k, prev.as_ref(), order)?;
        if k == i0 {
            rows = step.passage.iter().map(|g| g.row(initial.phase).to_vec()).collect();
        } else if k > i0 {
            rows = (0..=order)
                .map(|n| {
                    let mut acc = vec![0.0; step.passage[0].cols()];
                    let mut binom = 1.0;
                    for m in 0..=n {
                        if m > 0 {
                            binom = binom * (n - m + 1) as f64 / m as f64;
                        }
                        for (a, v) in acc.iter_mut().zip(step.passage[n - m].vecmat(&rows[m])) {
                            *a += binom * v;
                        }
                    }
                    acc
                })
                .collect();
        }
        if k >= i0 {
            out.push(rows.clone());
        }
        prev = Some(step);
    }
    Ok(out)
}

/// `E[τ_max^n | I_max = i]`; zero for `i = i0` where `τ_max = 0`.
pub fn conditional_tau_moment(law: &JointExtremeLaw, level: usize, order: usize) -> Result<f64> {
    if order > law.max_moment {
        return Err(Error::InvalidArgument(format!(
            "moment of order {order} requested but the law stores up to {}",
            law.max_moment
        )));
    }
    if level == law.initial.level {
        return if law.atom_at_origin > 0.0 {
            Ok(if order == 0 { 1.0 } else { 0.0 })
        } else {
            Err(Error::UndefinedConditional { level })
        };
    }
    let entries = law
        .level_entries(level)
        .ok_or(Error::UndefinedConditional { level })?;
    let mass: f64 = entries.iter().map(|e| e.probability).sum();
    if !(mass > 0.0) {
        return Err(Error::UndefinedConditional { level });
    }
    let weighted: f64 = if order == 0 {
        mass
    } else {
        entries.iter().map(|e| e.moments[order - 1]).sum()
    };
    Ok(weighted / mass)
}

/// `E[τ_max | I_max = i]`.
pub fn conditional_tau_mean(law: &JointExtremeLaw, level: usize) -> Result<f64> {
    conditional_tau_moment(law, level, 1)
}

/// `E[J(τ_max)^n; I_max = i]` for `i > i0`.
pub fn phase_moment_on_max(law: &JointExtremeLaw, level: usize, order: u32) -> Result<f64> {
    if level <= law.initial.level || level > law.top_level() {
        return Err(Error::InvalidArgument(format!(
            "level {level} outside {}..={}",
            law.initial.level + 1,
            law.top_level()
        )));
    }
    let entries = law.level_entries(level).expect("level in range");
    Ok(entries
        .iter()
        .map(|e| (e.phase as f64).powi(order as i32) * e.probability)
        .sum())
}
