//! Gillespie simulation of `(τ_max, I_max, J(τ_max))`.
//!
//! Replication `r` draws from ChaCha8 seeded with `seed` on stream `r`, so
//! each trajectory is reproducible on its own. Replications run in fixed-size
//! chunks whose accumulators are merged in chunk order, which keeps the
//! floating-point sums identical for any thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{level_rows, StateRow};
use crate::error::{Error, Result};
use crate::extremes::DEFAULT_THETA_GRID;
use crate::model::{check_coord, QbdModel, StateCoord};

pub const DEFAULT_EVENT_BUDGET: u64 = 10_000_000;
const CHUNK: u64 = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub replications: u64,
    pub theta_grid: Vec<f64>,
    pub seed: u64,
    /// Jumps allowed per trajectory before it is declared runaway.
    pub event_budget: u64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            replications: 100_000,
            theta_grid: DEFAULT_THETA_GRID.to_vec(),
            seed: 0,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }
}

/// Sums over the replications that ended in one `(I_max, J(τ_max))` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub hits: u64,
    /// `Σ τ^n` for `n = 1..=4`.
    pub tau_powers: [f64; 4],
    /// `Σ e^{-θτ}` per grid point.
    pub lst: Vec<f64>,
    /// `Σ e^{-2θτ}` per grid point.
    pub lst_sq: Vec<f64>,
}

impl CellStats {
    fn new(grid: usize) -> Self {
        Self {
            hits: 0,
            tau_powers: [0.0; 4],
            lst: vec![0.0; grid],
            lst_sq: vec![0.0; grid],
        }
    }

    fn record(&mut self, tau: f64, grid: &[f64]) {
        self.hits += 1;
        let mut p = 1.0;
        for s in &mut self.tau_powers {
            p *= tau;
            *s += p;
        }
        for ((l, l2), theta) in self.lst.iter_mut().zip(&mut self.lst_sq).zip(grid) {
            let e = (-theta * tau).exp();
            *l += e;
            *l2 += e * e;
        }
    }

    fn merge(&mut self, other: &CellStats) {
        self.hits += other.hits;
        for (a, b) in self.tau_powers.iter_mut().zip(&other.tau_powers) {
            *a += b;
        }
        for (a, b) in self.lst.iter_mut().zip(&other.lst) {
            *a += b;
        }
        for (a, b) in self.lst_sq.iter_mut().zip(&other.lst_sq) {
            *a += b;
        }
    }
}

/// A Monte Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Sample mean of a per-replication quantity from its sum and sum of squares.
    fn from_sums(sum: f64, sum_sq: f64, count: u64) -> Self {
        let n = count as f64;
        let mean = sum / n;
        let var = if count > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }

    /// `|value - reference|` in units of the standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = (self.value - reference).abs();
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub replications: u64,
    pub seed: u64,
    pub theta_grid: Vec<f64>,
    pub absorbed_count: u64,
    cells: BTreeMap<StateCoord, CellStats>,
}

impl TrajectoryStats {
    pub fn cell(&self, at: StateCoord) -> Option<&CellStats> {
        self.cells.get(&at)
    }

    pub fn cells(&self) -> impl Iterator<Item = (StateCoord, &CellStats)> + '_ {
        self.cells.iter().map(|(k, v)| (*k, v))
    }

    fn level_cells(&self, level: usize) -> impl Iterator<Item = &CellStats> + '_ {
        self.cells
            .range(StateCoord::new(level, 0)..StateCoord::new(level + 1, 0))
            .map(|(_, c)| c)
    }

    fn hits(&self, at: StateCoord) -> u64 {
        self.cell(at).map_or(0, |c| c.hits)
    }

    /// `P(I_max = i, J(τ_max) = j)`.
    pub fn probability(&self, at: StateCoord) -> Estimate {
        let h = self.hits(at) as f64;
        Estimate::from_sums(h, h, self.replications)
    }

    /// `P(I_max = i)`.
    pub fn level_probability(&self, level: usize) -> Estimate {
        let h: u64 = self.level_cells(level).map(|c| c.hits).sum();
        Estimate::from_sums(h as f64, h as f64, self.replications)
    }

    /// `E[e^{-θτ_max}; I_max = i, J = j]` for grid point `k`.
    pub fn restricted_lst(&self, at: StateCoord, k: usize) -> Estimate {
        match self.cell(at) {
            Some(c) => Estimate::from_sums(c.lst[k], c.lst_sq[k], self.replications),
            None => Estimate::from_sums(0.0, 0.0, self.replications),
        }
    }

    /// `E[τ_max^order; I_max = i, J = j]`, `order` 1 or 2.
    pub fn restricted_moment(&self, at: StateCoord, order: usize) -> Estimate {
        assert!((1..=2).contains(&order), "moments of order 1 and 2 are tracked");
        match self.cell(at) {
            Some(c) => Estimate::from_sums(
                c.tau_powers[order - 1],
                c.tau_powers[2 * order - 1],
                self.replications,
            ),
            None => Estimate::from_sums(0.0, 0.0, self.replications),
        }
    }

    /// `E[τ_max | I_max = i]`; `None` if no replication ended there.
    pub fn conditional_tau_mean(&self, level: usize) -> Option<Estimate> {
        let (hits, sum, sum_sq) = self
            .level_cells(level)
            .fold((0u64, 0.0, 0.0), |(h, s, s2), c| {
                (h + c.hits, s + c.tau_powers[0], s2 + c.tau_powers[1])
            });
        (hits > 0).then(|| Estimate::from_sums(sum, sum_sq, hits))
    }
}

/// Lazily extended per-level transition rows.
struct RateCache<'m, M: ?Sized> {
    model: &'m M,
    levels: Vec<Option<Vec<StateRow>>>,
}

impl<'m, M: QbdModel + ?Sized> RateCache<'m, M> {
    fn new(model: &'m M) -> Self {
        Self {
            model,
            levels: Vec::new(),
        }
    }

    fn row(&mut self, at: StateCoord) -> Result<&StateRow> {
        if self.levels.len() <= at.level {
            self.levels.resize_with(at.level + 1, || None);
        }
        let slot = &mut self.levels[at.level];
        if slot.is_none() {
            *slot = Some(level_rows(self.model, at.level)?);
        }
        Ok(&slot.as_ref().expect("filled above")[at.phase])
    }
}

/// Simulates `opts.replications` trajectories from `initial` until level 0.
pub fn simulate_extremes(
    model: &(impl QbdModel + ?Sized),
    initial: StateCoord,
    opts: &SimulationOptions,
) -> Result<TrajectoryStats> {
    if opts.replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if initial.level == 0 {
        return Err(Error::InvalidArgument("initial state lies in level 0".into()));
    }
    if let Some(bad) = opts.theta_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(format!("θ grid entries must be >= 0, got {bad}")));
    }
    check_coord(model, initial)?;

    let chunks = opts.replications.div_ceil(CHUNK);
    let partials: Vec<BTreeMap<StateCoord, CellStats>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut cache = RateCache::new(model);
            let mut cells = BTreeMap::new();
            let end = ((c + 1) * CHUNK).min(opts.replications);
            for rep in c * CHUNK..end {
                let (peak, tau) = run_trajectory(&mut cache, initial, opts, rep)?;
                cells
                    .entry(peak)
                    .or_insert_with(|| CellStats::new(opts.theta_grid.len()))
                    .record(tau, &opts.theta_grid);
            }
            Ok(cells)
        })
        .collect::<Result<_>>()?;

    let mut cells: BTreeMap<StateCoord, CellStats> = BTreeMap::new();
    for part in &partials {
        for (at, c) in part {
            cells
                .entry(*at)
                .or_insert_with(|| CellStats::new(opts.theta_grid.len()))
                .merge(c);
        }
    }
    Ok(TrajectoryStats {
        replications: opts.replications,
        seed: opts.seed,
        theta_grid: opts.theta_grid.clone(),
        absorbed_count: cells.values().map(|c| c.hits).sum(),
        cells,
    })
}

/// One trajectory; returns `((I_max, J(τ_max)), τ_max)`.
fn run_trajectory<M: QbdModel + ?Sized>(
    cache: &mut RateCache<'_, M>,
    initial: StateCoord,
    opts: &SimulationOptions,
    replication: u64,
) -> Result<(StateCoord, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(replication);
    let mut at = initial;
    let mut peak = initial;
    let mut tau = 0.0;
    let mut time = 0.0;
    let mut events = 0u64;
    loop {
        if events == opts.event_budget {
            return Err(Error::RunawayTrajectory {
                replication,
                budget: opts.event_budget,
            });
        }
        events += 1;
        let row = cache.row(at)?;
        if !(row.total > 0.0) || row.jumps.is_empty() {
            return Err(Error::Model(format!("state {at} has no outgoing transitions")));
        }
        // (0, 1] keeps the logarithm finite
        let u: f64 = 1.0 - rng.random::<f64>();
        time += -u.ln() / row.total;
        let mut pick = rng.random::<f64>() * row.total;
        let mut next = row.jumps[row.jumps.len() - 1].0;
        for &(to, rate) in &row.jumps {
            if pick < rate {
                next = to;
                break;
            }
            pick -= rate;
        }
        at = next;
        if at.level == 0 {
            return Ok((peak, tau));
        }
        if at.level > peak.level {
            peak = at;
            tau = time;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::model::{BirthDeath, CappedModel, LevelBlocks, TabulatedQbd};

    fn opts(replications: u64, seed: u64) -> SimulationOptions {
        SimulationOptions {
            replications,
            seed,
            theta_grid: vec![0.0, 1.0],
            ..SimulationOptions::default()
        }
    }

    #[test]
    fn birth_death_level_two() {
        // The symmetric walk is null recurrent; a cap far above level 2 bounds
        // trajectory lengths without touching {I_max <= 2}.
        let m = CappedModel::new(BirthDeath::new(1.0, 1.0), 100);
        let stats = simulate_extremes(&m, StateCoord::new(1, 0), &opts(200_000, 7)).unwrap();
        assert_eq!(stats.absorbed_count, 200_000);
        let p2 = stats.level_probability(2);
        assert!(p2.z_score(1.0 / 6.0) < 4.0, "{p2:?}");
        let p1 = stats.probability(StateCoord::new(1, 0));
        assert!(p1.z_score(0.5) < 4.0, "{p1:?}");
        // τ_max = 0 on the atom
        assert_eq!(stats.cell(StateCoord::new(1, 0)).unwrap().tau_powers[0], 0.0);
    }

    #[test]
    fn no_upward_motion() {
        let m = TabulatedQbd::new(
            1,
            vec![LevelBlocks {
                down: DenseMatrix::from_rows(&[[1.0]]).unwrap(),
                local: DenseMatrix::from_rows(&[[-1.0]]).unwrap(),
                up: Some(DenseMatrix::from_rows(&[[0.0]]).unwrap()),
            }],
            true,
        )
        .unwrap();
        let stats = simulate_extremes(&m, StateCoord::new(3, 0), &opts(500, 1)).unwrap();
        assert_eq!(stats.hits(StateCoord::new(3, 0)), 500);
        assert_eq!(stats.cells().count(), 1);
    }

    #[test]
    fn reproducible_for_a_seed() {
        let m = TabulatedQbd::random(3, 5, 3);
        let a = simulate_extremes(&m, StateCoord::new(2, 1), &opts(3000, 11)).unwrap();
        let b = simulate_extremes(&m, StateCoord::new(2, 1), &opts(3000, 11)).unwrap();
        let c = simulate_extremes(&m, StateCoord::new(2, 1), &opts(3000, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let hits: u64 = a.cells().map(|(_, c)| c.hits).sum();
        assert_eq!(hits, a.absorbed_count);
    }

    #[test]
    fn runaway_trajectories_are_reported() {
        let m = BirthDeath::new(3.0, 1.0);
        let o = SimulationOptions {
            event_budget: 1000,
            ..opts(2000, 0)
        };
        assert!(matches!(
            simulate_extremes(&m, StateCoord::new(1, 0), &o),
            Err(Error::RunawayTrajectory { budget: 1000, .. })
        ));
    }

    #[test]
    fn argument_checks() {
        let m = BirthDeath::new(1.0, 1.0);
        assert!(simulate_extremes(&m, StateCoord::new(1, 0), &opts(0, 0)).is_err());
        assert!(simulate_extremes(&m, StateCoord::new(0, 0), &opts(1, 0)).is_err());
    }
}
