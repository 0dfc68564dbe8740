//! Stochastic SIS and SIR epidemics written as level-dependent QBDs, plus a
//! generic mapper from bivariate jump rates to QBD blocks.
//!
//! SIS (vertical and horizontal transmission): level `n = i + s` is the
//! population size and the phase is the number of infectious `i`. SIR with a
//! constant population `N`: level is `i` and the phase is `s`; the number of
//! recovered is `N - i - s`. Phases are ordered by ascending second
//! coordinate in both cases.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::extremes::JointExtremeLaw;
use crate::linalg::DenseMatrix;
use crate::model::{QbdModel, StateCoord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SisParams {
    /// Contact rate.
    pub beta: f64,
    pub beta_s: f64,
    pub beta_i: f64,
    pub delta_s: f64,
    pub delta_i: f64,
    /// Recovery rate.
    pub gamma: f64,
    /// Fraction of offspring of infectious parents born susceptible.
    pub p: f64,
}

impl SisParams {
    /// Parameters tied as `δ_S = β_S`, `β_S = 2β_I`, `δ_I = 2δ_S`, `p = 0.2`, `γ = 1`.
    pub fn tied(beta: f64, beta_i: f64) -> Self {
        let beta_s = 2.0 * beta_i;
        Self {
            beta,
            beta_s,
            beta_i,
            delta_s: beta_s,
            delta_i: 2.0 * beta_s,
            gamma: 1.0,
            p: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("beta", self.beta),
            ("beta_s", self.beta_s),
            ("beta_i", self.beta_i),
            ("delta_s", self.delta_s),
            ("delta_i", self.delta_i),
            ("gamma", self.gamma),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {}", self.p)));
        }
        Ok(())
    }
}

/// SIS competition process indexed by population size.
#[derive(Debug, Clone, Copy)]
pub struct SisModel {
    params: SisParams,
}

impl SisModel {
    pub fn params(&self) -> &SisParams {
        &self.params
    }
}

pub fn build_sis_population_qbd(params: SisParams) -> Result<SisModel> {
    params.validate()?;
    Ok(SisModel { params })
}

impl QbdModel for SisModel {
    fn phases(&self, level: usize) -> usize {
        level + 1
    }

    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        let p = &self.params;
        let n = level;
        if n == 0 || to_level + 1 < n || to_level > n + 1 {
            return Err(Error::Model(format!("block Q_{{{level},{to_level}}} is not defined")));
        }
        let mut b = DenseMatrix::zeros(n + 1, to_level + 1);
        for i in 0..=n {
            let s = (n - i) as f64;
            let inf = i as f64;
            if to_level + 1 == n {
                if s > 0.0 {
                    b[(i, i)] += p.delta_s * s;
                }
                if i > 0 {
                    b[(i, i - 1)] += p.delta_i * inf;
                }
            } else if to_level == n {
                if i < n {
                    b[(i, i + 1)] = p.beta * inf * s;
                }
                if i > 0 {
                    b[(i, i - 1)] = p.gamma * inf;
                }
                b[(i, i)] = -(p.beta * inf * s
                    + (p.delta_i + p.beta_i + p.gamma) * inf
                    + (p.delta_s + p.beta_s) * s);
            } else {
                b[(i, i + 1)] = (1.0 - p.p) * p.beta_i * inf;
                b[(i, i)] = p.p * p.beta_i * inf + p.beta_s * s;
            }
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirParams {
    pub beta: f64,
    pub gamma: f64,
    /// Initial number of infectious `N_I`.
    pub infectious: usize,
    /// Initial number of susceptible `N_S`.
    pub susceptible: usize,
}

impl SirParams {
    /// Contact rate from the basic reproductive number, `β = R0 γ`.
    pub fn from_r0(r0: f64, gamma: f64, infectious: usize, susceptible: usize) -> Self {
        Self {
            beta: r0 * gamma,
            gamma,
            infectious,
            susceptible,
        }
    }

    pub fn population(&self) -> usize {
        self.infectious + self.susceptible
    }

    pub fn r0(&self) -> f64 {
        self.beta / self.gamma
    }

    /// The initial state `(N_I, N_S)`.
    pub fn initial_state(&self) -> StateCoord {
        StateCoord::new(self.infectious, self.susceptible)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite() && self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta and gamma must be positive, got {} and {}",
                self.beta, self.gamma
            )));
        }
        if self.infectious == 0 {
            return Err(Error::InvalidArgument("at least one initial infectious is required".into()));
        }
        Ok(())
    }

    fn max_susceptible(&self, level: usize) -> usize {
        self.susceptible.min(self.population() - level)
    }
}

/// Finite SIR model indexed by the number of infectious.
#[derive(Debug, Clone, Copy)]
pub struct SirModel {
    params: SirParams,
}

impl SirModel {
    pub fn params(&self) -> &SirParams {
        &self.params
    }
}

pub fn build_sir_qbd(params: SirParams) -> Result<SirModel> {
    params.validate()?;
    Ok(SirModel { params })
}

impl QbdModel for SirModel {
    fn phases(&self, level: usize) -> usize {
        if level > self.params.population() {
            0
        } else {
            1 + self.params.max_susceptible(level)
        }
    }

    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        let p = &self.params;
        let n = p.population();
        let i = level;
        if i == 0 || i > n || to_level > n || to_level + 1 < i || to_level > i + 1 {
            return Err(Error::Model(format!("block Q_{{{level},{to_level}}} is not defined")));
        }
        let big_n = n as f64;
        let inf = i as f64;
        let mut b = DenseMatrix::zeros(self.phases(i), self.phases(to_level));
        for s in 0..self.phases(i) {
            let sus = s as f64;
            if to_level + 1 == i {
                b[(s, s)] = p.gamma * inf;
            } else if to_level == i {
                b[(s, s)] = -(p.beta * inf * sus / big_n + p.gamma * inf);
            } else if s > 0 {
                b[(s, s - 1)] = p.beta * inf * sus / big_n;
            }
        }
        Ok(b)
    }

    fn level_bound(&self) -> Option<usize> {
        Some(self.params.population())
    }
}

/// The six jumps of a bivariate competition process on `(i, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jump {
    /// `(i+1, s-1)`
    Infection,
    /// `(i+1, s)`
    InfectiousGain,
    /// `(i, s-1)`
    SusceptibleLoss,
    /// `(i, s+1)`
    SusceptibleGain,
    /// `(i-1, s)`
    InfectiousLoss,
    /// `(i-1, s+1)`
    Recovery,
}

impl Jump {
    pub const ALL: [Jump; 6] = [
        Jump::Infection,
        Jump::InfectiousGain,
        Jump::SusceptibleLoss,
        Jump::SusceptibleGain,
        Jump::InfectiousLoss,
        Jump::Recovery,
    ];

    pub fn delta(self) -> (i64, i64) {
        match self {
            Jump::Infection => (1, -1),
            Jump::InfectiousGain => (1, 0),
            Jump::SusceptibleLoss => (0, -1),
            Jump::SusceptibleGain => (0, 1),
            Jump::InfectiousLoss => (-1, 0),
            Jump::Recovery => (-1, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Jump::Infection => "(i+1, s-1)",
            Jump::InfectiousGain => "(i+1, s)",
            Jump::SusceptibleLoss => "(i, s-1)",
            Jump::SusceptibleGain => "(i, s+1)",
            Jump::InfectiousLoss => "(i-1, s)",
            Jump::Recovery => "(i-1, s+1)",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Jump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How `(i, s)` pairs are laid out as `(level, phase)`.
pub trait CoordinateMap: Send + Sync {
    fn phases(&self, level: usize) -> usize;
    fn pair(&self, at: StateCoord) -> (u64, u64);
    /// `None` when `(i, s)` is outside the state space.
    fn state(&self, i: u64, s: u64) -> Option<StateCoord>;
}

/// Level `n = i + s`, phase `i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PopulationLevels;

impl CoordinateMap for PopulationLevels {
    fn phases(&self, level: usize) -> usize {
        level + 1
    }
    fn pair(&self, at: StateCoord) -> (u64, u64) {
        (at.phase as u64, (at.level - at.phase) as u64)
    }
    fn state(&self, i: u64, s: u64) -> Option<StateCoord> {
        Some(StateCoord::new((i + s) as usize, i as usize))
    }
}

/// Level `i`, phase `s`, with `s <= min(N_S, N - i)`.
#[derive(Debug, Clone, Copy)]
pub struct InfectiousLevels {
    pub population: u64,
    pub max_susceptible: u64,
}

impl CoordinateMap for InfectiousLevels {
    fn phases(&self, level: usize) -> usize {
        match self.population.checked_sub(level as u64) {
            Some(room) => 1 + room.min(self.max_susceptible) as usize,
            None => 0,
        }
    }
    fn pair(&self, at: StateCoord) -> (u64, u64) {
        (at.level as u64, at.phase as u64)
    }
    fn state(&self, i: u64, s: u64) -> Option<StateCoord> {
        let at = StateCoord::new(i as usize, s as usize);
        (at.phase < self.phases(at.level)).then_some(at)
    }
}

pub type RateFn = Box<dyn Fn(u64, u64) -> f64 + Send + Sync>;

/// Jump rates of a bivariate process and the map onto QBD coordinates.
pub struct BivariateRateSpec {
    rates: [RateFn; 6],
    map: Box<dyn CoordinateMap>,
}

impl BivariateRateSpec {
    /// Starts with every rate equal to zero.
    pub fn new(map: impl CoordinateMap + 'static) -> Self {
        Self {
            rates: std::array::from_fn(|_| Box::new(|_, _| 0.0) as RateFn),
            map: Box::new(map),
        }
    }

    pub fn with_rate(mut self, jump: Jump, rate: impl Fn(u64, u64) -> f64 + Send + Sync + 'static) -> Self {
        self.rates[jump.index()] = Box::new(rate);
        self
    }

    pub fn rate(&self, jump: Jump, i: u64, s: u64) -> f64 {
        (self.rates[jump.index()])(i, s)
    }

    /// SIS rates on population levels.
    pub fn sis(p: SisParams) -> Self {
        Self::new(PopulationLevels)
            .with_rate(Jump::Infection, move |i, s| p.beta * i as f64 * s as f64)
            .with_rate(Jump::InfectiousGain, move |i, _| (1.0 - p.p) * p.beta_i * i as f64)
            .with_rate(Jump::SusceptibleLoss, move |_, s| p.delta_s * s as f64)
            .with_rate(Jump::SusceptibleGain, move |i, s| p.p * p.beta_i * i as f64 + p.beta_s * s as f64)
            .with_rate(Jump::InfectiousLoss, move |i, _| p.delta_i * i as f64)
            .with_rate(Jump::Recovery, move |i, _| p.gamma * i as f64)
    }

    /// SIR rates on infectious levels. Recovery moves `(i, s)` to `(i-1, s)`.
    pub fn sir(p: SirParams) -> Self {
        let n = p.population() as f64;
        Self::new(InfectiousLevels {
            population: p.population() as u64,
            max_susceptible: p.susceptible as u64,
        })
        .with_rate(Jump::Infection, move |i, s| p.beta * i as f64 * s as f64 / n)
        .with_rate(Jump::InfectiousLoss, move |i, _| p.gamma * i as f64)
    }
}

/// QBD model generated from a [`BivariateRateSpec`].
pub struct RateModel {
    spec: BivariateRateSpec,
    level_bound: Option<usize>,
}

pub fn build_from_rates(spec: BivariateRateSpec, level_bound: Option<usize>) -> Result<RateModel> {
    let model = RateModel { spec, level_bound };
    if let Some(n) = level_bound {
        for level in 1..=n {
            model.transitions(level)?;
        }
    }
    Ok(model)
}

impl RateModel {
    /// Positive-rate transitions out of every phase of `level`.
    fn transitions(&self, level: usize) -> Result<Vec<Vec<(StateCoord, f64)>>> {
        let map = &self.spec.map;
        (0..map.phases(level))
            .map(|phase| {
                let (i, s) = map.pair(StateCoord::new(level, phase));
                let mut out = Vec::new();
                for jump in Jump::ALL {
                    let rate = self.spec.rate(jump, i, s);
                    if rate == 0.0 {
                        continue;
                    }
                    let fail = |reason: String| Error::RateSpec {
                        jump: jump.name(),
                        first: i,
                        second: s,
                        reason,
                    };
                    if !(rate > 0.0 && rate.is_finite()) {
                        return Err(fail(format!("has invalid rate {rate}")));
                    }
                    let (di, ds) = jump.delta();
                    let target = i
                        .checked_add_signed(di)
                        .zip(s.checked_add_signed(ds))
                        .and_then(|(ti, ts)| map.state(ti, ts))
                        .ok_or_else(|| fail("leaves the state space".into()))?;
                    if target.level.abs_diff(level) > 1 {
                        return Err(fail(format!(
                            "changes the level by {}",
                            target.level as i64 - level as i64
                        )));
                    }
                    if self.level_bound.is_some_and(|n| target.level > n) {
                        return Err(fail("jumps above the level bound".into()));
                    }
                    out.push((target, rate));
                }
                Ok(out)
            })
            .collect()
    }
}

impl QbdModel for RateModel {
    fn phases(&self, level: usize) -> usize {
        self.spec.map.phases(level)
    }

    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        let beyond = self.level_bound.is_some_and(|n| to_level > n || level > n);
        if beyond || to_level + 1 < level || to_level > level + 1 {
            return Err(Error::Model(format!("block Q_{{{level},{to_level}}} is not defined")));
        }
        let mut b = DenseMatrix::zeros(self.phases(level), self.phases(to_level));
        for (phase, jumps) in self.transitions(level)?.into_iter().enumerate() {
            let mut total = 0.0;
            for (target, rate) in jumps {
                total += rate;
                if target.level == to_level {
                    b[(phase, target.phase)] += rate;
                }
            }
            if to_level == level {
                b[(phase, phase)] -= total;
            }
        }
        Ok(b)
    }

    fn level_bound(&self) -> Option<usize> {
        self.level_bound
    }
}

/// Joint law of `I_max` and the number recovered `R(τ_max)` for an SIR model.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredLaw {
    pub population: usize,
    /// `(i, r) -> P(I_max = i, R(τ_max) = r)`.
    pub joint: BTreeMap<(usize, usize), f64>,
    /// `P(I_max = i)`.
    pub marginal: BTreeMap<usize, f64>,
}

impl RecoveredLaw {
    /// `P(R(τ_max) = r | I_max = i)` for `r = 0..=N-i`.
    pub fn conditional(&self, level: usize) -> Result<Vec<f64>> {
        let mass = self.marginal.get(&level).copied().unwrap_or(0.0);
        if !(mass > 0.0) || level > self.population {
            return Err(Error::UndefinedConditional { level });
        }
        Ok((0..=self.population - level)
            .map(|r| self.joint.get(&(level, r)).copied().unwrap_or(0.0) / mass)
            .collect())
    }
}

/// Re-indexes a law computed on [`build_sir_qbd`] from `(i, s)` to `(i, r)`.
pub fn recovered_at_peak_law(law: &JointExtremeLaw, params: &SirParams) -> Result<RecoveredLaw> {
    let n = params.population();
    let recovered = |at: StateCoord| {
        n.checked_sub(at.level + at.phase).ok_or_else(|| {
            Error::InvalidArgument(format!("state {at} is not an SIR state for N = {n}"))
        })
    };
    let mut joint = BTreeMap::new();
    joint.insert((law.initial.level, recovered(law.initial)?), law.atom_at_origin);
    for (at, e) in law.iter() {
        *joint.entry((at.level, recovered(at)?)).or_insert(0.0) += e.probability;
    }
    let dist = law.max_level();
    let marginal = (law.initial.level..=dist.top_level())
        .map(|i| (i, dist.pmf(i).unwrap_or(0.0)))
        .collect();
    Ok(RecoveredLaw {
        population: n,
        joint,
        marginal,
    })
}
