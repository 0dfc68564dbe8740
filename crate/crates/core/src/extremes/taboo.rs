//! Taboo Laplace-Stieltjes transforms of the first passage to a level and
//! their moments, by forward/backward block elimination.
//!
//! For a target state `(i, j)` the vectors `Φ_k(θ)` (k = 1..i-1) hold
//! `E[e^{-θτ_{l(i)}}; τ_{l(i)} < τ_{l(0)}, J(τ_{l(i)}) = j]` from each phase of
//! level `k`. The forward sweep
//!
//! ```text
//! H_1 = (θI - Q_{1,1})^{-1} Q_{1,2}
//! H_k = (θI - Q_{k,k} - Q_{k,k-1} H_{k-1})^{-1} Q_{k,k+1}
//! ```
//!
//! does not depend on the target, which is what lets one sweep serve every
//! target level and phase.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Lu};
use crate::model::{check_coord, QbdModel, StateCoord};

/// One level of the forward elimination: the factored resolvent
/// `K_k = θI - Q_{k,k} - Q_{k,k-1}H_{k-1}`, the block `Q_{k,k-1}`, and
/// `(-d/dθ)^n H_k` for `n = 0..=order`.
///
/// Differentiating `K_k H_k = Q_{k,k+1}` gives, with `G^{(n)} = (-d/dθ)^n H`,
///
/// ```text
/// K_k G_k^{(n)} = n G_k^{(n-1)} + Σ_{m=1..n} C(n,m) Q_{k,k-1} G_{k-1}^{(m)} G_k^{(n-m)}
/// ```
///
/// where every term is non-negative.
#[derive(Debug, Clone)]
pub(crate) struct ForwardStep {
    pub(crate) resolvent: Lu,
    pub(crate) down: DenseMatrix,
    pub(crate) passage: Vec<DenseMatrix>,
}

impl ForwardStep {
    /// Factors `K_k`; `prev` is the step of level `k - 1` (absent at `k = 1`).
    pub(crate) fn factor(
        model: &(impl QbdModel + ?Sized),
        theta: f64,
        level: usize,
        prev: Option<&ForwardStep>,
    ) -> Result<Self> {
        let mut resolvent = model.block(level, level)?.scaled(-1.0);
        resolvent.add_diagonal(theta);
        let down = model.block(level, level - 1)?;
        if let Some(prev) = prev {
            resolvent = resolvent.sub(&down.matmul(&prev.passage[0]));
        }
        Ok(Self {
            resolvent: Lu::factor(&resolvent)?,
            down,
            passage: Vec::new(),
        })
    }

    /// Fills `passage` with `G_k^{(0..=order)}`. `prev` must carry at least
    /// `order` derivatives.
    pub(crate) fn solve_passage(
        &mut self,
        model: &(impl QbdModel + ?Sized),
        level: usize,
        prev: Option<&ForwardStep>,
        order: usize,
    ) -> Result<()> {
        let up = model.block(level, level + 1)?;
        let mut g = vec![self.resolvent.solve(&up)];
        // Q_{k,k-1} G_{k-1}^{(m)}
        let lowered: Vec<DenseMatrix> = match prev {
            Some(prev) if order > 0 => (0..=order).map(|m| self.down.matmul(&prev.passage[m])).collect(),
            _ => Vec::new(),
        };
        for n in 1..=order {
            let mut rhs = g[n - 1].scaled(n as f64);
            let mut binom = 1.0;
            for m in 1..=n {
                binom = binom * (n - m + 1) as f64 / m as f64;
                if let Some(l) = lowered.get(m) {
                    rhs = rhs.add(&l.matmul(&g[n - m]).scaled(binom));
                }
            }
            g.push(self.resolvent.solve(&rhs));
        }
        self.passage = g;
        Ok(())
    }
}

/// Forward-sweep matrices `H_1..H_depth` at a fixed `θ`, together with the
/// LU factors of the resolvent blocks `K_k = θI - Q_{k,k} - Q_{k,k-1}H_{k-1}`.
#[derive(Debug, Clone)]
pub(crate) struct LevelSweep {
    pub(crate) theta: f64,
    pub(crate) h: Vec<DenseMatrix>,
    resolvents: Vec<Lu>,
    /// `down[k - 1] = Q_{k,k-1}`.
    down: Vec<DenseMatrix>,
}

impl LevelSweep {
    pub(crate) fn build(model: &(impl QbdModel + ?Sized), theta: f64, depth: usize) -> Result<Self> {
        let mut steps: Vec<ForwardStep> = Vec::with_capacity(depth);
        for k in 1..=depth {
            let mut step = ForwardStep::factor(model, theta, k, steps.last())?;
            step.solve_passage(model, k, steps.last(), 0)?;
            steps.push(step);
        }
        let mut sweep = Self {
            theta,
            h: Vec::with_capacity(depth),
            resolvents: Vec::with_capacity(depth),
            down: Vec::with_capacity(depth),
        };
        for step in steps {
            sweep.h.extend(step.passage);
            sweep.resolvents.push(step.resolvent);
            sweep.down.push(step.down);
        }
        Ok(sweep)
    }

    /// `H_k` for `k >= 1`.
    pub(crate) fn h(&self, level: usize) -> &DenseMatrix {
        &self.h[level - 1]
    }

    /// Backward sweep `Φ_k = H_k Φ_{k+1}` from `Φ_{top - 1} = last` down to
    /// level 1. Entry `k - 1` of the result is `Φ_k`.
    pub(crate) fn back_substitute(&self, top: usize, last: DenseMatrix) -> Vec<DenseMatrix> {
        let mut out = vec![last];
        for k in (1..top - 1).rev() {
            let next = self.h(k).matmul(out.last().expect("non-empty"));
            out.push(next);
        }
        out.reverse();
        out
    }

    /// One pass of the moment recursion: given `m^{(n-1)}_k` (k = 1..i-1,
    /// columns indexing target phases), returns `m^{(n)}_k`. Requires `θ = 0`.
    pub(crate) fn moment_step(&self, prev: &[DenseMatrix], order: usize) -> Vec<DenseMatrix> {
        debug_assert_eq!(self.theta, 0.0);
        let top = prev.len();
        let n = order as f64;
        let mut h: Vec<DenseMatrix> = Vec::with_capacity(top);
        for k in 1..=top {
            let mut rhs = prev[k - 1].scaled(n);
            if let Some(below) = h.last() {
                rhs = rhs.add(&self.down[k - 1].matmul(below));
            }
            h.push(self.resolvents[k - 1].solve(&rhs));
        }
        let mut m = vec![h.pop().expect("at least one level")];
        for k in (1..top).rev() {
            let next = self.h(k).matmul(m.last().expect("non-empty")).add(&h[k - 1]);
            m.push(next);
        }
        m.reverse();
        m
    }
}

/// Forward-sweep state for one target `(i, j)` and one `θ`.
#[derive(Debug, Clone)]
pub struct SweepCache {
    target: StateCoord,
    sweep: LevelSweep,
    selected: Vec<f64>,
}

impl SweepCache {
    pub fn target(&self) -> StateCoord {
        self.target
    }

    pub fn theta(&self) -> f64 {
        self.sweep.theta
    }

    /// `H_1, ..., H_{i-1}`; the last one is stored in full.
    pub fn h_matrices(&self) -> &[DenseMatrix] {
        &self.sweep.h
    }

    /// Column `j` of `H_{i-1}`, i.e. `Φ_{i-1}`.
    pub fn selected_column(&self) -> &[f64] {
        &self.selected
    }
}

/// `Φ_k(θ; i, j)` for `k = 1..i-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabooTransformTable {
    pub target: StateCoord,
    pub theta: f64,
    phi: Vec<Vec<f64>>,
}

impl TabooTransformTable {
    pub fn phi(&self, level: usize) -> &[f64] {
        &self.phi[level - 1]
    }

    pub fn value(&self, from: StateCoord) -> f64 {
        self.phi(from.level)[from.phase]
    }

    pub fn levels(&self) -> usize {
        self.phi.len()
    }
}

/// Restricted moments `m^{(n)}_k(i, j)` of `τ_{l(i)}`, `k = 1..i-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub target: StateCoord,
    pub order: usize,
    m: Vec<Vec<f64>>,
}

impl MomentTable {
    /// The order-0 table, which is `Φ` at `θ = 0`.
    pub fn from_transform(table: &TabooTransformTable) -> Result<Self> {
        if table.theta != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "order-0 moments need the transform at θ = 0, got θ = {}",
                table.theta
            )));
        }
        Ok(Self {
            target: table.target,
            order: 0,
            m: table.phi.clone(),
        })
    }

    pub fn moments(&self, level: usize) -> &[f64] {
        &self.m[level - 1]
    }

    pub fn value(&self, from: StateCoord) -> f64 {
        self.moments(from.level)[from.phase]
    }

    pub fn levels(&self) -> usize {
        self.m.len()
    }
}

fn check_target(model: &(impl QbdModel + ?Sized), target: StateCoord) -> Result<()> {
    if target.level < 2 {
        return Err(Error::InvalidArgument(format!(
            "target level must be at least 2, got {}",
            target.level
        )));
    }
    check_coord(model, target)
}

/// Taboo transforms `Φ_k(θ; i, j)` for the target `(i, j)`.
///
/// The forward recursion runs through `k = i - 1`, so the final factor is
/// `Q_{i-1,i}` and the result solves the boundary equation at level `i - 1`.
pub fn algorithm_a(
    model: &(impl QbdModel + ?Sized),
    target: StateCoord,
    theta: f64,
) -> Result<(SweepCache, TabooTransformTable)> {
    check_target(model, target)?;
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!("θ must be finite and >= 0, got {theta}")));
    }
    let i = target.level;
    let sweep = LevelSweep::build(model, theta, i - 1)?;
    let selected = sweep.h(i - 1).column(target.phase);
    let blocks = sweep.back_substitute(i, DenseMatrix::column_vector(&selected));
    let phi = blocks.into_iter().map(|b| b.as_slice().to_vec()).collect();
    Ok((
        SweepCache {
            target,
            sweep,
            selected,
        },
        TabooTransformTable { target, theta, phi },
    ))
}

/// Order-`n` restricted moments from the order-`n-1` table, reusing the
/// `θ = 0` sweep.
pub fn algorithm_b(cache: &SweepCache, prev: &MomentTable) -> Result<MomentTable> {
    if cache.theta() != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "moment recursion needs the sweep at θ = 0, got θ = {}",
            cache.theta()
        )));
    }
    if prev.target != cache.target {
        return Err(Error::InvalidArgument(format!(
            "moment table is for target {} but the sweep is for {}",
            prev.target, cache.target
        )));
    }
    if prev.m.len() != cache.target.level - 1 {
        return Err(Error::Dimension(format!(
            "moment table covers {} levels, expected {}",
            prev.m.len(),
            cache.target.level - 1
        )));
    }
    let order = prev.order + 1;
    let blocks: Vec<DenseMatrix> = prev.m.iter().map(|v| DenseMatrix::column_vector(v)).collect();
    let m = cache
        .sweep
        .moment_step(&blocks, order)
        .into_iter()
        .map(|b| b.as_slice().to_vec())
        .collect();
    Ok(MomentTable {
        target: prev.target,
        order,
        m,
    })
}

fn abs_matvec(a: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|r| a.row(r).iter().zip(x).map(|(p, q)| (p * q).abs()).sum())
        .collect()
}

fn fold_residual(worst: &mut f64, lhs: &[f64], rhs: &[f64], scale: &[f64]) {
    for ((l, r), s) in lhs.iter().zip(rhs).zip(scale) {
        *worst = worst.max((l - r).abs() / s.max(1.0));
    }
}

/// Largest scaled residual of the transform equations
/// `(θI - Q_{k,k})Φ_k = Q_{k,k-1}Φ_{k-1} + Q_{k,k+1}Φ_{k+1}` (with the
/// unit vector `e_j` in place of `Φ_i`). Each row's residual is divided by
/// `max(1, Σ|terms|)`.
pub fn transform_residual(model: &(impl QbdModel + ?Sized), table: &TabooTransformTable) -> Result<f64> {
    let i = table.target.level;
    let mut worst = 0.0f64;
    for k in 1..i {
        let mut a = model.block(k, k)?.scaled(-1.0);
        a.add_diagonal(table.theta);
        let phi = table.phi(k);
        let lhs = a.matvec(phi);
        let mut scale = abs_matvec(&a, phi);
        let mut rhs = vec![0.0; phi.len()];
        let add = |b: &DenseMatrix, x: &[f64], rhs: &mut Vec<f64>, scale: &mut Vec<f64>| {
            for ((r, s), (v, w)) in rhs
                .iter_mut()
                .zip(scale.iter_mut())
                .zip(b.matvec(x).into_iter().zip(abs_matvec(b, x)))
            {
                *r += v;
                *s += w;
            }
        };
        if k > 1 {
            add(&model.block(k, k - 1)?, table.phi(k - 1), &mut rhs, &mut scale);
        }
        let up = model.block(k, k + 1)?;
        if k + 1 < i {
            add(&up, table.phi(k + 1), &mut rhs, &mut scale);
        } else {
            let mut e = vec![0.0; up.cols()];
            e[table.target.phase] = 1.0;
            add(&up, &e, &mut rhs, &mut scale);
        }
        fold_residual(&mut worst, &lhs, &rhs, &scale);
    }
    Ok(worst)
}

/// Largest scaled residual of the moment equations
/// `-Q_{k,k} m^{(n)}_k = n m^{(n-1)}_k + Q_{k,k-1} m^{(n)}_{k-1} + Q_{k,k+1} m^{(n)}_{k+1}`,
/// where the upward term is absent at `k = i - 1`.
pub fn moment_residual(
    model: &(impl QbdModel + ?Sized),
    table: &MomentTable,
    prev: &MomentTable,
) -> Result<f64> {
    if table.order != prev.order + 1 || table.target != prev.target {
        return Err(Error::InvalidArgument("moment tables do not chain".into()));
    }
    let i = table.target.level;
    let n = table.order as f64;
    let mut worst = 0.0f64;
    for k in 1..i {
        let a = model.block(k, k)?.scaled(-1.0);
        let m = table.moments(k);
        let lhs = a.matvec(m);
        let mut scale = abs_matvec(&a, m);
        let mut rhs: Vec<f64> = prev.moments(k).iter().map(|x| n * x).collect();
        for (s, r) in scale.iter_mut().zip(&rhs) {
            *s += r.abs();
        }
        let mut terms = Vec::new();
        if k > 1 {
            terms.push((model.block(k, k - 1)?, table.moments(k - 1)));
        }
        if k + 1 < i {
            terms.push((model.block(k, k + 1)?, table.moments(k + 1)));
        }
        for (b, x) in terms {
            for ((r, s), (v, w)) in rhs
                .iter_mut()
                .zip(scale.iter_mut())
                .zip(b.matvec(x).into_iter().zip(abs_matvec(&b, x)))
            {
                *r += v;
                *s += w;
            }
        }
        fold_residual(&mut worst, &lhs, &rhs, &scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BirthDeath, TabulatedQbd};
    use approx::assert_abs_diff_eq;

    #[test]
    fn birth_death_first_passage_to_two() {
        let (lambda, mu) = (1.7, 0.6);
        let m = BirthDeath::new(lambda, mu);
        let (_, t0) = algorithm_a(&m, StateCoord::new(2, 0), 0.0).unwrap();
        assert_abs_diff_eq!(t0.phi(1)[0], lambda / (lambda + mu), epsilon = 1e-15);
        for theta in [0.3, 1.0, 7.5] {
            let (_, t) = algorithm_a(&m, StateCoord::new(2, 0), theta).unwrap();
            assert_abs_diff_eq!(t.phi(1)[0], lambda / (theta + lambda + mu), epsilon = 1e-15);
        }
    }

    #[test]
    fn birth_death_first_moment_closed_form() {
        let (lambda, mu) = (1.7, 0.6);
        let m = BirthDeath::new(lambda, mu);
        let (cache, t0) = algorithm_a(&m, StateCoord::new(2, 0), 0.0).unwrap();
        let m0 = MomentTable::from_transform(&t0).unwrap();
        let m1 = algorithm_b(&cache, &m0).unwrap();
        assert_abs_diff_eq!(m1.moments(1)[0], lambda / (lambda + mu).powi(2), epsilon = 1e-15);
        let m2 = algorithm_b(&cache, &m1).unwrap();
        // second derivative of λ/(θ+λ+μ) at 0
        assert_abs_diff_eq!(m2.moments(1)[0], 2.0 * lambda / (lambda + mu).powi(3), epsilon = 1e-15);
    }

    #[test]
    fn gambler_ruin_hitting_probabilities() {
        // λ = μ: P(hit i before 0 from k) = k / i
        let m = BirthDeath::new(1.0, 1.0);
        let (_, t) = algorithm_a(&m, StateCoord::new(7, 0), 0.0).unwrap();
        for k in 1..7 {
            assert_abs_diff_eq!(t.phi(k)[0], k as f64 / 7.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_order_propagates_zero() {
        let m = TabulatedQbd::random(4, 4, 3);
        let (cache, t) = algorithm_a(&m, StateCoord::new(4, 0), 0.0).unwrap();
        let zero = MomentTable {
            target: t.target,
            order: 0,
            m: t.phi.iter().map(|v| vec![0.0; v.len()]).collect(),
        };
        let m1 = algorithm_b(&cache, &zero).unwrap();
        assert!(m1.m.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn residuals_vanish_on_random_models() {
        for seed in 0..8 {
            let m = TabulatedQbd::random(seed, 5, 3);
            for j in 0..m.phases(5) {
                let target = StateCoord::new(5, j);
                for theta in [0.0, 0.5, 3.0] {
                    let (_, t) = algorithm_a(&m, target, theta).unwrap();
                    assert!(transform_residual(&m, &t).unwrap() < 1e-12);
                }
                let (cache, t) = algorithm_a(&m, target, 0.0).unwrap();
                let mut prev = MomentTable::from_transform(&t).unwrap();
                for _ in 0..3 {
                    let next = algorithm_b(&cache, &prev).unwrap();
                    assert!(moment_residual(&m, &next, &prev).unwrap() < 1e-12);
                    prev = next;
                }
            }
        }
    }

    #[test]
    fn transform_decreases_in_theta() {
        let m = TabulatedQbd::random(17, 4, 3);
        let target = StateCoord::new(4, 1.min(m.phases(4) - 1));
        let grid = [0.0, 0.1, 0.5, 1.0, 2.0, 10.0];
        let tables: Vec<_> = grid.iter().map(|&th| algorithm_a(&m, target, th).unwrap().1).collect();
        for w in tables.windows(2) {
            for k in 1..4 {
                for (a, b) in w[0].phi(k).iter().zip(w[1].phi(k)) {
                    assert!(a >= b && *b >= 0.0 && *a <= 1.0);
                }
            }
        }
    }

    #[test]
    fn hitting_probabilities_over_target_phases_are_substochastic() {
        let m = TabulatedQbd::random(23, 5, 3);
        for i in 2..=5 {
            let mut total = vec![vec![0.0; 3]; i - 1];
            for j in 0..m.phases(i) {
                let (_, t) = algorithm_a(&m, StateCoord::new(i, j), 0.0).unwrap();
                for k in 1..i {
                    for (acc, v) in total[k - 1].iter_mut().zip(t.phi(k)) {
                        *acc += v;
                    }
                }
            }
            assert!(total.iter().flatten().all(|&s| s <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn cauchy_schwarz_on_moments() {
        let m = TabulatedQbd::random(31, 5, 3);
        let target = StateCoord::new(5, 0);
        let (cache, t) = algorithm_a(&m, target, 0.0).unwrap();
        let m0 = MomentTable::from_transform(&t).unwrap();
        let m1 = algorithm_b(&cache, &m0).unwrap();
        let m2 = algorithm_b(&cache, &m1).unwrap();
        for k in 1..5 {
            for p in 0..m.phases(k) {
                let s = StateCoord::new(k, p);
                assert!(m1.value(s).powi(2) <= m0.value(s) * m2.value(s) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = BirthDeath::new(1.0, 1.0);
        assert!(algorithm_a(&m, StateCoord::new(1, 0), 0.0).is_err());
        assert!(algorithm_a(&m, StateCoord::new(3, 1), 0.0).is_err());
        assert!(algorithm_a(&m, StateCoord::new(3, 0), -1.0).is_err());
        let (cache, t) = algorithm_a(&m, StateCoord::new(3, 0), 0.5).unwrap();
        assert!(MomentTable::from_transform(&t).is_err());
        let (_, t0) = algorithm_a(&m, StateCoord::new(4, 0), 0.0).unwrap();
        let m0 = MomentTable::from_transform(&t0).unwrap();
        assert!(algorithm_b(&cache, &m0).is_err());
    }
}
