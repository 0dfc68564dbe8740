//! Level-dependent QBD model abstraction and generator checks.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// A state `(level, phase)` of the bivariate chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateCoord {
    pub level: usize,
    pub phase: usize,
}

impl StateCoord {
    pub const fn new(level: usize, phase: usize) -> Self {
        Self { level, phase }
    }
}

impl fmt::Display for StateCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.level, self.phase)
    }
}

/// A level-dependent quasi-birth-death generator, accessed block by block.
///
/// `block(i, i')` returns `Q_{i,i'}` for `i' ∈ {i-1, i, i+1}`, of shape
/// `phases(i) x phases(i')`. Level 0 is only ever used as an absorbing
/// target, so implementations need not provide `Q_{0,·}`.
pub trait QbdModel: Sync {
    /// Number of phases `1 + M_i` of level `i`.
    fn phases(&self, level: usize) -> usize;

    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix>;

    /// Highest level `N` of a finite model.
    fn level_bound(&self) -> Option<usize> {
        None
    }
}

impl<M: QbdModel + ?Sized> QbdModel for &M {
    fn phases(&self, level: usize) -> usize {
        (**self).phases(level)
    }
    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        (**self).block(level, to_level)
    }
    fn level_bound(&self) -> Option<usize> {
        (**self).level_bound()
    }
}

impl<M: QbdModel + ?Sized> QbdModel for Box<M>
where
    Box<M>: Sync,
{
    fn phases(&self, level: usize) -> usize {
        (**self).phases(level)
    }
    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        (**self).block(level, to_level)
    }
    fn level_bound(&self) -> Option<usize> {
        (**self).level_bound()
    }
}

/// Whether level `i` has an upper neighbour in the model.
pub fn has_level_above(model: &(impl QbdModel + ?Sized), level: usize) -> bool {
    model.level_bound().is_none_or(|n| level < n)
}

/// `Q_{1,0} 1`, the absorption rates from level 1 into level 0.
pub fn exit_rates(model: &(impl QbdModel + ?Sized)) -> Result<Vec<f64>> {
    Ok(model.block(1, 0)?.row_sums())
}

/// Checks that `s` is a valid state of `model`.
pub fn check_coord(model: &(impl QbdModel + ?Sized), s: StateCoord) -> Result<()> {
    let phases = model.phases(s.level);
    let beyond = model.level_bound().is_some_and(|n| s.level > n);
    if s.phase >= phases || beyond {
        return Err(Error::Coordinate {
            level: s.level,
            phase: s.phase,
            phases: if beyond { 0 } else { phases },
        });
    }
    Ok(())
}

/// Level-major index of `s` among the states of levels `base_level..=s.level`.
pub fn state_index(model: &(impl QbdModel + ?Sized), s: StateCoord, base_level: usize) -> Result<usize> {
    if base_level == 0 || base_level > s.level {
        return Err(Error::InvalidArgument(format!(
            "base level {base_level} must lie in 1..={}",
            s.level
        )));
    }
    check_coord(model, s)?;
    let below: usize = (base_level..s.level).map(|k| model.phases(k)).sum();
    Ok(below + s.phase)
}

/// One reason a generator fails validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum {
        level: usize,
        row: usize,
        sum: f64,
    },
    NegativeRate {
        level: usize,
        to_level: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    PositiveDiagonal {
        level: usize,
        row: usize,
        value: f64,
    },
    /// A state with no outgoing transitions: it can never reach level 0.
    AbsorbingState { level: usize, row: usize },
    Shape {
        level: usize,
        to_level: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { level, row, sum } => {
                write!(f, "row ({level}, {row}) sums to {sum:e}, not 0")
            }
            Violation::NegativeRate {
                level,
                to_level,
                row,
                col,
                value,
            } => write!(
                f,
                "negative rate {value:e} from ({level}, {row}) to ({to_level}, {col})"
            ),
            Violation::PositiveDiagonal { level, row, value } => {
                write!(f, "diagonal of ({level}, {row}) is positive: {value:e}")
            }
            Violation::AbsorbingState { level, row } => {
                write!(f, "state ({level}, {row}) has no outgoing transitions")
            }
            Violation::Shape {
                level,
                to_level,
                expected,
                found,
            } => write!(
                f,
                "block Q_{{{level},{to_level}}} has shape {found:?}, expected {expected:?}"
            ),
        }
    }
}

/// Relative row-sum tolerance of [`validate_generator`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Audits levels `1..=max_level` (clamped to the level bound): conservative
/// rows, sign pattern, block shapes and states without exits.
pub fn validate_generator(model: &(impl QbdModel + ?Sized), max_level: usize) -> Result<Vec<Violation>> {
    if max_level == 0 {
        return Err(Error::InvalidArgument("max_level must be at least 1".into()));
    }
    let top = model.level_bound().map_or(max_level, |n| n.min(max_level));
    let mut report = Vec::new();
    for level in 1..=top {
        let width = model.phases(level);
        let mut neighbours = vec![level - 1, level];
        if has_level_above(model, level) {
            neighbours.push(level + 1);
        }
        let mut blocks = Vec::with_capacity(3);
        let mut shapes_ok = true;
        for &to in &neighbours {
            let b = model.block(level, to).map_err(|e| {
                Error::Model(format!("cannot retrieve Q_{{{level},{to}}}: {e}"))
            })?;
            let expected = (width, model.phases(to));
            if b.shape() != expected {
                report.push(Violation::Shape {
                    level,
                    to_level: to,
                    expected,
                    found: b.shape(),
                });
                shapes_ok = false;
            }
            blocks.push((to, b));
        }
        if !shapes_ok {
            continue;
        }
        for row in 0..width {
            let mut sum = 0.0;
            let mut scale = 0.0f64;
            let mut outflow = 0.0;
            for (to, b) in &blocks {
                for (col, &v) in b.row(row).iter().enumerate() {
                    sum += v;
                    scale = scale.max(v.abs());
                    let diagonal = *to == level && col == row;
                    if diagonal {
                        if v > 0.0 {
                            report.push(Violation::PositiveDiagonal { level, row, value: v });
                        }
                    } else if v < 0.0 {
                        report.push(Violation::NegativeRate {
                            level,
                            to_level: *to,
                            row,
                            col,
                            value: v,
                        });
                    } else {
                        outflow += v;
                    }
                }
            }
            if sum.abs() > ROW_SUM_TOLERANCE * scale {
                report.push(Violation::RowSum { level, row, sum });
            }
            if outflow == 0.0 {
                report.push(Violation::AbsorbingState { level, row });
            }
        }
    }
    Ok(report)
}

/// Blocks of one level: `Q_{i,i-1}`, `Q_{i,i}` and, unless `i` is the top
/// of a finite model, `Q_{i,i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlocks {
    pub down: DenseMatrix,
    pub local: DenseMatrix,
    pub up: Option<DenseMatrix>,
}

/// A model whose blocks are stored explicitly for levels `1..=N`.
///
/// With `repeat_last` the blocks of level `N` are reused for every level
/// above it, giving an unbounded level-independent tail.
#[derive(Debug, Clone)]
pub struct TabulatedQbd {
    phases: Vec<usize>,
    levels: Vec<LevelBlocks>,
    repeat_last: bool,
}

impl TabulatedQbd {
    /// `level0_phases` is `1 + M_0`; `levels[k]` holds the blocks of level `k + 1`.
    pub fn new(level0_phases: usize, levels: Vec<LevelBlocks>, repeat_last: bool) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Model("at least one level is required".into()));
        }
        let mut phases = vec![level0_phases];
        phases.extend(levels.iter().map(|l| l.local.rows()));
        let n = levels.len();
        for (k, l) in levels.iter().enumerate() {
            let level = k + 1;
            let is_top = level == n;
            match (&l.up, is_top && !repeat_last) {
                (Some(_), true) => {
                    return Err(Error::Model(format!(
                        "level {level} is the top of a finite model but has an upward block"
                    )))
                }
                (None, false) => {
                    return Err(Error::Model(format!("level {level} is missing its upward block")))
                }
                _ => {}
            }
        }
        if repeat_last {
            let top = &levels[n - 1];
            let w = phases[n];
            if phases[n - 1] != w || top.up.as_ref().is_some_and(|u| u.shape() != (w, w)) {
                return Err(Error::Model(
                    "a repeated top level needs square blocks matching the level below".into(),
                ));
            }
        }
        Ok(Self {
            phases,
            levels,
            repeat_last,
        })
    }

    /// A finite model with dense random blocks, rates uniform in `(0.1, 2]`.
    ///
    /// Every state can jump to level 0 through a chain of positive rates, so
    /// absorption is certain.
    pub fn random(seed: u64, levels: usize, max_phases: usize) -> Self {
        assert!(levels >= 1 && max_phases >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases: Vec<usize> = (0..=levels).map(|_| rng.random_range(1..=max_phases)).collect();
        let rate = |rng: &mut ChaCha8Rng| 2.0 - rng.random_range(0.0..1.9);
        let mut out = Vec::with_capacity(levels);
        for level in 1..=levels {
            let w = phases[level];
            let fill = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
                let data = (0..rows * cols).map(|_| rate(rng)).collect();
                DenseMatrix::from_vec(rows, cols, data).expect("finite rates")
            };
            let down = fill(w, phases[level - 1], &mut rng);
            let mut local = fill(w, w, &mut rng);
            let up = (level < levels).then(|| fill(w, phases[level + 1], &mut rng));
            for r in 0..w {
                local[(r, r)] = 0.0;
                let total = down.row(r).iter().sum::<f64>()
                    + local.row(r).iter().sum::<f64>()
                    + up.as_ref().map_or(0.0, |u| u.row(r).iter().sum());
                local[(r, r)] = -total;
            }
            out.push(LevelBlocks { down, local, up });
        }
        Self::new(phases[0], out, false).expect("consistent random model")
    }

    fn level_blocks(&self, level: usize) -> Option<&LevelBlocks> {
        if level == 0 {
            return None;
        }
        let n = self.levels.len();
        if level <= n {
            Some(&self.levels[level - 1])
        } else if self.repeat_last {
            Some(&self.levels[n - 1])
        } else {
            None
        }
    }
}

impl QbdModel for TabulatedQbd {
    fn phases(&self, level: usize) -> usize {
        match self.phases.get(level) {
            Some(&p) => p,
            None if self.repeat_last => *self.phases.last().expect("non-empty"),
            None => 0,
        }
    }

    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        let blocks = self
            .level_blocks(level)
            .ok_or_else(|| Error::Model(format!("level {level} is not part of the model")))?;
        let b = if to_level + 1 == level {
            Some(&blocks.down)
        } else if to_level == level {
            Some(&blocks.local)
        } else if to_level == level + 1 {
            blocks.up.as_ref()
        } else {
            None
        };
        b.cloned()
            .ok_or_else(|| Error::Model(format!("block Q_{{{level},{to_level}}} is not defined")))
    }

    fn level_bound(&self) -> Option<usize> {
        (!self.repeat_last).then_some(self.levels.len())
    }
}

/// Single-phase birth-death process with constant rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthDeath {
    pub birth: f64,
    pub death: f64,
    pub level_bound: Option<usize>,
}

impl BirthDeath {
    pub fn new(birth: f64, death: f64) -> Self {
        Self {
            birth,
            death,
            level_bound: None,
        }
    }
}

impl QbdModel for BirthDeath {
    fn phases(&self, _level: usize) -> usize {
        1
    }

    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        let top = self.level_bound.is_some_and(|n| level == n);
        let v = if to_level + 1 == level {
            self.death
        } else if to_level == level {
            if top {
                -self.death
            } else {
                -(self.birth + self.death)
            }
        } else if to_level == level + 1 && !top {
            self.birth
        } else {
            return Err(Error::Model(format!("block Q_{{{level},{to_level}}} is not defined")));
        };
        DenseMatrix::from_vec(1, 1, vec![v])
    }

    fn level_bound(&self) -> Option<usize> {
        self.level_bound
    }
}

/// Restricts a model to levels `0..=cap`: upward jumps out of level `cap`
/// are removed and its diagonal is adjusted so rows stay conservative.
#[derive(Debug, Clone)]
pub struct CappedModel<M> {
    inner: M,
    cap: usize,
}

impl<M: QbdModel> CappedModel<M> {
    pub fn new(inner: M, cap: usize) -> Self {
        let cap = inner.level_bound().map_or(cap, |n| n.min(cap));
        Self { inner, cap }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: QbdModel> QbdModel for CappedModel<M> {
    fn phases(&self, level: usize) -> usize {
        if level > self.cap {
            0
        } else {
            self.inner.phases(level)
        }
    }

    fn block(&self, level: usize, to_level: usize) -> Result<DenseMatrix> {
        if level > self.cap || to_level > self.cap {
            return Err(Error::Model(format!(
                "block Q_{{{level},{to_level}}} lies above the cap {}",
                self.cap
            )));
        }
        let mut b = self.inner.block(level, to_level)?;
        if level == self.cap && to_level == level && has_level_above(&self.inner, level) {
            let up = self.inner.block(level, level + 1)?.row_sums();
            for (r, u) in up.into_iter().enumerate() {
                b[(r, r)] += u;
            }
        }
        Ok(b)
    }

    fn level_bound(&self) -> Option<usize> {
        Some(self.cap)
    }
}
