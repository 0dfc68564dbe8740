//! Analysis configuration, read from a TOML file.
//!
//! ```toml
//! [model]
//! kind = "sir"            # sis | sir | generic
//! r0 = 1.5                # or `beta = ...`
//! gamma = 1.0
//! infectious = 1
//! susceptible = 24
//!
//! [initial]               # optional for sir: defaults to (infectious, susceptible)
//! level = 1
//! phase = 24
//!
//! [run]
//! epsilon = 1e-8
//! level_cap = 5000
//! lump_at_cap = false
//! theta = [0.0, 0.5, 1.0]
//! max_moment = 2
//! quantile = 0.95
//! replications = 100000
//! seed = 0
//!
//! [output]
//! path = "law.csv"
//! json = false
//! ```
//!
//! The README documents every key.

use std::path::{Path, PathBuf};

use ldqbd::{
    build_sir_qbd, build_sis_population_qbd, DenseMatrix, LevelBlocks, QbdModel, SirModel, SirParams,
    SisModel, SisParams, StateCoord, TabulatedQbd, DEFAULT_THETA_GRID,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub model: ModelSection,
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSection {
    Sis(SisSection),
    Sir(SirSection),
    Generic(GenericSection),
}

/// SIS rates; unset rates follow the tied parametrization
/// `β_S = 2β_I`, `δ_S = β_S`, `δ_I = 2δ_S`, `γ = 1`, `p = 0.2`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SisSection {
    pub beta: f64,
    pub beta_i: f64,
    pub beta_s: Option<f64>,
    pub delta_s: Option<f64>,
    pub delta_i: Option<f64>,
    pub gamma: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirSection {
    pub r0: Option<f64>,
    pub beta: Option<f64>,
    #[serde(default = "one")]
    pub gamma: f64,
    pub infectious: usize,
    pub susceptible: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSection {
    /// Number of phases of level 0.
    #[serde(default = "one_usize")]
    pub level0_phases: usize,
    #[serde(default)]
    pub repeat_last: bool,
    pub levels: Vec<GenericLevel>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericLevel {
    pub down: Vec<Vec<f64>>,
    pub local: Vec<Vec<f64>>,
    pub up: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub level: usize,
    pub phase: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub epsilon: f64,
    pub level_cap: usize,
    /// Lump all mass above `level_cap` into the cap level instead of
    /// requiring convergence below it.
    pub lump_at_cap: bool,
    pub theta: Vec<f64>,
    pub max_moment: usize,
    pub quantile: f64,
    pub replications: u64,
    pub seed: u64,
    /// Reproductive numbers and peak levels of the `table1` command.
    pub table_r0: Vec<f64>,
    pub table_levels: Vec<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            level_cap: 5000,
            lump_at_cap: false,
            theta: DEFAULT_THETA_GRID.to_vec(),
            max_moment: 2,
            quantile: 0.95,
            replications: 100_000,
            seed: 0,
            table_r0: vec![1.5, 3.8],
            table_levels: vec![3, 8, 13, 18, 23],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub json: bool,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

/// A model built from its configuration section.
pub enum BuiltModel {
    Sis(SisModel),
    Sir(SirModel),
    /// A tabulated model and the number of levels given explicitly.
    Generic(TabulatedQbd, usize),
}

impl BuiltModel {
    pub fn as_qbd(&self) -> &dyn QbdModel {
        match self {
            BuiltModel::Sis(m) => m,
            BuiltModel::Sir(m) => m,
            BuiltModel::Generic(m, _) => m,
        }
    }

    /// Highest level checked by generator validation.
    pub fn validation_depth(&self, level_cap: usize) -> usize {
        match self {
            // tabulated levels plus one repeated copy
            BuiltModel::Generic(m, levels) if m.level_bound().is_none() => level_cap.min(levels + 1),
            _ => self.as_qbd().level_bound().map_or(level_cap, |n| n.min(level_cap)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            BuiltModel::Sis(m) => {
                let p = m.params();
                format!(
                    "sis beta={} beta_s={} beta_i={} delta_s={} delta_i={} gamma={} p={}",
                    p.beta, p.beta_s, p.beta_i, p.delta_s, p.delta_i, p.gamma, p.p
                )
            }
            BuiltModel::Sir(m) => {
                let p = m.params();
                format!(
                    "sir beta={} gamma={} r0={} infectious={} susceptible={}",
                    p.beta,
                    p.gamma,
                    p.r0(),
                    p.infectious,
                    p.susceptible
                )
            }
            BuiltModel::Generic(m, _) => match m.level_bound() {
                Some(n) => format!("generic finite levels={n}"),
                None => "generic level-independent tail".to_string(),
            },
        }
    }
}

impl AnalysisConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.check_run()?;
        Ok(config)
    }

    /// Checks the `[run]` section; called again after command-line overrides.
    pub fn check_run(&self) -> Result<(), CliError> {
        let run = &self.run;
        if !(run.epsilon > 0.0 && run.epsilon < 1.0) {
            return Err(CliError::Config(format!("epsilon must lie in (0, 1), got {}", run.epsilon)));
        }
        if !(run.quantile > 0.0 && run.quantile <= 1.0) {
            return Err(CliError::Config(format!("quantile must lie in (0, 1], got {}", run.quantile)));
        }
        if run.level_cap == 0 {
            return Err(CliError::Config("level_cap must be positive".into()));
        }
        if let Some(t) = run.theta.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(CliError::Config(format!("theta values must be finite and >= 0, got {t}")));
        }
        if run.replications == 0 {
            return Err(CliError::Config("replications must be positive".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<BuiltModel, CliError> {
        let built = match &self.model {
            ModelSection::Sis(s) => {
                let tied = SisParams::tied(s.beta, s.beta_i);
                let params = SisParams {
                    beta_s: s.beta_s.unwrap_or(tied.beta_s),
                    delta_s: s.delta_s.unwrap_or(tied.delta_s),
                    delta_i: s.delta_i.unwrap_or(tied.delta_i),
                    gamma: s.gamma.unwrap_or(tied.gamma),
                    p: s.p.unwrap_or(tied.p),
                    ..tied
                };
                BuiltModel::Sis(build_sis_population_qbd(params)?)
            }
            ModelSection::Sir(s) => BuiltModel::Sir(build_sir_qbd(self.sir_params(s)?)?),
            ModelSection::Generic(g) => {
                let matrix = |rows: &Vec<Vec<f64>>| DenseMatrix::from_rows(rows);
                let levels = g
                    .levels
                    .iter()
                    .map(|l| {
                        Ok(LevelBlocks {
                            down: matrix(&l.down)?,
                            local: matrix(&l.local)?,
                            up: l.up.as_ref().map(matrix).transpose()?,
                        })
                    })
                    .collect::<ldqbd::Result<Vec<_>>>()?;
                let count = levels.len();
                BuiltModel::Generic(TabulatedQbd::new(g.level0_phases, levels, g.repeat_last)?, count)
            }
        };
        Ok(built)
    }

    fn sir_params(&self, s: &SirSection) -> Result<SirParams, CliError> {
        let beta = match (s.r0, s.beta) {
            (Some(r0), None) => r0 * s.gamma,
            (None, Some(beta)) => beta,
            _ => return Err(CliError::Config("sir model needs exactly one of `r0` and `beta`".into())),
        };
        Ok(SirParams {
            beta,
            gamma: s.gamma,
            infectious: s.infectious,
            susceptible: s.susceptible,
        })
    }

    /// SIR parameters for the `table1` command, or `None` for other kinds.
    pub fn sir_section(&self) -> Option<&SirSection> {
        match &self.model {
            ModelSection::Sir(s) => Some(s),
            _ => None,
        }
    }

    pub fn initial_state(&self, model: &BuiltModel) -> Result<StateCoord, CliError> {
        let at = match (self.initial, model) {
            (Some(s), _) => StateCoord::new(s.level, s.phase),
            (None, BuiltModel::Sir(m)) => m.params().initial_state(),
            (None, _) => return Err(CliError::Config("missing [initial] section".into())),
        };
        if at.level == 0 {
            return Err(CliError::Config("the initial state must not lie in level 0".into()));
        }
        ldqbd::model::check_coord(model.as_qbd(), at)?;
        Ok(at)
    }
}

/// Default configuration of the `table1` command: SIR with `(I(0), S(0)) = (1, 24)` and `γ = 1`.
pub fn default_table_config() -> AnalysisConfig {
    AnalysisConfig {
        model: ModelSection::Sir(SirSection {
            r0: Some(1.5),
            beta: None,
            gamma: 1.0,
            infectious: 1,
            susceptible: 24,
        }),
        initial: None,
        run: RunSection::default(),
        output: OutputSection::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sir_with_defaults() {
        let c = AnalysisConfig::parse(
            "[model]\nkind = \"sir\"\nr0 = 3.8\ninfectious = 1\nsusceptible = 24\n",
        )
        .unwrap();
        let m = c.build_model().unwrap();
        assert_eq!(c.initial_state(&m).unwrap(), StateCoord::new(1, 24));
        assert_eq!(c.run.level_cap, 5000);
        assert!(matches!(m, BuiltModel::Sir(ref s) if (s.params().beta - 3.8).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_sections() {
        for text in [
            "[model]\nkind = \"seir\"\n",
            "[model]\nkind = \"sir\"\nr0 = 1.5\nbeta = 1.5\ninfectious = 1\nsusceptible = 2\n",
            "[model]\nkind = \"sis\"\nbeta = 1\nbeta_i = 1\n[run]\nepsilon = 1.5\n",
            "[model]\nkind = \"sis\"\nbeta = 1\nbeta_i = 1\n[run]\nbogus = 1\n",
        ] {
            let r = AnalysisConfig::parse(text).and_then(|c| c.build_model().map(|_| ()));
            assert!(matches!(r, Err(CliError::Config(_))), "{text}: {r:?}");
        }
    }

    #[test]
    fn initial_state_is_checked() {
        let c = AnalysisConfig::parse(
            "[model]\nkind = \"sis\"\nbeta = 2.5\nbeta_i = 1.25\n[initial]\nlevel = 3\nphase = 4\n",
        )
        .unwrap();
        let m = c.build_model().unwrap();
        assert!(c.initial_state(&m).is_err());
        let zero = AnalysisConfig::parse(
            "[model]\nkind = \"sis\"\nbeta = 2.5\nbeta_i = 1.25\n[initial]\nlevel = 0\nphase = 0\n",
        )
        .unwrap();
        assert!(matches!(zero.initial_state(&m), Err(CliError::Config(_))));
    }

    #[test]
    fn generic_levels() {
        let c = AnalysisConfig::parse(
            r#"
            [model]
            kind = "generic"
            repeat_last = true
            [[model.levels]]
            down = [[1.0]]
            local = [[-2.0]]
            up = [[1.0]]
            [initial]
            level = 1
            phase = 0
            "#,
        )
        .unwrap();
        let m = c.build_model().unwrap();
        assert_eq!(m.as_qbd().block(7, 8).unwrap()[(0, 0)], 1.0);
        assert_eq!(m.validation_depth(5000), 2);
    }
}
