//! The five analyses: `maxlevel`, `jointlaw`, `table1`, `validate`, `simulate`.

use std::collections::BTreeMap;

use ldqbd::oracle::Estimate;
use ldqbd::{
    algorithm_c, assemble_joint_law, build_sir_qbd, conditional_tau_mean, exact_augmented_law,
    simulate_extremes, validate_generator, CappedModel, Error, JointExtremeLaw, LawOptions, QbdModel,
    SirParams, SimulationOptions, StateCoord,
};

use crate::config::{default_table_config, AnalysisConfig, BuiltModel, RunSection};
use crate::report::{Cell, Table};
use crate::CliError;

/// Largest exact-oracle discrepancy accepted by `validate`.
pub const EXACT_TOLERANCE: f64 = 1e-8;
/// Largest simulation z-score accepted by `validate`.
pub const Z_LIMIT: f64 = 4.0;
/// Generator validation stops here for unbounded built-in models.
const VALIDATION_DEPTH_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    MaxLevel,
    JointLaw,
    Table1,
    Validate,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::MaxLevel => "maxlevel",
            Command::JointLaw => "jointlaw",
            Command::Table1 => "table1",
            Command::Validate => "validate",
            Command::Simulate => "simulate",
        }
    }
}

/// A command's table, plus the error that decides a nonzero exit status
/// when the table is still worth writing (diagnostics, disagreements).
#[derive(Debug)]
pub struct Report {
    pub table: Table,
    pub failure: Option<CliError>,
}

impl From<Table> for Report {
    fn from(table: Table) -> Self {
        Self { table, failure: None }
    }
}

pub fn run_command(command: Command, config: Option<&AnalysisConfig>) -> Result<Report, CliError> {
    let config = match (command, config) {
        (_, Some(c)) => c.clone(),
        (Command::Table1, None) => default_table_config(),
        (_, None) => return Err(CliError::Config(format!("`{}` needs --config", command.name()))),
    };
    config.check_run()?;
    if command == Command::Table1 {
        return table1(&config).map(Report::from);
    }
    let model = config.build_model()?;
    check_generator(&model, config.run.level_cap)?;
    let initial = config.initial_state(&model)?;
    let mut header = vec![
        format!("model: {}", model.describe()),
        format!("initial: {initial}"),
    ];
    let result = match command {
        Command::MaxLevel => maxlevel(&model, initial, &config.run),
        Command::JointLaw => jointlaw(&model, initial, &config.run),
        Command::Validate => validate(&model, initial, &config.run),
        Command::Simulate => simulate(&model, initial, &config.run).map(Report::from),
        Command::Table1 => unreachable!("handled above"),
    };
    match result {
        Ok(mut report) => {
            header.append(&mut report.table.notes);
            report.table.notes = header;
            Ok(report)
        }
        Err(CliError::Core(e @ Error::NonConvergence { .. })) => {
            let Error::NonConvergence { level, cdf } = e else { unreachable!() };
            let mut table = Table::new(["i", "cdf", "pmf"]);
            table.notes = header;
            table.note(format!("non-convergence: F_max({level}) = {cdf} < 1 - epsilon at the level cap"));
            Ok(Report {
                table,
                failure: Some(CliError::Core(e)),
            })
        }
        Err(e) => Err(e),
    }
}

fn check_generator(model: &BuiltModel, level_cap: usize) -> Result<(), CliError> {
    let depth = match model {
        BuiltModel::Generic(..) => model.validation_depth(level_cap),
        _ => model.validation_depth(level_cap).min(VALIDATION_DEPTH_LIMIT),
    };
    let violations = validate_generator(model.as_qbd(), depth.max(1))?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Generator(violations.iter().map(ToString::to_string).collect()))
    }
}

/// The model the analytic commands run on: the model itself, or its
/// restriction to `level_cap` when mass above the cap is lumped.
fn analysed<'a>(model: &'a BuiltModel, run: &RunSection) -> Box<dyn QbdModel + 'a> {
    if run.lump_at_cap {
        Box::new(CappedModel::new(model.as_qbd(), run.level_cap))
    } else {
        Box::new(model.as_qbd())
    }
}

fn closure_note(finite: bool, run: &RunSection) -> String {
    match (finite, run.lump_at_cap) {
        (true, true) => format!("closure: mass above level {} lumped into the cap", run.level_cap),
        (true, false) => "closure: finite model, F_max(N) = 1".into(),
        (false, _) => format!("closure: F_max >= 1 - {}", run.epsilon),
    }
}

fn maxlevel(model: &BuiltModel, initial: StateCoord, run: &RunSection) -> Result<Report, CliError> {
    let qbd = analysed(model, run);
    let dist = algorithm_c(&*qbd, initial, run.epsilon, run.level_cap)?;
    let mut table = Table::new(["i", "cdf", "pmf"]);
    table.note(closure_note(dist.is_finite_closure(), run));
    if let Some(n) = dist.quantile_level(run.quantile) {
        table.note(format!("n_{} = {n}", run.quantile));
    }
    for (i, cdf, pmf) in dist.rows() {
        table.push(vec![Cell::Int(i as u64), Cell::Num(cdf), Cell::Num(pmf)]);
    }
    Ok(table.into())
}

fn law_options(run: &RunSection) -> LawOptions {
    LawOptions {
        theta_grid: run.theta.clone(),
        max_moment: run.max_moment,
        epsilon: run.epsilon,
        level_cap: run.level_cap,
    }
}

fn theta_columns(prefix: &str, theta: &[f64]) -> Vec<String> {
    theta.iter().map(|t| format!("{prefix}@{t}")).collect()
}

fn jointlaw(model: &BuiltModel, initial: StateCoord, run: &RunSection) -> Result<Report, CliError> {
    let qbd = analysed(model, run);
    let law = assemble_joint_law(&*qbd, initial, &law_options(run))?;
    let mut columns = vec!["i".to_string(), "j".into(), "probability".into()];
    columns.extend(theta_columns("lst", &run.theta));
    columns.extend((1..=run.max_moment).map(|n| format!("moment{n}")));
    columns.push("cumulative".into());
    let mut table = Table::new(columns);
    table.note(closure_note(law.max_level().is_finite_closure(), run));
    if let Some(n) = law.max_level().quantile_level(run.quantile) {
        table.note(format!("n_{} = {n}", run.quantile));
    }
    if let Some(j) = phase_quantile(&law, run.quantile) {
        table.note(format!("j_{} = {j} (marginal window on J(tau_max))", run.quantile));
    }

    let coord = |at: StateCoord| vec![Cell::Int(at.level as u64), Cell::Int(at.phase as u64)];
    let mut origin = coord(initial);
    origin.push(Cell::Num(law.atom_at_origin));
    origin.extend(run.theta.iter().map(|_| Cell::Num(law.atom_at_origin)));
    origin.extend((0..run.max_moment).map(|_| Cell::Num(0.0)));
    origin.push(Cell::Num(law.atom_at_origin));
    table.push(origin);

    for level in initial.level + 1..=law.top_level() {
        let mut cumulative = 0.0;
        for e in law.level_entries(level).unwrap_or(&[]) {
            cumulative += e.probability;
            let mut row = coord(StateCoord::new(level, e.phase));
            row.push(Cell::Num(e.probability));
            row.extend(e.lst.iter().map(|&v| Cell::Num(v)));
            row.extend(e.moments.iter().map(|&v| Cell::Num(v)));
            row.push(Cell::Num(cumulative));
            table.push(row);
        }
    }
    Ok(table.into())
}

/// Smallest `j` with `P(J(τ_max) <= j) >= q`.
fn phase_quantile(law: &JointExtremeLaw, q: f64) -> Option<usize> {
    let mut by_phase: BTreeMap<usize, f64> = BTreeMap::new();
    *by_phase.entry(law.initial.phase).or_default() += law.atom_at_origin;
    for (at, e) in law.iter() {
        *by_phase.entry(at.phase).or_default() += e.probability;
    }
    let mut acc = 0.0;
    by_phase.into_iter().find_map(|(j, p)| {
        acc += p;
        (acc >= q).then_some(j)
    })
}

fn table1(config: &AnalysisConfig) -> Result<Table, CliError> {
    let section = config
        .sir_section()
        .ok_or_else(|| CliError::Config("table1 needs an sir model".into()))?;
    let run = &config.run;
    let mut table = Table::new(["r0", "i", "mean"]);
    table.note(format!(
        "E[tau_max | I_max = i] for sir with gamma={} from (I, S) = ({}, {})",
        section.gamma, section.infectious, section.susceptible
    ));
    let opts = LawOptions {
        theta_grid: vec![0.0],
        max_moment: 1,
        ..law_options(run)
    };
    for &r0 in &run.table_r0 {
        let params = SirParams::from_r0(r0, section.gamma, section.infectious, section.susceptible);
        let model = build_sir_qbd(params)?;
        let initial = match config.initial {
            Some(s) => StateCoord::new(s.level, s.phase),
            None => params.initial_state(),
        };
        let law = assemble_joint_law(&model, initial, &opts)?;
        for &i in &run.table_levels {
            let mean = conditional_tau_mean(&law, i)?;
            table.push(vec![Cell::Num(r0), Cell::Int(i as u64), Cell::Fixed(mean, 5)]);
        }
    }
    Ok(table)
}

fn simulation_options(run: &RunSection) -> SimulationOptions {
    SimulationOptions {
        replications: run.replications,
        theta_grid: run.theta.clone(),
        seed: run.seed,
        ..SimulationOptions::default()
    }
}

fn simulate(model: &BuiltModel, initial: StateCoord, run: &RunSection) -> Result<Table, CliError> {
    let capped = CappedModel::new(model.as_qbd(), run.level_cap);
    let stats = simulate_extremes(&capped, initial, &simulation_options(run))?;
    let mut columns: Vec<String> = [
        "i",
        "j",
        "hits",
        "probability",
        "probability_se",
        "moment1",
        "moment1_se",
        "moment2",
        "moment2_se",
    ]
    .map(String::from)
    .to_vec();
    columns.extend(theta_columns("lst", &run.theta));
    let mut table = Table::new(columns);
    table.note(format!(
        "replications: {}, seed: {}, trajectories capped at level {}",
        stats.replications,
        stats.seed,
        capped.cap()
    ));
    for (at, cell) in stats.cells() {
        let p = stats.probability(at);
        let m1 = stats.restricted_moment(at, 1);
        let m2 = stats.restricted_moment(at, 2);
        let mut row = vec![
            Cell::Int(at.level as u64),
            Cell::Int(at.phase as u64),
            Cell::Int(cell.hits),
            Cell::Num(p.value),
            Cell::Num(p.std_error),
            Cell::Num(m1.value),
            Cell::Num(m1.std_error),
            Cell::Num(m2.value),
            Cell::Num(m2.std_error),
        ];
        row.extend((0..run.theta.len()).map(|k| Cell::Num(stats.restricted_lst(at, k).value)));
        table.push(row);
    }
    Ok(table)
}

/// z-score of a simulated mean against its analytic value, with the
/// standard error taken from the larger of the sample variance and the
/// analytic variance `second - mean^2`. Rare cells with one or two hits
/// otherwise produce spurious z-scores.
fn reference_z(estimate: Estimate, mean: f64, second: f64, n: u64) -> f64 {
    let n = n as f64;
    let var = (estimate.std_error.powi(2) * n).max(second - mean * mean);
    Estimate {
        value: estimate.value,
        std_error: (var.max(0.0) / n).sqrt(),
    }
    .z_score(mean)
}

fn validate(model: &BuiltModel, initial: StateCoord, run: &RunSection) -> Result<Report, CliError> {
    let capped = CappedModel::new(model.as_qbd(), run.level_cap);
    let cap = capped.cap();
    // second moments and LSTs at 2θ give the analytic variances
    let width = run.theta.len();
    let mut theta_grid = run.theta.clone();
    theta_grid.extend(run.theta.iter().map(|t| 2.0 * t));
    let opts = LawOptions {
        theta_grid,
        max_moment: run.max_moment.max(2),
        level_cap: cap,
        ..law_options(run)
    };
    let law = assemble_joint_law(&capped, initial, &opts)?;
    let exact = match exact_augmented_law(&capped, initial, cap) {
        Ok(e) => Some(e),
        Err(Error::Resource(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let stats = simulate_extremes(&capped, initial, &simulation_options(run))?;
    let n = stats.replications;

    let mut columns: Vec<String> = [
        "i",
        "j",
        "probability",
        "exact_probability",
        "simulated_probability",
        "z_probability",
        "moment1",
        "exact_moment1",
        "simulated_moment1",
        "z_moment1",
        "max_z_lst",
    ]
    .map(String::from)
    .to_vec();
    if exact.is_none() {
        columns.retain(|c| !c.starts_with("exact_"));
    }
    let mut table = Table::new(columns);
    table.note(format!("levels capped at {cap}; {n} replications, seed {}", stats.seed));

    struct Analytic {
        probability: f64,
        moments: [f64; 2],
        lst: Vec<f64>,
    }
    let mut states: BTreeMap<StateCoord, Analytic> = BTreeMap::new();
    states.insert(
        initial,
        Analytic {
            probability: law.atom_at_origin,
            moments: [0.0; 2],
            lst: vec![law.atom_at_origin; 2 * width],
        },
    );
    for (at, e) in law.iter() {
        states.insert(
            at,
            Analytic {
                probability: e.probability,
                moments: [e.moments[0], e.moments[1]],
                lst: e.lst.clone(),
            },
        );
    }
    if let Some(ex) = &exact {
        for (at, _, _) in ex.iter() {
            states.entry(at).or_insert(Analytic {
                probability: 0.0,
                moments: [0.0; 2],
                lst: vec![0.0; 2 * width],
            });
        }
    }

    let (mut worst_exact, mut worst_z) = (0.0f64, 0.0f64);
    for (&at, a) in &states {
        let (p, m1) = (a.probability, a.moments[0]);
        let z_p = reference_z(stats.probability(at), p, p, n);
        let sim_m1 = stats.restricted_moment(at, 1);
        let z_m1 = reference_z(sim_m1, m1, a.moments[1], n);
        let z_lst = (0..width)
            .map(|k| reference_z(stats.restricted_lst(at, k), a.lst[k], a.lst[width + k], n))
            .fold(0.0, f64::max);
        worst_z = worst_z.max(z_p).max(z_m1).max(z_lst);

        let mut row = vec![Cell::Int(at.level as u64), Cell::Int(at.phase as u64), Cell::Num(p)];
        if let Some(ex) = &exact {
            let (ep, em) = (ex.probability(at), ex.moment(at, 1));
            worst_exact = worst_exact
                .max((p - ep).abs())
                .max((m1 - em).abs() / em.abs().max(1.0));
            row.push(Cell::Num(ep));
        }
        row.extend([Cell::Num(stats.probability(at).value), Cell::Num(z_p), Cell::Num(m1)]);
        if let Some(ex) = &exact {
            row.push(Cell::Num(ex.moment(at, 1)));
        }
        row.extend([Cell::Num(sim_m1.value), Cell::Num(z_m1), Cell::Num(z_lst)]);
        table.push(row);
    }

    let mut problems = Vec::new();
    match &exact {
        Some(_) => {
            table.note(format!("max exact discrepancy: {worst_exact:e} (tolerance {EXACT_TOLERANCE:e})"));
            if worst_exact > EXACT_TOLERANCE {
                problems.push(format!("exact discrepancy {worst_exact:e} > {EXACT_TOLERANCE:e}"));
            }
        }
        None => table.note("exact oracle skipped: augmented chain exceeds its resource limit"),
    }
    table.note(format!("max |z|: {worst_z:.3} (limit {Z_LIMIT})"));
    if worst_z > Z_LIMIT {
        problems.push(format!("|z| = {worst_z:.3} > {Z_LIMIT}"));
    }
    table.note(if problems.is_empty() { "verdict: agree".to_string() } else { "verdict: DISAGREE".to_string() });
    Ok(Report {
        table,
        failure: (!problems.is_empty()).then(|| CliError::Disagreement(problems.join("; "))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> AnalysisConfig {
        AnalysisConfig::parse(text).unwrap()
    }

    const BIRTH_DEATH: &str = r#"
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
        [run]
        epsilon = 1e-3
        level_cap = 2000
    "#;

    #[test]
    fn maxlevel_birth_death_closed_form() {
        let report = run_command(Command::MaxLevel, Some(&config(BIRTH_DEATH))).unwrap();
        assert!(report.failure.is_none());
        for row in &report.table.rows {
            let (Cell::Int(i), Cell::Num(pmf)) = (&row[0], &row[2]) else { panic!() };
            let i = *i as f64;
            assert!((pmf - 1.0 / (i * (i + 1.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn non_convergence_keeps_a_diagnostic() {
        let text = BIRTH_DEATH.replace("level_cap = 2000", "level_cap = 20");
        let report = run_command(Command::MaxLevel, Some(&config(&text))).unwrap();
        let failure = report.failure.expect("must fail");
        assert_eq!(failure.exit_code(), 5);
        assert!(report.table.notes.iter().any(|n| n.starts_with("non-convergence")));
    }

    #[test]
    fn jointlaw_rows_marginalize() {
        let text = "[model]\nkind = \"sir\"\nr0 = 3.8\ninfectious = 1\nsusceptible = 24\n[run]\ntheta = [0.0, 1.0]\n";
        let report = run_command(Command::JointLaw, Some(&config(text))).unwrap();
        let t = &report.table;
        assert_eq!(
            t.columns,
            ["i", "j", "probability", "lst@0", "lst@1", "moment1", "moment2", "cumulative"]
        );
        let total: f64 = t.rows.iter().map(|r| if let Cell::Num(p) = r[2] { p } else { 0.0 }).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn table1_defaults() {
        let t = run_command(Command::Table1, None).unwrap().table;
        assert_eq!(t.rows.len(), 10);
        assert_eq!(t.rows[0], vec![Cell::Num(1.5), Cell::Int(3), Cell::Fixed(t.rows[0][2].fixed(), 5)]);
        assert!((t.rows[0][2].fixed() - 0.84726).abs() < 5e-6);
    }

    #[test]
    fn table1_needs_sir() {
        let err = run_command(Command::Table1, Some(&config(BIRTH_DEATH))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn corrupted_generator_is_refused() {
        let text = BIRTH_DEATH.replace("down = [[1.0]]", "down = [[-1.0]]");
        let err = run_command(Command::Validate, Some(&config(&text))).unwrap_err();
        assert!(matches!(err, CliError::Generator(_)));
        assert_eq!(err.exit_code(), 2);
    }

    impl Cell {
        fn fixed(&self) -> f64 {
            match *self {
                Cell::Fixed(v, _) | Cell::Num(v) => v,
                _ => f64::NAN,
            }
        }
    }
}
