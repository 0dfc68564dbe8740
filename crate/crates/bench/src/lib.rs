//! Workloads shared by the benchmarks.

use ldqbd::{build_sir_qbd, build_sis_population_qbd, CappedModel, SirModel, SirParams, SisModel, SisParams, StateCoord};

/// SIR with 25 individuals and one initial infective.
pub fn sir(r0: f64) -> (SirModel, StateCoord) {
    let params = SirParams::from_r0(r0, 1.0, 1, 24);
    (build_sir_qbd(params).expect("valid parameters"), params.initial_state())
}

/// SIS population model restricted to `cap` levels, started from 21 individuals.
pub fn sis(cap: usize) -> (CappedModel<SisModel>, StateCoord) {
    let model = build_sis_population_qbd(SisParams::tied(2.5, 1.25)).expect("valid parameters");
    (CappedModel::new(model, cap), StateCoord::new(21, 1))
}
