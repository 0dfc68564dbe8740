use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use ldqbd::extremes::{
    algorithm_a, algorithm_b, algorithm_c, assemble_joint_law, truncated_inverse, LawOptions, MomentTable,
};
use ldqbd::linalg::{DenseMatrix, Lu};
use ldqbd::model::{validate_generator, CappedModel, QbdModel, StateCoord, TabulatedQbd};
use ldqbd::oracle::{exact_augmented_law, simulate_extremes, SimulationOptions};

fn random_model() -> impl Strategy<Value = (TabulatedQbd, StateCoord)> {
    (any::<u64>(), 2usize..=6, 1usize..=3, any::<prop::sample::Index>()).prop_map(|(seed, levels, phases, pick)| {
        let model = TabulatedQbd::random(seed, levels, phases);
        let level = 1 + pick.index(levels);
        let phase = pick.index(model.phases(level));
        (model, StateCoord::new(level, phase))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_generators_validate((model, _) in random_model()) {
        prop_assert!(validate_generator(&model, 6).unwrap().is_empty());
    }

    #[test]
    fn joint_law_marginals_and_mass((model, initial) in random_model()) {
        let law = assemble_joint_law(&model, initial, &LawOptions::default()).unwrap();
        let dist = law.max_level();
        prop_assert!((law.total_mass() - 1.0).abs() < 1e-10);
        for i in initial.level + 1..=law.top_level() {
            let sum: f64 = law.level_entries(i).unwrap().iter().map(|e| e.probability).sum();
            prop_assert!((sum - dist.pmf(i).unwrap()).abs() < 1e-12);
        }
        for (_, e) in law.iter() {
            prop_assert!(e.probability >= -1e-15);
            prop_assert!(e.lst.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            // E[τ^2] >= E[τ]^2 / P on each restricted event
            if e.probability > 1e-12 {
                prop_assert!(e.moments[1] * e.probability >= e.moments[0].powi(2) * (1.0 - 1e-9));
            }
        }
    }

    #[test]
    fn augmented_chain_agrees((model, initial) in random_model()) {
        let top = model.level_bound().unwrap();
        let exact = exact_augmented_law(&model, initial, top).unwrap();
        let law = assemble_joint_law(&model, initial, &LawOptions { theta_grid: vec![0.0], ..LawOptions::default() }).unwrap();
        prop_assert!((exact.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!((exact.probability(initial) - law.atom_at_origin).abs() < 1e-10);
        for (at, e) in law.iter() {
            prop_assert!((exact.probability(at) - e.probability).abs() < 1e-10);
            prop_assert!((exact.moment(at, 1) - e.moments[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn phi_decreases_in_theta((model, _) in random_model(), t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
        let top = model.level_bound().unwrap();
        let target = StateCoord::new(top, 0);
        let (_, low) = algorithm_a(&model, target, t1).unwrap();
        let (_, high) = algorithm_a(&model, target, t1 + dt).unwrap();
        for k in 1..top {
            for (a, b) in low.phi(k).iter().zip(high.phi(k)) {
                prop_assert!(b <= &(a + 1e-15));
            }
        }
    }

    #[test]
    fn inverse_of_truncated_generator((model, _) in random_model()) {
        let top = model.level_bound().unwrap();
        let inv = truncated_inverse(&model, top).unwrap();
        prop_assert!(inv.inverse().min_entry() >= -1e-12);
        // the last level's block-row of -T(i) solved directly
        let n = inv.cardinality();
        let mut minus_t = DenseMatrix::zeros(n, n);
        let mut offsets = vec![0];
        for k in 1..=top {
            offsets.push(offsets[k - 1] + model.phases(k));
        }
        for k in 1..=top {
            for to in [k - 1, k, k + 1] {
                if to >= 1 && to <= top {
                    minus_t.set_block(offsets[k - 1], offsets[to - 1], &model.block(k, to).unwrap().scaled(-1.0));
                }
            }
        }
        let direct = Lu::factor(&minus_t).unwrap().inverse();
        prop_assert!(direct.max_abs_diff(inv.inverse()) < 1e-10 * direct.max_abs().max(1.0));
    }
}

#[test]
fn capping_preserves_lower_levels() {
    let model = TabulatedQbd::random(77, 8, 3);
    let initial = StateCoord::new(2, 1);
    let full = algorithm_c(&model, initial, 1e-9, 100).unwrap();
    let capped = algorithm_c(&CappedModel::new(&model, 5), initial, 1e-9, 100).unwrap();
    assert_eq!(capped.top_level(), 5);
    for i in 2..5 {
        assert_abs_diff_eq!(full.pmf(i).unwrap(), capped.pmf(i).unwrap(), epsilon = 1e-14);
    }
    assert_abs_diff_eq!(capped.pmf(5).unwrap(), 1.0 - full.cdf(4).unwrap(), epsilon = 1e-14);
}

#[test]
fn second_moment_chain() {
    let model = TabulatedQbd::random(5, 6, 3);
    let target = StateCoord::new(6, 0);
    let (cache, table) = algorithm_a(&model, target, 0.0).unwrap();
    let m1 = algorithm_b(&cache, &MomentTable::from_transform(&table).unwrap()).unwrap();
    let m2 = algorithm_b(&cache, &m1).unwrap();
    assert_eq!(m2.order, 2);
    for k in 1..6 {
        for p in 0..model.phases(k) {
            let at = StateCoord::new(k, p);
            let (phi, a, b) = (table.value(at), m1.value(at), m2.value(at));
            assert!(b * phi >= a * a * (1.0 - 1e-12));
        }
    }
}

#[test]
fn simulation_brackets_exact_law() {
    let model = TabulatedQbd::random(31, 4, 2);
    let initial = StateCoord::new(1, 0);
    let exact = exact_augmented_law(&model, initial, 4).unwrap();
    let opts = SimulationOptions {
        replications: 50_000,
        seed: 9,
        theta_grid: vec![0.0, 0.5],
        ..SimulationOptions::default()
    };
    let law = assemble_joint_law(&model, initial, &LawOptions { theta_grid: opts.theta_grid.clone(), ..LawOptions::default() }).unwrap();
    let stats = simulate_extremes(&model, initial, &opts).unwrap();
    for (at, p, m) in exact.iter() {
        let n = opts.replications as f64;
        let se = (p * (1.0 - p) / n).sqrt().max(1e-12);
        assert!((stats.probability(at).value - p).abs() < 4.5 * se, "{at}");
        if at.level > initial.level && p > 0.01 {
            let mean = stats.restricted_moment(at, 1);
            assert!(mean.z_score(m[0]) < 4.5, "{at}: {mean:?} vs {}", m[0]);
            let lst = stats.restricted_lst(at, 1);
            let psi = law.entry(at).unwrap().lst[1];
            assert!(lst.z_score(psi) < 4.5, "{at}: {lst:?} vs {psi}");
        }
    }
}
