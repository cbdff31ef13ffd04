//! Solver checks against independent closed forms and structural oracles.

use embsplit::estgen::{
    assemble_system, count_conditions, full_product, prefix_products, solve_weights, verify_order,
    EstgenError, Pin, SchemeSpec, SymPair, WeightSystem,
};
use embsplit::opalg::{Family, Word};
use embsplit::schemes::{catalog, find_method, palindromic};
use nalgebra::{DMatrix, DVector};

#[test]
fn condition_counts_by_grade() {
    let expected: [(Family, [usize; 6]); 3] = [
        (Family::SS, [1, 2, 4, 7, 12, 20]),
        (Family::MethodAdjoint, [1, 3, 7, 15, 31, 63]),
        (Family::Splitting, [2, 6, 14, 30, 62, 126]),
    ];
    for (family, counts) in expected {
        for (i, want) in counts.into_iter().enumerate() {
            let l = i as u32 + 1;
            assert_eq!(
                count_conditions(family, l).unwrap(),
                want,
                "family {family}, grade {l}"
            );
        }
    }
}

/// The five Suzuki weights admit a closed form obtained by eliminating the
/// two grade-2 conditions of the symmetric template by hand: with the prefix
/// time fractions g_1 = α_1 and g_2 = α_1 + α_2,
/// w_1 = g_2(1−g_2) / (g_1(g_1−1) − g_2(g_2−1)), w_2 = 1 − w_1, w_0 = −1.
#[test]
fn suzuki_weights_match_closed_form() {
    let ss5 = find_method("SS5").unwrap();
    let w = &ss5.estimators[0].w;

    let a1 = 1.0 / (4.0 - 4f64.powf(1.0 / 3.0));
    let g1 = a1;
    let g2 = 2.0 * a1;
    let w1 = g2 * (1.0 - g2) / (g1 * (g1 - 1.0) - g2 * (g2 - 1.0));
    let w2 = 1.0 - w1;

    assert!((w[0] + 1.0).abs() < 1e-12);
    assert!((w[1] - w1).abs() < 1e-12);
    assert!((w[2] - w2).abs() < 1e-12);
    assert!((w[3] - w2).abs() < 1e-12);
    assert!((w[4] - w1).abs() < 1e-12);
}

/// The McLachlan system keeps one free direction; eliminating the grade-2
/// conditions with w_3 as the parameter gives, with g_i the prefix sums and
/// D = g_1(g_1−1) − g_2(g_2−1):
/// w_1 = [g_2(1−g_2) + w_3(g_2(g_2−1) − g_3(g_3−1))] / D,
/// w_2 = [g_1(g_1−1) − w_3(g_1(g_1−1) − g_3(g_3−1))] / D.
/// Whatever w_3 the minimal-norm rule selects, the solution must lie on that
/// line.
#[test]
fn mclachlan_weights_lie_on_the_elimination_line() {
    let mcl = find_method("MCL7").unwrap();
    let est = &mcl.estimators[0];
    assert_eq!(est.nullspace_dim, 1);
    let w = &est.w;

    let a = 1.0 / (6.0 - 6f64.powf(1.0 / 3.0));
    let (g1, g2, g3) = (a, 2.0 * a, 3.0 * a);
    let q = |g: f64| g * (g - 1.0);
    let d = q(g1) - q(g2);
    let w3 = w[3];
    let w1 = (g2 * (1.0 - g2) + w3 * (q(g2) - q(g3))) / d;
    let w2 = (q(g1) - w3 * (q(g1) - q(g3))) / d;

    assert!((w[0] + 1.0).abs() < 1e-12);
    assert!((w[1] - w1).abs() < 1e-11);
    assert!((w[2] - w2).abs() < 1e-11);
    // Symmetric template and consistency.
    assert!((w[1] + w[2] + w[3] - 1.0).abs() < 1e-12);
    for i in 1..=3 {
        assert_eq!(w[i], w[7 - i]);
    }
}

/// Admitting the full-step product as a column makes the trivial estimator
/// (weight 1 on the final output) the unique solution when the target order
/// equals the scheme order: the excluded column is the whole point of the
/// construction.
#[test]
fn final_column_admits_only_the_trivial_solution() {
    let a1 = 1.0 / (4.0 - 4f64.powf(1.0 / 3.0));
    let scheme = SchemeSpec::ss(&palindromic(&[a1, a1]), 4).unwrap();
    let ell = 4;
    let mut products = prefix_products(&scheme, ell).unwrap();
    products.push(full_product(&scheme, ell).unwrap());

    let mut words = vec![Word::empty()];
    words.extend(embsplit::opalg::generator_set(Family::SS, ell).words_up_to(ell));
    let target =
        embsplit::opalg::series_exp(&embsplit::opalg::exact_flow_exponent(Family::SS, ell))
            .unwrap();
    let mut matrix = DMatrix::zeros(words.len(), products.len());
    let mut rhs = DVector::zeros(words.len());
    for (r, word) in words.iter().enumerate() {
        rhs[r] = target.coeff(word);
        for (c, p) in products.iter().enumerate() {
            matrix[(r, c)] = p.coeff(word);
        }
    }
    let system = WeightSystem {
        family: Family::SS,
        ell,
        words,
        matrix,
        rhs,
    };
    let solved = solve_weights(&system, &[], &[]).unwrap();
    assert_eq!(solved.nullspace_dim, 0);
    assert!((solved.w[5] - 1.0).abs() < 1e-12);
    for k in 0..5 {
        assert!(solved.w[k].abs() < 1e-12, "w[{k}] = {}", solved.w[k]);
    }
}

#[test]
fn solution_is_invariant_under_row_scaling() {
    let ss11 = find_method("SS11").unwrap();
    let spec = &ss11.estimator_specs[0];
    let system = assemble_system(&ss11.scheme, spec.order).unwrap();
    let scaled = WeightSystem {
        family: system.family,
        ell: system.ell,
        words: system.words.clone(),
        matrix: &system.matrix * 2.0,
        rhs: &system.rhs * 2.0,
    };
    let base = solve_weights(&system, &spec.symmetry, &spec.pins).unwrap();
    let twice = solve_weights(&scaled, &spec.symmetry, &spec.pins).unwrap();
    for (a, b) in base.w.iter().zip(&twice.w) {
        assert!((a - b).abs() < 1e-13);
    }
}

/// Dropping conditions cannot break feasibility: every catalog estimator
/// also solves at every lower order with the same constraints.
#[test]
fn feasibility_is_monotone_in_the_target_order() {
    for method in catalog() {
        for spec in &method.estimator_specs {
            for ell in 1..=spec.order {
                let system = assemble_system(&method.scheme, ell).unwrap();
                let res = solve_weights(&system, &spec.symmetry, &spec.pins);
                assert!(
                    res.is_ok(),
                    "{} estimator order {} failed at reduced order {}",
                    method.name,
                    spec.order,
                    ell
                );
            }
        }
    }
}

#[test]
fn overconstrained_system_is_reported_infeasible() {
    // Two half-step kernels give a single usable output besides the input;
    // the grade-2 condition cannot be met.
    let scheme = SchemeSpec::ss(&[0.5, 0.5], 2).unwrap();
    let system = assemble_system(&scheme, 2).unwrap();
    match solve_weights(&system, &[], &[]) {
        Err(EstgenError::Infeasible {
            residual,
            threshold,
        }) => {
            assert!(residual > threshold);
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

/// Pinning inside the free direction keeps the system solvable and moves the
/// solution along the nullspace line.
#[test]
fn pin_selects_a_point_on_the_free_line() {
    let mcl = find_method("MCL7").unwrap();
    let spec = &mcl.estimator_specs[0];
    let system = assemble_system(&mcl.scheme, spec.order).unwrap();
    let mut pins = spec.pins.clone();
    pins.push(Pin { k: 3, value: 0.5 });
    let pinned = solve_weights(&system, &spec.symmetry, &pins).unwrap();
    assert_eq!(pinned.nullspace_dim, 0);
    assert_eq!(pinned.w[3], 0.5);
    assert!((pinned.w[3] - mcl.estimators[0].w[3]).abs() > 1e-3);
    // Still a valid order-3 estimator.
    let report = verify_order(&mcl.scheme, Some(&pinned), 4).unwrap();
    assert_eq!(report.order, 3);
}

#[test]
fn symmetry_constraints_are_honored_exactly() {
    let yos = find_method("YOS7").unwrap();
    let w = &yos.estimators[0].w;
    for (i, j) in [(6usize, 1usize), (5, 2), (4, 3)] {
        assert_eq!(w[i], -w[j], "w[{i}] must equal -w[{j}]");
    }

    let ss17 = find_method("SS17").unwrap();
    let w = &ss17.estimators[0].w;
    for i in 1..=8 {
        assert_eq!(w[17 - i], w[i]);
    }
    assert_eq!(w[7], 0.0);
    assert_eq!(w[8], 0.0);
}

#[test]
fn constraint_index_and_sign_validation() {
    let scheme = SchemeSpec::ss(&[0.5, 0.5], 2).unwrap();
    let system = assemble_system(&scheme, 1).unwrap();
    assert!(matches!(
        solve_weights(
            &system,
            &[SymPair {
                i: 0,
                j: 9,
                sign: 1
            }],
            &[]
        ),
        Err(EstgenError::ConstraintIndexOutOfRange(9, 2))
    ));
    assert!(matches!(
        solve_weights(
            &system,
            &[SymPair {
                i: 0,
                j: 1,
                sign: 2
            }],
            &[]
        ),
        Err(EstgenError::BadSymmetrySign(2))
    ));
    assert!(matches!(
        solve_weights(&system, &[], &[Pin { k: 5, value: 1.0 }]),
        Err(EstgenError::ConstraintIndexOutOfRange(5, 2))
    ));
}
