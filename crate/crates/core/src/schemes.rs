//! Built-in method catalog with embedded-estimator recipes, plus coefficient
//! conversions between the composition and splitting forms.
//!
//! Each catalog entry stores the stage coefficients at full printed precision
//! and the constraint set (symmetry pairs, pins) that selects its estimator;
//! the weights themselves are derived on construction, so the catalog is also
//! an end-to-end exercise of the solver.

use crate::estgen::{
    derive_weights, EstgenError, EstimatorSpec, EstimatorWeights, Pin, SchemeFile, SchemeSpec,
    SymPair,
};
use crate::opalg::Family;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SchemesError {
    #[error("method-adjoint coefficient list must have even length, got {0}")]
    OddLength(usize),
    #[error("coefficient sums differ: Σa = {sum_a}, Σb = {sum_b}")]
    SumMismatch { sum_a: f64, sum_b: f64 },
    #[error("lists are not a valid splitting pair: len(b) = {len_b}, len(a) = {len_a}")]
    BadListLengths { len_a: usize, len_b: usize },
    #[error("not expressible in method-adjoint form: leading residual {0:.3e}")]
    NotMethodAdjoint(f64),
    #[error("replication needs an SS scheme")]
    NotSS,
    #[error("replication factor must be at least 2, got {0}")]
    BadReplication(u32),
    #[error(transparent)]
    Estgen(#[from] EstgenError),
}

/// Residual allowed on the leading coefficient when inverting the splitting
/// form back to method-adjoint form, and on the Σa = Σb precondition.
const CONVERSION_TOL: f64 = 1e-12;

/// Palindromic coefficient list: `front`, then the center 1 − 2·Σfront, then
/// `front` reversed.
pub fn palindromic(front: &[f64]) -> Vec<f64> {
    let center = 1.0 - 2.0 * front.iter().sum::<f64>();
    let mut out = front.to_vec();
    out.push(center);
    out.extend(front.iter().rev());
    out
}

/// `half` followed by `half` reversed.
pub fn mirrored(half: &[f64]) -> Vec<f64> {
    let mut out = half.to_vec();
    out.extend(half.iter().rev());
    out
}

/// A catalog method: scheme plus its derived estimator(s), highest estimator
/// order first.
#[derive(Clone, Debug)]
pub struct EmbeddedMethod {
    /// Full name, e.g. "SS5-4(3)": family+stages, main order, estimator
    /// order(s) in parentheses.
    pub name: &'static str,
    /// Short handle for the CLI, e.g. "SS5".
    pub alias: &'static str,
    pub note: &'static str,
    pub scheme: SchemeSpec,
    pub main_order: u32,
    pub estimator_specs: Vec<EstimatorSpec>,
    pub estimators: Vec<EstimatorWeights>,
}

impl EmbeddedMethod {
    fn build(
        name: &'static str,
        alias: &'static str,
        note: &'static str,
        scheme: SchemeSpec,
        estimator_specs: Vec<EstimatorSpec>,
    ) -> Self {
        let estimators = estimator_specs
            .iter()
            .map(|spec| {
                derive_weights(&scheme, spec)
                    .unwrap_or_else(|e| panic!("catalog entry {name} unsolvable: {e}"))
            })
            .collect();
        EmbeddedMethod {
            name,
            alias,
            note,
            main_order: scheme.declared_order,
            scheme,
            estimator_specs,
            estimators,
        }
    }
}

fn sym_plus(pairs: &[(usize, usize)]) -> Vec<SymPair> {
    pairs.iter().map(|&(i, j)| SymPair::plus(i, j)).collect()
}

fn sym_minus(pairs: &[(usize, usize)]) -> Vec<SymPair> {
    pairs.iter().map(|&(i, j)| SymPair::minus(i, j)).collect()
}

fn pins(list: &[(usize, f64)]) -> Vec<Pin> {
    list.iter().map(|&(k, value)| Pin { k, value }).collect()
}

/// All built-in methods with embedded estimators.
pub fn catalog() -> Vec<EmbeddedMethod> {
    let mut out = Vec::new();

    // Suzuki's 5-stage 4th-order composition; symmetric 3rd-order estimator.
    let a1 = 1.0 / (4.0 - 4f64.powf(1.0 / 3.0));
    out.push(EmbeddedMethod::build(
        "SS5-4(3)",
        "SS5",
        "Suzuki 5-stage composition",
        SchemeSpec::ss(&palindromic(&[a1, a1]), 4).expect("valid stages"),
        vec![EstimatorSpec {
            order: 3,
            symmetry: sym_plus(&[(4, 1), (3, 2)]),
            pins: vec![],
        }],
    ));

    // McLachlan's 7-stage 4th-order composition. The estimator system keeps
    // one free direction; the minimal-norm rule selects the stored weights.
    let a1 = 1.0 / (6.0 - 6f64.powf(1.0 / 3.0));
    out.push(EmbeddedMethod::build(
        "SS7-4(3)",
        "MCL7",
        "McLachlan 7-stage composition",
        SchemeSpec::ss(&palindromic(&[a1, a1, a1]), 4).expect("valid stages"),
        vec![EstimatorSpec {
            order: 3,
            symmetry: sym_plus(&[(6, 1), (5, 2), (4, 3)]),
            pins: vec![],
        }],
    ));

    // Yoshida's 7-stage 6th-order composition; the 4th-order estimator uses
    // the antisymmetric template.
    out.push(EmbeddedMethod::build(
        "SS7-6(4)",
        "YOS7",
        "Yoshida 7-stage composition",
        SchemeSpec::ss(
            &palindromic(&[
                0.78451361047755726382,
                0.23557321335935813369,
                -1.17767998417887100695,
            ]),
            6,
        )
        .expect("valid stages"),
        vec![EstimatorSpec {
            order: 4,
            symmetry: sym_minus(&[(6, 1), (5, 2), (4, 3)]),
            pins: vec![],
        }],
    ));

    // Sofroniou–Spaletta 11-stage 6th-order composition with a symmetric
    // 5th-order estimator.
    out.push(EmbeddedMethod::build(
        "SS11-6(5)",
        "SS11",
        "Sofroniou-Spaletta 11-stage composition",
        SchemeSpec::ss(
            &palindromic(&[
                0.21375583945878254555,
                0.18329381407425713911,
                0.17692819473098943795,
                -0.44329082681170215849,
                0.11728560432865935385,
            ]),
            6,
        )
        .expect("valid stages"),
        vec![EstimatorSpec {
            order: 5,
            symmetry: sym_plus(&[(10, 1), (9, 2), (8, 3), (7, 4), (6, 5)]),
            pins: vec![],
        }],
    ));

    // Kahan–Li 17-stage 8th-order composition with two estimators (orders 5
    // and 3) for combined-error stepping. The 5th-order system is solvable
    // with w_7 = w_8 = 0; pinning w_6 as well makes the solution unique.
    out.push(EmbeddedMethod::build(
        "SS17-8(5)(3)",
        "SS17",
        "Kahan-Li 17-stage composition, dual estimators",
        SchemeSpec::ss(
            &palindromic(&[
                0.13020248308889008088,
                0.56116298177510838456,
                -0.38947496264484728641,
                0.15884190655515560090,
                -0.39590389413323757734,
                0.18453964097831570709,
                0.25837438768632204729,
                0.29501172360931029887,
            ]),
            8,
        )
        .expect("valid stages"),
        vec![
            EstimatorSpec {
                order: 5,
                symmetry: sym_plus(&[
                    (16, 1),
                    (15, 2),
                    (14, 3),
                    (13, 4),
                    (12, 5),
                    (11, 6),
                    (10, 7),
                    (9, 8),
                ]),
                pins: pins(&[(7, 0.0), (8, 0.0), (6, 1.33511505989947708172)]),
            },
            EstimatorSpec {
                order: 3,
                symmetry: sym_plus(&[(16, 1), (10, 7)]),
                pins: pins(&[
                    (2, 0.0),
                    (3, 0.0),
                    (4, 0.0),
                    (5, 0.0),
                    (6, 0.0),
                    (8, 0.0),
                    (9, 0.0),
                    (11, 0.0),
                    (12, 0.0),
                    (13, 0.0),
                    (14, 0.0),
                    (15, 0.0),
                ]),
            },
        ],
    ));

    // 12-stage method-adjoint composition of the basic first-order kernel and
    // its adjoint, equivalent in the main method to the 6-stage RKN splitting
    // below but with different intermediate outputs. The estimator keeps one
    // free direction after the pins; minimal norm selects the stored weights.
    out.push(EmbeddedMethod::build(
        "MA6-4(3)",
        "MA6",
        "method-adjoint composition from the 6-stage RKN splitting",
        SchemeSpec {
            family: Family::MethodAdjoint,
            stages: SchemeSpec::method_adjoint(
                &mirrored(&[
                    0.08298440641740484666,
                    0.16231455076686615333,
                    0.23399525073150184666,
                    0.37087741497957699562,
                    -0.40993371990192559562,
                    0.05976209700657575333,
                ]),
                4,
            )
            .expect("valid stages")
            .stages,
            declared_order: 4,
        },
        vec![EstimatorSpec {
            order: 3,
            symmetry: sym_plus(&[(11, 1), (10, 2), (9, 3), (8, 4), (7, 5)]),
            pins: pins(&[
                (0, -1.0),
                (5, -0.02746220037522580999),
                (6, -0.10043897143494534902),
            ]),
        }],
    ));

    // 6-stage partitioned splitting, 4th order, tuned for general separable
    // Hamiltonians.
    let b = {
        let half = [
            0.07920369643119565,
            0.35317290604977372,
            -0.04206508035771952,
        ];
        let center = 1.0 - 2.0 * half.iter().sum::<f64>();
        let mut v = half.to_vec();
        v.push(center);
        v.extend(half.iter().rev());
        v
    };
    let a = {
        let half = [0.209515106613361, -0.143851773179818];
        let center = 0.5 - half.iter().sum::<f64>();
        mirrored(&[half[0], half[1], center])
    };
    out.push(EmbeddedMethod::build(
        "PRK6-4(3)",
        "PRK6",
        "6-stage partitioned splitting for general separable Hamiltonians",
        SchemeSpec::splitting(&a, &b, 4).expect("valid stages"),
        vec![EstimatorSpec {
            order: 3,
            symmetry: sym_plus(&[(12, 1), (11, 2), (10, 3), (9, 4), (8, 5)]),
            pins: pins(&[(6, 0.0), (7, 0.0)]),
        }],
    ));

    // 6-stage splitting tuned for kick fields with no drift dependence
    // (RKN type), 4th order in the free algebra.
    let b = {
        let half = [0.082984406417404, 0.396309801498368, -0.039056304922348];
        let center = 1.0 - 2.0 * half.iter().sum::<f64>();
        let mut v = half.to_vec();
        v.push(center);
        v.extend(half.iter().rev());
        v
    };
    let a = {
        let half = [0.245298957184271, 0.604872665711078];
        let center = 0.5 - half.iter().sum::<f64>();
        mirrored(&[half[0], half[1], center])
    };
    out.push(EmbeddedMethod::build(
        "RKN6-4(3)",
        "RKN6",
        "6-stage RKN splitting",
        SchemeSpec::splitting(&a, &b, 4).expect("valid stages"),
        vec![EstimatorSpec {
            order: 3,
            symmetry: sym_plus(&[(12, 1), (11, 2), (10, 3), (9, 4), (8, 5)]),
            pins: pins(&[(6, 0.0), (7, 0.0)]),
        }],
    ));

    out
}

/// Case-insensitive lookup by full name or alias.
pub fn find_method(query: &str) -> Option<EmbeddedMethod> {
    let q = query.to_ascii_lowercase();
    catalog()
        .into_iter()
        .find(|m| m.name.to_ascii_lowercase() == q || m.alias.to_ascii_lowercase() == q)
}

/// Rewrite a method-adjoint coefficient list α_1..α_{2s} as a splitting
/// scheme: b_1 = α_1, a_j = α_{2j−1} + α_{2j}, b_{j+1} = α_{2j} + α_{2j+1}
/// (with α_{2s+1} = 0), merging the adjacent kicks and drifts of consecutive
/// kernel and adjoint-kernel applications.
pub fn splitting_from_methodadjoint(alphas: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SchemesError> {
    if !alphas.len().is_multiple_of(2) || alphas.is_empty() {
        return Err(SchemesError::OddLength(alphas.len()));
    }
    let s = alphas.len() / 2;
    let mut a = Vec::with_capacity(s);
    let mut b = Vec::with_capacity(s + 1);
    b.push(alphas[0]);
    for j in 1..=s {
        a.push(alphas[2 * j - 2] + alphas[2 * j - 1]);
        let next = if j == s { 0.0 } else { alphas[2 * j] };
        b.push(alphas[2 * j - 1] + next);
    }
    Ok((a, b))
}

/// Invert [`splitting_from_methodadjoint`]: recover α_1..α_{2s} from a
/// splitting pair by backward substitution. The recursion closes only if the
/// leading coefficient comes out zero; otherwise the splitting scheme has no
/// method-adjoint form.
pub fn methodadjoint_from_splitting(a: &[f64], b: &[f64]) -> Result<Vec<f64>, SchemesError> {
    if b.len() != a.len() + 1 || a.is_empty() {
        return Err(SchemesError::BadListLengths {
            len_a: a.len(),
            len_b: b.len(),
        });
    }
    let sum_a: f64 = a.iter().sum();
    let sum_b: f64 = b.iter().sum();
    if (sum_a - sum_b).abs() > CONVERSION_TOL {
        return Err(SchemesError::SumMismatch { sum_a, sum_b });
    }
    let s = a.len();
    let mut alphas = vec![0.0; 2 * s];
    alphas[2 * s - 1] = b[s];
    for j in (1..=s).rev() {
        alphas[2 * j - 2] = a[j - 1] - alphas[2 * j - 1];
        if j > 1 {
            alphas[2 * j - 3] = b[j - 1] - alphas[2 * j - 2];
        }
    }
    let residual = b[0] - alphas[0];
    if residual.abs() > CONVERSION_TOL {
        return Err(SchemesError::NotMethodAdjoint(residual));
    }
    Ok(alphas)
}

/// Order in which each second-order kernel expands into its three flows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrangVariant {
    /// Drift–kick–drift.
    Aba,
    /// Kick–drift–kick.
    Bab,
}

/// Expand an SS coefficient list into a splitting pair by writing each
/// second-order kernel as its Strang triple and merging the adjacent
/// same-flow exponentials. Both variants are returned in the kick-first
/// layout with len(b) = len(a) + 1; for the drift-first variant the two end
/// kicks are zero (zero-coefficient flows are skipped at execution).
pub fn splitting_from_ss(alphas: &[f64], variant: StrangVariant) -> (Vec<f64>, Vec<f64>) {
    let s = alphas.len();
    let mut edge = Vec::with_capacity(s + 1);
    if s == 0 {
        return (Vec::new(), vec![0.0]);
    }
    edge.push(alphas[0] / 2.0);
    for j in 0..s - 1 {
        edge.push((alphas[j] + alphas[j + 1]) / 2.0);
    }
    edge.push(alphas[s - 1] / 2.0);
    match variant {
        StrangVariant::Bab => (alphas.to_vec(), edge),
        StrangVariant::Aba => {
            let mut b = Vec::with_capacity(s + 2);
            b.push(0.0);
            b.extend_from_slice(alphas);
            b.push(0.0);
            (edge, b)
        }
    }
}

/// Repeat an SS scheme's stage list `m` times with coefficients divided by
/// `m`: one step of the result over h matches m steps of the original over
/// h/m.
pub fn replicate_halved(scheme: &SchemeSpec, m: u32) -> Result<SchemeSpec, SchemesError> {
    if scheme.family != Family::SS {
        return Err(SchemesError::NotSS);
    }
    if m < 2 {
        return Err(SchemesError::BadReplication(m));
    }
    let mut alphas = Vec::with_capacity(scheme.stages.len() * m as usize);
    for _ in 0..m {
        alphas.extend(scheme.stages.iter().map(|&(_, c)| c / f64::from(m)));
    }
    Ok(SchemeSpec::ss(&alphas, scheme.declared_order)?)
}

/// A catalog entry in the on-disk scheme format.
pub fn export_scheme_file(method: &EmbeddedMethod) -> SchemeFile {
    SchemeFile::from_scheme(&method.scheme, method.estimator_specs.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palindromic_and_mirrored() {
        let p = palindromic(&[0.3, 0.1]);
        assert_eq!(p.len(), 5);
        assert_eq!(p[0], p[4]);
        assert_eq!(p[1], p[3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let m = mirrored(&[1.0, 2.0]);
        assert_eq!(m, vec![1.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn catalog_names_and_sizes() {
        let cat = catalog();
        let aliases: Vec<&str> = cat.iter().map(|m| m.alias).collect();
        assert_eq!(
            aliases,
            vec!["SS5", "MCL7", "YOS7", "SS11", "SS17", "MA6", "PRK6", "RKN6"]
        );
        for m in &cat {
            assert_eq!(m.estimators.len(), m.estimator_specs.len());
            assert_eq!(m.main_order, m.scheme.declared_order);
        }
        let ss17 = cat.iter().find(|m| m.alias == "SS17").unwrap();
        assert_eq!(ss17.estimators.len(), 2);
        assert!(ss17.estimators[0].order > ss17.estimators[1].order);
    }

    #[test]
    fn find_method_is_case_insensitive() {
        assert!(find_method("ss5").is_some());
        assert!(find_method("Ss5-4(3)").is_some());
        assert!(find_method("mcl7").is_some());
        assert!(find_method("nope").is_none());
    }

    #[test]
    fn strang_roundtrip_methodadjoint() {
        let (a, b) = splitting_from_methodadjoint(&[0.5, 0.5]).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(b, vec![0.5, 0.5]);
        let alphas = methodadjoint_from_splitting(&a, &b).unwrap();
        assert_eq!(alphas, vec![0.5, 0.5]);
    }

    #[test]
    fn methodadjoint_from_splitting_rejects_sum_mismatch() {
        assert!(matches!(
            methodadjoint_from_splitting(&[1.0], &[0.5, 0.25]),
            Err(SchemesError::SumMismatch { .. })
        ));
    }

    #[test]
    fn splitting_from_ss_single_stage_is_strang() {
        let (a, b) = splitting_from_ss(&[1.0], StrangVariant::Bab);
        assert_eq!(a, vec![1.0]);
        assert_eq!(b, vec![0.5, 0.5]);

        let (a, b) = splitting_from_ss(&[1.0], StrangVariant::Aba);
        assert_eq!(a, vec![0.5, 0.5]);
        assert_eq!(b, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn replicate_halved_doubles_stage_count() {
        let base = SchemeSpec::ss(&[0.3, 0.4, 0.3], 2).unwrap();
        let rep = replicate_halved(&base, 2).unwrap();
        assert_eq!(rep.stages.len(), 6);
        let sum: f64 = rep.coefficients().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(matches!(
            replicate_halved(&base, 1),
            Err(SchemesError::BadReplication(1))
        ));
    }
}
