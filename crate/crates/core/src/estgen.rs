//! Assembly and solution of the linear systems that determine estimator
//! weights, plus order verification for schemes and estimators.
//!
//! A scheme with stage maps m_1, ..., m_K (applied in that order within one
//! step) exposes the usable outputs x_{n,0} = x_n, x_{n,1}, ..., x_{n,K−1}:
//! the input state and the state after each stage prefix. The final output
//! x_{n+1} is structurally excluded, because admitting it only yields the
//! trivial estimator x̃ = x_{n+1}. Formally x_{n,k} is produced by the prefix
//! product P_k = exp(s_1)·exp(s_2)···exp(s_k) of stage-exponent series, and a
//! weight vector w gives the estimator series Σ_k w_k P_k. Requiring that
//! series to match the exact-flow exponential through grade ℓ is one linear
//! equation per word of grade ≤ ℓ, plus the trivial equation Σ_k w_k = 1.

use crate::opalg::{
    exact_flow_exponent, generator_set, series_add, series_exp, series_mul, series_sub,
    stage_series, Family, OpalgError, Role, Series, Word, MAX_GRADE,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Residual threshold for "this grade's conditions hold" in order checks.
pub const ORDER_RESIDUAL_TOL: f64 = 1e-10;
/// Relative rank cutoff: singular values below this times σ_max are zero.
pub const RANK_CUTOFF_REL: f64 = 1e-9;
/// Relative feasibility threshold on the least-squares residual.
pub const FEASIBILITY_TOL_REL: f64 = 1e-10;
/// Tolerance on consistency sums (Σα = 1 and the like) at validation.
const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Error, Debug)]
pub enum EstgenError {
    #[error("scheme has no stages")]
    EmptyScheme,
    #[error("stage {index} has role {role}, not valid at this position for family {family}")]
    BadStagePattern {
        family: Family,
        role: Role,
        index: usize,
    },
    #[error("family {family} needs {expected} stages, got {got}")]
    BadStageCount {
        family: Family,
        expected: &'static str,
        got: usize,
    },
    #[error("{what} sum to {sum}, expected {expected}")]
    InconsistentSum {
        what: &'static str,
        sum: f64,
        expected: f64,
    },
    #[error("non-finite stage coefficient at index {0}")]
    NonFiniteCoefficient(usize),
    #[error("target order must be at least 1, got {0}")]
    OrderTooSmall(u32),
    #[error("constraint index {0} out of range for {1} weights")]
    ConstraintIndexOutOfRange(usize, usize),
    #[error("symmetry sign must be +1 or -1, got {0}")]
    BadSymmetrySign(i8),
    #[error("inconsistent pins: weight {index} constrained to both {a} and {b}")]
    InconsistentPins { index: usize, a: f64, b: f64 },
    #[error("system infeasible: residual {residual:.3e} above threshold {threshold:.3e}")]
    Infeasible { residual: f64, threshold: f64 },
    #[error(transparent)]
    Algebra(#[from] OpalgError),
    #[error("failed to read scheme file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scheme file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to serialize scheme file: {0}")]
    Serialize(#[from] toml::ser::Error),
}

/// A composition/splitting scheme: family plus ordered stage list. Stage 1 is
/// applied first within a step.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSpec {
    pub family: Family,
    pub stages: Vec<(Role, f64)>,
    pub declared_order: u32,
}

impl SchemeSpec {
    /// SS scheme from composition coefficients α_1..α_s (must sum to 1).
    pub fn ss(alphas: &[f64], declared_order: u32) -> Result<Self, EstgenError> {
        let spec = SchemeSpec {
            family: Family::SS,
            stages: alphas.iter().map(|&a| (Role::S2, a)).collect(),
            declared_order,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Method-adjoint scheme from α_1..α_{2s}; roles alternate starting with
    /// the adjoint kernel, which is applied first.
    pub fn method_adjoint(alphas: &[f64], declared_order: u32) -> Result<Self, EstgenError> {
        let stages = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let role = if i % 2 == 0 {
                    Role::AdjointChi
                } else {
                    Role::BasicChi
                };
                (role, a)
            })
            .collect();
        let spec = SchemeSpec {
            family: Family::MethodAdjoint,
            stages,
            declared_order,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Splitting scheme b_1 B, a_1 A, b_2 B, ..., a_s A, b_{s+1} B (the first
    /// kick is applied first). Requires len(b) = len(a) + 1 and Σa = Σb = 1.
    pub fn splitting(a: &[f64], b: &[f64], declared_order: u32) -> Result<Self, EstgenError> {
        if b.len() != a.len() + 1 {
            return Err(EstgenError::BadStageCount {
                family: Family::Splitting,
                expected: "len(b) = len(a) + 1",
                got: b.len(),
            });
        }
        let mut stages = Vec::with_capacity(a.len() + b.len());
        for j in 0..a.len() {
            stages.push((Role::FlowB, b[j]));
            stages.push((Role::FlowA, a[j]));
        }
        stages.push((Role::FlowB, b[a.len()]));
        let spec = SchemeSpec {
            family: Family::Splitting,
            stages,
            declared_order,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The a- and b-coefficient lists of a splitting scheme.
    pub fn splitting_coefficients(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.family != Family::Splitting {
            return None;
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (role, c) in &self.stages {
            match role {
                Role::FlowA => a.push(*c),
                Role::FlowB => b.push(*c),
                _ => return None,
            }
        }
        Some((a, b))
    }

    /// Bare coefficient list in stage order.
    pub fn coefficients(&self) -> Vec<f64> {
        self.stages.iter().map(|&(_, c)| c).collect()
    }

    /// Number of usable outputs K: the input state plus every intermediate;
    /// the final output is excluded. Equals the stage count.
    pub fn usable_outputs(&self) -> usize {
        self.stages.len()
    }

    pub fn validate(&self) -> Result<(), EstgenError> {
        if self.stages.is_empty() {
            return Err(EstgenError::EmptyScheme);
        }
        for (i, &(_, c)) in self.stages.iter().enumerate() {
            if !c.is_finite() {
                return Err(EstgenError::NonFiniteCoefficient(i));
            }
        }
        match self.family {
            Family::SS => {
                for (i, &(role, _)) in self.stages.iter().enumerate() {
                    if role != Role::S2 {
                        return Err(EstgenError::BadStagePattern {
                            family: self.family,
                            role,
                            index: i,
                        });
                    }
                }
                let sum: f64 = self.stages.iter().map(|&(_, c)| c).sum();
                if (sum - 1.0).abs() > CONSISTENCY_TOL {
                    return Err(EstgenError::InconsistentSum {
                        what: "SS coefficients",
                        sum,
                        expected: 1.0,
                    });
                }
            }
            Family::MethodAdjoint => {
                if !self.stages.len().is_multiple_of(2) {
                    return Err(EstgenError::BadStageCount {
                        family: self.family,
                        expected: "an even number of",
                        got: self.stages.len(),
                    });
                }
                for (i, &(role, _)) in self.stages.iter().enumerate() {
                    let want = if i % 2 == 0 {
                        Role::AdjointChi
                    } else {
                        Role::BasicChi
                    };
                    if role != want {
                        return Err(EstgenError::BadStagePattern {
                            family: self.family,
                            role,
                            index: i,
                        });
                    }
                }
            }
            Family::Splitting => {
                if self.stages.len().is_multiple_of(2) || self.stages.len() < 3 {
                    return Err(EstgenError::BadStageCount {
                        family: self.family,
                        expected: "an odd number (at least 3) of",
                        got: self.stages.len(),
                    });
                }
                for (i, &(role, _)) in self.stages.iter().enumerate() {
                    let want = if i % 2 == 0 { Role::FlowB } else { Role::FlowA };
                    if role != want {
                        return Err(EstgenError::BadStagePattern {
                            family: self.family,
                            role,
                            index: i,
                        });
                    }
                }
                let (a, b) = self.splitting_coefficients().expect("pattern checked");
                let sa: f64 = a.iter().sum();
                let sb: f64 = b.iter().sum();
                if (sa - 1.0).abs() > CONSISTENCY_TOL {
                    return Err(EstgenError::InconsistentSum {
                        what: "splitting a-coefficients",
                        sum: sa,
                        expected: 1.0,
                    });
                }
                if (sb - 1.0).abs() > CONSISTENCY_TOL {
                    return Err(EstgenError::InconsistentSum {
                        what: "splitting b-coefficients",
                        sum: sb,
                        expected: 1.0,
                    });
                }
            }
        }
        Ok(())
    }
}

/// P_0 = I and P_k = P_{k−1}·exp(stage k) for the first K−1 stages, where
/// K is the stage count; the final stage never enters (its product would be
/// the full step). List length equals K.
pub fn prefix_products(scheme: &SchemeSpec, n: u32) -> Result<Vec<Series>, EstgenError> {
    scheme.validate()?;
    let mut out = Vec::with_capacity(scheme.stages.len());
    let mut p = Series::one(n);
    out.push(p.clone());
    for &(role, coeff) in &scheme.stages[..scheme.stages.len() - 1] {
        let e = series_exp(&stage_series(scheme.family, role, coeff, n)?)?;
        p = series_mul(&p, &e)?;
        out.push(p.clone());
    }
    Ok(out)
}

/// Product over the full stage list: the series of one whole step.
pub fn full_product(scheme: &SchemeSpec, n: u32) -> Result<Series, EstgenError> {
    scheme.validate()?;
    let mut p = Series::one(n);
    for &(role, coeff) in &scheme.stages {
        let e = series_exp(&stage_series(scheme.family, role, coeff, n)?)?;
        p = series_mul(&p, &e)?;
    }
    Ok(p)
}

/// Number of order conditions besides the trivial one: nonempty words of
/// grade ≤ `l` over the family's generators.
pub fn count_conditions(family: Family, l: u32) -> Result<usize, EstgenError> {
    if l < 1 {
        return Err(EstgenError::OrderTooSmall(l));
    }
    Ok(generator_set(family, l).words_up_to(l).len())
}

/// The assembled weight system: one row per word of grade ≤ ℓ (row 0 is the
/// empty word, RHS 1), one column per usable output.
#[derive(Clone, Debug)]
pub struct WeightSystem {
    pub family: Family,
    pub ell: u32,
    /// Row words; `words[0]` is the empty word.
    pub words: Vec<Word>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl WeightSystem {
    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Assemble the grade-≤ℓ matching conditions for Σ_k w_k P_k against the
/// exact-flow exponential (exp(F), or exp(A+B) for splitting).
pub fn assemble_system(scheme: &SchemeSpec, ell: u32) -> Result<WeightSystem, EstgenError> {
    let products = prefix_products(scheme, ell)?;
    let target = series_exp(&exact_flow_exponent(scheme.family, ell))?;
    let mut words = vec![Word::empty()];
    words.extend(generator_set(scheme.family, ell).words_up_to(ell));
    let k = products.len();
    let mut matrix = DMatrix::zeros(words.len(), k);
    let mut rhs = DVector::zeros(words.len());
    for (r, w) in words.iter().enumerate() {
        rhs[r] = target.coeff(w);
        for (c, p) in products.iter().enumerate() {
            matrix[(r, c)] = p.coeff(w);
        }
    }
    Ok(WeightSystem {
        family: scheme.family,
        ell,
        words,
        matrix,
        rhs,
    })
}

/// Symmetry constraint w_i = sign·w_j with sign ∈ {+1, −1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymPair {
    pub i: usize,
    pub j: usize,
    pub sign: i8,
}

impl SymPair {
    pub fn plus(i: usize, j: usize) -> Self {
        SymPair { i, j, sign: 1 }
    }

    pub fn minus(i: usize, j: usize) -> Self {
        SymPair { i, j, sign: -1 }
    }
}

/// Pin constraint w_k = value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub k: usize,
    pub value: f64,
}

/// Solved estimator weights with solve diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorWeights {
    pub w: Vec<f64>,
    pub order: u32,
    /// Euclidean norm of the least-squares residual.
    pub residual: f64,
    /// Dimension of the solution manifold after constraints; 0 means unique.
    pub nullspace_dim: usize,
}

/// Union-find over weight indices carrying a relative sign, used to reduce
/// symmetry constraints before the least-squares solve.
struct SignedClasses {
    parent: Vec<usize>,
    sign: Vec<f64>,
    forced_zero: Vec<bool>,
}

impl SignedClasses {
    fn new(n: usize) -> Self {
        SignedClasses {
            parent: (0..n).collect(),
            sign: vec![1.0; n],
            forced_zero: vec![false; n],
        }
    }

    /// (root, sign) with w_i = sign·w_root, path-compressed.
    fn find(&mut self, i: usize) -> (usize, f64) {
        if self.parent[i] == i {
            return (i, self.sign[i]);
        }
        let (root, s) = self.find(self.parent[i]);
        self.parent[i] = root;
        self.sign[i] *= s;
        (root, self.sign[i])
    }

    /// Impose w_i = s·w_j. A sign conflict (w = −w) forces the class to zero.
    fn union(&mut self, i: usize, j: usize, s: f64) {
        let (ri, si) = self.find(i);
        let (rj, sj) = self.find(j);
        if ri == rj {
            if si != s * sj {
                self.forced_zero[ri] = true;
            }
            return;
        }
        // w_i = si·w_ri and we want w_i = s·w_j = s·sj·w_rj.
        self.parent[ri] = rj;
        self.sign[ri] = s * sj * si;
        self.forced_zero[rj] |= self.forced_zero[ri];
    }
}

/// Minimal-norm least-squares solve of the weight system under symmetry and
/// pin constraints. Reports the residual and the dimension of the remaining
/// solution manifold; errors if the residual exceeds the feasibility
/// threshold 1e−10·(1 + ‖rhs‖).
pub fn solve_weights(
    system: &WeightSystem,
    symmetry: &[SymPair],
    pins: &[Pin],
) -> Result<EstimatorWeights, EstgenError> {
    let k = system.k();
    let mut classes = SignedClasses::new(k);
    for sp in symmetry {
        if sp.i >= k || sp.j >= k {
            return Err(EstgenError::ConstraintIndexOutOfRange(sp.i.max(sp.j), k));
        }
        if sp.sign != 1 && sp.sign != -1 {
            return Err(EstgenError::BadSymmetrySign(sp.sign));
        }
        classes.union(sp.i, sp.j, f64::from(sp.sign));
    }

    // Attach pin values to class roots; detect conflicts.
    let mut pin_value: Vec<Option<f64>> = vec![None; k];
    for p in pins {
        if p.k >= k {
            return Err(EstgenError::ConstraintIndexOutOfRange(p.k, k));
        }
        let (root, s) = classes.find(p.k);
        let value_at_root = p.value * s; // w_k = s·w_root and s² = 1
        if let Some(prev) = pin_value[root] {
            if prev != value_at_root {
                return Err(EstgenError::InconsistentPins {
                    index: p.k,
                    a: prev,
                    b: value_at_root,
                });
            }
        }
        pin_value[root] = Some(value_at_root);
    }
    #[allow(clippy::needless_range_loop)]
    for root in 0..k {
        if classes.forced_zero[root] && classes.parent[root] == root {
            match pin_value[root] {
                Some(v) if v != 0.0 => {
                    return Err(EstgenError::InconsistentPins {
                        index: root,
                        a: 0.0,
                        b: v,
                    });
                }
                _ => pin_value[root] = Some(0.0),
            }
        }
    }

    // Column map for free classes; pinned classes move to the RHS.
    let mut col_of_root: Vec<Option<usize>> = vec![None; k];
    let mut nfree = 0usize;
    for i in 0..k {
        let (root, _) = classes.find(i);
        if pin_value[root].is_none() && col_of_root[root].is_none() {
            col_of_root[root] = Some(nfree);
            nfree += 1;
        }
    }

    let rows = system.matrix.nrows();
    let mut reduced = DMatrix::zeros(rows, nfree);
    let mut b = system.rhs.clone();
    for i in 0..k {
        let (root, s) = classes.find(i);
        match pin_value[root] {
            Some(v) => {
                for r in 0..rows {
                    b[r] -= system.matrix[(r, i)] * s * v;
                }
            }
            None => {
                let c = col_of_root[root].expect("free class has a column");
                for r in 0..rows {
                    reduced[(r, c)] += system.matrix[(r, i)] * s;
                }
            }
        }
    }

    let (y, residual, nullspace_dim) = min_norm_lstsq(&reduced, &b);

    let threshold = FEASIBILITY_TOL_REL * (1.0 + system.rhs.norm());
    if residual > threshold {
        return Err(EstgenError::Infeasible {
            residual,
            threshold,
        });
    }

    let mut w = vec![0.0; k];
    for (i, wi) in w.iter_mut().enumerate() {
        let (root, s) = classes.find(i);
        *wi = s * match pin_value[root] {
            Some(v) => v,
            None => y[col_of_root[root].expect("free class has a column")],
        };
    }

    Ok(EstimatorWeights {
        w,
        order: system.ell,
        residual,
        nullspace_dim,
    })
}

/// Minimum-norm least-squares solution via SVD with relative rank cutoff.
/// Returns (solution, residual norm, nullspace dimension).
fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64, usize) {
    let ncols = a.ncols();
    if ncols == 0 {
        return (DVector::zeros(0), b.norm(), 0);
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_CUTOFF_REL * sigma_max;
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let mut y = DVector::zeros(ncols);
    let mut rank = 0usize;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            let proj = u.column(i).dot(b) / s;
            y += vt.row(i).transpose() * proj;
        }
    }
    let residual = (a * &y - b).norm();
    // The SVD is thin: it exposes min(rows, cols) singular values; any extra
    // columns beyond that are automatically rank-deficient directions.
    let nullspace_dim = ncols - rank;
    (y, residual, nullspace_dim)
}

/// Per-grade residual report from [`verify_order`].
#[derive(Clone, Debug)]
pub struct OrderReport {
    pub truncation: u32,
    /// `residual_by_grade[g]` is the largest |coefficient| deviation from the
    /// exact-flow exponential among words of grade g, for g = 0..=truncation.
    pub residual_by_grade: Vec<f64>,
    /// Largest g with all residuals ≤ 1e−10 through grade g.
    pub order: u32,
}

/// Grade-wise deviation of the scheme (or, when weights are given, of the
/// weighted prefix combination) from the exact-flow exponential, truncated at
/// grade `n`.
pub fn verify_order(
    scheme: &SchemeSpec,
    weights: Option<&EstimatorWeights>,
    n: u32,
) -> Result<OrderReport, EstgenError> {
    if n > MAX_GRADE {
        return Err(EstgenError::Algebra(OpalgError::GradeTooLarge(n)));
    }
    let candidate = match weights {
        None => full_product(scheme, n)?,
        Some(ew) => {
            let products = prefix_products(scheme, n)?;
            let mut acc = Series::zero(n);
            for (k, p) in products.iter().enumerate() {
                let wk = ew.w.get(k).copied().unwrap_or(0.0);
                if wk != 0.0 {
                    acc = series_add(&acc, &p.scaled(wk))?;
                }
            }
            acc
        }
    };
    let target = series_exp(&exact_flow_exponent(scheme.family, n))?;
    let diff = series_sub(&candidate, &target)?;
    let residual_by_grade: Vec<f64> = (0..=n).map(|g| diff.max_abs_at_grade(g)).collect();
    let mut order = 0;
    for g in 1..=n {
        if residual_by_grade[g as usize] <= ORDER_RESIDUAL_TOL {
            order = g;
        } else {
            break;
        }
    }
    Ok(OrderReport {
        truncation: n,
        residual_by_grade,
        order,
    })
}

/// Estimator recipe: target order plus the constraints that select the
/// solution (templates are supplied explicitly, never auto-detected).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub order: u32,
    #[serde(default)]
    pub symmetry: Vec<SymPair>,
    #[serde(default)]
    pub pins: Vec<Pin>,
}

/// Derive weights for a scheme and an estimator recipe.
pub fn derive_weights(
    scheme: &SchemeSpec,
    spec: &EstimatorSpec,
) -> Result<EstimatorWeights, EstgenError> {
    let system = assemble_system(scheme, spec.order)?;
    solve_weights(&system, &spec.symmetry, &spec.pins)
}

/// On-disk scheme description (TOML):
///
/// ```toml
/// family = "SS"            # SS | MethodAdjoint | Splitting
/// declared_order = 4
///
/// [[stages]]
/// role = "S2"              # S2 | BasicChi | AdjointChi | FlowA | FlowB
/// coeff = 0.41449077179437571
///
/// [[estimators]]
/// order = 3
/// symmetry = [{ i = 4, j = 1, sign = 1 }, { i = 3, j = 2, sign = 1 }]
/// pins = []
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub family: Family,
    pub declared_order: u32,
    pub stages: Vec<StageEntry>,
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub role: Role,
    pub coeff: f64,
}

impl SchemeFile {
    pub fn from_scheme(scheme: &SchemeSpec, estimators: Vec<EstimatorSpec>) -> Self {
        SchemeFile {
            family: scheme.family,
            declared_order: scheme.declared_order,
            stages: scheme
                .stages
                .iter()
                .map(|&(role, coeff)| StageEntry { role, coeff })
                .collect(),
            estimators,
        }
    }

    pub fn to_scheme(&self) -> Result<SchemeSpec, EstgenError> {
        let spec = SchemeSpec {
            family: self.family,
            stages: self.stages.iter().map(|s| (s.role, s.coeff)).collect(),
            declared_order: self.declared_order,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, EstgenError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EstgenError> {
        let text = toml::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
