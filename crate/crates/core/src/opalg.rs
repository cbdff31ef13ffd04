//! Truncated noncommutative power series over graded generators.
//!
//! A one-step integrator applied with step fraction α acts, on smooth
//! observables, like the exponential of a series of differential operators.
//! Working formally, each operator is a word in a family-specific set of
//! graded generators, where the grade records the attached power of h:
//!
//! * `SS` (composition of symmetric second-order kernels): generators
//!   F (grade 1) and Y3, Y5, ... (odd grades), since a symmetric kernel has an
//!   odd-in-α exponent: αF + α³Y3 + α⁵Y5 + ...
//! * `MethodAdjoint` (first-order kernel χ and its adjoint χ*): generators
//!   F, Y2, Y3, ... at every grade; χ contributes αF + α²Y2 + α³Y3 + ...,
//!   χ* contributes the alternating-sign variant.
//! * `Splitting` (exact flows of the two parts of f = f¹ + f²): generators
//!   A and B, both grade 1; a stage contributes aA or bB.
//!
//! Everything here is a finite computation: series are truncated at a grade
//! N ≤ [`MAX_GRADE`], and all products/exponentials are exact on the retained
//! grades. Coefficients are f64; the downstream solve/verify tolerances are
//! set for 64-bit arithmetic.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Highest supported truncation grade: order-8 methods plus one guard grade.
pub const MAX_GRADE: u32 = 9;

/// Scheme family; fixes the generator set and the stage-role pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Family {
    /// Palindromic compositions of a symmetric second-order kernel.
    SS,
    /// Alternating compositions of a first-order kernel and its adjoint.
    MethodAdjoint,
    /// Products of the exact flows of the two split parts.
    Splitting,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::SS => write!(f, "SS"),
            Family::MethodAdjoint => write!(f, "MethodAdjoint"),
            Family::Splitting => write!(f, "Splitting"),
        }
    }
}

/// Stage role within a scheme.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Role {
    /// Symmetric second-order kernel (Strang step), SS family.
    S2,
    /// First-order kernel χ (drift then kick), MethodAdjoint family.
    BasicChi,
    /// Adjoint kernel χ* (kick then drift), MethodAdjoint family.
    AdjointChi,
    /// Exact flow of the first split part (drift), Splitting family.
    FlowA,
    /// Exact flow of the second split part (kick), Splitting family.
    FlowB,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::S2 => write!(f, "S2"),
            Role::BasicChi => write!(f, "BasicChi"),
            Role::AdjointChi => write!(f, "AdjointChi"),
            Role::FlowA => write!(f, "FlowA"),
            Role::FlowB => write!(f, "FlowB"),
        }
    }
}

/// Graded generator symbol. Derived `Ord` gives F < Y2 < Y3 < ... < A < B,
/// the lexicographic rank used for word ordering.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Gen {
    F,
    Y(u8),
    A,
    B,
}

impl Gen {
    pub fn grade(self) -> u32 {
        match self {
            Gen::F | Gen::A | Gen::B => 1,
            Gen::Y(n) => u32::from(n),
        }
    }
}

impl fmt::Display for Gen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gen::F => write!(f, "F"),
            Gen::Y(n) => write!(f, "Y{n}"),
            Gen::A => write!(f, "A"),
            Gen::B => write!(f, "B"),
        }
    }
}

#[derive(Error, Debug, PartialEq)]
pub enum OpalgError {
    #[error("truncation orders differ: {left} vs {right}")]
    OrderMismatch { left: u32, right: u32 },
    #[error("series has nonzero empty-word coefficient {0}; exponential undefined")]
    NonzeroConstantTerm(f64),
    #[error("role {role} is not valid for family {family}")]
    RoleFamilyMismatch { family: Family, role: Role },
    #[error("truncation grade {0} exceeds the supported maximum {MAX_GRADE}")]
    GradeTooLarge(u32),
}

/// A word: finite sequence of generators. The empty word is the algebra unit.
/// Ordering is by (grade, lexicographic), which fixes a deterministic row
/// order for assembled weight systems.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Word(Vec<Gen>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn single(g: Gen) -> Self {
        Word(vec![g])
    }

    pub fn from_slice(gens: &[Gen]) -> Self {
        Word(gens.to_vec())
    }

    pub fn gens(&self) -> &[Gen] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sum of generator grades; additive under concatenation.
    pub fn grade(&self) -> u32 {
        self.0.iter().map(|g| g.grade()).sum()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Word(v)
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.grade()
            .cmp(&other.grade())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (i, g) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

/// The generator set a family uses, restricted to grades ≤ the truncation.
#[derive(Clone, Debug)]
pub struct GeneratorSet {
    pub family: Family,
    /// (symbol, grade) pairs; symbols are unique.
    pub entries: Vec<(Gen, u32)>,
}

/// Generators of `family` with grade ≤ `max_grade`.
pub fn generator_set(family: Family, max_grade: u32) -> GeneratorSet {
    let mut entries = Vec::new();
    match family {
        Family::SS => {
            entries.push((Gen::F, 1));
            let mut g = 3u32;
            while g <= max_grade {
                entries.push((Gen::Y(g as u8), g));
                g += 2;
            }
        }
        Family::MethodAdjoint => {
            entries.push((Gen::F, 1));
            for g in 2..=max_grade {
                entries.push((Gen::Y(g as u8), g));
            }
        }
        Family::Splitting => {
            entries.push((Gen::A, 1));
            entries.push((Gen::B, 1));
        }
    }
    GeneratorSet { family, entries }
}

impl GeneratorSet {
    /// All nonempty words of grade ≤ `l`, sorted by (grade, lex).
    pub fn words_up_to(&self, l: u32) -> Vec<Word> {
        let mut out = Vec::new();
        let mut current: Vec<Gen> = Vec::new();
        self.extend_words(l, 0, &mut current, &mut out);
        out.sort();
        out
    }

    fn extend_words(&self, l: u32, used: u32, current: &mut Vec<Gen>, out: &mut Vec<Word>) {
        for &(g, grade) in &self.entries {
            if used + grade > l {
                continue;
            }
            current.push(g);
            out.push(Word::from_slice(current));
            self.extend_words(l, used + grade, current, out);
            current.pop();
        }
    }
}

/// Sparse truncated series: map word → coefficient, all grades ≤ `order`.
/// Zero coefficients are dropped. Addition and multiplication are exact on
/// retained grades.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    order: u32,
    terms: BTreeMap<Word, f64>,
}

impl Series {
    pub fn zero(order: u32) -> Self {
        Series {
            order,
            terms: BTreeMap::new(),
        }
    }

    /// The multiplicative unit: empty word with coefficient 1.
    pub fn one(order: u32) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Word::empty(), 1.0);
        Series { order, terms }
    }

    /// Series with a single term. A word above the truncation grade is
    /// projected away (result is zero), matching truncation semantics.
    pub fn term(order: u32, word: Word, coeff: f64) -> Self {
        let mut s = Series::zero(order);
        s.insert_add(word, coeff);
        s
    }

    pub fn from_terms<I: IntoIterator<Item = (Word, f64)>>(order: u32, iter: I) -> Self {
        let mut s = Series::zero(order);
        for (w, c) in iter {
            s.insert_add(w, c);
        }
        s
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn coeff(&self, w: &Word) -> f64 {
        self.terms.get(w).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Word, f64)> {
        self.terms.iter().map(|(w, &c)| (w, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn insert_add(&mut self, w: Word, c: f64) {
        if c == 0.0 || w.grade() > self.order {
            return;
        }
        match self.terms.entry(w) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if *e.get() == 0.0 {
                    e.remove();
                }
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Series {
        if c == 0.0 {
            return Series::zero(self.order);
        }
        Series {
            order: self.order,
            terms: self
                .terms
                .iter()
                .map(|(w, &v)| (w.clone(), v * c))
                .collect(),
        }
    }

    /// Largest |coefficient| among words of grade exactly `g`.
    pub fn max_abs_at_grade(&self, g: u32) -> f64 {
        self.terms
            .iter()
            .filter(|(w, _)| w.grade() == g)
            .map(|(_, &c)| c.abs())
            .fold(0.0, f64::max)
    }

    /// Largest |coefficient| overall.
    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).fold(0.0, f64::max)
    }
}

/// Coefficientwise sum. Errors if the truncation orders differ.
pub fn series_add(a: &Series, b: &Series) -> Result<Series, OpalgError> {
    if a.order != b.order {
        return Err(OpalgError::OrderMismatch {
            left: a.order,
            right: b.order,
        });
    }
    let mut out = a.clone();
    for (w, c) in b.iter() {
        out.insert_add(w.clone(), c);
    }
    Ok(out)
}

/// a − b.
pub fn series_sub(a: &Series, b: &Series) -> Result<Series, OpalgError> {
    series_add(a, &b.scaled(-1.0))
}

/// Concatenation product; words above the truncation grade are discarded.
/// The truncated product equals the truncation of the untruncated product
/// because dropped words can never reappear at lower grade.
pub fn series_mul(a: &Series, b: &Series) -> Result<Series, OpalgError> {
    if a.order != b.order {
        return Err(OpalgError::OrderMismatch {
            left: a.order,
            right: b.order,
        });
    }
    let n = a.order;
    let mut out = Series::zero(n);
    for (wa, ca) in a.iter() {
        let ga = wa.grade();
        for (wb, cb) in b.iter() {
            if ga + wb.grade() > n {
                continue;
            }
            out.insert_add(wa.concat(wb), ca * cb);
        }
    }
    Ok(out)
}

/// exp(x) = Σ_{k≤N} x^k / k!, finite because x has no constant term so x^k
/// has minimum grade k. Errors on a nonzero empty-word coefficient.
pub fn series_exp(x: &Series) -> Result<Series, OpalgError> {
    let c0 = x.coeff(&Word::empty());
    if c0 != 0.0 {
        return Err(OpalgError::NonzeroConstantTerm(c0));
    }
    let n = x.order;
    let mut out = Series::one(n);
    let mut power = Series::one(n);
    let mut factorial = 1.0f64;
    for k in 1..=n {
        power = series_mul(&power, x)?;
        if power.is_zero() {
            break;
        }
        factorial *= k as f64;
        out = series_add(&out, &power.scaled(1.0 / factorial))?;
    }
    Ok(out)
}

/// The exponent (not the exponential) of one stage operator at truncation `n`:
///
/// * `(SS, S2, α)`: αF + α³Y3 + α⁵Y5 + ... (odd grades only)
/// * `(MethodAdjoint, BasicChi, α)`: αF + α²Y2 + α³Y3 + ...
/// * `(MethodAdjoint, AdjointChi, α)`: αF − α²Y2 + α³Y3 − ... (sign (−1)^{g+1})
/// * `(Splitting, FlowA, a)`: aA, `(Splitting, FlowB, b)`: bB
pub fn stage_series(family: Family, role: Role, coeff: f64, n: u32) -> Result<Series, OpalgError> {
    if n > MAX_GRADE {
        return Err(OpalgError::GradeTooLarge(n));
    }
    let mut s = Series::zero(n);
    match (family, role) {
        (Family::SS, Role::S2) => {
            let mut g = 1u32;
            while g <= n {
                let gen = if g == 1 { Gen::F } else { Gen::Y(g as u8) };
                s.insert_add(Word::single(gen), coeff.powi(g as i32));
                g += 2;
            }
        }
        (Family::MethodAdjoint, Role::BasicChi) => {
            for g in 1..=n {
                let gen = if g == 1 { Gen::F } else { Gen::Y(g as u8) };
                s.insert_add(Word::single(gen), coeff.powi(g as i32));
            }
        }
        (Family::MethodAdjoint, Role::AdjointChi) => {
            for g in 1..=n {
                let gen = if g == 1 { Gen::F } else { Gen::Y(g as u8) };
                let sign = if g % 2 == 0 { -1.0 } else { 1.0 };
                s.insert_add(Word::single(gen), sign * coeff.powi(g as i32));
            }
        }
        (Family::Splitting, Role::FlowA) => {
            s.insert_add(Word::single(Gen::A), coeff);
        }
        (Family::Splitting, Role::FlowB) => {
            s.insert_add(Word::single(Gen::B), coeff);
        }
        _ => return Err(OpalgError::RoleFamilyMismatch { family, role }),
    }
    Ok(s)
}

/// Exponent of the exact flow a scheme approximates: F for the composition
/// families, A + B for splitting.
pub fn exact_flow_exponent(family: Family, n: u32) -> Series {
    match family {
        Family::SS | Family::MethodAdjoint => Series::term(n, Word::single(Gen::F), 1.0),
        Family::Splitting => Series::from_terms(
            n,
            [(Word::single(Gen::A), 1.0), (Word::single(Gen::B), 1.0)],
        ),
    }
}
