//! Binary vectors over the affected equivalence classes.
//!
//! Projecting a state vector onto the column space of a matrix whose columns
//! are distinct standard basis vectors keeps exactly the selected
//! coordinates, so every least-squares projection here is an elementwise AND.
//! The dense real-valued formulation lives in [`reference`] and is only used
//! to cross-check the bit operations.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Serialize, Serializer};
use smallvec::{smallvec, SmallVec};
use thiserror::Error;

use crate::prefix::Prefix;
use crate::types::{Interface, PortId, RouterId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("output vector has a class the input does not")]
    InvalidPair,
    #[error("no prefix for coordinate {0}")]
    MissingMapping(usize),
    #[error("matrix columns are not distinct standard basis vectors")]
    NonOrthonormalColumns,
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
}

fn check_dims(a: usize, b: usize) -> Result<(), VectorError> {
    if a == b {
        Ok(())
    } else {
        Err(VectorError::DimensionMismatch { left: a, right: b })
    }
}

/// Fixed-width bit set; coordinate `j` is bit `j % 64` of word `j / 64`.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct StateVector {
    words: SmallVec<[u64; 2]>,
    dim: usize,
}

impl StateVector {
    pub fn zeros(dim: usize) -> Self {
        Self { words: smallvec![0; dim.div_ceil(64)], dim }
    }

    pub fn ones(dim: usize) -> Self {
        let mut v = Self { words: smallvec![u64::MAX; dim.div_ceil(64)], dim };
        v.trim();
        v
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            if b != 0 {
                v.set(j, true);
            }
        }
        v
    }

    pub fn from_indices(dim: usize, ones: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(dim);
        for j in ones {
            v.set(j, true);
        }
        v
    }

    fn trim(&mut self) {
        let rem = self.dim % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize) -> bool {
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn set(&mut self, j: usize, value: bool) {
        assert!(j < self.dim, "coordinate {j} out of range {}", self.dim);
        let mask = 1u64 << (j % 64);
        if value {
            self.words[j / 64] |= mask;
        } else {
            self.words[j / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// `self ≤ other` elementwise.
    pub fn is_subset(&self, other: &Self) -> bool {
        self.dim == other.dim && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn ones_iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + bit)
            })
        })
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.dim).map(|j| self.get(j) as u8).collect()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self, VectorError> {
        check_dims(self.dim, other.dim)?;
        let words = self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { words, dim: self.dim })
    }

    pub fn and(&self, other: &Self) -> Result<Self, VectorError> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Result<Self, VectorError> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn xor(&self, other: &Self) -> Result<Self, VectorError> {
        self.zip_with(other, |a, b| a ^ b)
    }

    /// `self AND NOT other`.
    pub fn and_not(&self, other: &Self) -> Result<Self, VectorError> {
        self.zip_with(other, |a, b| a & !b)
    }

    pub(crate) fn or_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for j in 0..self.dim {
            if j > 0 {
                f.write_str(",")?;
            }
            f.write_str(if self.get(j) { "1" } else { "0" })?;
        }
        f.write_str("]")
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_bits().serialize(s)
    }
}

/// Classes a router sends out one port (or, with [`PortId::ALL`], out any port).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ForwardingVector {
    pub entries: StateVector,
    pub owner: Interface,
}

impl ForwardingVector {
    pub fn new(owner: Interface, entries: StateVector) -> Self {
        Self { entries, owner }
    }
}

/// Classes an ACL lets through at one router.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterVector {
    pub entries: StateVector,
    pub router: RouterId,
}

/// Sparse binary `m × m` matrix stored by column. Columns without an entry
/// act as the identity column.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransformMatrix {
    dim: usize,
    columns: Vec<Option<Vec<u32>>>,
}

impl TransformMatrix {
    pub fn identity(dim: usize) -> Self {
        Self { dim, columns: vec![None; dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Replaces column `k` with the given rows. Duplicates are tolerated.
    pub fn set_column(&mut self, k: usize, rows: impl IntoIterator<Item = usize>) -> Result<(), VectorError> {
        if k >= self.dim {
            return Err(VectorError::IndexOutOfRange { index: k, dim: self.dim });
        }
        let mut col = Vec::new();
        for r in rows {
            if r >= self.dim {
                return Err(VectorError::IndexOutOfRange { index: r, dim: self.dim });
            }
            col.push(r as u32);
        }
        col.sort_unstable();
        col.dedup();
        self.columns[k] = Some(col);
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.columns.iter().enumerate().all(|(k, c)| c.as_ref().is_none_or(|c| c.as_slice() == [k as u32]))
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        match &self.columns[col] {
            None => row == col,
            Some(rows) => rows.binary_search(&(row as u32)).is_ok(),
        }
    }

    /// Dense row-major 0/1 rendering.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.dim).map(|r| (0..self.dim).map(|c| self.get(r, c) as u8).collect()).collect()
    }

    /// Builds the matrix for header rewrites `matched -> output` over an
    /// explicit class list. Class `k` inside a rule's `matched` prefix (the
    /// longest such rule wins) maps to every class intersecting its rewritten
    /// image. The result is exact when each image lies within one class and
    /// over-approximates otherwise.
    pub fn from_rules(classes: &[Prefix], rules: &[(Prefix, Prefix)]) -> Self {
        let mut t = Self::identity(classes.len());
        for (k, class) in classes.iter().enumerate() {
            let Some((matched, output)) =
                rules.iter().filter(|(m, _)| m.contains(class)).max_by_key(|(m, _)| m.len())
            else {
                continue;
            };
            let image = class.rewrite(matched, output);
            let rows = classes.iter().enumerate().filter(|(_, c)| c.overlaps(&image)).map(|(j, _)| j);
            t.set_column(k, rows).expect("rows are in range");
        }
        t
    }
}

/// Outcome of projecting a non-empty state onto one port's subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProjectionCase {
    PartialForward,
    FullForward,
    Blocked,
}

/// Error vector and its l2 norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionError {
    pub error_vector: StateVector,
    pub l2: f64,
}

pub fn project(v: &ForwardingVector, b: &StateVector) -> Result<StateVector, VectorError> {
    v.entries.and(b)
}

pub fn classify_case(v: &ForwardingVector, b: &StateVector) -> Result<ProjectionCase, VectorError> {
    let p = project(v, b)?;
    if b.is_zero() {
        return Err(VectorError::EmptyInput);
    }
    Ok(if p == *b {
        ProjectionCase::FullForward
    } else if p.is_zero() {
        ProjectionCase::Blocked
    } else {
        ProjectionCase::PartialForward
    })
}

/// `unit_step(T · b)`.
pub fn transform(t: &TransformMatrix, b: &StateVector) -> Result<StateVector, VectorError> {
    check_dims(t.dim, b.dim())?;
    let mut out = StateVector::zeros(b.dim());
    for k in b.ones_iter() {
        match &t.columns[k] {
            None => out.set(k, true),
            Some(rows) => rows.iter().for_each(|&r| out.set(r as usize, true)),
        }
    }
    Ok(out)
}

pub fn filter(g: &FilterVector, b: &StateVector) -> Result<StateVector, VectorError> {
    g.entries.and(b)
}

pub fn union_forwarding(vs: &[ForwardingVector]) -> Result<ForwardingVector, VectorError> {
    let first = vs.first().ok_or(VectorError::EmptyInput)?;
    let mut acc = first.entries.clone();
    for v in &vs[1..] {
        check_dims(acc.dim(), v.entries.dim())?;
        acc.or_assign(&v.entries);
    }
    Ok(ForwardingVector::new(Interface::new(first.owner.router, PortId::ALL), acc))
}

pub fn blackhole_residual(b_in: &StateVector, b_out: &StateVector) -> Result<StateVector, VectorError> {
    check_dims(b_in.dim(), b_out.dim())?;
    if !b_out.is_subset(b_in) {
        return Err(VectorError::InvalidPair);
    }
    b_in.xor(b_out)
}

pub fn l2_of(error: &StateVector) -> f64 {
    (error.count_ones() as f64).sqrt()
}

pub fn projection_error(b_in: &StateVector, b_out: &StateVector) -> Result<ProjectionError, VectorError> {
    let error_vector = blackhole_residual(b_in, b_out)?;
    let l2 = l2_of(&error_vector);
    Ok(ProjectionError { error_vector, l2 })
}

pub fn accumulate_reachable(acc: &StateVector, b_d: &StateVector) -> Result<StateVector, VectorError> {
    acc.or(b_d)
}

pub fn decode_reachable(b: &StateVector, id_to_prefix: &[Prefix]) -> Result<BTreeSet<Prefix>, VectorError> {
    if id_to_prefix.len() < b.dim() {
        return Err(VectorError::MissingMapping(id_to_prefix.len()));
    }
    Ok(b.ones_iter().map(|j| id_to_prefix[j]).collect())
}

/// Inverse of [`decode_reachable`]: marks every coordinate whose class is
/// contained in one of `prefixes`.
pub fn encode(prefixes: &BTreeSet<Prefix>, id_to_prefix: &[Prefix]) -> StateVector {
    StateVector::from_indices(
        id_to_prefix.len(),
        id_to_prefix.iter().enumerate().filter(|(_, c)| prefixes.iter().any(|p| p.contains(c))).map(|(j, _)| j),
    )
}

/// Dense least-squares formulation, kept as an executable reference.
pub mod reference {
    use nalgebra::{DMatrix, DVector};

    use super::{StateVector, VectorError};

    /// Real `m × n` matrix whose columns should be distinct standard basis
    /// vectors.
    #[derive(Debug, Clone, PartialEq)]
    pub struct DenseMatrix(pub DMatrix<f64>);

    impl DenseMatrix {
        /// Columns `e_j` for every coordinate set in `v`, in ascending order.
        pub fn from_selection(v: &StateVector) -> Self {
            let cols: Vec<usize> = v.ones_iter().collect();
            let mut a = DMatrix::zeros(v.dim(), cols.len());
            for (c, &j) in cols.iter().enumerate() {
                a[(j, c)] = 1.0;
            }
            Self(a)
        }

        fn check_basis(&self) -> Result<(), VectorError> {
            let a = &self.0;
            let mut seen = vec![false; a.nrows()];
            for c in 0..a.ncols() {
                let mut hit = None;
                for r in 0..a.nrows() {
                    match a[(r, c)] {
                        0.0 => {}
                        x if x == 1.0 && hit.is_none() => hit = Some(r),
                        _ => return Err(VectorError::NonOrthonormalColumns),
                    }
                }
                match hit {
                    Some(r) if !seen[r] => seen[r] = true,
                    _ => return Err(VectorError::NonOrthonormalColumns),
                }
            }
            Ok(())
        }
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct LeastSquares {
        pub x_hat: DVector<f64>,
        pub projection: DVector<f64>,
    }

    /// Solves `AᵀA x = Aᵀb` and returns `x̂` and the projection `A x̂`.
    pub fn least_squares_reference(a: &DenseMatrix, b: &DVector<f64>) -> Result<LeastSquares, VectorError> {
        a.check_basis()?;
        let a = &a.0;
        if a.nrows() != b.len() {
            return Err(VectorError::DimensionMismatch { left: a.nrows(), right: b.len() });
        }
        let at = a.transpose();
        let gram = &at * a;
        let x_hat = if gram.is_empty() {
            DVector::zeros(0)
        } else {
            let inv = gram.try_inverse().ok_or(VectorError::NonOrthonormalColumns)?;
            inv * (&at * b)
        };
        let projection = a * &x_hat;
        Ok(LeastSquares { x_hat, projection })
    }

    pub fn to_real(b: &StateVector) -> DVector<f64> {
        DVector::from_iterator(b.dim(), (0..b.dim()).map(|j| if b.get(j) { 1.0 } else { 0.0 }))
    }

    /// Rounds a real vector back to bits; `None` if any entry is not 0 or 1.
    pub fn to_bits(x: &DVector<f64>) -> Option<StateVector> {
        let mut out = StateVector::zeros(x.len());
        for (j, &v) in x.iter().enumerate() {
            if (v - 1.0).abs() < 1e-9 {
                out.set(j, true);
            } else if v.abs() >= 1e-9 {
                return None;
            }
        }
        Some(out)
    }
}
