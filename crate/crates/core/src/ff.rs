//! Exact arithmetic and dense linear algebra over a prime field `Z_p`.
//!
//! Every stored residue is already reduced mod `p`. The modulus is desk-scale
//! (below `2^32`), so products of two residues fit in a `u64`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{HsaError, Result};

/// Deterministic trial-division primality test.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut i = 3u64;
    while i * i <= n {
        if n.is_multiple_of(i) {
            return false;
        }
        i += 2;
    }
    true
}

/// Smallest prime strictly greater than `bound`.
pub fn next_prime_above(bound: u64) -> u64 {
    let mut c = bound + 1;
    while !is_prime(c) {
        c += 1;
    }
    c
}

/// The prime field `Z_p` as a value: all element operations go through it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fp {
    p: u64,
}

impl Fp {
    /// Largest modulus accepted; keeps `a * b` inside `u64`.
    pub const MAX_MODULUS: u64 = 1 << 31;

    pub fn new(p: u64) -> Result<Self> {
        if !is_prime(p) {
            return Err(HsaError::InvalidParams(format!("modulus {p} is not prime")));
        }
        if p >= Self::MAX_MODULUS {
            return Err(HsaError::InvalidParams(format!("modulus {p} is too large")));
        }
        Ok(Self { p })
    }

    #[inline]
    pub fn modulus(self) -> u64 {
        self.p
    }

    #[inline]
    pub fn reduce(self, a: u64) -> u64 {
        a % self.p
    }

    /// Reduce a signed integer into `[0, p)`.
    #[inline]
    pub fn reduce_signed(self, a: i64) -> u64 {
        a.rem_euclid(self.p as i64) as u64
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        a * b % self.p
    }

    pub fn pow(self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.p;
        base %= self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(self, a: u64) -> Option<u64> {
        if a.is_multiple_of(self.p) {
            None
        } else {
            Some(self.pow(a, self.p - 2))
        }
    }
}

/// Parameters shared by every stage: the field, the model alphabet and the
/// number of clients (equal to the number of relays).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    field: Fp,
    alphabet: u64,
    clients: usize,
}

impl FieldConfig {
    /// Checks that `p` is prime and large enough for the integer sum of
    /// `clients` entries from `{0, .., alphabet-1}` to be recovered uniquely.
    pub fn new(p: u64, alphabet: u64, clients: usize) -> Result<Self> {
        if alphabet < 2 {
            return Err(HsaError::InvalidParams(format!("alphabet size q={alphabet} must be at least 2")));
        }
        if clients < 2 {
            return Err(HsaError::InvalidParams(format!("client count K={clients} must be at least 2")));
        }
        let field = Fp::new(p)?;
        let max_sum = Self::max_sum_of(alphabet, clients);
        if p <= max_sum {
            return Err(HsaError::InvalidParams(format!(
                "p={p} must exceed K(q-1)={max_sum} for a unique integer lift"
            )));
        }
        Ok(Self { field, alphabet, clients })
    }

    /// Default modulus: the smallest admissible prime.
    pub fn with_default_prime(alphabet: u64, clients: usize) -> Result<Self> {
        Self::new(next_prime_above(Self::max_sum_of(alphabet, clients)), alphabet, clients)
    }

    fn max_sum_of(alphabet: u64, clients: usize) -> u64 {
        clients as u64 * alphabet.saturating_sub(1)
    }

    pub fn field(&self) -> Fp {
        self.field
    }

    pub fn p(&self) -> u64 {
        self.field.p
    }

    pub fn q(&self) -> u64 {
        self.alphabet
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    /// Largest possible integer sum of one coordinate across all clients.
    pub fn max_sum(&self) -> u64 {
        Self::max_sum_of(self.alphabet, self.clients)
    }
}

/// A vector over `Z_p`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldVector {
    field: Fp,
    entries: Vec<u64>,
}

impl FieldVector {
    pub fn zeros(field: Fp, len: usize) -> Self {
        Self { field, entries: vec![0; len] }
    }

    /// Builds a vector, reducing every entry.
    pub fn from_values(field: Fp, values: impl IntoIterator<Item = u64>) -> Self {
        Self { field, entries: values.into_iter().map(|v| field.reduce(v)).collect() }
    }

    pub fn field(&self) -> Fp {
        self.field
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> u64 {
        self.entries[i]
    }

    pub fn set(&mut self, i: usize, v: u64) {
        self.entries[i] = self.field.reduce(v);
    }

    pub fn dot(&self, other: &[u64]) -> u64 {
        assert_eq!(self.entries.len(), other.len(), "dot product length mismatch");
        let f = self.field;
        self.entries.iter().zip(other).fold(0, |acc, (&a, &b)| f.add(acc, f.mul(a, f.reduce(b))))
    }

    pub fn add_assign(&mut self, other: &FieldVector) {
        assert_eq!(self.len(), other.len(), "vector length mismatch");
        let f = self.field;
        for (a, &b) in self.entries.iter_mut().zip(&other.entries) {
            *a = f.add(*a, b);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0)
    }

    pub fn into_vec(self) -> Vec<u64> {
        self.entries
    }
}

impl fmt::Debug for FieldVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} mod {}", self.entries, self.field.p)
    }
}

/// A dense row-major matrix over `Z_p`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldMatrix {
    field: Fp,
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl fmt::Debug for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}x{} mod {}", self.rows, self.cols, self.field.p)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        Ok(())
    }
}

/// Reduced row-echelon form together with its pivot columns.
struct Echelon {
    m: FieldMatrix,
    pivots: Vec<usize>,
}

impl FieldMatrix {
    pub fn zeros(field: Fp, rows: usize, cols: usize) -> Self {
        Self { field, rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(field: Fp, n: usize) -> Self {
        let mut m = Self::zeros(field, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1 % field.p;
        }
        m
    }

    /// Builds from nested rows, reducing every entry. `cols` is needed to
    /// give an empty row list a width.
    pub fn from_rows(field: Fp, cols: usize, rows: &[Vec<u64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(HsaError::ShapeMismatch(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend(r.iter().map(|&v| field.reduce(v)));
        }
        Ok(Self { field, rows: rows.len(), cols, data })
    }

    /// Like [`FieldMatrix::from_rows`] for literals known to be rectangular.
    pub fn from_literal<const C: usize>(field: Fp, rows: &[[u64; C]]) -> Self {
        let rows: Vec<Vec<u64>> = rows.iter().map(|r| r.to_vec()).collect();
        Self::from_rows(field, C, &rows).expect("literal rows are rectangular")
    }

    pub fn field(&self) -> Fp {
        self.field
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = self.field.reduce(v);
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vector(&self, r: usize) -> FieldVector {
        FieldVector { field: self.field, entries: self.row(r).to_vec() }
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn column(&self, c: usize) -> Vec<u64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.field, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn mul(&self, rhs: &FieldMatrix) -> Result<FieldMatrix> {
        if self.cols != rhs.rows {
            return Err(HsaError::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let f = self.field;
        let mut out = Self::zeros(f, self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    let idx = i * rhs.cols + j;
                    out.data[idx] = f.add(out.data[idx], f.mul(a, rhs.get(k, j)));
                }
            }
        }
        Ok(out)
    }

    /// Row vector times matrix.
    pub fn left_apply(&self, v: &[u64]) -> Vec<u64> {
        assert_eq!(v.len(), self.rows, "left_apply length mismatch");
        let f = self.field;
        let mut out = vec![0; self.cols];
        for (r, &a) in v.iter().enumerate() {
            if a == 0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o = f.add(*o, f.mul(a, m));
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn apply(&self, v: &[u64]) -> Vec<u64> {
        assert_eq!(v.len(), self.cols, "apply length mismatch");
        let f = self.field;
        (0..self.rows).map(|r| self.row(r).iter().zip(v).fold(0, |acc, (&a, &b)| f.add(acc, f.mul(a, b)))).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Self { field: self.field, rows: idx.len(), cols: self.cols, data }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(self.field, self.rows, idx.len());
        for r in 0..self.rows {
            for (j, &c) in idx.iter().enumerate() {
                out.data[r * idx.len() + j] = self.get(r, c);
            }
        }
        out
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &FieldMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(HsaError::ShapeMismatch(format!("vstack: {} vs {} columns", self.cols, other.cols)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { field: self.field, rows: self.rows + other.rows, cols: self.cols, data })
    }

    /// Places `other` to the right of `self`.
    pub fn hstack(&self, other: &FieldMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(HsaError::ShapeMismatch(format!("hstack: {} vs {} rows", self.rows, other.rows)));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Self { field: self.field, rows: self.rows, cols, data })
    }

    /// Gauss-Jordan elimination, pivoting on the first nonzero entry in
    /// column order.
    fn echelon(&self) -> Echelon {
        let f = self.field;
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(pr) = (r..m.rows).find(|&i| m.get(i, c) != 0) else {
                continue;
            };
            if pr != r {
                for j in 0..m.cols {
                    m.data.swap(pr * m.cols + j, r * m.cols + j);
                }
            }
            let inv = f.inv(m.get(r, c)).expect("pivot is nonzero");
            for j in 0..m.cols {
                let idx = r * m.cols + j;
                m.data[idx] = f.mul(m.data[idx], inv);
            }
            for i in 0..m.rows {
                if i == r {
                    continue;
                }
                let factor = m.get(i, c);
                if factor == 0 {
                    continue;
                }
                for j in c..m.cols {
                    let sub = f.mul(factor, m.data[r * m.cols + j]);
                    let idx = i * m.cols + j;
                    m.data[idx] = f.sub(m.data[idx], sub);
                }
            }
            pivots.push(c);
            r += 1;
        }
        Echelon { m, pivots }
    }

    pub fn rank(&self) -> usize {
        self.echelon().pivots.len()
    }

    /// Reduced row-echelon form with zero rows dropped.
    pub fn rref(&self) -> FieldMatrix {
        let e = self.echelon();
        let idx: Vec<usize> = (0..e.pivots.len()).collect();
        e.m.select_rows(&idx)
    }

    /// Basis of the right nullspace `{x : M x = 0}`, one basis vector per row.
    pub fn right_nullspace(&self) -> FieldMatrix {
        let f = self.field;
        let e = self.echelon();
        let mut is_pivot = vec![false; self.cols];
        for &c in &e.pivots {
            is_pivot[c] = true;
        }
        let free: Vec<usize> = (0..self.cols).filter(|&c| !is_pivot[c]).collect();
        let mut basis = FieldMatrix::zeros(f, free.len(), self.cols);
        for (b, &fc) in free.iter().enumerate() {
            basis.data[b * self.cols + fc] = 1;
            for (pr, &pc) in e.pivots.iter().enumerate() {
                basis.data[b * self.cols + pc] = f.neg(e.m.get(pr, fc));
            }
        }
        basis
    }

    /// Basis of the left nullspace `{v : v M = 0}`, one basis vector per row.
    pub fn left_nullspace(&self) -> FieldMatrix {
        self.transpose().right_nullspace()
    }

    /// Finds `C` with `C * self = b`. Free variables are fixed to zero, so the
    /// answer is a deterministic function of the inputs. Returns `None` when
    /// some row of `b` lies outside the row space of `self`.
    pub fn solve_left(&self, b: &FieldMatrix) -> Result<Option<FieldMatrix>> {
        if self.cols != b.cols {
            return Err(HsaError::ShapeMismatch(format!("solve_left: A has {} columns, B has {}", self.cols, b.cols)));
        }
        // C A = B  <=>  A^T C^T = B^T; eliminate on [A^T | B^T].
        let aug = self.transpose().hstack(&b.transpose())?;
        let e = aug.echelon();
        let n = self.rows;
        if e.pivots.iter().any(|&c| c >= n) {
            return Ok(None);
        }
        let mut c = FieldMatrix::zeros(self.field, b.rows, n);
        for (pr, &pc) in e.pivots.iter().enumerate() {
            for j in 0..b.rows {
                c.data[j * n + pc] = e.m.get(pr, n + j);
            }
        }
        Ok(Some(c))
    }

    /// Dimension of the intersection of the row spaces of `self` and `other`.
    pub fn row_space_intersection_dim(&self, other: &FieldMatrix) -> Result<usize> {
        let joint = self.vstack(other)?.rank();
        Ok(self.rank() + other.rank() - joint)
    }

    /// True when every row of `other` lies in the row space of `self`.
    pub fn row_space_contains(&self, other: &FieldMatrix) -> Result<bool> {
        Ok(self.vstack(other)?.rank() == self.rank())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f13() -> Fp {
        Fp::new(13).unwrap()
    }

    fn example_key_rows() -> FieldMatrix {
        FieldMatrix::from_literal(f13(), &[[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 2, 4], [11, 10, 8]])
    }

    fn example_key_mixing() -> FieldMatrix {
        FieldMatrix::from_literal(f13(), &[[1, 3, 6], [10, 9, 7], [9, 6, 1], [0, 11, 3], [4, 9, 9]])
    }

    #[test]
    fn next_prime_examples() {
        assert_eq!(next_prime_above(10), 11);
        assert_eq!(next_prime_above(1), 2);
        assert_eq!(next_prime_above(2), 3);
        assert_eq!(next_prime_above(13), 17);
    }

    #[test]
    fn field_config_rejects_small_or_composite_modulus() {
        assert!(FieldConfig::new(13, 3, 5).is_ok());
        assert!(FieldConfig::new(11, 3, 5).is_ok());
        assert!(FieldConfig::new(7, 3, 5).is_err());
        assert!(FieldConfig::new(15, 3, 5).is_err());
        assert!(FieldConfig::new(13, 1, 5).is_err());
        assert_eq!(FieldConfig::with_default_prime(3, 5).unwrap().p(), 11);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(FieldMatrix::identity(f13(), 3).rank(), 3);
        assert_eq!(example_key_rows().rank(), 3);
        assert_eq!(FieldMatrix::zeros(f13(), 2, 5).rank(), 0);
    }

    #[test]
    fn solve_left_identity_returns_rhs() {
        let b = FieldMatrix::from_literal(f13(), &[[3, 4, 5], [12, 0, 7]]);
        let c = FieldMatrix::identity(f13(), 3).solve_left(&b).unwrap().unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn solve_left_zero_matrix_has_no_solution() {
        let a = FieldMatrix::zeros(f13(), 2, 3);
        let b = FieldMatrix::from_literal(f13(), &[[1, 0, 0]]);
        assert!(a.solve_left(&b).unwrap().is_none());
    }

    #[test]
    fn nullspace_examples() {
        assert_eq!(FieldMatrix::identity(f13(), 4).left_nullspace().rows(), 0);
        let z = FieldMatrix::zeros(f13(), 1, 1);
        assert_eq!(z.left_nullspace().to_rows(), vec![vec![1]]);

        let m = example_key_mixing();
        // Rank 2, not 3: rows 4 and 5 are combinations of the first two.
        assert_eq!(m.rank(), 2);
        let ns = m.left_nullspace();
        assert_eq!(ns.rows(), 3);
        for r in 0..ns.rows() {
            assert!(m.left_apply(ns.row(r)).iter().all(|&v| v == 0));
        }
    }

    fn small_prime() -> impl Strategy<Value = u64> {
        prop::sample::select(vec![2u64, 3, 5, 7, 11, 13, 17, 101])
    }

    fn matrix(p: u64, max_dim: usize) -> impl Strategy<Value = FieldMatrix> {
        (1..=max_dim, 1..=max_dim).prop_flat_map(move |(r, c)| {
            prop::collection::vec(0..p, r * c).prop_map(move |data| {
                let f = Fp::new(p).unwrap();
                let rows: Vec<Vec<u64>> = data.chunks(c).map(|ch| ch.to_vec()).collect();
                FieldMatrix::from_rows(f, c, &rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn field_axioms(p in small_prime(), a in 0u64..1000, b in 0u64..1000, c in 0u64..1000) {
            let f = Fp::new(p).unwrap();
            let (a, b, c) = (f.reduce(a), f.reduce(b), f.reduce(c));
            prop_assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
            prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
            prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
            prop_assert_eq!(f.add(a, f.neg(a)), 0);
            prop_assert_eq!(f.sub(f.add(a, b), b), a);
            if a != 0 {
                prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
            }
        }

        #[test]
        fn rank_is_transpose_invariant(m in small_prime().prop_flat_map(|p| matrix(p, 6))) {
            prop_assert_eq!(m.rank(), m.transpose().rank());
        }

        #[test]
        fn left_nullspace_is_annihilating_and_complete(m in small_prime().prop_flat_map(|p| matrix(p, 6))) {
            let ns = m.left_nullspace();
            prop_assert_eq!(ns.rows(), m.rows() - m.rank());
            prop_assert_eq!(ns.rank(), ns.rows());
            for r in 0..ns.rows() {
                prop_assert!(m.left_apply(ns.row(r)).iter().all(|&v| v == 0));
            }
        }

        #[test]
        fn solve_left_is_exact_or_provably_inconsistent(
            (a, b) in small_prime().prop_flat_map(|p| {
                matrix(p, 5).prop_flat_map(move |a| {
                    let cols = a.cols();
                    (Just(a), prop::collection::vec(0..p, cols * 2))
                })
            })
        ) {
            let f = a.field();
            let rows: Vec<Vec<u64>> = b.chunks(a.cols()).map(|c| c.to_vec()).collect();
            let b = FieldMatrix::from_rows(f, a.cols(), &rows).unwrap();
            match a.solve_left(&b).unwrap() {
                Some(c) => prop_assert_eq!(c.mul(&a).unwrap(), b),
                // Independent check: appending B's rows must raise the rank.
                None => prop_assert!(a.vstack(&b).unwrap().rank() > a.rank()),
            }
        }

        #[test]
        fn solvable_systems_are_found(
            (a, c) in small_prime().prop_flat_map(|p| {
                matrix(p, 5).prop_flat_map(move |a| {
                    let rows = a.rows();
                    (Just(a), prop::collection::vec(0..p, rows * 2))
                })
            })
        ) {
            let f = a.field();
            let rows: Vec<Vec<u64>> = c.chunks(a.rows()).map(|ch| ch.to_vec()).collect();
            let c = FieldMatrix::from_rows(f, a.rows(), &rows).unwrap();
            let b = c.mul(&a).unwrap();
            let found = a.solve_left(&b).unwrap().expect("B is in the row space by construction");
            prop_assert_eq!(found.mul(&a).unwrap(), b);
        }
    }
}
