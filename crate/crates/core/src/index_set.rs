//! Sparsity patterns over the lower triangle of a square matrix.
//!
//! An [`IndexSet`] is a subset of `{(i, j) : 1 <= j <= i <= n}` kept in
//! ascending lexicographic order. Positions are 1-based at the public
//! interface and stored 0-based internally.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower-triangular sparsity pattern of an `n x n` matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct IndexSet {
    n: usize,
    // zero-based (row, col), row >= col, lexicographically sorted
    pos: Vec<(usize, usize)>,
}

impl IndexSet {
    /// Builds a pattern from 1-based `(i, j)` pairs. Pairs are sorted and must
    /// be unique and lie in the lower triangle.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut pos = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            if j < 1 || j > i || i > n {
                return Err(Error::InvalidPattern(format!(
                    "({i},{j}) is not a lower-triangular position of a {n}x{n} matrix"
                )));
            }
            pos.push((i - 1, j - 1));
        }
        pos.sort_unstable();
        if pos.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidPattern("duplicate position".into()));
        }
        Ok(Self { n, pos })
    }

    /// The empty pattern over `n x n` (`n = 0` allowed).
    pub fn empty(n: usize) -> Self {
        Self { n, pos: Vec::new() }
    }

    /// Full lower triangle `L^n`.
    pub fn full_lower(n: usize) -> Result<Self> {
        check_dim(n)?;
        let pos = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
        Ok(Self { n, pos })
    }

    /// Diagonal pattern `D^n`.
    pub fn diagonal(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(Self { n, pos: (0..n).map(|i| (i, i)).collect() })
    }

    /// Direct sum: `self` in the leading block, `other` shifted into the trailing block.
    pub fn direct_sum(&self, other: &IndexSet) -> IndexSet {
        let shift = self.n;
        let mut pos = self.pos.clone();
        pos.extend(other.pos.iter().map(|&(i, j)| (i + shift, j + shift)));
        pos.sort_unstable();
        IndexSet { n: self.n + other.n, pos }
    }

    /// Direct sum of a sequence of patterns.
    pub fn direct_sum_all<'a>(sets: impl IntoIterator<Item = &'a IndexSet>) -> IndexSet {
        sets.into_iter().fold(IndexSet::empty(0), |acc, s| acc.direct_sum(s))
    }

    /// `L^n \ self`.
    pub fn complement(&self) -> IndexSet {
        let mut pos = Vec::with_capacity(self.n * (self.n + 1) / 2 - self.pos.len());
        let mut it = self.pos.iter().peekable();
        for i in 0..self.n {
            for j in 0..=i {
                if it.peek() == Some(&&(i, j)) {
                    it.next();
                } else {
                    pos.push((i, j));
                }
            }
        }
        IndexSet { n: self.n, pos }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// 1-based entries in lexicographic order.
    pub fn entries(&self) -> Vec<(usize, usize)> {
        self.pos.iter().map(|&(i, j)| (i + 1, j + 1)).collect()
    }

    /// Membership test for a 1-based position.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= 1 && j >= 1 && self.pos.binary_search(&(i - 1, j - 1)).is_ok()
    }

    /// True when every diagonal position is in the pattern.
    pub fn contains_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.pos.binary_search(&(i, i)).is_ok())
    }

    pub(crate) fn positions(&self) -> &[(usize, usize)] {
        &self.pos
    }

    pub(crate) fn contains0(&self, i: usize, j: usize) -> bool {
        self.pos.binary_search(&(i, j)).is_ok()
    }

    /// Offsets of the diagonal entries within the pattern's vectorization.
    pub fn diagonal_offsets(&self) -> Vec<usize> {
        self.pos
            .iter()
            .enumerate()
            .filter(|(_, &(i, j))| i == j)
            .map(|(k, _)| k)
            .collect()
    }

    /// `vecs_I(S)`: the pattern entries of a symmetric matrix.
    pub fn vecs<T: Real>(&self, s: &DMatrix<T>) -> Result<DVector<T>> {
        self.check_square(s)?;
        check_symmetric(s)?;
        Ok(self.gather(s))
    }

    /// Reads the pattern positions of any square matrix (no symmetry check).
    pub fn gather<T: Real>(&self, m: &DMatrix<T>) -> DVector<T> {
        DVector::from_iterator(self.pos.len(), self.pos.iter().map(|&(i, j)| m[(i, j)]))
    }

    /// Lower-triangular matrix with `values` on the pattern, zero elsewhere.
    pub fn scatter_lower<T: Real>(&self, values: &[T]) -> Result<DMatrix<T>> {
        if values.len() != self.pos.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a pattern of {} entries",
                values.len(),
                self.pos.len()
            )));
        }
        let mut m = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &v) in self.pos.iter().zip(values) {
            m[(i, j)] = v;
        }
        Ok(m)
    }

    /// Symmetric matrix with `values` on the pattern (mirrored), zero elsewhere.
    pub fn scatter_sym<T: Real>(&self, values: &[T]) -> Result<DMatrix<T>> {
        let mut m = self.scatter_lower(values)?;
        for &(i, j) in &self.pos {
            m[(j, i)] = m[(i, j)];
        }
        Ok(m)
    }

    /// `pi^L_I`: keeps the pattern positions of `m`, zeroes everything else
    /// (including the strict upper triangle).
    pub fn project_lower<T: Real>(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_square(m)?;
        let mut out = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.pos {
            out[(i, j)] = m[(i, j)];
        }
        Ok(out)
    }

    /// `pi_I`: keeps the symmetric pattern of `s`, zeroing off-pattern pairs
    /// on both sides of the diagonal.
    pub fn project_sym<T: Real>(&self, s: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_square(s)?;
        check_symmetric(s)?;
        let mut out = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.pos {
            out[(i, j)] = s[(i, j)];
            out[(j, i)] = s[(i, j)];
        }
        Ok(out)
    }

    fn check_square<T: Real>(&self, m: &DMatrix<T>) -> Result<()> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "pattern over {n}x{n}, matrix is {}x{}",
                m.nrows(),
                m.ncols(),
                n = self.n
            )));
        }
        Ok(())
    }

    /// Parses the pattern language used in configuration files:
    /// `full`, `diag`, `blockdiag(n1,n2,...)`, `blocktridiag(b,k)` (k blocks of
    /// size b with nearest-neighbour coupling), or an explicit list
    /// `[[i,j],...]` of 1-based pairs.
    ///
    /// `n` is the matrix dimension the pattern must describe.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let t = text.trim();
        let set = match t {
            "full" => Self::full_lower(n)?,
            "diag" => Self::diagonal(n)?,
            _ if t.starts_with("blockdiag(") && t.ends_with(')') => {
                let sizes = parse_usize_list(&t["blockdiag(".len()..t.len() - 1])?;
                let blocks: Result<Vec<_>> = sizes.iter().map(|&b| Self::full_lower(b)).collect();
                Self::direct_sum_all(&blocks?)
            }
            _ if t.starts_with("blocktridiag(") && t.ends_with(')') => {
                let args = parse_usize_list(&t["blocktridiag(".len()..t.len() - 1])?;
                if args.len() != 2 {
                    return Err(Error::InvalidPattern("blocktridiag takes (block, count)".into()));
                }
                Self::block_tridiagonal(args[0], args[1])?
            }
            _ if t.starts_with('[') => {
                let pairs = parse_pair_list(t)?;
                Self::from_pairs(n, &pairs)?
            }
            _ => return Err(Error::InvalidPattern(format!("unknown pattern '{t}'"))),
        };
        if set.n != n {
            return Err(Error::InvalidPattern(format!(
                "pattern '{t}' describes a {}x{} matrix, expected {n}x{n}",
                set.n, set.n
            )));
        }
        Ok(set)
    }

    /// Block-tridiagonal pattern: `count` diagonal blocks of size `block`, each
    /// coupled to its successor by a dense off-diagonal block.
    pub fn block_tridiagonal(block: usize, count: usize) -> Result<Self> {
        check_dim(block)?;
        check_dim(count)?;
        let n = block * count;
        let mut pos = Vec::new();
        for i in 0..n {
            let bi = i / block;
            for j in 0..=i {
                if bi - j / block <= 1 {
                    pos.push((i, j));
                }
            }
        }
        Ok(Self { n, pos })
    }

    /// Renders the pattern as an explicit 1-based pair list.
    pub fn to_pair_string(&self) -> String {
        let items: Vec<String> =
            self.entries().iter().map(|(i, j)| format!("[{i},{j}]")).collect();
        format!("[{}]", items.join(","))
    }
}

impl fmt::Debug for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IndexSet(n={}, {:?})", self.n, self.entries())
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidDimension("dimension must be at least 1".into()));
    }
    Ok(())
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidPattern(format!("'{}' is not a block size", p.trim())))
        })
        .collect()
}

fn parse_pair_list(s: &str) -> Result<Vec<(usize, usize)>> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| Error::InvalidPattern("unbalanced brackets".into()))?
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    let mut pairs = Vec::new();
    for chunk in inner.split(']') {
        let chunk = chunk.trim().trim_start_matches(',').trim();
        if chunk.is_empty() {
            continue;
        }
        let body = chunk
            .strip_prefix('[')
            .ok_or_else(|| Error::InvalidPattern(format!("malformed pair '{chunk}'")))?;
        let nums = parse_usize_list(body)?;
        if nums.len() != 2 {
            return Err(Error::InvalidPattern(format!("malformed pair '[{body}]'")));
        }
        pairs.push((nums[0], nums[1]));
    }
    Ok(pairs)
}

/// Largest absolute asymmetry `max |S - S^T|`.
pub(crate) fn asymmetry<T: Real>(s: &DMatrix<T>) -> T {
    let n = s.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

/// Infinity norm (max absolute row sum).
pub(crate) fn norm_inf<T: Real>(m: &DMatrix<T>) -> T {
    m.row_iter()
        .map(|r| r.iter().fold(T::zero(), |acc, v| acc + v.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Accepts `S` when `max |S - S^T| <= 1e-10 * max(1, ||S||_inf)`.
pub fn check_symmetric<T: Real>(s: &DMatrix<T>) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let tol = T::lit(1e-10) * norm_inf(s).max(T::one());
    let asym = asymmetry(s);
    if asym > tol {
        return Err(Error::NotSymmetric { asymmetry: asym.as_f64(), tolerance: tol.as_f64() });
    }
    Ok(())
}
