//! Cholesky-factor substitution and elimination for semidefinite constraints.
//!
//! A patterned symmetric matrix `Q` with `Q > H` is written as
//! `Q = H + (L_I + L_J)(L_I + L_J)^T`, where `L_I` carries the free factor
//! entries on the pattern `I` and `L_J` (on the complement `J`) is solved for
//! so that `Q` vanishes off the pattern. [`complete_lj`] performs that
//! forward completion; [`forward_t`]/[`inverse_t`] form the change of
//! variables for a single block, and [`ConstraintSpec`] bundles the general
//! constraint set `(beta, Sigma)` with `Sigma >= H(beta)` and
//! `A(beta, Sigma) >= 0` into the factor-space maps [`gbmz_forward`],
//! [`gbmz_inverse`] and [`transformed_constraints`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::linalg::cholesky;
use crate::scalar::Real;

/// Pivots smaller than this abort the completion.
pub const PIVOT_GUARD: f64 = 1e-12;

/// Solves for the complement factor `L_J` (Algorithm: ascending
/// lexicographic forward substitution).
///
/// For each `(i, j)` in `J = L^n \ I`:
/// `L_ij = -(H_ij + sum_{k<j} L_ik L_jk) / L_jj` with `L = L_I + L_J`.
pub fn complete_lj<T: Real>(pattern: &IndexSet, l_i: &DMatrix<T>, h: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = pattern.dim();
    if l_i.nrows() != n || l_i.ncols() != n || h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "pattern over {n}x{n}, L_I is {}x{}, H is {}x{}",
            l_i.nrows(),
            l_i.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    if !pattern.contains_diagonal() {
        return Err(Error::InvalidPattern("pattern must contain the diagonal".into()));
    }
    for j in 0..n {
        for i in 0..n {
            if l_i[(i, j)] != T::zero() && !pattern.contains0(i, j) {
                return Err(Error::InvalidPattern(format!(
                    "L_I has a nonzero at ({}, {}) outside its pattern",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let complement = pattern.complement();
    let mut l = l_i.clone();
    let mut l_j = DMatrix::zeros(n, n);
    let guard = T::lit(PIVOT_GUARD);
    for &(i, j) in complement.positions() {
        let pivot = l[(j, j)];
        if pivot.abs() < guard {
            return Err(Error::SingularPivot { index: j + 1, value: pivot.as_f64() });
        }
        let mut acc = h[(i, j)];
        for k in 0..j {
            acc += l[(i, k)] * l[(j, k)];
        }
        let v = -acc / pivot;
        l[(i, j)] = v;
        l_j[(i, j)] = v;
    }
    Ok(l_j)
}

/// `Q = H + (L_I + L_J)(L_I + L_J)^T`, without any projection.
pub fn reconstruct_q<T: Real>(h: &DMatrix<T>, l_i: &DMatrix<T>, l_j: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = h.nrows();
    for m in [h, l_i, l_j] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch("H, L_I, L_J must share one square shape".into()));
        }
    }
    let l = l_i + l_j;
    Ok(h + &l * l.transpose())
}

/// Symmetrizes `m` and zeroes every position off the symmetric pattern.
fn pattern_sym<T: Real>(pattern: &IndexSet, m: &DMatrix<T>) -> DMatrix<T> {
    let n = pattern.dim();
    let mut out = DMatrix::zeros(n, n);
    for &(i, j) in pattern.positions() {
        let v = (m[(i, j)] + m[(j, i)]) * T::lit(0.5);
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    out
}

/// Single-block forward map `T(x, L_I) = (x, Q(H(x), L_I))`. The returned `Q`
/// is exactly zero off the pattern.
pub fn forward_t<T: Real, F>(x: &DVector<T>, l_i: &DMatrix<T>, h_of: F, pattern: &IndexSet) -> Result<(DVector<T>, DMatrix<T>)>
where
    F: Fn(&DVector<T>) -> DMatrix<T>,
{
    let h = h_of(x);
    let l_j = complete_lj(pattern, l_i, &h)?;
    let q = reconstruct_q(&h, l_i, &l_j)?;
    Ok((x.clone(), pattern_sym(pattern, &q)))
}

/// Single-block inverse map `T^{-1}(x, Q) = (x, pi^L_I[chol(Q - H(x))])`.
pub fn inverse_t<T: Real, F>(x: &DVector<T>, q: &DMatrix<T>, h_of: F, pattern: &IndexSet) -> Result<(DVector<T>, DMatrix<T>)>
where
    F: Fn(&DVector<T>) -> DMatrix<T>,
{
    let h = h_of(x);
    if q.nrows() != pattern.dim() || h.nrows() != pattern.dim() {
        return Err(Error::DimensionMismatch("Q, H and the pattern disagree in size".into()));
    }
    let l = cholesky(&(q - h), "Q - H(x)")?;
    Ok((x.clone(), pattern.project_lower(&l)?))
}

/// `beta -> H(beta)`.
pub type MatrixMap<T> = Arc<dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync>;
/// `(beta, Sigma) -> A(beta, Sigma)`.
pub type ConstraintMatrixMap<T> = Arc<dyn Fn(&DVector<T>, &DMatrix<T>) -> Result<DMatrix<T>> + Send + Sync>;
/// `(beta, Sigma) -> vector`.
pub type VectorMap<T> = Arc<dyn Fn(&DVector<T>, &DMatrix<T>) -> DVector<T> + Send + Sync>;

/// Description of the constraint set
/// `{ (beta, Sigma) : g = 0, h <= 0, Sigma >= H(beta), A(beta, Sigma) >= 0 }`
/// with `Sigma` patterned on `I_Sigma` and `A` patterned on `I_A`.
///
/// Every factor-space quantity (`T`, `T^{-1}`, `g_T`, `h_T`, the diagonal
/// floor) is derived from this one object.
#[derive(Clone)]
pub struct ConstraintSpec<T: Real> {
    n_beta: usize,
    sigma_pattern: IndexSet,
    a_pattern: IndexSet,
    h_map: Option<MatrixMap<T>>,
    a_map: Option<ConstraintMatrixMap<T>>,
    eq: Option<(usize, VectorMap<T>)>,
    ineq: Option<(usize, VectorMap<T>)>,
}

impl<T: Real> fmt::Debug for ConstraintSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("n_beta", &self.n_beta)
            .field("sigma_pattern", &self.sigma_pattern)
            .field("a_pattern", &self.a_pattern)
            .field("n_eq", &self.n_eq())
            .field("n_ineq", &self.n_ineq())
            .finish()
    }
}

impl<T: Real> ConstraintSpec<T> {
    /// A spec with `H = 0`, no `A` block and no `g`/`h`.
    pub fn new(n_beta: usize, sigma_pattern: IndexSet) -> Result<Self> {
        if !sigma_pattern.contains_diagonal() {
            return Err(Error::InvalidPattern("I_Sigma must contain the diagonal".into()));
        }
        Ok(Self {
            n_beta,
            sigma_pattern,
            a_pattern: IndexSet::empty(0),
            h_map: None,
            a_map: None,
            eq: None,
            ineq: None,
        })
    }

    /// Lower bound `H(beta)` on `Sigma`.
    pub fn with_lower_bound(mut self, h: MatrixMap<T>) -> Self {
        self.h_map = Some(h);
        self
    }

    /// Semidefinite constraint `A(beta, Sigma) >= 0` patterned on `pattern`.
    pub fn with_constraint_matrix(mut self, pattern: IndexSet, a: ConstraintMatrixMap<T>) -> Result<Self> {
        if !pattern.contains_diagonal() {
            return Err(Error::InvalidPattern("I_A must contain the diagonal".into()));
        }
        self.a_pattern = pattern;
        self.a_map = Some(a);
        Ok(self)
    }

    pub fn with_equalities(mut self, count: usize, g: VectorMap<T>) -> Self {
        self.eq = Some((count, g));
        self
    }

    pub fn with_inequalities(mut self, count: usize, h: VectorMap<T>) -> Self {
        self.ineq = Some((count, h));
        self
    }

    pub fn n_beta(&self) -> usize {
        self.n_beta
    }

    pub fn sigma_pattern(&self) -> &IndexSet {
        &self.sigma_pattern
    }

    pub fn a_pattern(&self) -> &IndexSet {
        &self.a_pattern
    }

    pub fn n_sigma(&self) -> usize {
        self.sigma_pattern.dim()
    }

    pub fn n_a(&self) -> usize {
        self.a_pattern.dim()
    }

    pub fn n_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |e| e.0)
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |e| e.0)
    }

    /// Length of the flattened factor point `(beta, vecs L_Sigma, vecs L_A)`.
    pub fn dim(&self) -> usize {
        self.n_beta + self.sigma_pattern.len() + self.a_pattern.len()
    }

    /// Length of `g_T`.
    pub fn n_eq_transformed(&self) -> usize {
        self.n_eq() + self.a_pattern.len()
    }

    pub fn lower_bound(&self, beta: &DVector<T>) -> DMatrix<T> {
        match &self.h_map {
            Some(h) => h(beta),
            None => DMatrix::zeros(self.n_sigma(), self.n_sigma()),
        }
    }

    pub fn constraint_matrix(&self, beta: &DVector<T>, sigma: &DMatrix<T>) -> Result<DMatrix<T>> {
        match &self.a_map {
            Some(a) => a(beta, sigma),
            None => Ok(DMatrix::zeros(0, 0)),
        }
    }

    pub fn equalities(&self, theta: &ThetaPoint<T>) -> DVector<T> {
        match &self.eq {
            Some((_, g)) => g(&theta.beta, &theta.sigma),
            None => DVector::zeros(0),
        }
    }

    pub fn inequalities(&self, theta: &ThetaPoint<T>) -> DVector<T> {
        match &self.ineq {
            Some((_, h)) => h(&theta.beta, &theta.sigma),
            None => DVector::zeros(0),
        }
    }

    /// Per-coordinate lower bounds for the factor point: `epsilon` on every
    /// diagonal factor entry, `-inf` elsewhere.
    pub fn epsilon_box(&self, epsilon: T) -> Result<DVector<T>> {
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidParameter("diagonal floor epsilon must be positive".into()));
        }
        let mut lb = DVector::from_element(self.dim(), -T::infinity());
        let off = self.n_beta;
        for k in self.sigma_pattern.diagonal_offsets() {
            lb[off + k] = epsilon;
        }
        let off = self.n_beta + self.sigma_pattern.len();
        for k in self.a_pattern.diagonal_offsets() {
            lb[off + k] = epsilon;
        }
        Ok(lb)
    }

    /// Indices of the diagonal factor coordinates within the flattened point.
    pub fn diagonal_coordinates(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.sigma_pattern.diagonal_offsets().iter().map(|k| self.n_beta + k).collect();
        let off = self.n_beta + self.sigma_pattern.len();
        out.extend(self.a_pattern.diagonal_offsets().iter().map(|k| off + k));
        out
    }
}

/// Original-space parameter point `theta = (beta, Sigma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaPoint<T: Real> {
    pub beta: DVector<T>,
    pub sigma: DMatrix<T>,
}

/// Factor-space point `phi = (beta, L_Sigma, L_A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPoint<T: Real> {
    pub beta: DVector<T>,
    pub l_sigma: DMatrix<T>,
    pub l_a: DMatrix<T>,
}

impl<T: Real> FactorPoint<T> {
    /// Flattens to `(beta, vecs_{I_Sigma} L_Sigma, vecs_{I_A} L_A)`.
    pub fn to_vec(&self, spec: &ConstraintSpec<T>) -> DVector<T> {
        let mut v = Vec::with_capacity(spec.dim());
        v.extend(self.beta.iter().copied());
        v.extend(spec.sigma_pattern.gather(&self.l_sigma).iter().copied());
        v.extend(spec.a_pattern.gather(&self.l_a).iter().copied());
        DVector::from_vec(v)
    }

    pub fn from_vec(v: &DVector<T>, spec: &ConstraintSpec<T>) -> Result<Self> {
        if v.len() != spec.dim() {
            return Err(Error::DimensionMismatch(format!(
                "factor vector has {} entries, layout needs {}",
                v.len(),
                spec.dim()
            )));
        }
        let nb = spec.n_beta;
        let ns = spec.sigma_pattern.len();
        let s = v.as_slice();
        Ok(Self {
            beta: DVector::from_column_slice(&s[..nb]),
            l_sigma: spec.sigma_pattern.scatter_lower(&s[nb..nb + ns])?,
            l_a: spec.a_pattern.scatter_lower(&s[nb + ns..])?,
        })
    }

    fn check(&self, spec: &ConstraintSpec<T>) -> Result<()> {
        if self.beta.len() != spec.n_beta
            || self.l_sigma.nrows() != spec.n_sigma()
            || self.l_a.nrows() != spec.n_a()
        {
            return Err(Error::DimensionMismatch("factor point does not match the constraint layout".into()));
        }
        Ok(())
    }
}

/// Full (completed) factor `L_Sigma + L_J(H(beta), L_Sigma)` of `Sigma - H(beta)`.
pub fn sigma_factor<T: Real>(phi: &FactorPoint<T>, spec: &ConstraintSpec<T>) -> Result<DMatrix<T>> {
    phi.check(spec)?;
    let h = spec.lower_bound(&phi.beta);
    let l_j = complete_lj(&spec.sigma_pattern, &phi.l_sigma, &h)?;
    Ok(&phi.l_sigma + l_j)
}

/// Generalized forward map: `theta = (beta, Sigma(H(beta), L_Sigma))` and the
/// factor-space constraint matrix `A_T = (L_A + L_J)(L_A + L_J)^T`.
pub fn gbmz_forward<T: Real>(phi: &FactorPoint<T>, spec: &ConstraintSpec<T>) -> Result<(ThetaPoint<T>, DMatrix<T>)> {
    phi.check(spec)?;
    let h = spec.lower_bound(&phi.beta);
    let l_j = complete_lj(&spec.sigma_pattern, &phi.l_sigma, &h)?;
    let sigma = pattern_sym(&spec.sigma_pattern, &reconstruct_q(&h, &phi.l_sigma, &l_j)?);
    let a_t = if spec.n_a() > 0 {
        let zero = DMatrix::zeros(spec.n_a(), spec.n_a());
        let l_ja = complete_lj(&spec.a_pattern, &phi.l_a, &zero)?;
        pattern_sym(&spec.a_pattern, &reconstruct_q(&zero, &phi.l_a, &l_ja)?)
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok((ThetaPoint { beta: phi.beta.clone(), sigma }, a_t))
}

/// Generalized inverse map
/// `(beta, pi^L[chol(Sigma - H(beta))], pi^L[chol(A(beta, Sigma))])`.
pub fn gbmz_inverse<T: Real>(theta: &ThetaPoint<T>, spec: &ConstraintSpec<T>) -> Result<FactorPoint<T>> {
    if theta.beta.len() != spec.n_beta || theta.sigma.nrows() != spec.n_sigma() || theta.sigma.ncols() != spec.n_sigma() {
        return Err(Error::DimensionMismatch("theta does not match the constraint layout".into()));
    }
    let h = spec.lower_bound(&theta.beta);
    let l_s = cholesky(&(&theta.sigma - h), "Sigma - H(beta)")?;
    let l_a = if spec.n_a() > 0 {
        let a = spec.constraint_matrix(&theta.beta, &theta.sigma)?;
        spec.a_pattern.project_lower(&cholesky(&a, "constraint matrix A(beta, Sigma)")?)?
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(FactorPoint {
        beta: theta.beta.clone(),
        l_sigma: spec.sigma_pattern.project_lower(&l_s)?,
        l_a,
    })
}

/// Transformed constraints `g_T = [g(T(phi)); vecs_{I_A}(A(T(phi)) - A_T(phi))]`
/// and `h_T = h(T(phi))`.
pub fn transformed_constraints<T: Real>(phi: &FactorPoint<T>, spec: &ConstraintSpec<T>) -> Result<(DVector<T>, DVector<T>)> {
    let (theta, a_t) = gbmz_forward(phi, spec)?;
    let g = spec.equalities(&theta);
    let mut g_t = Vec::with_capacity(spec.n_eq_transformed());
    g_t.extend(g.iter().copied());
    if spec.n_a() > 0 {
        let a = spec.constraint_matrix(&theta.beta, &theta.sigma)?;
        if a.nrows() != spec.n_a() || a.ncols() != spec.n_a() {
            return Err(Error::DimensionMismatch(format!(
                "A(beta, Sigma) is {}x{}, pattern expects {n}x{n}",
                a.nrows(),
                a.ncols(),
                n = spec.n_a()
            )));
        }
        g_t.extend(spec.a_pattern.gather(&(a - a_t)).iter().copied());
    }
    Ok((DVector::from_vec(g_t), spec.inequalities(&theta)))
}
