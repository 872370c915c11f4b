//! Barrier function of an LMI region,
//!
//! ```text
//! phi_D(A) = inf { tr(V P) : M_D(A, P) >= M, P >= 0 },
//! ```
//!
//! evaluated by pushing the SDP through the factor substitution of [`crate::bmz`]
//! and the solver in [`crate::nlp`]. `A` lies in the `1/epsilon` sublevel set
//! exactly when the tightened system is feasible.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};

use crate::bmz::{sigma_factor, transformed_constraints, ConstraintSpec, FactorPoint};
use crate::error::{Error, Result};
use crate::index_set::{check_symmetric, IndexSet};
use crate::linalg::{cholesky, eigenvalues, min_sym_eigenvalue, norm2};
use crate::nlp::{solve, NlpProblem, SolveOptions, SolveReport};
use crate::region::LmiRegion;
use crate::scalar::Real;

/// Remaining constraint violation above which the SDP is declared infeasible.
pub const INFEASIBILITY_THRESHOLD: f64 = 1e-5;
/// Penalty ceiling for the infeasibility decision.
pub const PENALTY_CEILING: f64 = 1e8;
const FACTOR_FLOOR: f64 = 1e-8;

/// One evaluation of `phi_D(A)` with shift `M` and trace weight `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierQuery<T: Real> {
    pub region: LmiRegion<T>,
    pub a: DMatrix<T>,
    pub shift: DMatrix<T>,
    pub weight: DMatrix<T>,
}

impl<T: Real> BarrierQuery<T> {
    /// Query with `M = epsilon I` and `V = I`.
    pub fn new(region: LmiRegion<T>, a: DMatrix<T>, epsilon: T) -> Result<Self> {
        let n = a.nrows();
        let nm = n * region.block_dim();
        Self::with_data(region, a, DMatrix::identity(nm, nm) * epsilon, DMatrix::identity(n, n))
    }

    /// Explicit `M >= 0` (zero allowed, which gives the relaxed system) and `V > 0`.
    pub fn with_data(region: LmiRegion<T>, a: DMatrix<T>, shift: DMatrix<T>, weight: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        let nm = n * region.block_dim();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch("A must be square and nonempty".into()));
        }
        if shift.shape() != (nm, nm) || weight.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("M must be {nm}x{nm} and V {n}x{n}")));
        }
        check_symmetric(&shift)?;
        check_symmetric(&weight)?;
        if min_sym_eigenvalue(&shift) < -T::lit(1e-9) * norm2(&shift).max(T::one()) {
            return Err(Error::InvalidParameter("shift M must be positive semidefinite".into()));
        }
        if min_sym_eigenvalue(&weight) <= T::lit(1e-9) * norm2(&weight).max(T::one()) {
            return Err(Error::NotPositiveDefinite { block: "trace weight V".into() });
        }
        if a.iter().any(|v| !v.is_finite_val()) {
            return Err(Error::NonFinite { k: 0, what: "matrix A".into() });
        }
        Ok(Self { region, a, shift, weight })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Outcome of the barrier SDP.
#[derive(Clone, Debug)]
pub struct BarrierSolution<T: Real> {
    /// `tr(V P*)`, or `+inf` when declared infeasible.
    pub value: T,
    pub p: DMatrix<T>,
    /// Largest remaining equality residual of the transformed problem.
    pub violation: T,
    pub report: SolveReport<T>,
}

impl<T: Real> BarrierSolution<T> {
    pub fn feasible(&self) -> bool {
        self.value.is_finite_val()
    }
}

fn psd_factor<T: Real>(s: &DMatrix<T>, floor: T) -> Result<DMatrix<T>> {
    let sym = (s + s.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let floor = floor.max(T::lit(1e-10) * top);
    let clamped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.max(floor)));
    let proj = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    cholesky(&proj, "projected constraint matrix")
}

/// `Re(X X^H)` for an eigenvector matrix `X` of `A`, or `None` when `A` is
/// (numerically) defective. With `P = X X^H`, `M_D(A, P)` is congruent to
/// `diag f_D(lambda_k)`.
fn modal_gram<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let scale = norm2(a).max(T::one());
    let tol = T::lit(1e-8) * scale;
    let ac = a.map(|v| Complex::new(v, T::zero()));
    let mut ev = eigenvalues(a).ok()?;
    ev.retain(|z| z.im >= -tol);
    let mut g = DMatrix::<T>::zeros(n, n);
    let mut used = vec![false; ev.len()];
    for i in 0..ev.len() {
        if used[i] {
            continue;
        }
        let lam = ev[i];
        let mut k = 0;
        for j in i..ev.len() {
            if !used[j] && { let d = ev[j] - lam; d.re.hypot(d.im) } <= T::lit(1e-6) * scale {
                used[j] = true;
                k += 1;
            }
        }
        let real = lam.im.abs() <= tol;
        let lam = if real { Complex::new(lam.re, T::zero()) } else { lam };
        let shifted = &ac - DMatrix::<Complex<T>>::identity(n, n) * lam;
        let svd = shifted.clone().svd(false, true);
        let v_t = svd.v_t?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].partial_cmp(&svd.singular_values[y]).unwrap_or(std::cmp::Ordering::Equal));
        for &c in order.iter().take(k) {
            let x = v_t.row(c).adjoint();
            if (&shifted * &x).norm() > T::lit(1e-7) * scale {
                return None;
            }
            let xx = &x * x.adjoint();
            let w = if real { T::one() } else { T::lit(2.0) };
            g += xx.map(|z| z.re) * w;
        }
    }
    let g = (&g + g.transpose()) * T::lit(0.5);
    cholesky(&g, "modal gram").ok()?;
    Some(g)
}

/// Strictly interior start `c X X^H` with `M_D(A, P) >= 2 shift`, if one exists.
fn interior_start<T: Real>(q: &BarrierQuery<T>, shift: &DMatrix<T>) -> Option<DMatrix<T>> {
    let g = modal_gram(&q.a)?;
    let m = min_sym_eigenvalue(&q.region.matrix_char_fn(&q.a, &g).ok()?);
    if !(m > T::zero()) {
        return None;
    }
    let top = norm2(shift).max(T::lit(1e-6));
    Some(g * (T::lit(2.0) * top / m))
}

/// Solves the closed system `M_D(A,P) >= shift`, `P >= 0` for `min tr(V P)`.
fn closed_solve<T: Real>(q: &BarrierQuery<T>, shift: &DMatrix<T>, opts: &SolveOptions<T>) -> Result<BarrierSolution<T>> {
    let n = q.dim();
    let nm = n * q.region.block_dim();
    let region = q.region.clone();
    let a = q.a.clone();
    let shift_c = shift.clone();
    let spec = ConstraintSpec::<T>::new(0, IndexSet::full_lower(n)?)?.with_constraint_matrix(
        IndexSet::full_lower(nm)?,
        Arc::new(move |_: &DVector<T>, p: &DMatrix<T>| Ok(region.matrix_char_fn(&a, p)? - &shift_c)),
    )?;
    let spec = Arc::new(spec);

    let weight = q.weight.clone();
    let s_obj = spec.clone();
    let objective = move |x: &DVector<T>| -> T {
        FactorPoint::from_vec(x, &s_obj)
            .and_then(|phi| sigma_factor(&phi, &s_obj))
            .map(|l| (&weight * &l * l.transpose()).trace())
            .unwrap_or_else(|_| T::infinity())
    };
    // I_Sigma is full, so P = L L^T has no completed part and d tr(V L L^T)/dL = (V + V^T) L.
    let weight = q.weight.clone();
    let s_grad = spec.clone();
    let gradient = move |x: &DVector<T>| -> DVector<T> {
        let mut g = DVector::zeros(x.len());
        if let Ok(phi) = FactorPoint::from_vec(x, &s_grad) {
            let dl = (&weight + weight.transpose()) * &phi.l_sigma;
            let part = s_grad.sigma_pattern().gather(&dl);
            g.rows_mut(0, part.len()).copy_from(&part);
        }
        g
    };
    let s_con = spec.clone();
    let n_eq = spec.n_eq_transformed();
    let constraints = move |x: &DVector<T>| {
        FactorPoint::from_vec(x, &s_con)
            .and_then(|phi| transformed_constraints(&phi, &s_con))
            .unwrap_or_else(|_| (DVector::from_element(n_eq, T::nan()), DVector::zeros(0)))
    };
    let floor = T::lit(FACTOR_FLOOR);
    let lower = spec.epsilon_box(floor)?;
    let upper = DVector::from_element(spec.dim(), T::infinity());
    let problem = NlpProblem::new(spec.dim(), Arc::new(objective))
        .with_gradient(Arc::new(gradient))
        .with_constraints(n_eq, 0, Arc::new(constraints))
        .with_bounds(lower, upper)?;

    let p0 = interior_start(q, shift).unwrap_or_else(|| {
        let scale = norm2(&q.a);
        DMatrix::<T>::identity(n, n) * if scale > T::zero() { scale } else { T::one() }
    });
    let l_sigma = cholesky(&p0, "initial P")?;
    let l_a = psd_factor(&(q.region.matrix_char_fn(&q.a, &p0)? - shift), floor * floor)?;
    let phi0 = FactorPoint {
        beta: DVector::zeros(0),
        l_sigma: spec.sigma_pattern().project_lower(&l_sigma)?,
        l_a: spec.a_pattern().project_lower(&l_a)?,
    };
    let x0 = phi0.to_vec(&spec);
    let f0 = (&q.weight * &p0).trace().abs().max(T::one());
    let m2 = norm2(shift).max(T::lit(1e-3)).powi(2);
    let rho0 = opts.initial_penalty.unwrap_or_else(|| (T::lit(10.0) * f0 / m2).max(T::lit(10.0)).min(T::lit(1e6)));
    let opts = SolveOptions { max_penalty: T::lit(PENALTY_CEILING), initial_penalty: Some(rho0), ..opts.clone() };
    let report = solve(&problem, &x0, &opts)?;
    let phi = FactorPoint::from_vec(&report.x, &spec)?;
    let l = sigma_factor(&phi, &spec)?;
    let p = &l * l.transpose();
    let violation = report.eq_violation;
    let value = if violation > T::lit(INFEASIBILITY_THRESHOLD) || !report.objective.is_finite_val() {
        T::infinity()
    } else {
        (&q.weight * &p).trace()
    };
    Ok(BarrierSolution { value, p, violation, report })
}

/// Solves the barrier SDP and reports the minimizer.
///
/// For a singular shift the strict inequality `M_D(A,P) > 0` is first checked
/// on its own: the system is homogeneous in `P`, so it is feasible iff
/// `M_D(A,P) >= I` is. Without that check `P -> 0` would satisfy a zero shift.
pub fn barrier_solve<T: Real>(q: &BarrierQuery<T>, opts: &SolveOptions<T>) -> Result<BarrierSolution<T>> {
    let nm = q.dim() * q.region.block_dim();
    let singular = min_sym_eigenvalue(&q.shift) <= T::lit(1e-9) * norm2(&q.shift).max(T::one());
    if singular {
        let strict = closed_solve(q, &DMatrix::identity(nm, nm), opts)?;
        if !strict.feasible() {
            return Ok(strict);
        }
        if q.shift.iter().all(|v| *v == T::zero()) {
            // the infimum over the open cone is approached by scaling P to zero
            return Ok(BarrierSolution { value: T::zero(), ..strict });
        }
    }
    closed_solve(q, &q.shift, opts)
}

/// `phi_D(A)`, or `+inf` when the system is infeasible.
pub fn barrier_value<T: Real>(q: &BarrierQuery<T>) -> Result<T> {
    Ok(barrier_solve(q, &SolveOptions::default())?.value)
}

/// `phi_D(A) <= (1 + 1e-6) / epsilon`.
pub fn region_feasible<T: Real>(q: &BarrierQuery<T>, epsilon: T) -> Result<bool> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let bound = (T::one() + T::lit(1e-6)) / epsilon;
    Ok(barrier_value(q)? <= bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_query(v: f64) -> BarrierQuery<f64> {
        let region = LmiRegion::disk(1.0, 0.0).unwrap();
        BarrierQuery::with_data(region, dmatrix![0.5], DMatrix::identity(2, 2) * 0.1, dmatrix![v]).unwrap()
    }

    #[test]
    fn scalar_disk_value() {
        let sol = barrier_solve(&scalar_query(1.0), &SolveOptions::default()).unwrap();
        assert!((sol.value - 0.2).abs() < 1e-5, "{}", sol.value);
        assert!(min_sym_eigenvalue(&sol.p) > 0.0);
    }

    #[test]
    fn doubling_weight_doubles_value() {
        let one = barrier_value(&scalar_query(1.0)).unwrap();
        let two = barrier_value(&scalar_query(2.0)).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-5);
    }

    #[test]
    fn sublevel_membership() {
        assert!(region_feasible(&scalar_query(1.0), 1.0).unwrap());
        assert!(!region_feasible(&scalar_query(1.0), 10.0).unwrap());
        assert!(region_feasible(&scalar_query(1.0), 0.5).unwrap());
        assert!(region_feasible(&scalar_query(1.0), 0.0).is_err());
    }

    #[test]
    fn eigenvalue_outside_gives_infinity() {
        let region = LmiRegion::disk(1.0, 0.0).unwrap();
        let q = BarrierQuery::new(region, dmatrix![1.2, 0.3; 0.0, 0.4], 1e-3).unwrap();
        assert_eq!(barrier_value(&q).unwrap(), f64::INFINITY);
    }

    #[test]
    fn jordan_block_left_half_plane() {
        let region = LmiRegion::left_half_plane(0.0);
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        for m in [0.0, 1e-3, 1.0] {
            let q = BarrierQuery::with_data(region.clone(), a.clone(), DMatrix::identity(2, 2) * m, DMatrix::identity(2, 2)).unwrap();
            assert_eq!(barrier_value(&q).unwrap(), f64::INFINITY, "M = {m} I");
        }
    }

    #[test]
    fn relaxed_system_inside_region() {
        let region = LmiRegion::disk(1.0, 0.0).unwrap();
        let a = dmatrix![0.5, 1.0; 0.0, -0.3];
        let q = BarrierQuery::with_data(region, a, DMatrix::zeros(4, 4), DMatrix::identity(2, 2)).unwrap();
        let sol = barrier_solve(&q, &SolveOptions::default()).unwrap();
        assert!(sol.feasible());
        assert!(min_sym_eigenvalue(&sol.p) > 0.0);
    }

    #[test]
    fn query_validation() {
        let region = LmiRegion::disk(1.0, 0.0).unwrap();
        assert!(BarrierQuery::with_data(region.clone(), dmatrix![0.5], -DMatrix::identity(2, 2), dmatrix![1.0]).is_err());
        assert!(BarrierQuery::with_data(region.clone(), dmatrix![0.5], DMatrix::identity(2, 2), dmatrix![0.0]).is_err());
        assert!(BarrierQuery::with_data(region, dmatrix![0.5], DMatrix::identity(3, 3), dmatrix![1.0]).is_err());
    }
}
