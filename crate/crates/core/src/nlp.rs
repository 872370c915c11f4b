//! Augmented-Lagrangian solver for smooth bound-constrained NLPs
//!
//! ```text
//! min f(x)  s.t.  g(x) = 0,  h(x) <= 0,  lb <= x <= ub
//! ```
//!
//! Outer iterations update PHR multipliers and the penalty; inner iterations
//! minimize the augmented Lagrangian over the box with a projected BFGS
//! method. Derivatives of the constraints are taken by central differences.
//! A non-finite objective or constraint value counts as a rejected step.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type ObjectiveFn<T> = Arc<dyn Fn(&DVector<T>) -> T + Send + Sync>;
pub type GradientFn<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
/// Returns `(g(x), h(x))`.
pub type ConstraintFn<T> = Arc<dyn Fn(&DVector<T>) -> (DVector<T>, DVector<T>) + Send + Sync>;

#[derive(Clone)]
pub struct NlpProblem<T: Real> {
    dim: usize,
    objective: ObjectiveFn<T>,
    gradient: Option<GradientFn<T>>,
    constraints: Option<(usize, usize, ConstraintFn<T>)>,
    lower: DVector<T>,
    upper: DVector<T>,
}

impl<T: Real> fmt::Debug for NlpProblem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("dim", &self.dim)
            .field("n_eq", &self.n_eq())
            .field("n_ineq", &self.n_ineq())
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl<T: Real> NlpProblem<T> {
    pub fn new(dim: usize, objective: ObjectiveFn<T>) -> Self {
        Self {
            dim,
            objective,
            gradient: None,
            constraints: None,
            lower: DVector::from_element(dim, -T::infinity()),
            upper: DVector::from_element(dim, T::infinity()),
        }
    }

    pub fn with_gradient(mut self, gradient: GradientFn<T>) -> Self {
        self.gradient = Some(gradient);
        self
    }

    pub fn with_constraints(mut self, n_eq: usize, n_ineq: usize, c: ConstraintFn<T>) -> Self {
        self.constraints = Some((n_eq, n_ineq, c));
        self
    }

    pub fn with_bounds(mut self, lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        if lower.len() != self.dim || upper.len() != self.dim {
            return Err(Error::DimensionMismatch(format!("bounds must have length {}", self.dim)));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidParameter("lower bound exceeds upper bound".into()));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_eq(&self) -> usize {
        self.constraints.as_ref().map_or(0, |c| c.0)
    }

    pub fn n_ineq(&self) -> usize {
        self.constraints.as_ref().map_or(0, |c| c.1)
    }

    pub fn lower(&self) -> &DVector<T> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<T> {
        &self.upper
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        (self.objective)(x)
    }

    /// `(g(x), h(x))`; wrong lengths are reported as non-finite values.
    pub fn constraints(&self, x: &DVector<T>) -> (DVector<T>, DVector<T>) {
        match &self.constraints {
            None => (DVector::zeros(0), DVector::zeros(0)),
            Some((ne, ni, c)) => {
                let (g, h) = c(x);
                let fix = |v: DVector<T>, n: usize| if v.len() == n { v } else { DVector::from_element(n, T::nan()) };
                (fix(g, *ne), fix(h, *ni))
            }
        }
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Supplied gradient, or [`fd_gradient`] when none was given.
    pub fn gradient(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let g = match &self.gradient {
            Some(g) => g(x),
            None => fd_gradient(|z| (self.objective)(z), x, &self.lower, &self.upper)?,
        };
        if let Some(k) = g.iter().position(|v| !v.is_finite_val()) {
            return Err(Error::NonFinite { k, what: "gradient coordinate".into() });
        }
        Ok(g)
    }

    fn project(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_fn(self.dim, |i, _| x[i].max(self.lower[i]).min(self.upper[i]))
    }
}

fn fd_step<T: Real>(x: T) -> T {
    T::lit(1e-6) * T::one().max(x.abs())
}

/// Finite-difference gradient with steps `h_i = 1e-6 max(1, |x_i|)`.
///
/// Central differences where both neighbours lie inside `[lb, ub]` and give
/// finite values, one-sided otherwise. Fails with the coordinate index when
/// no finite difference is available.
pub fn fd_gradient<T: Real>(
    f: impl Fn(&DVector<T>) -> T,
    x: &DVector<T>,
    lb: &DVector<T>,
    ub: &DVector<T>,
) -> Result<DVector<T>> {
    let mut g = DVector::zeros(x.len());
    let mut z = x.clone();
    let f0 = f(x);
    if !f0.is_finite_val() {
        return Err(Error::NonFinite { k: 0, what: "objective at the differentiation point".into() });
    }
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        let fp = if x[i] + h <= ub[i] {
            z[i] = x[i] + h;
            Some(f(&z)).filter(|v| v.is_finite_val())
        } else {
            None
        };
        let fm = if x[i] - h >= lb[i] {
            z[i] = x[i] - h;
            Some(f(&z)).filter(|v| v.is_finite_val())
        } else {
            None
        };
        z[i] = x[i];
        g[i] = match (fp, fm) {
            (Some(fp), Some(fm)) => (fp - fm) / (h + h),
            (Some(fp), None) => (fp - f0) / h,
            (None, Some(fm)) => (f0 - fm) / h,
            (None, None) => {
                return Err(Error::NonFinite { k: i, what: "finite-difference perturbation of coordinate".into() })
            }
        };
    }
    Ok(g)
}

/// Finite-difference Jacobians of `(g, h)`, same step rule as [`fd_gradient`].
fn fd_jacobians<T: Real>(p: &NlpProblem<T>, x: &DVector<T>, g0: &DVector<T>, h0: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = x.len();
    let mut jg = DMatrix::zeros(g0.len(), n);
    let mut jh = DMatrix::zeros(h0.len(), n);
    if g0.is_empty() && h0.is_empty() {
        return (jg, jh);
    }
    let mut z = x.clone();
    for i in 0..n {
        let h = fd_step(x[i]);
        let (lo_ok, hi_ok) = (x[i] - h >= p.lower[i], x[i] + h <= p.upper[i]);
        let (gp, hp, gm, hm, width) = if lo_ok && hi_ok {
            z[i] = x[i] + h;
            let (gp, hp) = p.constraints(&z);
            z[i] = x[i] - h;
            let (gm, hm) = p.constraints(&z);
            (gp, hp, gm, hm, h + h)
        } else if hi_ok {
            z[i] = x[i] + h;
            let (gp, hp) = p.constraints(&z);
            (gp, hp, g0.clone(), h0.clone(), h)
        } else {
            z[i] = x[i] - h;
            let (gm, hm) = p.constraints(&z);
            (g0.clone(), h0.clone(), gm, hm, h)
        };
        z[i] = x[i];
        jg.set_column(i, &((gp - gm) / width));
        jh.set_column(i, &((hp - hm) / width));
    }
    (jg, jh)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions<T: Real> {
    /// `max |g_i| <= tol_eq`.
    pub tol_eq: T,
    /// `max(0, h_i) <= tol_in` and `|mu_i h_i| <= tol_in`.
    pub tol_in: T,
    /// Projected Lagrangian gradient `<= tol_stat * max(1, |f|)`.
    pub tol_stat: T,
    pub max_outer: usize,
    pub max_inner: usize,
    /// `None` picks `10 max(1, |f|) / max(1, |c|^2 / 2)` at the start point.
    pub initial_penalty: Option<T>,
    pub penalty_growth: T,
    pub max_penalty: T,
    /// Inner results whose constraint violation exceeds this are discarded
    /// and retried from the previous iterate with a larger penalty.
    pub max_violation: T,
    pub verbose: bool,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            tol_eq: T::lit(1e-7),
            tol_in: T::lit(1e-7),
            tol_stat: T::lit(1e-6),
            max_outer: 50,
            max_inner: 300,
            initial_penalty: None,
            penalty_growth: T::lit(10.0),
            max_penalty: T::lit(1e12),
            max_violation: T::infinity(),
            verbose: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Outer iteration cap hit, or the penalty reached `max_penalty` while
    /// still infeasible.
    MaxIterations,
    /// No acceptable step could be found before the tolerances were met.
    LineSearchFailure,
    /// Objective, constraints or gradient not finite at the start point.
    DomainError,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iter",
            SolveStatus::LineSearchFailure => "line-search-failure",
            SolveStatus::DomainError => "domain-error",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport<T: Real> {
    pub x: DVector<T>,
    pub objective: T,
    pub status: SolveStatus,
    pub eq_violation: T,
    pub ineq_violation: T,
    pub stationarity: T,
    pub lambda: DVector<T>,
    pub mu: DVector<T>,
    pub penalty: T,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub warnings: Vec<String>,
}

impl<T: Real> SolveReport<T> {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Quantities at one point.
#[derive(Clone)]
struct Eval<T: Real> {
    f: T,
    g: DVector<T>,
    h: DVector<T>,
}

impl<T: Real> Eval<T> {
    fn at(p: &NlpProblem<T>, x: &DVector<T>) -> Self {
        let f = p.objective(x);
        let (g, h) = p.constraints(x);
        Self { f, g, h }
    }

    fn finite(&self) -> bool {
        self.f.is_finite_val() && self.g.iter().chain(self.h.iter()).all(|v| v.is_finite_val())
    }

    /// PHR augmented Lagrangian.
    fn merit(&self, lambda: &DVector<T>, mu: &DVector<T>, rho: T) -> T {
        if !self.finite() {
            return T::infinity();
        }
        let half = T::lit(0.5);
        let mut v = self.f + lambda.dot(&self.g) + half * rho * self.g.norm_squared();
        for i in 0..self.h.len() {
            let t = (mu[i] + rho * self.h[i]).max(T::zero());
            v += half / rho * (t * t - mu[i] * mu[i]);
        }
        v
    }

    fn eq_violation(&self) -> T {
        self.g.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    fn ineq_violation(&self) -> T {
        self.h.iter().fold(T::zero(), |a, v| a.max(*v))
    }
}

/// Derivatives of the augmented Lagrangian at one point.
struct MeritDerivatives<T: Real> {
    /// Merit gradient.
    grad: DVector<T>,
    /// Constraint part of the merit Hessian: `rho (J_g^T J_g + sum_active grad h_i grad h_i^T)`
    /// plus the curvature of the multiplier-weighted constraints.
    gn: DMatrix<T>,
    gf: DVector<T>,
}

impl<T: Real> MeritDerivatives<T> {
    fn at(p: &NlpProblem<T>, x: &DVector<T>, e: &Eval<T>, lambda: &DVector<T>, mu: &DVector<T>, rho: T) -> Result<Self> {
        let gf = p.gradient(x)?;
        let (jg, jh) = fd_jacobians(p, x, &e.g, &e.h);
        let (lam, nu) = first_order_multipliers(e, lambda, mu, rho);
        let grad = &gf + jg.tr_mul(&lam) + jh.tr_mul(&nu);
        if let Some(k) = grad.iter().position(|v| !v.is_finite_val()) {
            return Err(Error::NonFinite { k, what: "constraint Jacobian column".into() });
        }
        let mut gn = jg.tr_mul(&jg);
        for i in 0..e.h.len() {
            if nu[i] > T::zero() {
                let r = jh.row(i);
                gn += r.tr_mul(&r);
            }
        }
        let gn = gn * rho + constraint_curvature(p, x, &lam, &nu);
        Ok(Self { grad, gn, gf })
    }
}

fn first_order_multipliers<T: Real>(e: &Eval<T>, lambda: &DVector<T>, mu: &DVector<T>, rho: T) -> (DVector<T>, DVector<T>) {
    let lam = lambda + &e.g * rho;
    let nu = DVector::from_fn(e.h.len(), |i, _| (mu[i] + rho * e.h[i]).max(T::zero()));
    (lam, nu)
}

/// Hessian of `lam^T g + nu^T h` by forward second differences.
fn constraint_curvature<T: Real>(p: &NlpProblem<T>, x: &DVector<T>, lam: &DVector<T>, nu: &DVector<T>) -> DMatrix<T> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    if lam.is_empty() && nu.iter().all(|v| *v == T::zero()) {
        return hess;
    }
    let c = |z: &DVector<T>| {
        let (g, h) = p.constraints(z);
        lam.dot(&g) + nu.dot(&h)
    };
    let steps: Vec<T> = (0..n)
        .map(|i| {
            let h = T::lit(1e-5) * T::one().max(x[i].abs());
            if x[i] + h + h <= p.upper[i] { h } else { -h }
        })
        .collect();
    let c0 = c(x);
    let mut z = x.clone();
    let mut ci = vec![T::zero(); n];
    for i in 0..n {
        z[i] = x[i] + steps[i];
        ci[i] = c(&z);
        z[i] = x[i] + steps[i] + steps[i];
        let cii = c(&z);
        z[i] = x[i];
        hess[(i, i)] = (cii - ci[i] - ci[i] + c0) / (steps[i] * steps[i]);
    }
    for i in 0..n {
        z[i] = x[i] + steps[i];
        for j in 0..i {
            z[j] = x[j] + steps[j];
            let v = (c(&z) - ci[i] - ci[j] + c0) / (steps[i] * steps[j]);
            z[j] = x[j];
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
        z[i] = x[i];
    }
    if hess.iter().all(|v| v.is_finite_val()) {
        hess
    } else {
        DMatrix::zeros(n, n)
    }
}

fn projected_residual<T: Real>(p: &NlpProblem<T>, x: &DVector<T>, grad: &DVector<T>) -> T {
    let step = p.project(&(x - grad));
    (x - step).amax()
}

/// Projected Lagrangian gradient at least-squares multipliers: equalities
/// free, nearly active inequalities nonnegative, over the coordinates off
/// their bounds.
fn least_squares_residual<T: Real>(
    p: &NlpProblem<T>,
    x: &DVector<T>,
    gf: &DVector<T>,
    jg: &DMatrix<T>,
    jh: &DMatrix<T>,
    h: &DVector<T>,
    tol_in: T,
) -> T {
    let mut active: Vec<usize> = (0..h.len()).filter(|&i| h[i] >= -tol_in.max(T::lit(1e-6))).collect();
    for _ in 0..=h.len() {
        let rows = jg.nrows() + active.len();
        let mut j = DMatrix::zeros(rows, x.len());
        j.rows_mut(0, jg.nrows()).copy_from(jg);
        for (k, &i) in active.iter().enumerate() {
            j.row_mut(jg.nrows() + k).copy_from(&jh.row(i));
        }
        let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > p.lower[i] && x[i] < p.upper[i]).collect();
        let a = DMatrix::from_fn(free.len(), rows, |r, c| j[(c, free[r])]);
        let b = DVector::from_fn(free.len(), |r, _| -gf[free[r]]);
        if rows == 0 || free.is_empty() {
            return projected_residual(p, x, gf);
        }
        let Ok(m) = a.svd(true, true).solve(&b, T::lit(1e-10)) else {
            return T::infinity();
        };
        let negative: Vec<usize> = (0..active.len()).filter(|&k| m[jg.nrows() + k] < T::zero()).collect();
        if negative.is_empty() {
            return projected_residual(p, x, &(gf + j.tr_mul(&m)));
        }
        active = active.iter().enumerate().filter(|(k, _)| !negative.contains(k)).map(|(_, &i)| i).collect();
    }
    T::infinity()
}

struct InnerResult<T: Real> {
    x: DVector<T>,
    eval: Eval<T>,
    residual: T,
    iterations: usize,
    failed: bool,
}

fn bound_active<T: Real>(p: &NlpProblem<T>, x: &DVector<T>, grad: &DVector<T>, i: usize) -> bool {
    (x[i] <= p.lower[i] && grad[i] > T::zero()) || (x[i] >= p.upper[i] && grad[i] < T::zero())
}

/// Newton-type direction on the free coordinates from the model `B + GN`.
fn model_direction<T: Real>(p: &NlpProblem<T>, x: &DVector<T>, grad: &DVector<T>, k: &DMatrix<T>) -> Option<DVector<T>> {
    let free: Vec<usize> = (0..x.len()).filter(|&i| !bound_active(p, x, grad, i)).collect();
    let mut d = DVector::zeros(x.len());
    if free.is_empty() {
        return Some(d);
    }
    let mut kf = DMatrix::from_fn(free.len(), free.len(), |r, c| k[(free[r], free[c])]);
    let gf = DVector::from_fn(free.len(), |r, _| -grad[free[r]]);
    kf = (&kf + kf.transpose()) * T::lit(0.5);
    if let Some(ch) = kf.clone().cholesky() {
        let df = ch.solve(&gf);
        for (r, &i) in free.iter().enumerate() {
            d[i] = df[r];
        }
        return d.iter().all(|v| v.is_finite_val()).then_some(d);
    }
    // indefinite model: mirror negative curvature and floor the rest
    let eig = kf.symmetric_eigen();
    let top = eig.eigenvalues.amax().max(T::lit(1e-300));
    let floor = T::lit(1e-8) * top;
    let w = eig.eigenvectors.tr_mul(&gf);
    let w = DVector::from_fn(w.len(), |r, _| w[r] / eig.eigenvalues[r].abs().max(floor));
    let df = &eig.eigenvectors * w;
    for (r, &i) in free.iter().enumerate() {
        d[i] = df[r];
    }
    let cap = T::lit(10.0) * T::one().max(x.amax());
    if d.amax() > cap {
        d *= cap / d.amax();
    }
    d.iter().all(|v| v.is_finite_val()).then_some(d)
}

/// Projected quasi-Newton descent on the augmented Lagrangian, stopping once
/// the projected gradient falls to `omega`. Constraint curvature is taken from
/// finite differences of the constraints; BFGS models the objective.
#[allow(clippy::too_many_arguments)]
fn inner_solve<T: Real>(
    p: &NlpProblem<T>,
    x0: DVector<T>,
    e0: Eval<T>,
    lambda: &DVector<T>,
    mu: &DVector<T>,
    rho: T,
    omega: T,
    max_iter: usize,
) -> InnerResult<T> {
    let n = p.dim;
    let mut x = x0;
    let mut e = e0;
    let mut phi = e.merit(lambda, mu, rho);
    let mut der = match MeritDerivatives::at(p, &x, &e, lambda, mu, rho) {
        Ok(v) => v,
        Err(_) => return InnerResult { x, eval: e, residual: T::infinity(), iterations: 0, failed: true },
    };
    // objective curvature only where the objective moves; the constraint
    // directions are covered exactly by the curvature term
    let constrained = p.n_eq() + p.n_ineq() > 0;
    let mut active: Vec<bool> = der.gf.iter().map(|v| !constrained || *v != T::zero()).collect();
    let initial = |active: &[bool]| DMatrix::from_diagonal(&DVector::from_iterator(n, active.iter().map(|a| if *a { T::one() } else { T::zero() })));
    let mut b = initial(&active);
    let mut fresh = true;
    let mut iterations = 0;
    let c1 = T::lit(1e-4);
    loop {
        let grad = &der.grad;
        let residual = projected_residual(p, &x, grad);
        if residual <= omega || iterations >= max_iter {
            return InnerResult { x, eval: e, residual, iterations, failed: false };
        }
        iterations += 1;
        let mut d = model_direction(p, &x, grad, &(&b + &der.gn)).unwrap_or_else(|| -grad.clone());
        if !(d.dot(&grad) < T::zero()) {
            d = -grad.clone();
            for i in 0..n {
                if bound_active(p, &x, grad, i) {
                    d[i] = T::zero();
                }
            }
        }
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let xt = p.project(&(&x + &d * alpha));
            if xt == x {
                break;
            }
            let et = Eval::at(p, &xt);
            let phit = et.merit(lambda, mu, rho);
            if phit.is_finite_val() && phit <= phi + c1 * grad.dot(&(&xt - &x)) && phit <= phi {
                accepted = Some((xt, et, phit));
                break;
            }
            alpha *= T::lit(0.5);
        }
        let accepted = accepted.and_then(|(xn, en, phin)| {
            MeritDerivatives::at(p, &xn, &en, lambda, mu, rho).ok().map(|d| (xn, en, phin, d))
        });
        let Some((xn, en, phin, dern)) = accepted else {
            if fresh {
                return InnerResult { x, eval: e, residual, iterations, failed: true };
            }
            b = initial(&active);
            fresh = true;
            continue;
        };
        debug_assert!(phin <= phi, "merit increased on an accepted step");
        for i in 0..n {
            if !active[i] && dern.gf[i] != T::zero() {
                active[i] = true;
                let scale = b.diagonal().amax().max(T::one());
                b[(i, i)] = scale;
            }
        }
        let s = &xn - &x;
        // the constraint curvature is exact; BFGS models the objective
        let y = &dern.gf - &der.gf;
        let bs = &b * &s;
        let sbs = s.dot(&bs);
        if sbs > T::zero() && s.norm() > T::zero() {
            if fresh {
                let sy = s.dot(&y);
                let yy = y.norm_squared();
                if sy > T::zero() && yy > T::zero() {
                    b *= yy / sy;
                }
            }
            let bs = &b * &s;
            let sbs = s.dot(&bs);
            let sy = s.dot(&y);
            let theta = if sy >= T::lit(0.2) * sbs { T::one() } else { T::lit(0.8) * sbs / (sbs - sy) };
            let r = &y * theta + &bs * (T::one() - theta);
            let sr = s.dot(&r);
            if sbs > T::zero() && sr > T::zero() {
                b -= &bs * bs.transpose() / sbs;
                b += &r * r.transpose() / sr;
                fresh = false;
            }
        }
        x = xn;
        e = en;
        phi = phin;
        der = dern;
    }
}

/// Solves `p` from `x0`. A start point outside the bounds is projected onto
/// them and a warning is recorded in the report.
pub fn solve<T: Real>(p: &NlpProblem<T>, x0: &DVector<T>, opts: &SolveOptions<T>) -> Result<SolveReport<T>> {
    if x0.len() != p.dim {
        return Err(Error::DimensionMismatch(format!("x0 has length {}, problem has {}", x0.len(), p.dim)));
    }
    let mut warnings = Vec::new();
    let mut x = p.project(x0);
    if &x != x0 {
        warnings.push("start point projected onto the bounds".to_string());
        if opts.verbose {
            eprintln!("warning: start point projected onto the bounds");
        }
    }
    let mut e = Eval::at(p, &x);
    let (ne, ni) = (p.n_eq(), p.n_ineq());
    let mut lambda = DVector::zeros(ne);
    let mut mu = DVector::zeros(ni);
    let scale = |f: T| T::one().max(f.abs());
    let report = |x: DVector<T>, e: &Eval<T>, status, stationarity, lambda, mu, penalty, outer, inner, warnings| SolveReport {
        x,
        objective: e.f,
        status,
        eq_violation: e.eq_violation(),
        ineq_violation: e.ineq_violation(),
        stationarity,
        lambda,
        mu,
        penalty,
        outer_iterations: outer,
        inner_iterations: inner,
        warnings,
    };
    if !e.finite() {
        warnings.push("objective or constraints not finite at the start point".to_string());
        return Ok(report(x, &e, SolveStatus::DomainError, T::infinity(), lambda, mu, T::zero(), 0, 0, warnings));
    }
    let mut rho = opts.initial_penalty.unwrap_or_else(|| {
        let c2 = e.g.norm_squared() + e.h.iter().fold(T::zero(), |a, v| a + v.max(T::zero()).powi(2));
        (T::lit(10.0) * scale(e.f) / T::one().max(T::lit(0.5) * c2)).max(T::lit(1e-6)).min(T::lit(1e6))
    });
    let violation = |e: &Eval<T>, mu: &DVector<T>, rho: T| {
        let mut v = e.eq_violation();
        for i in 0..e.h.len() {
            v = v.max(e.h[i].max(-mu[i] / rho).abs());
        }
        v
    };
    let mut prev_violation = violation(&e, &mu, rho);
    let mut omega = T::lit(1e-1) * scale(e.f);
    let mut inner_total = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut stationarity = T::infinity();
    let mut outer = 0;
    let mut failures = 0;
    while outer < opts.max_outer {
        outer += 1;
        let target = omega.max(T::lit(0.1) * opts.tol_stat * scale(e.f));
        let (x_prev, e_prev) = (x.clone(), e.clone());
        let res = inner_solve(p, x, e, &lambda, &mu, rho, target, opts.max_inner);
        inner_total += res.iterations;
        if res.eval.eq_violation().max(res.eval.ineq_violation()) > opts.max_violation && rho < opts.max_penalty {
            if opts.verbose {
                eprintln!("outer {outer:3}: violation above the steering limit, retrying with rho = {:.1e}", (rho * opts.penalty_growth).as_f64());
            }
            x = x_prev;
            e = e_prev;
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
            continue;
        }
        x = res.x;
        e = res.eval;
        if res.residual == T::infinity() && res.iterations == 0 && outer == 1 {
            warnings.push("gradient not finite at the start point".to_string());
            status = SolveStatus::DomainError;
            break;
        }

        let v = violation(&e, &mu, rho);
        for i in 0..ne {
            lambda[i] += rho * e.g[i];
        }
        for i in 0..ni {
            mu[i] = (mu[i] + rho * e.h[i]).max(T::zero());
        }

        // Lagrangian stationarity at the updated multipliers
        stationarity = match p.gradient(&x) {
            Ok(gf) => {
                let (jg, jh) = fd_jacobians(p, &x, &e.g, &e.h);
                let first_order = projected_residual(p, &x, &(&gf + jg.tr_mul(&lambda) + jh.tr_mul(&mu)));
                first_order.min(least_squares_residual(p, &x, &gf, &jg, &jh, &e.h, opts.tol_in))
            }
            Err(_) => T::infinity(),
        };
        let complementarity = (0..ni).fold(T::zero(), |a, i| a.max((mu[i] * e.h[i]).abs()));
        let feasible = e.eq_violation() <= opts.tol_eq && e.ineq_violation() <= opts.tol_in;
        if opts.verbose {
            eprintln!(
                "outer {outer:3}: f = {:.10e}  |g| = {:.2e}  h+ = {:.2e}  stat = {:.2e}  rho = {:.1e}  inner = {}",
                e.f.as_f64(),
                e.eq_violation().as_f64(),
                e.ineq_violation().as_f64(),
                stationarity.as_f64(),
                rho.as_f64(),
                res.iterations
            );
        }
        if feasible && complementarity <= opts.tol_in && stationarity <= opts.tol_stat * scale(e.f) {
            status = SolveStatus::Converged;
            break;
        }
        if res.failed {
            failures += 1;
            if failures >= 3 {
                status = SolveStatus::LineSearchFailure;
                break;
            }
        } else {
            failures = 0;
        }
        if !feasible && v > T::lit(0.25) * prev_violation {
            if rho >= opts.max_penalty {
                warnings.push("penalty limit reached while infeasible".to_string());
                break;
            }
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
        }
        prev_violation = v;
        omega = (omega * T::lit(0.1)).max(T::lit(0.1) * opts.tol_stat * scale(e.f));
    }
    Ok(report(x, &e, status, stationarity, lambda, mu, rho, outer, inner_total, warnings))
}
