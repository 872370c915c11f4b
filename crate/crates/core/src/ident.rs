//! Eigenvalue-constrained ML identification of LADM models.
//!
//! Each eigenvalue constraint `lambda(A_i(theta)) in D_i` adds a Lyapunov-type
//! block `P_i` to `Sigma`, a block `M_{D_i}(A_i, P_i) - M_i` to the constraint
//! matrix and a row `tr(V_i P_i) - 1/eps_i <= 0`. The innovation covariance
//! occupies the leading block of `Sigma`, and `R_e - delta I` the leading block
//! of the constraint matrix. The whole set is then moved to factor space and
//! handed to the NLP solver.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bmz::{gbmz_forward, gbmz_inverse, sigma_factor, transformed_constraints, ConstraintSpec, FactorPoint, ThetaPoint};
use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::linalg::{block_diag, cholesky, min_sym_eigenvalue};
use crate::model::{eigen_report, neg_log_likelihood, regularizer, Dataset, EigenReport, InnovationModel, LadmSpec, PlantForm};
use crate::nlp::{fd_gradient, solve, NlpProblem, SolveOptions, SolveReport, SolveStatus};
use crate::oracle::{barrier_solve, region_feasible, BarrierQuery};
use crate::region::{LmiRegion, TightenedRegionConstraint};
use crate::scalar::Real;

pub type Selector<T> = Arc<dyn Fn(&InnovationModel<T>) -> DMatrix<T> + Send + Sync>;

/// Matrix whose spectrum an eigenvalue constraint acts on.
#[derive(Clone)]
pub enum Target<T: Real> {
    /// `A`.
    OpenLoop,
    /// `A - K C`.
    Filter,
    /// The plant block `A_s`.
    PlantBlock,
    /// Any square matrix-valued function of the model.
    Custom { label: String, select: Selector<T> },
}

impl<T: Real> fmt::Debug for Target<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl<T: Real> Target<T> {
    pub fn label(&self) -> String {
        match self {
            Target::OpenLoop => "open_loop".into(),
            Target::Filter => "filter".into(),
            Target::PlantBlock => "plant_block".into(),
            Target::Custom { label, .. } => label.clone(),
        }
    }

    pub fn resolve(&self, model: &InnovationModel<T>, n_s: usize) -> Result<DMatrix<T>> {
        let m = match self {
            Target::OpenLoop => model.a.clone(),
            Target::Filter => model.filter_matrix(),
            Target::PlantBlock => model.a.view((0, 0), (n_s, n_s)).into_owned(),
            Target::Custom { select, .. } => select(model),
        };
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "target {} resolved to a {}x{} matrix",
                self.label(),
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }
}

/// `lambda(target) in region`, tightened by `eps_i`, `V_i`, `M_i`.
#[derive(Clone, Debug)]
pub struct EigConstraintSpec<T: Real> {
    pub region: LmiRegion<T>,
    pub target: Target<T>,
    pub epsilon: T,
    /// `V_i`; identity when `None`.
    pub weight: Option<DMatrix<T>>,
    /// `M_i`; `eps_i I` when `None`.
    pub shift: Option<DMatrix<T>>,
}

impl<T: Real> EigConstraintSpec<T> {
    pub fn new(region: LmiRegion<T>, target: Target<T>, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidParameter("tightening constant eps_i must be positive".into()));
        }
        Ok(Self { region, target, epsilon, weight: None, shift: None })
    }

    pub fn with_weight(mut self, v: DMatrix<T>) -> Self {
        self.weight = Some(v);
        self
    }

    pub fn with_shift(mut self, m: DMatrix<T>) -> Self {
        self.shift = Some(m);
        self
    }

    pub fn label(&self) -> String {
        format!("{} on {}", self.region.label(), self.target.label())
    }

    /// Validated tightened constraint for an `n x n` target.
    pub fn tightened(&self, n: usize) -> Result<TightenedRegionConstraint<T>> {
        let nm = n * self.region.block_dim();
        TightenedRegionConstraint::new(
            self.region.clone(),
            self.shift.clone().unwrap_or_else(|| DMatrix::identity(nm, nm) * self.epsilon),
            self.weight.clone().unwrap_or_else(|| DMatrix::identity(n, n)),
            self.epsilon,
        )
    }
}

/// Structure, constraints and objective settings of one identification problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec<T: Real> {
    pub ladm: LadmSpec<T>,
    /// Pattern of `R_e` (full lower triangle by default).
    pub re_pattern: IndexSet,
    pub eig_constraints: Vec<EigConstraintSpec<T>>,
    /// Regularization weight `rho`.
    pub rho: T,
    /// Prior point `(beta_bar, R_e_bar)`; the initial point when `None`.
    pub phi_bar: Option<ThetaPoint<T>>,
    /// Diagonal floor of every factor.
    pub epsilon: T,
    /// Back-off in `R_e >= delta I`; `1e-8 var(y)` when `None`.
    pub delta_re: Option<T>,
}

impl<T: Real> ProblemSpec<T> {
    pub fn new(ladm: LadmSpec<T>) -> Result<Self> {
        let p = ladm.n_outputs();
        Ok(Self {
            ladm,
            re_pattern: IndexSet::full_lower(p)?,
            eig_constraints: Vec::new(),
            rho: T::zero(),
            phi_bar: None,
            epsilon: T::lit(1e-6),
            delta_re: None,
        })
    }

    pub fn with_constraint(mut self, c: EigConstraintSpec<T>) -> Self {
        self.eig_constraints.push(c);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.re_pattern.dim() != self.ladm.n_outputs() || !self.re_pattern.contains_diagonal() {
            return Err(Error::InvalidPattern("R_e pattern must cover the outputs and contain the diagonal".into()));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::InvalidParameter("diagonal floor epsilon must be positive".into()));
        }
        if self.rho < T::zero() {
            return Err(Error::InvalidParameter("regularization weight must be nonnegative".into()));
        }
        if let Some(d) = self.delta_re {
            if d < T::zero() {
                return Err(Error::InvalidParameter("R_e back-off must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// `delta` actually used for `data`.
    pub fn delta_for(&self, data: &Dataset<T>) -> T {
        self.delta_re.unwrap_or_else(|| T::lit(1e-8) * mean_output_variance(data))
    }
}

fn mean_output_variance<T: Real>(data: &Dataset<T>) -> T {
    let n = T::from_usize(data.len()).unwrap();
    let mut total = T::zero();
    for col in data.y.column_iter() {
        let mean = col.sum() / n;
        total += col.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / n;
    }
    total / T::from_usize(data.n_outputs().max(1)).unwrap()
}

/// Problem after the parameter extension.
#[derive(Clone, Debug)]
pub struct ExtendedProblem<T: Real> {
    pub ladm: LadmSpec<T>,
    pub constraint: Arc<ConstraintSpec<T>>,
    pub eig_constraints: Vec<EigConstraintSpec<T>>,
    pub tightened: Vec<TightenedRegionConstraint<T>>,
    /// `(offset, size)` of `R_e` followed by every `P_i` inside `Sigma`.
    pub sigma_blocks: Vec<(usize, usize)>,
    /// `(offset, size)` of `R_e - delta I` followed by every `M_{D_i}` block.
    pub a_blocks: Vec<(usize, usize)>,
    pub delta: T,
    pub epsilon: T,
    pub rho: T,
}

fn block<T: Real>(m: &DMatrix<T>, (off, size): (usize, usize)) -> DMatrix<T> {
    m.view((off, off), (size, size)).into_owned()
}

/// Builds the extended constraint set: `Sigma = R_e (+) P_1 (+) ...`,
/// `A = (R_e - delta I) (+) (M_{D_i}(A_i(theta), P_i) - M_i) (+) ...`, plus the
/// trace rows. `A_i` is evaluated at the current parameters.
pub fn extend_with_eig_constraints<T: Real>(spec: &ProblemSpec<T>, delta: T) -> Result<ExtendedProblem<T>> {
    spec.validate()?;
    let ladm = spec.ladm.clone();
    let p = ladm.n_outputs();
    let n_s = ladm.n_s;
    let probe = ladm.assemble(&DVector::zeros(ladm.n_beta()), &DMatrix::identity(p, p))?;

    let mut sigma_sets = vec![spec.re_pattern.clone()];
    let mut a_sets = vec![IndexSet::full_lower(p)?];
    let mut sigma_blocks = vec![(0, p)];
    let mut a_blocks = vec![(0, p)];
    let mut tightened = Vec::new();
    let (mut s_off, mut a_off) = (p, p);
    for c in &spec.eig_constraints {
        let n_i = c.target.resolve(&probe, n_s)?.nrows();
        let t = c.tightened(n_i)?;
        let nm = n_i * c.region.block_dim();
        sigma_sets.push(IndexSet::full_lower(n_i)?);
        a_sets.push(IndexSet::full_lower(nm)?);
        sigma_blocks.push((s_off, n_i));
        a_blocks.push((a_off, nm));
        s_off += n_i;
        a_off += nm;
        tightened.push(t);
    }
    let sigma_pattern = IndexSet::direct_sum_all(sigma_sets.iter());
    let a_pattern = IndexSet::direct_sum_all(a_sets.iter());

    let (l2, tg, cons, sb, ab) = (ladm.clone(), tightened.clone(), spec.eig_constraints.clone(), sigma_blocks.clone(), a_blocks.clone());
    let a_map = move |beta: &DVector<T>, sigma: &DMatrix<T>| -> Result<DMatrix<T>> {
        let re = block(sigma, sb[0]);
        let model = l2.assemble(beta, &re)?;
        let mut blocks = vec![re - DMatrix::identity(p, p) * delta];
        for (i, c) in cons.iter().enumerate() {
            let a_i = c.target.resolve(&model, l2.n_s)?;
            let p_i = block(sigma, sb[i + 1]);
            blocks.push(tg[i].region().matrix_char_fn(&a_i, &p_i)? - tg[i].shift());
        }
        debug_assert_eq!(blocks.len(), ab.len());
        Ok(block_diag(&blocks))
    };
    let (tg, sb) = (tightened.clone(), sigma_blocks.clone());
    let h_map = move |_: &DVector<T>, sigma: &DMatrix<T>| -> DVector<T> {
        DVector::from_fn(tg.len(), |i, _| (tg[i].weight() * block(sigma, sb[i + 1])).trace() - T::one() / tg[i].epsilon())
    };
    let mut constraint = ConstraintSpec::new(ladm.n_beta(), sigma_pattern)?.with_constraint_matrix(a_pattern, Arc::new(a_map))?;
    if !tightened.is_empty() {
        constraint = constraint.with_inequalities(tightened.len(), Arc::new(h_map));
    }
    Ok(ExtendedProblem {
        ladm,
        constraint: Arc::new(constraint),
        eig_constraints: spec.eig_constraints.clone(),
        tightened,
        sigma_blocks,
        a_blocks,
        delta,
        epsilon: spec.epsilon,
        rho: spec.rho,
    })
}

impl<T: Real> ExtendedProblem<T> {
    pub fn n_constraints(&self) -> usize {
        self.tightened.len()
    }

    /// Decision-vector length `n_beta + |I_Sigma| + |I_A|`.
    pub fn dim(&self) -> usize {
        self.constraint.dim()
    }

    pub fn re(&self, theta: &ThetaPoint<T>) -> DMatrix<T> {
        block(&theta.sigma, self.sigma_blocks[0])
    }

    pub fn model(&self, theta: &ThetaPoint<T>) -> Result<InnovationModel<T>> {
        self.ladm.assemble(&theta.beta, &self.re(theta))
    }

    /// Base point `(beta, R_e)` of an extended one.
    pub fn base(&self, theta: &ThetaPoint<T>) -> ThetaPoint<T> {
        ThetaPoint { beta: theta.beta.clone(), sigma: self.re(theta) }
    }

    /// Extended point with the given Lyapunov blocks.
    pub fn extend(&self, base: &ThetaPoint<T>, p_blocks: &[DMatrix<T>]) -> Result<ThetaPoint<T>> {
        if p_blocks.len() != self.n_constraints() {
            return Err(Error::DimensionMismatch(format!(
                "{} Lyapunov blocks for {} constraints",
                p_blocks.len(),
                self.n_constraints()
            )));
        }
        let mut blocks = vec![base.sigma.clone()];
        blocks.extend(p_blocks.iter().cloned());
        for (b, &(_, size)) in blocks.iter().zip(&self.sigma_blocks) {
            if b.nrows() != size || b.ncols() != size {
                return Err(Error::DimensionMismatch("block size does not match the layout".into()));
            }
        }
        Ok(ThetaPoint { beta: base.beta.clone(), sigma: self.constraint.sigma_pattern().project_sym(&block_diag(&blocks))? })
    }

    /// Flattened coordinates the likelihood depends on: `beta` and the `R_e` factor.
    fn likelihood_coordinates(&self) -> Vec<usize> {
        let nb = self.constraint.n_beta();
        let p = self.sigma_blocks[0].1;
        let mut idx: Vec<usize> = (0..nb).collect();
        for (k, (i, j)) in self.constraint.sigma_pattern().entries().into_iter().enumerate() {
            if i <= p && j <= p {
                idx.push(nb + k);
            }
        }
        idx
    }

    fn sigma_coordinates(&self) -> std::ops::Range<usize> {
        let nb = self.constraint.n_beta();
        nb..nb + self.constraint.sigma_pattern().len()
    }

    /// Finds Lyapunov blocks that make `base` strictly feasible, using the
    /// barrier SDP. Each `P_i = t P*` with `t = (1 + 1/(eps_i phi))/2 > 1`.
    pub fn lyapunov_blocks(&self, base: &ThetaPoint<T>) -> Result<Vec<DMatrix<T>>> {
        let model = self.ladm.assemble(&base.beta, &base.sigma)?;
        let mut out = Vec::with_capacity(self.n_constraints());
        for (c, t) in self.eig_constraints.iter().zip(&self.tightened) {
            let a_i = c.target.resolve(&model, self.ladm.n_s)?;
            let q = BarrierQuery::with_data(t.region().clone(), a_i, t.shift().clone(), t.weight().clone())?;
            let sol = barrier_solve(&q, &SolveOptions::default())?;
            let phi = sol.value;
            let scale = (T::one() + T::one() / (t.epsilon() * phi)) * T::lit(0.5);
            if !phi.is_finite_val() || !(scale > T::one() + T::lit(1e-9)) {
                return Err(Error::Infeasible(format!(
                    "eigenvalue constraint {} is not strictly feasible at the initial point (barrier value {:e}, bound {:e})",
                    c.label(),
                    phi.as_f64(),
                    (T::one() / t.epsilon()).as_f64()
                )));
            }
            out.push(sol.p * scale);
        }
        Ok(out)
    }

    /// Factor point for a base `(beta, R_e)`, naming the first violated block.
    pub fn initial_factor(&self, base: &ThetaPoint<T>) -> Result<FactorPoint<T>> {
        let p = self.sigma_blocks[0].1;
        if base.beta.len() != self.constraint.n_beta() || base.sigma.shape() != (p, p) {
            return Err(Error::DimensionMismatch("initial point does not match the model structure".into()));
        }
        if cholesky(&(&base.sigma - DMatrix::identity(p, p) * self.delta), "R_e - delta I").is_err() {
            return Err(Error::Infeasible(format!(
                "innovation covariance R_e - delta I (delta = {:e}) is not positive definite at the initial point",
                self.delta.as_f64()
            )));
        }
        let p_blocks = self.lyapunov_blocks(base)?;
        let theta = self.extend(base, &p_blocks)?;
        gbmz_inverse(&theta, &self.constraint).map_err(|e| Error::Infeasible(format!("initial point: {e}")))
    }

    /// `min eig(Sigma - H)` and `min eig` of each constraint-matrix block.
    pub fn feasibility(&self, theta: &ThetaPoint<T>) -> Result<(T, Vec<T>)> {
        let a = self.constraint.constraint_matrix(&theta.beta, &theta.sigma)?;
        let h = self.constraint.lower_bound(&theta.beta);
        let blocks = self.a_blocks.iter().map(|&b| min_sym_eigenvalue(&block(&a, b))).collect();
        Ok((min_sym_eigenvalue(&(&theta.sigma - h)), blocks))
    }
}

/// Composed objective `L_N(T(phi)) + R_0(phi)`.
fn objective_value<T: Real>(ext: &ExtendedProblem<T>, data: &Dataset<T>, phi_bar: &FactorPoint<T>, x: &DVector<T>) -> T {
    let eval = || -> Result<T> {
        let phi = FactorPoint::from_vec(x, &ext.constraint)?;
        let l = sigma_factor(&phi, &ext.constraint)?;
        let re = block(&(&l * l.transpose()), ext.sigma_blocks[0]);
        let model = ext.ladm.assemble(&phi.beta, &re)?;
        let mut v = neg_log_likelihood(&model, data)?;
        if ext.rho > T::zero() {
            v += regularizer(&phi, phi_bar, ext.rho, &ext.constraint)?;
        }
        Ok(v)
    };
    match eval() {
        Ok(v) if v.is_finite_val() => v,
        _ => T::infinity(),
    }
}

/// Transformed NLP: objective `L_N(T(phi)) + R_0(phi)`, equalities `g_T`,
/// inequalities `h_T`, and the diagonal floor as bounds.
///
/// The gradient differences only the coordinates the objective depends on
/// (`beta` and the `R_e` factor, plus all of `L_Sigma` when `rho > 0`).
pub fn build_nlp<T: Real>(ext: &ExtendedProblem<T>, data: &Dataset<T>, phi_bar: &FactorPoint<T>) -> Result<NlpProblem<T>> {
    if data.is_empty() {
        return Err(Error::InvalidDimension("dataset is empty".into()));
    }
    if data.n_inputs() != ext.ladm.n_inputs || data.n_outputs() != ext.ladm.n_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} inputs and {} outputs, data has {} and {}",
            ext.ladm.n_inputs,
            ext.ladm.n_outputs(),
            data.n_inputs(),
            data.n_outputs()
        )));
    }
    let ext = Arc::new(ext.clone());
    let data = Arc::new(data.clone());
    let phi_bar = Arc::new(phi_bar.clone());
    let dim = ext.dim();

    let (e1, d1, b1) = (ext.clone(), data.clone(), phi_bar.clone());
    let objective = move |x: &DVector<T>| objective_value(&e1, &d1, &b1, x);

    let mut coords = ext.likelihood_coordinates();
    if ext.rho > T::zero() {
        coords.extend(ext.sigma_coordinates());
        coords.sort_unstable();
        coords.dedup();
    }
    let lower = ext.constraint.epsilon_box(ext.epsilon)?;
    let (e2, d2, b2, lb) = (ext.clone(), data.clone(), phi_bar.clone(), lower.clone());
    let gradient = move |x: &DVector<T>| -> DVector<T> {
        let sub = DVector::from_iterator(coords.len(), coords.iter().map(|&i| x[i]));
        let f = |z: &DVector<T>| {
            let mut full = x.clone();
            for (k, &i) in coords.iter().enumerate() {
                full[i] = z[k];
            }
            objective_value(&e2, &d2, &b2, &full)
        };
        let sub_lb = DVector::from_iterator(coords.len(), coords.iter().map(|&i| lb[i]));
        let sub_ub = DVector::from_element(coords.len(), T::infinity());
        let mut g = DVector::zeros(x.len());
        match fd_gradient(f, &sub, &sub_lb, &sub_ub) {
            Ok(gs) => {
                for (k, &i) in coords.iter().enumerate() {
                    g[i] = gs[k];
                }
            }
            Err(_) => g.fill(T::nan()),
        }
        g
    };

    let e3 = ext.clone();
    let (n_eq, n_in) = (ext.constraint.n_eq_transformed(), ext.constraint.n_ineq());
    let constraints = move |x: &DVector<T>| {
        FactorPoint::from_vec(x, &e3.constraint)
            .and_then(|phi| transformed_constraints(&phi, &e3.constraint))
            .unwrap_or_else(|_| (DVector::from_element(n_eq, T::nan()), DVector::from_element(n_in, T::nan())))
    };
    NlpProblem::new(dim, Arc::new(objective))
        .with_gradient(Arc::new(gradient))
        .with_constraints(n_eq, n_in, Arc::new(constraints))
        .with_bounds(lower, DVector::from_element(dim, T::infinity()))
}

/// Starting point of a fit.
#[derive(Clone, Debug)]
pub enum Init<T: Real> {
    /// `(beta, R_e)` in the base layout.
    Theta(ThetaPoint<T>),
    /// Least-squares VARX estimate, see [`varx_init`].
    Auto,
}

#[derive(Clone, Debug)]
pub struct FitOptions<T: Real> {
    pub solver: SolveOptions<T>,
    /// Extra starts from the initial `beta` scaled entrywise by `1 + U(-0.1, 0.1)`.
    pub multistart: usize,
    /// Seed of the multistart perturbations.
    pub seed: u64,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self { solver: SolveOptions::default(), multistart: 0, seed: 0 }
    }
}

/// Scalars and diagnostics of a fit.
#[derive(Clone, Debug)]
pub struct FitReport<T: Real> {
    /// Unregularized `L_N(theta_hat)`.
    pub neg_log_likelihood: T,
    /// Solver objective, including the regularizer.
    pub objective: T,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_secs: f64,
    pub eq_violation: T,
    pub ineq_violation: T,
    pub stationarity: T,
    /// `min eig(Sigma_hat - H)`.
    pub min_eig_sigma: T,
    /// `min eig` of each constraint-matrix block, `R_e - delta I` first.
    pub min_eig_blocks: Vec<T>,
    /// `min eig f_{D_i}(lambda)` over the spectrum of each target.
    pub region_margins: Vec<T>,
    pub eigen: EigenReport<T>,
    pub delta: T,
    pub epsilon: T,
}

impl<T: Real> FitReport<T> {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct Fit<T: Real> {
    /// Extended `(beta, Sigma)` at the solution.
    pub theta_hat: ThetaPoint<T>,
    pub phi_hat: FactorPoint<T>,
    pub model: InnovationModel<T>,
    pub report: FitReport<T>,
    pub solve: SolveReport<T>,
    pub problem: ExtendedProblem<T>,
}

impl<T: Real> Fit<T> {
    /// `(beta_hat, R_e_hat)`.
    pub fn base(&self) -> ThetaPoint<T> {
        self.problem.base(&self.theta_hat)
    }

    /// Barrier-SDP confirmation that each fitted target lies in its
    /// `1/eps_i` sublevel set.
    pub fn oracle_check(&self) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        for (c, t) in self.problem.eig_constraints.iter().zip(&self.problem.tightened) {
            let a_i = c.target.resolve(&self.model, self.problem.ladm.n_s)?;
            let q = BarrierQuery::with_data(t.region().clone(), a_i, t.shift().clone(), t.weight().clone())?;
            out.push(region_feasible(&q, t.epsilon())?);
        }
        Ok(out)
    }
}

fn finish<T: Real>(
    ext: ExtendedProblem<T>,
    data: &Dataset<T>,
    solve_report: SolveReport<T>,
    started: Instant,
) -> Result<Fit<T>> {
    let phi_hat = FactorPoint::from_vec(&solve_report.x, &ext.constraint)?;
    let (theta_hat, _) = gbmz_forward(&phi_hat, &ext.constraint)?;
    let model = ext.model(&theta_hat)?;
    let nll = neg_log_likelihood(&model, data)?;
    let (min_eig_sigma, min_eig_blocks) = ext.feasibility(&theta_hat)?;
    let mut region_margins = Vec::new();
    for c in &ext.eig_constraints {
        region_margins.push(c.region.spectrum_margin(&c.target.resolve(&model, ext.ladm.n_s)?)?);
    }
    let report = FitReport {
        neg_log_likelihood: nll,
        objective: solve_report.objective,
        status: solve_report.status,
        outer_iterations: solve_report.outer_iterations,
        inner_iterations: solve_report.inner_iterations,
        wall_time_secs: started.elapsed().as_secs_f64(),
        eq_violation: solve_report.eq_violation,
        ineq_violation: solve_report.ineq_violation,
        stationarity: solve_report.stationarity,
        min_eig_sigma,
        min_eig_blocks,
        region_margins,
        eigen: eigen_report(&model)?,
        delta: ext.delta,
        epsilon: ext.epsilon,
    };
    Ok(Fit { theta_hat, phi_hat, model, report, solve: solve_report, problem: ext })
}

fn prior<T: Real>(spec: &ProblemSpec<T>, ext: &ExtendedProblem<T>, phi0: &FactorPoint<T>) -> Result<FactorPoint<T>> {
    match &spec.phi_bar {
        None => Ok(phi0.clone()),
        Some(bar) if spec.rho > T::zero() => {
            let mut phi = ext.initial_factor(bar)?;
            // the constraint factor is not regularized; keep the shapes aligned
            phi.l_a = phi0.l_a.clone();
            Ok(phi)
        }
        Some(_) => Ok(phi0.clone()),
    }
}

/// Solves the transformed problem from the factor point `phi0`.
pub fn fit_from_factor<T: Real>(
    spec: &ProblemSpec<T>,
    ext: ExtendedProblem<T>,
    data: &Dataset<T>,
    phi0: &FactorPoint<T>,
    opts: &FitOptions<T>,
) -> Result<Fit<T>> {
    let started = Instant::now();
    let phi_bar = prior(spec, &ext, phi0)?;
    let nlp = build_nlp(&ext, data, &phi_bar)?;
    let x0 = phi0.to_vec(&ext.constraint);
    let solver = steered_options(&ext, &nlp, &x0, &opts.solver);
    let report = solve(&nlp, &x0, &solver)?;
    if report.status == SolveStatus::DomainError {
        return Err(Error::Infeasible(format!(
            "likelihood is not finite at the initial point ({})",
            report.warnings.join("; ")
        )));
    }
    finish(ext, data, report, started)
}

/// With eigenvalue constraints, unset penalty options default to
/// `rho_0 = 10 max(1, |f(x0)|) / min eps_i` and a violation cap of `0.1 min eps_i`.
fn steered_options<T: Real>(
    ext: &ExtendedProblem<T>,
    nlp: &NlpProblem<T>,
    x0: &DVector<T>,
    base: &SolveOptions<T>,
) -> SolveOptions<T> {
    let mut o = base.clone();
    let Some(eps) = ext.eig_constraints.iter().map(|c| c.epsilon).reduce(|a, b| if b < a { b } else { a }) else {
        return o;
    };
    if o.initial_penalty.is_none() {
        let f0 = nlp.objective(x0);
        if f0.is_finite() {
            o.initial_penalty = Some(T::lit(10.0) * T::one().max(f0.abs()) / eps);
        }
    }
    if !o.max_violation.is_finite() {
        o.max_violation = T::lit(0.1) * eps;
    }
    o
}

/// Fits the structured model, returning the estimate and its diagnostics.
pub fn fit<T: Real>(spec: &ProblemSpec<T>, data: &Dataset<T>, init: &Init<T>, opts: &FitOptions<T>) -> Result<Fit<T>> {
    spec.validate()?;
    let delta = spec.delta_for(data);
    let ext = extend_with_eig_constraints(spec, delta)?;
    let base = match init {
        Init::Theta(t) => t.clone(),
        Init::Auto => varx_init(data, spec)?,
    };
    let phi0 = ext.initial_factor(&base)?;
    let mut best = fit_from_factor(spec, ext.clone(), data, &phi0, opts)?;
    for k in 1..=opts.multistart {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        let beta = base.beta.map(|v| v * (T::one() + T::lit(rng.random_range(-0.1..0.1))));
        let start = ThetaPoint { beta, sigma: base.sigma.clone() };
        let Ok(phi) = ext.initial_factor(&start) else { continue };
        let Ok(f) = fit_from_factor(spec, ext.clone(), data, &phi, opts) else { continue };
        let better = match (f.report.converged(), best.report.converged()) {
            (true, false) => true,
            (false, true) => false,
            _ => f.report.objective < best.report.objective,
        };
        if better {
            best = f;
        }
    }
    Ok(best)
}

/// Initial guess from a least-squares ARX/VARX regression with an intercept.
///
/// * `plant_form = full` with `n_s = p`: `y[k] = Phi y[k-1] + Gamma u[k-1] + c`
///   gives `A_s = Phi`, `B_s = Gamma` (`C_s = I`), or `C^{-1} Phi C`,
///   `C^{-1} Gamma` when `C_s` is fixed and invertible.
/// * `plant_form = observability canonical`: ARX(`n_s`, `n_s`) gives the last
///   row of `A_s` and the first `n_s` Markov parameters as `B_s`.
///
/// `K_s = 0`, `K_d = 0.05 I`, `R_e` is the residual covariance floored at
/// `2 delta`. If an eigenvalue constraint fails at that point, `A_s` is shrunk
/// by factors of 0.9 (up to 30 times) until the barrier SDP accepts it.
pub fn varx_init<T: Real>(data: &Dataset<T>, spec: &ProblemSpec<T>) -> Result<ThetaPoint<T>> {
    let ladm = &spec.ladm;
    let (n_s, m, p) = (ladm.n_s, ladm.n_inputs, ladm.n_outputs());
    let lags = match ladm.plant_form {
        PlantForm::ObservabilityCanonical => n_s,
        PlantForm::Full => {
            if n_s != p {
                return Err(Error::InvalidParameter(format!(
                    "automatic initialization of a full plant needs n_s = p (got n_s = {n_s}, p = {p}); supply an initial model"
                )));
            }
            1
        }
    };
    let n = data.len();
    if n <= m + p + 1 || n <= lags * (m + p) + 1 {
        return Err(Error::InvalidDimension(format!("{n} samples are too few for the initial regression")));
    }
    let active_u: Vec<usize> = (0..m).filter(|&j| data.u.column(j).iter().any(|v| *v != T::zero())).collect();
    let cols = lags * (p + active_u.len()) + 1;
    let rows = n - lags;
    let mut x = DMatrix::zeros(rows, cols);
    let mut y = DMatrix::zeros(rows, p);
    for r in 0..rows {
        let k = r + lags;
        let mut c = 0;
        for l in 1..=lags {
            for i in 0..p {
                x[(r, c)] = data.y[(k - l, i)];
                c += 1;
            }
            for &j in &active_u {
                x[(r, c)] = data.u[(k - l, j)];
                c += 1;
            }
        }
        x[(r, c)] = T::one();
        y.row_mut(r).copy_from(&data.y.row(k));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > T::zero() { (smax / smin).as_f64() } else { f64::INFINITY };
    if !(condition < 1e10) {
        return Err(Error::RankDeficient { condition });
    }
    let coef = svd
        .solve(&y, T::eps() * smax)
        .map_err(|e| Error::Solver(format!("least squares failed: {e}")))?;
    let resid = &y - &x * &coef;
    let mut re = resid.tr_mul(&resid) / T::from_usize(rows).unwrap();
    re = (&re + re.transpose()) * T::lit(0.5);
    let delta = spec.delta_for(data);
    let floor = (delta + delta).max(T::lit(1e-12));
    for i in 0..p {
        if re[(i, i)] < floor {
            re[(i, i)] = floor;
        }
    }
    if cholesky(&(&re - DMatrix::identity(p, p) * delta), "R_e").is_err() {
        re += DMatrix::identity(p, p) * floor;
    }

    // coefficient of lag l, output i (column block) for output row o: coef[(c, o)]
    let stride = p + active_u.len();
    let (a_s, b_s) = match ladm.plant_form {
        PlantForm::Full => {
            let mut phi = DMatrix::zeros(p, p);
            let mut gamma = DMatrix::zeros(p, m);
            for o in 0..p {
                for i in 0..p {
                    phi[(o, i)] = coef[(i, o)];
                }
                for (t, &j) in active_u.iter().enumerate() {
                    gamma[(o, j)] = coef[(p + t, o)];
                }
            }
            match &ladm.c_fixed {
                Some(c) => {
                    let ci = c.clone().try_inverse().ok_or_else(|| {
                        Error::InvalidParameter("automatic initialization needs an invertible fixed C_s".into())
                    })?;
                    (&ci * phi * c, ci * gamma)
                }
                None => (phi, gamma),
            }
        }
        PlantForm::ObservabilityCanonical => {
            // y[k] = sum alpha_l y[k-l] + sum b_l u[k-l]
            let alpha: Vec<T> = (1..=n_s).map(|l| coef[((l - 1) * stride, 0)]).collect();
            let mut a = DMatrix::zeros(n_s, n_s);
            for i in 0..n_s - 1 {
                a[(i, i + 1)] = T::one();
            }
            for l in 1..=n_s {
                a[(n_s - 1, n_s - l)] = alpha[l - 1];
            }
            let mut b = DMatrix::zeros(n_s, m);
            for (t, &j) in active_u.iter().enumerate() {
                let bl: Vec<T> = (1..=n_s).map(|l| coef[((l - 1) * stride + 1 + t, 0)]).collect();
                // Markov parameters g_k = b_k + sum_{i<k} alpha_i g_{k-i}
                let mut g = vec![T::zero(); n_s];
                for k in 0..n_s {
                    let mut v = bl[k];
                    for i in 0..k {
                        v += alpha[i] * g[k - 1 - i];
                    }
                    g[k] = v;
                }
                for k in 0..n_s {
                    b[(k, j)] = g[k];
                }
            }
            (a, b)
        }
    };

    let c_s = match (&ladm.plant_form, &ladm.c_fixed) {
        (PlantForm::Full, Some(c)) => c.clone(),
        (PlantForm::Full, None) => DMatrix::identity(p, n_s),
        _ => {
            let mut c = DMatrix::zeros(1, n_s);
            c[(0, 0)] = T::one();
            c
        }
    };
    let n_d = ladm.n_d();
    let build = |a_s: &DMatrix<T>| -> Result<ThetaPoint<T>> {
        let n = n_s + n_d;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n_s, n_s)).copy_from(a_s);
        a.view_mut((0, n_s), (n_s, n_d)).copy_from(&ladm.bd);
        for i in 0..n_d {
            a[(n_s + i, n_s + i)] = T::one();
        }
        let mut b = DMatrix::zeros(n, m);
        b.view_mut((0, 0), (n_s, m)).copy_from(&b_s);
        let mut c = DMatrix::zeros(p, n);
        c.view_mut((0, 0), (p, n_s)).copy_from(&c_s);
        c.view_mut((0, n_s), (p, n_d)).copy_from(&ladm.cd);
        let mut k = DMatrix::zeros(n, p);
        for i in 0..n_d.min(p) {
            k[(n_s + i, i)] = T::lit(0.05);
        }
        let model = InnovationModel::new(a, b, c, DMatrix::zeros(p, m), DVector::zeros(n), k, re.clone())?;
        Ok(ThetaPoint { beta: ladm.pack(&model)?, sigma: re.clone() })
    };
    let ext = extend_with_eig_constraints(spec, delta)?;
    let mut a_s = a_s;
    let mut last_err = None;
    for _ in 0..=30 {
        let theta = build(&a_s)?;
        match ext.lyapunov_blocks(&theta) {
            Ok(_) => return Ok(theta),
            Err(e) => last_err = Some(e),
        }
        a_s *= T::lit(0.9);
    }
    Err(Error::Infeasible(format!(
        "automatic initialization could not satisfy the eigenvalue constraints: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// One step of an epsilon continuation.
#[derive(Clone, Debug)]
pub struct ContinuationStep<T: Real> {
    pub epsilon: T,
    /// Optimal value `mu_eps` (solver objective).
    pub mu: T,
    pub fit: Fit<T>,
}

/// Result of [`epsilon_continuation`].
#[derive(Clone, Debug)]
pub struct Continuation<T: Real> {
    pub steps: Vec<ContinuationStep<T>>,
    /// Whether `mu_eps` was nonincreasing within `tol`.
    pub monotone: bool,
}

/// Fits for each floor in a decreasing `schedule`, warm-starting each solve
/// from the previous solution. Monotonicity of `mu_eps` is reported, not
/// enforced.
pub fn epsilon_continuation<T: Real>(
    spec: &ProblemSpec<T>,
    data: &Dataset<T>,
    init: &Init<T>,
    schedule: &[T],
    opts: &FitOptions<T>,
    tol: T,
) -> Result<Continuation<T>> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("epsilon schedule is empty".into()));
    }
    if schedule.iter().any(|e| !(*e > T::zero())) || schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("epsilon schedule must be positive and strictly decreasing".into()));
    }
    let mut steps: Vec<ContinuationStep<T>> = Vec::new();
    for &eps in schedule {
        let spec_e = ProblemSpec { epsilon: eps, ..spec.clone() };
        let f = match steps.last() {
            None => fit(&spec_e, data, init, opts)?,
            Some(prev) => {
                let ext = extend_with_eig_constraints(&spec_e, prev.fit.problem.delta)?;
                fit_from_factor(&spec_e, ext, data, &prev.fit.phi_hat, opts)?
            }
        };
        steps.push(ContinuationStep { epsilon: eps, mu: f.report.objective, fit: f });
    }
    let monotone = steps.windows(2).all(|w| w[1].mu <= w[0].mu + tol);
    Ok(Continuation { steps, monotone })
}
