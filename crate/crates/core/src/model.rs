//! Innovation-form models and the integrating-disturbance (LADM) structure.
//!
//! ```text
//! xhat[k+1] = A xhat[k] + B u[k] + K e[k]
//! y[k]      = C xhat[k] + D u[k] + e[k],     e[k] ~ N(0, Re)
//! ```
//!
//! The recursions run in the model's own coordinates; no balancing or
//! rescaling is applied.

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bmz::{sigma_factor, ConstraintSpec, FactorPoint};
use crate::error::{Error, Result};
use crate::index_set::check_symmetric;
use crate::linalg::{cholesky, eigenvalues, sort_by_modulus_desc};
use crate::scalar::Real;

/// State estimates above this magnitude make the likelihood `+inf`.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Innovation-form LTI model `(A, B, C, D, xhat0, K, Re)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InnovationModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
    pub x0: DVector<T>,
    pub k: DMatrix<T>,
    pub re: DMatrix<T>,
}

impl<T: Real> InnovationModel<T> {
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        d: DMatrix<T>,
        x0: DVector<T>,
        k: DMatrix<T>,
        re: DMatrix<T>,
    ) -> Result<Self> {
        let model = Self { a, b, c, d, x0, k, re };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, p) = (self.a.nrows(), self.b.ncols(), self.c.nrows());
        let shape = |name: &str, mat: &DMatrix<T>, r: usize, c: usize| {
            if mat.nrows() != r || mat.ncols() != c {
                Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    mat.nrows(),
                    mat.ncols()
                )))
            } else {
                Ok(())
            }
        };
        shape("A", &self.a, n, n)?;
        shape("B", &self.b, n, m)?;
        shape("C", &self.c, p, n)?;
        shape("D", &self.d, p, m)?;
        shape("K", &self.k, n, p)?;
        shape("Re", &self.re, p, p)?;
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch(format!("xhat0 has length {}, expected {n}", self.x0.len())));
        }
        check_symmetric(&self.re)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Filter matrix `A - K C`.
    pub fn filter_matrix(&self) -> DMatrix<T> {
        &self.a - &self.k * &self.c
    }
}

/// Input/output record: `u` is `N x m`, `y` is `N x p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    pub u: DMatrix<T>,
    pub y: DMatrix<T>,
    pub dt: T,
}

impl<T: Real> Dataset<T> {
    pub fn new(u: DMatrix<T>, y: DMatrix<T>, dt: T) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "u has {} samples, y has {}",
                u.nrows(),
                y.nrows()
            )));
        }
        if y.nrows() == 0 {
            return Err(Error::InvalidDimension("dataset must contain at least one sample".into()));
        }
        for (name, m) in [("u", &u), ("y", &y)] {
            if let Some(pos) = m.iter().position(|v| !v.is_finite_val()) {
                return Err(Error::NonFinite { k: pos % m.nrows(), what: format!("{name} contains a non-finite value") });
            }
        }
        Ok(Self { u, y, dt })
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }
}

fn check_data<T: Real>(model: &InnovationModel<T>, u: &DMatrix<T>, y: Option<&DMatrix<T>>) -> Result<()> {
    if u.ncols() != model.n_inputs() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} inputs, data has {}",
            model.n_inputs(),
            u.ncols()
        )));
    }
    if let Some(y) = y {
        if y.ncols() != model.n_outputs() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} outputs, data has {}",
                model.n_outputs(),
                y.ncols()
            )));
        }
        if y.nrows() != u.nrows() {
            return Err(Error::DimensionMismatch("u and y lengths differ".into()));
        }
    }
    Ok(())
}

/// Simulated outputs together with the injected innovations.
#[derive(Clone, Debug)]
pub struct Simulation<T: Real> {
    pub y: DMatrix<T>,
    pub e: DMatrix<T>,
}

/// Runs the innovation recursion driven by `u`. With `noise` on, `e[k] =
/// chol(Re) z[k]` with `z[k]` standard normal from a ChaCha8 stream seeded by
/// `seed`; with `noise` off, `e = 0`.
pub fn simulate<T: Real>(model: &InnovationModel<T>, u: &DMatrix<T>, seed: u64, noise: bool) -> Result<Simulation<T>> {
    check_data(model, u, None)?;
    let (n_samples, n, p) = (u.nrows(), model.n_states(), model.n_outputs());
    let mut e = DMatrix::zeros(n_samples, p);
    if noise {
        let l = cholesky(&model.re, "Re")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = DVector::zeros(p);
        for k in 0..n_samples {
            for v in z.iter_mut() {
                let s: f64 = StandardNormal.sample(&mut rng);
                *v = T::lit(s);
            }
            e.row_mut(k).copy_from(&(&l * &z).transpose());
        }
    }
    let mut y = DMatrix::zeros(n_samples, p);
    let mut x = model.x0.clone();
    for k in 0..n_samples {
        let uk = u.row(k).transpose();
        let ek = e.row(k).transpose();
        let yk = &model.c * &x + &model.d * &uk + &ek;
        y.row_mut(k).copy_from(&yk.transpose());
        x = &model.a * &x + &model.b * &uk + &model.k * &ek;
        debug_assert_eq!(x.len(), n);
    }
    Ok(Simulation { y, e })
}

/// Deterministic response `yhat[k] = sum_{j=1..k} C A^{j-1} B u[k-j]`.
pub fn noise_free_response<T: Real>(model: &InnovationModel<T>, u: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_data(model, u, None)?;
    let mut y = DMatrix::zeros(u.nrows(), model.n_outputs());
    let mut x = DVector::zeros(model.n_states());
    for k in 0..u.nrows() {
        y.row_mut(k).copy_from(&(&model.c * &x).transpose());
        x = &model.a * &x + &model.b * u.row(k).transpose();
    }
    Ok(y)
}

/// Innovations `e` (`N x p`) and state estimates `xhat` (`(N+1) x n`).
#[derive(Clone, Debug)]
pub struct Innovations<T: Real> {
    pub e: DMatrix<T>,
    pub xhat: DMatrix<T>,
}

enum FilterRun {
    Done,
    Diverged(usize),
    NonFinite(usize),
}

/// Core recursion; calls `sink(k, xhat_k, e_k)` and, for `k = N`, with the
/// final state and an empty innovation.
fn run_filter<T: Real>(
    model: &InnovationModel<T>,
    u: &DMatrix<T>,
    y: &DMatrix<T>,
    limit: T,
    mut sink: impl FnMut(usize, &[T], &[T]),
) -> FilterRun {
    let (n_samples, n, m, p) = (y.nrows(), model.n_states(), model.n_inputs(), model.n_outputs());
    let mut x: Vec<T> = model.x0.iter().copied().collect();
    let mut xn = vec![T::zero(); n];
    let mut e = vec![T::zero(); p];
    let (a, b, c, d, kk) = (&model.a, &model.b, &model.c, &model.d, &model.k);
    for k in 0..n_samples {
        for i in 0..p {
            let mut v = y[(k, i)];
            for j in 0..n {
                v -= c[(i, j)] * x[j];
            }
            for j in 0..m {
                v -= d[(i, j)] * u[(k, j)];
            }
            e[i] = v;
        }
        sink(k, &x, &e);
        for i in 0..n {
            let mut v = T::zero();
            for j in 0..n {
                v += a[(i, j)] * x[j];
            }
            for j in 0..m {
                v += b[(i, j)] * u[(k, j)];
            }
            for j in 0..p {
                v += kk[(i, j)] * e[j];
            }
            xn[i] = v;
        }
        std::mem::swap(&mut x, &mut xn);
        for &v in &x {
            if !v.is_finite_val() {
                return FilterRun::NonFinite(k + 1);
            }
            if v.abs() > limit {
                return FilterRun::Diverged(k + 1);
            }
        }
    }
    sink(n_samples, &x, &[]);
    FilterRun::Done
}

/// `e[k] = y[k] - C xhat[k] - D u[k]`, `xhat[k+1] = A xhat[k] + B u[k] + K e[k]`.
pub fn filter_innovations<T: Real>(model: &InnovationModel<T>, data: &Dataset<T>) -> Result<Innovations<T>> {
    check_data(model, &data.u, Some(&data.y))?;
    let (n_samples, n, p) = (data.len(), model.n_states(), model.n_outputs());
    let mut e = DMatrix::zeros(n_samples, p);
    let mut xhat = DMatrix::zeros(n_samples + 1, n);
    let run = run_filter(model, &data.u, &data.y, T::infinity(), |k, x, ek| {
        for (j, &v) in x.iter().enumerate() {
            xhat[(k, j)] = v;
        }
        for (j, &v) in ek.iter().enumerate() {
            e[(k, j)] = v;
        }
    });
    match run {
        FilterRun::NonFinite(k) | FilterRun::Diverged(k) => Err(Error::NonFinite { k, what: "state estimate".into() }),
        FilterRun::Done => Ok(Innovations { e, xhat }),
    }
}

/// Negative log-likelihood `(N/2) ln det Re + (1/2) sum_k e_k^T Re^{-1} e_k`.
///
/// Returns `+inf` when the state estimates leave `|xhat| <= 1e12` (or become
/// non-finite), so line searches can reject such steps.
pub fn neg_log_likelihood<T: Real>(model: &InnovationModel<T>, data: &Dataset<T>) -> Result<T> {
    check_data(model, &data.u, Some(&data.y))?;
    let l = cholesky(&model.re, "Re")?;
    let p = model.n_outputs();
    let logdet = (0..p).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0);
    let mut quad = T::zero();
    let mut w = vec![T::zero(); p];
    let run = run_filter(model, &data.u, &data.y, T::lit(DIVERGENCE_LIMIT), |_, _, e| {
        if e.is_empty() {
            return;
        }
        // forward solve L w = e
        for i in 0..p {
            let mut v = e[i];
            for j in 0..i {
                v -= l[(i, j)] * w[j];
            }
            w[i] = v / l[(i, i)];
        }
        quad += w.iter().fold(T::zero(), |acc, v| acc + *v * *v);
    });
    match run {
        FilterRun::Done if quad.is_finite_val() => {
            Ok(T::lit(0.5) * T::from_usize(data.len()).unwrap() * logdet + T::lit(0.5) * quad)
        }
        _ => Ok(T::infinity()),
    }
}

/// `(rho/2)|beta - beta_bar|^2 + (rho/2)||L_Sigma - L_Sigma_bar||_F^2`, where
/// both factors include their completed entries. The `L_A` block is not
/// penalized.
pub fn regularizer<T: Real>(phi: &FactorPoint<T>, phi_bar: &FactorPoint<T>, rho: T, spec: &ConstraintSpec<T>) -> Result<T> {
    if rho < T::zero() {
        return Err(Error::InvalidParameter("regularization weight must be nonnegative".into()));
    }
    if phi.beta.len() != phi_bar.beta.len() || phi.l_sigma.shape() != phi_bar.l_sigma.shape() {
        return Err(Error::DimensionMismatch("phi and phi_bar have different layouts".into()));
    }
    if rho == T::zero() {
        return Ok(T::zero());
    }
    let db = (&phi.beta - &phi_bar.beta).norm_squared();
    let dl = (sigma_factor(phi, spec)? - sigma_factor(phi_bar, spec)?).norm_squared();
    Ok(rho * T::lit(0.5) * (db + dl))
}

/// Identification index `q[k] = e[k]^T Re^{-1} e[k]`.
pub fn identification_index<T: Real>(e: &DMatrix<T>, re: &DMatrix<T>) -> Result<DVector<T>> {
    if re.nrows() != e.ncols() {
        return Err(Error::DimensionMismatch("Re does not match the innovation width".into()));
    }
    let l = cholesky(re, "Re")?;
    let p = re.nrows();
    let mut q = DVector::zeros(e.nrows());
    let mut w = vec![T::zero(); p];
    for k in 0..e.nrows() {
        for i in 0..p {
            let mut v = e[(k, i)];
            for j in 0..i {
                v -= l[(i, j)] * w[j];
            }
            w[i] = v / l[(i, i)];
        }
        q[k] = w.iter().fold(T::zero(), |acc, v| acc + *v * *v);
    }
    Ok(q)
}

/// Trailing moving average `<a>_T[k] = (1/T) sum_{j<T} a[k-j]`; `None` for
/// `k < T - 1`.
pub fn moving_average<T: Real>(a: &DVector<T>, window: usize) -> Result<Vec<Option<T>>> {
    if window == 0 || window > a.len() {
        return Err(Error::InvalidParameter(format!(
            "moving-average window {window} must lie in 1..={}",
            a.len()
        )));
    }
    let tw = T::from_usize(window).unwrap();
    let mut out = Vec::with_capacity(a.len());
    let mut acc = T::zero();
    for k in 0..a.len() {
        acc += a[k];
        if k >= window {
            acc -= a[k - window];
        }
        out.push(if k + 1 >= window { Some(acc / tw) } else { None });
    }
    Ok(out)
}

/// Spectrum summary for one matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T: Real> {
    /// Sorted by modulus, largest first.
    pub eigenvalues: Vec<Complex<T>>,
    pub spectral_radius: T,
    pub spectral_abscissa: T,
}

impl<T: Real> Spectrum<T> {
    pub fn of(a: &DMatrix<T>) -> Result<Self> {
        let mut ev = eigenvalues(a)?;
        sort_by_modulus_desc(&mut ev);
        let spectral_radius = ev.iter().map(|z| z.re.hypot(z.im)).fold(T::zero(), |a, b| a.max(b));
        let spectral_abscissa = ev.iter().map(|z| z.re).fold(-T::infinity(), |a, b| a.max(b));
        Ok(Self { eigenvalues: ev, spectral_radius, spectral_abscissa })
    }
}

/// Open-loop `lambda(A)` and filter `lambda(A - K C)` spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenReport<T: Real> {
    pub open_loop: Spectrum<T>,
    pub filter: Spectrum<T>,
}

pub fn eigen_report<T: Real>(model: &InnovationModel<T>) -> Result<EigenReport<T>> {
    Ok(EigenReport { open_loop: Spectrum::of(&model.a)?, filter: Spectrum::of(&model.filter_matrix())? })
}

/// Parameterization of the plant block `(A_s, C_s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlantForm {
    /// Every entry of `A_s` free; `C_s` free unless fixed.
    Full,
    /// Single-output observability canonical form: `A_s` is a shift matrix
    /// whose last row is free, `C_s = [1, 0, ..., 0]`.
    ObservabilityCanonical,
}

/// Linear augmented disturbance model structure:
///
/// ```text
/// A = [[A_s, B_d], [0, I]],  B = [B_s; 0],  C = [C_s, C_d],  K = [K_s; K_d]
/// ```
///
/// with `(B_d, C_d)` fixed, `D = 0` and `xhat0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LadmSpec<T: Real> {
    pub n_s: usize,
    pub n_inputs: usize,
    pub bd: DMatrix<T>,
    pub cd: DMatrix<T>,
    pub plant_form: PlantForm,
    pub c_fixed: Option<DMatrix<T>>,
}

impl<T: Real> LadmSpec<T> {
    /// Output-disturbance default: `n_d = p`, `B_d = 0`, `C_d = I`.
    pub fn output_disturbance(n_s: usize, n_inputs: usize, n_outputs: usize, plant_form: PlantForm) -> Result<Self> {
        Self::new(
            n_s,
            n_inputs,
            DMatrix::zeros(n_s, n_outputs),
            DMatrix::identity(n_outputs, n_outputs),
            plant_form,
            None,
        )
    }

    pub fn new(
        n_s: usize,
        n_inputs: usize,
        bd: DMatrix<T>,
        cd: DMatrix<T>,
        plant_form: PlantForm,
        c_fixed: Option<DMatrix<T>>,
    ) -> Result<Self> {
        if n_s == 0 {
            return Err(Error::InvalidDimension("plant order must be at least 1".into()));
        }
        let (p, n_d) = cd.shape();
        if p == 0 {
            return Err(Error::InvalidDimension("model must have at least one output".into()));
        }
        if bd.nrows() != n_s || bd.ncols() != n_d {
            return Err(Error::DimensionMismatch(format!("B_d must be {n_s}x{n_d}")));
        }
        if let Some(c) = &c_fixed {
            if c.nrows() != p || c.ncols() != n_s {
                return Err(Error::DimensionMismatch(format!("fixed C_s must be {p}x{n_s}")));
            }
        }
        if plant_form == PlantForm::ObservabilityCanonical && p != 1 {
            return Err(Error::InvalidParameter("observability canonical form requires a single output".into()));
        }
        if plant_form == PlantForm::ObservabilityCanonical && c_fixed.is_some() {
            return Err(Error::InvalidParameter("canonical form fixes C_s itself".into()));
        }
        Ok(Self { n_s, n_inputs, bd, cd, plant_form, c_fixed })
    }

    pub fn n_d(&self) -> usize {
        self.cd.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.cd.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.n_s + self.n_d()
    }

    fn c_is_free(&self) -> bool {
        self.plant_form == PlantForm::Full && self.c_fixed.is_none()
    }

    fn n_a_free(&self) -> usize {
        match self.plant_form {
            PlantForm::Full => self.n_s * self.n_s,
            PlantForm::ObservabilityCanonical => self.n_s,
        }
    }

    /// Number of free model coefficients: `A_s` (row-major, or the last row in
    /// canonical form), `B_s`, free `C_s`, `K_s`, `K_d`, in that order.
    pub fn n_beta(&self) -> usize {
        let (ns, m, p, nd) = (self.n_s, self.n_inputs, self.n_outputs(), self.n_d());
        self.n_a_free() + ns * m + if self.c_is_free() { p * ns } else { 0 } + ns * p + nd * p
    }

    /// Names of the `beta` coordinates, e.g. `A_s[2,1]` (1-based).
    pub fn beta_names(&self) -> Vec<String> {
        let (ns, m, p, nd) = (self.n_s, self.n_inputs, self.n_outputs(), self.n_d());
        let mut names = Vec::with_capacity(self.n_beta());
        let mut push = |name: &str, rows: std::ops::Range<usize>, cols: usize| {
            for i in rows {
                for j in 0..cols {
                    names.push(format!("{name}[{},{}]", i + 1, j + 1));
                }
            }
        };
        match self.plant_form {
            PlantForm::Full => push("A_s", 0..ns, ns),
            PlantForm::ObservabilityCanonical => push("A_s", ns - 1..ns, ns),
        }
        push("B_s", 0..ns, m);
        if self.c_is_free() {
            push("C_s", 0..p, ns);
        }
        push("K_s", 0..ns, p);
        push("K_d", 0..nd, p);
        names
    }

    /// Assembles the structured model from `beta` and the innovation covariance.
    pub fn assemble(&self, beta: &DVector<T>, re: &DMatrix<T>) -> Result<InnovationModel<T>> {
        if beta.len() != self.n_beta() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, layout needs {}",
                beta.len(),
                self.n_beta()
            )));
        }
        let (ns, m, p, nd) = (self.n_s, self.n_inputs, self.n_outputs(), self.n_d());
        if re.nrows() != p || re.ncols() != p {
            return Err(Error::DimensionMismatch(format!("Re must be {p}x{p}")));
        }
        let n = ns + nd;
        let mut it = beta.iter().copied();
        let mut take = |rows: usize, cols: usize| {
            let mut mat = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    mat[(i, j)] = it.next().expect("beta length checked");
                }
            }
            mat
        };
        let a_s = match self.plant_form {
            PlantForm::Full => take(ns, ns),
            PlantForm::ObservabilityCanonical => {
                let last = take(1, ns);
                let mut a = DMatrix::zeros(ns, ns);
                for i in 0..ns - 1 {
                    a[(i, i + 1)] = T::one();
                }
                a.row_mut(ns - 1).copy_from(&last.row(0));
                a
            }
        };
        let b_s = take(ns, m);
        let c_s = if self.c_is_free() {
            take(p, ns)
        } else if let Some(c) = &self.c_fixed {
            c.clone()
        } else {
            let mut c = DMatrix::zeros(1, ns);
            c[(0, 0)] = T::one();
            c
        };
        let k_s = take(ns, p);
        let k_d = take(nd, p);

        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (ns, ns)).copy_from(&a_s);
        a.view_mut((0, ns), (ns, nd)).copy_from(&self.bd);
        for i in 0..nd {
            a[(ns + i, ns + i)] = T::one();
        }
        let mut b = DMatrix::zeros(n, m);
        b.view_mut((0, 0), (ns, m)).copy_from(&b_s);
        let mut c = DMatrix::zeros(p, n);
        c.view_mut((0, 0), (p, ns)).copy_from(&c_s);
        c.view_mut((0, ns), (p, nd)).copy_from(&self.cd);
        let mut k = DMatrix::zeros(n, p);
        k.view_mut((0, 0), (ns, p)).copy_from(&k_s);
        k.view_mut((ns, 0), (nd, p)).copy_from(&k_d);
        InnovationModel::new(a, b, c, DMatrix::zeros(p, m), DVector::zeros(n), k, re.clone())
    }

    /// Reads `beta` back out of a model with this structure. Fixed blocks must
    /// match exactly.
    pub fn pack(&self, model: &InnovationModel<T>) -> Result<DVector<T>> {
        let (ns, m, p, nd) = (self.n_s, self.n_inputs, self.n_outputs(), self.n_d());
        if model.n_states() != ns + nd || model.n_inputs() != m || model.n_outputs() != p {
            return Err(Error::DimensionMismatch("model dimensions do not match the LADM structure".into()));
        }
        let probe = self.assemble(&DVector::zeros(self.n_beta()), &model.re)?;
        let mismatch = |what: &str| Error::InvalidParameter(format!("model violates the fixed LADM structure in {what}"));
        for i in 0..(ns + nd) {
            for j in 0..(ns + nd) {
                let free = i < ns && j < ns && (self.plant_form == PlantForm::Full || i == ns - 1);
                if !free && model.a[(i, j)] != probe.a[(i, j)] {
                    return Err(mismatch("A"));
                }
            }
            for j in 0..m {
                if i >= ns && model.b[(i, j)] != T::zero() {
                    return Err(mismatch("B"));
                }
            }
        }
        for i in 0..p {
            for j in 0..(ns + nd) {
                let free = j < ns && self.c_is_free();
                if !free && model.c[(i, j)] != probe.c[(i, j)] {
                    return Err(mismatch("C"));
                }
            }
        }
        if model.d.iter().any(|v| *v != T::zero()) {
            return Err(mismatch("D"));
        }
        if model.x0.iter().any(|v| *v != T::zero()) {
            return Err(mismatch("xhat0"));
        }
        let mut beta = Vec::with_capacity(self.n_beta());
        let push_block = |beta: &mut Vec<T>, mat: &DMatrix<T>, r0: usize, rows: usize, c0: usize, cols: usize| {
            for i in r0..r0 + rows {
                for j in c0..c0 + cols {
                    beta.push(mat[(i, j)]);
                }
            }
        };
        match self.plant_form {
            PlantForm::Full => push_block(&mut beta, &model.a, 0, ns, 0, ns),
            PlantForm::ObservabilityCanonical => push_block(&mut beta, &model.a, ns - 1, 1, 0, ns),
        }
        push_block(&mut beta, &model.b, 0, ns, 0, m);
        if self.c_is_free() {
            push_block(&mut beta, &model.c, 0, p, 0, ns);
        }
        push_block(&mut beta, &model.k, 0, ns, 0, p);
        push_block(&mut beta, &model.k, ns, nd, 0, p);
        Ok(DVector::from_vec(beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};

    fn scalar_model(a: f64, b: f64, c: f64, k: f64, re: f64) -> InnovationModel<f64> {
        InnovationModel::new(dmatrix![a], dmatrix![b], dmatrix![c], dmatrix![0.0], DVector::zeros(1), dmatrix![k], dmatrix![re])
            .unwrap()
    }

    fn data(u: DMatrix<f64>, y: DMatrix<f64>) -> Dataset<f64> {
        Dataset::new(u, y, 1.0).unwrap()
    }

    #[test]
    fn model_validation() {
        let bad = InnovationModel::new(
            dmatrix![0.5],
            dmatrix![1.0, 2.0],
            dmatrix![1.0],
            dmatrix![0.0],
            DVector::zeros(1),
            dmatrix![0.1],
            dmatrix![1.0],
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn ladm_scalar_assembly() {
        let spec = LadmSpec::new(1, 1, dmatrix![0.0], dmatrix![1.0], PlantForm::Full, Some(dmatrix![1.0])).unwrap();
        // beta = (a, b, k_s, k_d)
        let model = spec.assemble(&DVector::from_vec(vec![0.7, 0.2, 0.3, 0.1]), &dmatrix![1.0]).unwrap();
        assert_eq!(model.a, dmatrix![0.7, 0.0; 0.0, 1.0]);
        assert_eq!(model.c, dmatrix![1.0, 1.0]);
        assert_eq!(model.k, dmatrix![0.3; 0.1]);
        assert_eq!(spec.pack(&model).unwrap().as_slice(), &[0.7, 0.2, 0.3, 0.1]);
    }

    #[test]
    fn ladm_canonical_assembly() {
        let spec = LadmSpec::output_disturbance(2, 1, 1, PlantForm::ObservabilityCanonical).unwrap();
        assert_eq!(spec.n_beta(), 2 + 2 + 2 + 1);
        let beta = DVector::from_vec(vec![-0.4, 1.3, 1.0, 0.5, 0.2, 0.1, 0.3]);
        let model = spec.assemble(&beta, &dmatrix![0.5]).unwrap();
        assert_eq!(model.a.view((0, 0), (2, 2)), dmatrix![0.0, 1.0; -0.4, 1.3]);
        assert_eq!(model.c, dmatrix![1.0, 0.0, 1.0]);
        assert_eq!(spec.pack(&model).unwrap(), beta);
        assert_eq!(spec.beta_names()[0], "A_s[2,1]");
        // integrator eigenvalue 1 with the plant roots 0.8 and 0.5
        let mut ev: Vec<f64> = Spectrum::of(&model.a).unwrap().eigenvalues.iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ev[0] - 0.5).abs() < 1e-12 && (ev[1] - 0.8).abs() < 1e-12 && (ev[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ladm_pack_rejects_structure_violations() {
        let spec = LadmSpec::output_disturbance(2, 1, 1, PlantForm::ObservabilityCanonical).unwrap();
        let mut model = spec.assemble(&DVector::from_element(7, 0.1), &dmatrix![1.0]).unwrap();
        model.a[(2, 2)] = 0.99;
        assert!(spec.pack(&model).is_err());
    }

    #[test]
    fn ladm_characteristic_polynomial_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = LadmSpec::new(3, 2, DMatrix::from_fn(3, 2, |i, j| (i + j) as f64 * 0.1), DMatrix::identity(2, 2), PlantForm::Full, None).unwrap();
        for _ in 0..10 {
            let beta = DVector::from_fn(spec.n_beta(), |_, _| rng.random_range(-0.5..0.5));
            let model = spec.assemble(&beta, &DMatrix::identity(2, 2)).unwrap();
            let a_s = model.a.view((0, 0), (3, 3)).into_owned();
            let mut expected: Vec<Complex<f64>> = eigenvalues(&a_s).unwrap();
            expected.extend([Complex::new(1.0, 0.0); 2]);
            let got = eigenvalues(&model.a).unwrap();
            for z in &expected {
                assert!(got.iter().any(|w| (w - z).norm() < 1e-6), "missing eigenvalue {z}");
            }
            assert_eq!(spec.pack(&model).unwrap(), beta);
        }
    }

    #[test]
    fn simulate_noise_off_zero_input() {
        let m = scalar_model(0.9, 1.0, 1.0, 0.5, 1.0);
        let sim = simulate(&m, &DMatrix::zeros(20, 1), 1, false).unwrap();
        assert!(sim.y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn simulate_matches_convolution() {
        let a = dmatrix![0.5, 0.2; -0.1, 0.7];
        let b = dmatrix![1.0; 0.5];
        let c = dmatrix![1.0, -1.0];
        let m = InnovationModel::new(a.clone(), b.clone(), c.clone(), dmatrix![0.0], DVector::zeros(2), dmatrix![0.3; 0.1], dmatrix![1.0]).unwrap();
        let u = DMatrix::from_fn(15, 1, |k, _| ((k * 7) % 5) as f64 - 2.0);
        let y = simulate(&m, &u, 0, false).unwrap().y;
        for k in 0..15 {
            let mut expect = 0.0;
            let mut apow = DMatrix::<f64>::identity(2, 2);
            for j in 1..=k {
                expect += (&c * &apow * &b)[(0, 0)] * u[(k - j, 0)];
                apow = &a * apow;
            }
            assert!((y[(k, 0)] - expect).abs() < 1e-12);
        }
        let yhat = noise_free_response(&m, &u).unwrap();
        assert!((yhat - y).amax() < 1e-12);
    }

    #[test]
    fn simulate_is_deterministic() {
        let m = scalar_model(0.9, 1.0, 1.0, 0.5, 2.0);
        let u = DMatrix::from_element(50, 1, 1.0);
        let a = simulate(&m, &u, 42, true).unwrap();
        let b = simulate(&m, &u, 42, true).unwrap();
        assert_eq!(a.y, b.y);
        assert_ne!(a.y, simulate(&m, &u, 43, true).unwrap().y);
        let bad = scalar_model(0.9, 1.0, 1.0, 0.5, -1.0);
        assert!(simulate(&bad, &u, 1, true).is_err());
    }

    #[test]
    fn filter_recovers_injected_noise() {
        let m = scalar_model(0.9, 1.0, 1.0, 0.5, 0.3);
        let u = DMatrix::from_fn(200, 1, |k, _| (k as f64 * 0.1).sin());
        let sim = simulate(&m, &u, 9, true).unwrap();
        let inn = filter_innovations(&m, &data(u.clone(), sim.y.clone())).unwrap();
        assert!((&inn.e - &sim.e).amax() <= 1e-10 * sim.e.amax());
        assert_eq!(inn.xhat.nrows(), 201);

        let quiet = simulate(&m, &u, 9, false).unwrap();
        let inn = filter_innovations(&m, &data(u, quiet.y)).unwrap();
        assert!(inn.e.amax() < 1e-12);
    }

    #[test]
    fn zero_gain_is_open_loop_prediction() {
        let m = scalar_model(0.8, 1.0, 2.0, 0.0, 1.0);
        let u = DMatrix::from_fn(30, 1, |k, _| if k % 4 < 2 { 1.0 } else { -1.0 });
        let y = DMatrix::from_fn(30, 1, |k, _| (k as f64).cos());
        let inn = filter_innovations(&m, &data(u.clone(), y.clone())).unwrap();
        let yhat = noise_free_response(&m, &u).unwrap();
        assert!((inn.e - (y - yhat)).amax() < 1e-12);
    }

    #[test]
    fn likelihood_examples() {
        let m = scalar_model(0.0, 0.0, 1.0, 0.0, 1.0);
        let u = DMatrix::zeros(1, 1);
        assert_eq!(neg_log_likelihood(&m, &data(u.clone(), dmatrix![0.0])).unwrap(), 0.0);
        assert!((neg_log_likelihood(&m, &data(u, dmatrix![1.0])).unwrap() - 0.5).abs() < 1e-15);
        let m = scalar_model(0.0, 0.0, 1.0, 0.0, std::f64::consts::E.powi(2));
        let v = neg_log_likelihood(&m, &data(DMatrix::zeros(2, 1), DMatrix::zeros(2, 1))).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
        let bad = scalar_model(0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(neg_log_likelihood(&bad, &data(DMatrix::zeros(1, 1), dmatrix![0.0])).is_err());
    }

    #[test]
    fn likelihood_translation() {
        // A = 0, C = 1, K = 0 => e_k = y_k
        let m = scalar_model(0.0, 0.0, 1.0, 0.0, 1.0);
        let y = dmatrix![0.3; -1.2; 2.0];
        let cst = 0.7;
        let base = neg_log_likelihood(&m, &data(DMatrix::zeros(3, 1), y.clone())).unwrap();
        let shifted = neg_log_likelihood(&m, &data(DMatrix::zeros(3, 1), y.add_scalar(cst))).unwrap();
        let expect: f64 = y.iter().map(|e| 0.5 * ((e + cst).powi(2) - e * e)).sum();
        assert!((shifted - base - expect).abs() < 1e-14);
    }

    #[test]
    fn divergent_filter_gives_infinite_likelihood() {
        let m = scalar_model(3.0, 0.0, 0.0, 1.0, 1.0);
        let y = DMatrix::from_element(100, 1, 1.0);
        let v = neg_log_likelihood(&m, &data(DMatrix::zeros(100, 1), y.clone())).unwrap();
        assert!(v.is_infinite() && v > 0.0);
        let m = scalar_model(1e300, 0.0, 0.0, 1e300, 1.0);
        assert!(matches!(filter_innovations(&m, &data(DMatrix::zeros(100, 1), y)), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn identification_index_examples() {
        let q = identification_index(&dmatrix![0.0; 2.0], &dmatrix![1.0]).unwrap();
        assert_eq!(q.as_slice(), &[0.0, 4.0]);
        assert!(identification_index(&dmatrix![1.0], &dmatrix![-1.0]).is_err());
        let ma = moving_average(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(ma, vec![None, Some(1.5), Some(2.5), Some(3.5)]);
        assert!(moving_average(&DVector::from_vec(vec![1.0]), 2).is_err());
    }

    #[test]
    fn eigen_report_examples() {
        let m = scalar_model(0.9, 1.0, 1.0, 0.5, 1.0);
        let r = eigen_report(&m).unwrap();
        assert!((r.filter.eigenvalues[0].re - 0.4).abs() < 1e-14);
        assert!((r.open_loop.spectral_radius - 0.9).abs() < 1e-14);
        let m0 = scalar_model(0.9, 1.0, 1.0, 0.0, 1.0);
        let r = eigen_report(&m0).unwrap();
        assert_eq!(r.open_loop, r.filter);
        // LADM with K = 0 keeps the integrator in the filter spectrum
        let spec = LadmSpec::output_disturbance(1, 1, 1, PlantForm::Full).unwrap();
        let model = spec.assemble(&DVector::from_vec(vec![0.5, 1.0, 1.0, 0.0, 0.0]), &dmatrix![1.0f64]).unwrap();
        let r = eigen_report(&model).unwrap();
        assert!(r.filter.eigenvalues.iter().any(|z| (z.re - 1.0).abs() < 1e-12));
    }

    #[test]
    fn regularizer_examples() {
        let spec = ConstraintSpec::<f64>::new(1, crate::IndexSet::diagonal(1).unwrap()).unwrap();
        let phi = FactorPoint { beta: DVector::from_vec(vec![2.0]), l_sigma: dmatrix![1.0], l_a: DMatrix::zeros(0, 0) };
        let bar = FactorPoint { beta: DVector::from_vec(vec![1.0]), ..phi.clone() };
        assert_eq!(regularizer(&phi, &bar, 0.0, &spec).unwrap(), 0.0);
        assert_eq!(regularizer(&phi, &phi, 3.0, &spec).unwrap(), 0.0);
        assert!((regularizer(&phi, &bar, 2.0, &spec).unwrap() - 1.0).abs() < 1e-15);
        assert!(regularizer(&phi, &bar, -1.0, &spec).is_err());
    }
}
