//! LMI regions of the complex plane and their matrix characteristic functions.
//!
//! A region `D = { z : f_D(z) > 0 }` is described by generating matrices
//! `(M0, M1)` with `f_D(z) = M0 + M1 z + M1^T conj(z)`. A real matrix `A` has
//! its spectrum in `D` iff some `P > 0` makes
//! `M_D(A, P) = M0 (x) P + M1 (x) (A P) + M1^T (x) (A P)^T` positive definite.
//!
//! Complex arithmetic stays inside this module; everything handed to the
//! optimizer is real.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::index_set::{check_symmetric, norm_inf};
use crate::linalg::{eigenvalues, min_hermitian_eigenvalue, min_sym_eigenvalue, norm2};
use crate::scalar::Real;

/// Region `{ z : M0 + M1 z + M1^T conj(z) > 0 }`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiRegion<T: Real> {
    m0: DMatrix<T>,
    m1: DMatrix<T>,
    label: String,
}

impl<T: Real> LmiRegion<T> {
    /// Region from raw generating matrices. `m0` must be symmetric (within
    /// round-off); it is stored exactly symmetrized.
    pub fn from_generators(m0: DMatrix<T>, m1: DMatrix<T>, label: impl Into<String>) -> Result<Self> {
        let m = m0.nrows();
        if m == 0 {
            return Err(Error::InvalidDimension("region block dimension must be at least 1".into()));
        }
        if m1.nrows() != m || m1.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "M0 is {m}x{}, M1 is {}x{}",
                m0.ncols(),
                m1.nrows(),
                m1.ncols()
            )));
        }
        check_symmetric(&m0)?;
        let m0 = (&m0 + m0.transpose()) * T::lit(0.5);
        Ok(Self { m0, m1, label: label.into() })
    }

    /// `Re z > x0`.
    pub fn half_plane(x0: T) -> Self {
        Self {
            m0: DMatrix::from_element(1, 1, -(x0 + x0)),
            m1: DMatrix::from_element(1, 1, T::one()),
            label: format!("half_plane({})", x0.as_f64()),
        }
    }

    /// `Re z < x0`, the reflected half-plane (continuous-time stability for `x0 = 0`).
    pub fn left_half_plane(x0: T) -> Self {
        Self {
            m0: DMatrix::from_element(1, 1, x0 + x0),
            m1: DMatrix::from_element(1, 1, -T::one()),
            label: format!("left_half_plane({})", x0.as_f64()),
        }
    }

    /// `|z - x0| < s`.
    pub fn disk(s: T, x0: T) -> Result<Self> {
        positive(s, "disk radius")?;
        let z = T::zero();
        Ok(Self {
            m0: DMatrix::from_row_slice(2, 2, &[s, -x0, -x0, s]),
            m1: DMatrix::from_row_slice(2, 2, &[z, T::one(), z, z]),
            label: format!("disk({}, {})", s.as_f64(), x0.as_f64()),
        })
    }

    /// Discrete-time stability margin: the disk of radius `1 - delta` at the origin.
    pub fn stability_disk(delta: T) -> Result<Self> {
        if !(delta >= T::zero() && delta < T::one()) {
            return Err(Error::InvalidParameter("stability margin must lie in [0, 1)".into()));
        }
        let mut r = Self::disk(T::one() - delta, T::zero())?;
        r.label = format!("stability_disk({})", delta.as_f64());
        Ok(r)
    }

    /// `|Im z| < s (Re z - x0)`.
    pub fn cone(s: T, x0: T) -> Result<Self> {
        positive(s, "cone slope")?;
        let d = -(s + s) * x0;
        Ok(Self {
            m0: DMatrix::from_row_slice(2, 2, &[d, T::zero(), T::zero(), d]),
            m1: DMatrix::from_row_slice(2, 2, &[s, T::one(), -T::one(), s]),
            label: format!("cone({}, {})", s.as_f64(), x0.as_f64()),
        })
    }

    /// `|Im z| < s`.
    pub fn band(s: T) -> Result<Self> {
        positive(s, "band half-width")?;
        let d = s + s;
        Ok(Self {
            m0: DMatrix::from_row_slice(2, 2, &[d, T::zero(), T::zero(), d]),
            m1: DMatrix::from_row_slice(2, 2, &[T::zero(), T::one(), -T::one(), T::zero()]),
            label: format!("band({})", s.as_f64()),
        })
    }

    /// Intersection; the generators are direct sums.
    pub fn intersect(&self, other: &Self) -> Self {
        Self {
            m0: direct_sum(&self.m0, &other.m0),
            m1: direct_sum(&self.m1, &other.m1),
            label: format!("intersect[{}, {}]", self.label, other.label),
        }
    }

    pub fn block_dim(&self) -> usize {
        self.m0.nrows()
    }

    pub fn m0(&self) -> &DMatrix<T> {
        &self.m0
    }

    pub fn m1(&self) -> &DMatrix<T> {
        &self.m1
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Real and imaginary parts of `f_D(z)`.
    fn char_parts(&self, z: Complex<T>) -> (DMatrix<T>, DMatrix<T>) {
        let m1t = self.m1.transpose();
        let re = &self.m0 + (&self.m1 + &m1t) * z.re;
        let im = (&self.m1 - &m1t) * z.im;
        (re, im)
    }

    /// The characteristic function `f_D(z)` (Hermitian `m x m`).
    pub fn char_fn(&self, z: Complex<T>) -> DMatrix<Complex<T>> {
        let (re, im) = self.char_parts(z);
        DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| Complex::new(re[(i, j)], im[(i, j)]))
    }

    /// Smallest eigenvalue of `f_D(z)`.
    pub fn char_min_eigenvalue(&self, z: Complex<T>) -> T {
        let (re, im) = self.char_parts(z);
        min_hermitian_eigenvalue(&re, &im)
    }

    /// `z` is in the region when the smallest eigenvalue of `f_D(z)` exceeds `tol`.
    pub fn contains(&self, z: Complex<T>, tol: T) -> bool {
        self.char_min_eigenvalue(z) > tol
    }

    /// Membership with the default scale-aware tolerance `1e-9 max(1, ||f_D(z)||)`.
    pub fn contains_default(&self, z: Complex<T>) -> bool {
        let (re, im) = self.char_parts(z);
        let scale = norm_inf(&re).max(norm_inf(&im)).max(T::one());
        min_hermitian_eigenvalue(&re, &im) > T::lit(1e-9) * scale
    }

    /// `M_D(A, P) = M0 (x) P + M1 (x) (A P) + M1^T (x) (A P)^T`.
    pub fn matrix_char_fn(&self, a: &DMatrix<T>, p: &DMatrix<T>) -> Result<DMatrix<T>> {
        let n = a.nrows();
        if a.ncols() != n || p.nrows() != n || p.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, P is {}x{}",
                a.nrows(),
                a.ncols(),
                p.nrows(),
                p.ncols()
            )));
        }
        let ap = a * p;
        let m = self.block_dim();
        let mut out = DMatrix::zeros(n * m, n * m);
        for r in 0..m {
            for c in 0..m {
                let (g0, g1, g1t) = (self.m0[(r, c)], self.m1[(r, c)], self.m1[(c, r)]);
                let mut blk = out.view_mut((r * n, c * n), (n, n));
                for i in 0..n {
                    for j in 0..n {
                        blk[(i, j)] = g0 * p[(i, j)] + g1 * ap[(i, j)] + g1t * ap[(j, i)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Direct eigenvalue test `lambda(A) subset D` with tolerance `tol` on `f_D`.
    pub fn eig_membership(&self, a: &DMatrix<T>, tol: T) -> Result<bool> {
        Ok(eigenvalues(a)?.into_iter().all(|z| self.contains(z, tol)))
    }

    /// Signed distance-like margin: the smallest `min eig f_D(lambda)` over the spectrum.
    pub fn spectrum_margin(&self, a: &DMatrix<T>) -> Result<T> {
        Ok(eigenvalues(a)?
            .into_iter()
            .map(|z| self.char_min_eigenvalue(z))
            .fold(T::infinity(), |acc, v| acc.min(v)))
    }

    /// Recognizes a single disk region (generators in the canonical disk form).
    fn is_disk(&self) -> bool {
        self.block_dim() == 2
            && self.m1[(0, 0)] == T::zero()
            && self.m1[(0, 1)] == T::one()
            && self.m1[(1, 0)] == T::zero()
            && self.m1[(1, 1)] == T::zero()
            && self.m0[(0, 0)] == self.m0[(1, 1)]
            && self.m0[(0, 0)] > T::zero()
    }
}

fn positive<T: Real>(v: T, what: &str) -> Result<()> {
    if !(v > T::zero()) {
        return Err(Error::InvalidParameter(format!("{what} must be positive, got {}", v.as_f64())));
    }
    Ok(())
}

fn direct_sum<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    crate::linalg::block_diag(&[a.clone(), b.clone()])
}

/// Closed, tightened D-stability system
/// `M_D(A,P) >= M`, `P >= 0`, `tr(V P) <= 1/epsilon`.
#[derive(Clone, Debug, PartialEq)]
pub struct TightenedRegionConstraint<T: Real> {
    region: LmiRegion<T>,
    shift: DMatrix<T>,
    weight: DMatrix<T>,
    epsilon: T,
}

/// Residuals of the tightened system; feasible when the first two are
/// positive semidefinite and the scalar is nonnegative.
#[derive(Clone, Debug)]
pub struct TightenedResiduals<T: Real> {
    pub lmi: DMatrix<T>,
    pub p: DMatrix<T>,
    pub trace_slack: T,
}

impl<T: Real> TightenedResiduals<T> {
    pub fn feasible(&self, tol: T) -> bool {
        min_sym_eigenvalue(&self.lmi) >= -tol
            && min_sym_eigenvalue(&self.p) >= -tol
            && self.trace_slack >= -tol
    }
}

impl<T: Real> TightenedRegionConstraint<T> {
    /// Validates `V > 0`, `M >= 0`, and that `M` certifies strict feasibility:
    /// either `M > 0`, or `region` is a disk and `M = [[1,0],[0,0]] (x) Q` with `Q > 0`.
    pub fn new(region: LmiRegion<T>, shift: DMatrix<T>, weight: DMatrix<T>, epsilon: T) -> Result<Self> {
        positive(epsilon, "trace bound parameter epsilon")?;
        let n = weight.nrows();
        let nm = n * region.block_dim();
        if weight.ncols() != n || shift.nrows() != nm || shift.ncols() != nm {
            return Err(Error::DimensionMismatch(format!(
                "V is {}x{}, M is {}x{}, expected V n x n and M {nm}x{nm}",
                weight.nrows(),
                weight.ncols(),
                shift.nrows(),
                shift.ncols()
            )));
        }
        check_symmetric(&weight)?;
        check_symmetric(&shift)?;
        let scale = |m: &DMatrix<T>| T::lit(1e-9) * norm2(m).max(T::one());
        if min_sym_eigenvalue(&weight) <= scale(&weight) {
            return Err(Error::NotPositiveDefinite { block: "trace weight V".into() });
        }
        let m_min = min_sym_eigenvalue(&shift);
        if m_min < -scale(&shift) {
            return Err(Error::InvalidParameter("shift M must be positive semidefinite".into()));
        }
        if m_min <= scale(&shift) && !disk_certified(&region, &shift, n) {
            return Err(Error::InvalidParameter(
                "semidefinite shift M is only accepted as [[1,0],[0,0]] (x) Q, Q > 0, on a disk region".into(),
            ));
        }
        Ok(Self { region, shift, weight, epsilon })
    }

    /// `V = I`, `M = epsilon_i I`, trace bound `1/epsilon_i`.
    pub fn with_defaults(region: LmiRegion<T>, n: usize, epsilon: T) -> Result<Self> {
        let nm = n * region.block_dim();
        Self::new(region, DMatrix::identity(nm, nm) * epsilon, DMatrix::identity(n, n), epsilon)
    }

    pub fn region(&self) -> &LmiRegion<T> {
        &self.region
    }

    pub fn shift(&self) -> &DMatrix<T> {
        &self.shift
    }

    pub fn weight(&self) -> &DMatrix<T> {
        &self.weight
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn residuals(&self, a: &DMatrix<T>, p: &DMatrix<T>) -> Result<TightenedResiduals<T>> {
        if a.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "constraint is for {n}x{n} matrices, A is {}x{}",
                a.nrows(),
                a.ncols(),
                n = self.dim()
            )));
        }
        let lmi = self.region.matrix_char_fn(a, p)? - &self.shift;
        let trace_slack = T::one() / self.epsilon - (&self.weight * p).trace();
        Ok(TightenedResiduals { lmi, p: p.clone(), trace_slack })
    }
}

fn disk_certified<T: Real>(region: &LmiRegion<T>, shift: &DMatrix<T>, n: usize) -> bool {
    if !region.is_disk() {
        return false;
    }
    let q = shift.view((0, 0), (n, n)).into_owned();
    let rest_zero = shift
        .iter()
        .enumerate()
        .all(|(k, v)| {
            let (i, j) = (k % (2 * n), k / (2 * n));
            (i < n && j < n) || *v == T::zero()
        });
    rest_zero && min_sym_eigenvalue(&q) > T::lit(1e-9) * norm2(&q).max(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn char_fn_examples() {
        let f = LmiRegion::half_plane(0.0).char_fn(c(1.0, 0.0));
        assert_eq!(f[(0, 0)], c(2.0, 0.0));
        let f = LmiRegion::disk(1.0, 0.0).unwrap().char_fn(c(0.0, 0.0));
        assert_eq!(f, DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]));
        let f = LmiRegion::cone(1.0, 0.0).unwrap().char_fn(c(0.0, 1.0));
        assert_eq!(f, DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 2.0), c(0.0, -2.0), c(0.0, 0.0)]));
    }

    #[test]
    fn char_fn_is_hermitian() {
        let r = LmiRegion::cone(0.7, -0.2).unwrap().intersect(&LmiRegion::band(1.5).unwrap());
        let f = r.char_fn(c(0.3, -1.1));
        assert_eq!(f, f.adjoint());
    }

    #[test]
    fn contains_examples() {
        let h = LmiRegion::half_plane(0.0);
        assert!(h.contains(c(1.0, 0.0), 0.0));
        assert!(!h.contains(c(0.0, 0.0), 0.0));
        assert!(!LmiRegion::disk(0.998, 0.0).unwrap().contains(c(1.0, 0.0), 0.0));
    }

    #[test]
    fn generator_values() {
        let h = LmiRegion::half_plane(0.3);
        assert!((h.m0()[(0, 0)] + 0.6_f64).abs() < 1e-15);
        assert_eq!(h.m1()[(0, 0)], 1.0);
        assert_eq!(LmiRegion::disk(0.998, 0.0).unwrap().m0(), &dmatrix![0.998, 0.0; 0.0, 0.998]);
        assert_eq!(LmiRegion::band(2.0).unwrap().m0(), &(DMatrix::identity(2, 2) * 4.0));
        assert!(LmiRegion::disk(0.0, 0.0).is_err());
        assert!(LmiRegion::cone(-1.0, 0.0).is_err());
        assert!(LmiRegion::band(0.0).is_err());
    }

    #[test]
    fn intersect_examples() {
        let r = LmiRegion::half_plane(0.3).intersect(&LmiRegion::disk(0.998, 0.0).unwrap());
        assert_eq!(r.block_dim(), 3);
        assert!(r.contains(c(0.5, 0.0), 0.0));
        assert!(!r.contains(c(0.2, 0.0), 0.0));
        assert!(!r.contains(c(0.5, 0.9), 0.0));
    }

    #[test]
    fn random_membership_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let regions = [
            LmiRegion::half_plane(0.3),
            LmiRegion::disk(0.998, 0.0).unwrap(),
            LmiRegion::cone(1.5, -0.5).unwrap(),
            LmiRegion::band(0.8).unwrap(),
            LmiRegion::left_half_plane(0.1),
        ];
        for _ in 0..1000 {
            let z = c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            for r1 in &regions {
                assert_eq!(r1.contains(z, 0.0), r1.contains(z.conj(), 0.0));
                for r2 in &regions {
                    let both = r1.intersect(r2);
                    assert_eq!(both.contains(z, 0.0), r1.contains(z, 0.0) && r2.contains(z, 0.0));
                }
            }
            let r = &regions[1];
            assert_eq!(r.intersect(r).contains(z, 0.0), r.contains(z, 0.0));
        }
    }

    #[test]
    fn region_shapes_match_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let z = c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            assert_eq!(LmiRegion::disk(0.9, 0.2).unwrap().contains(z, 0.0), (z - c(0.2, 0.0)).norm() < 0.9);
            assert_eq!(LmiRegion::cone(2.0, 0.1).unwrap().contains(z, 0.0), z.im.abs() < 2.0 * (z.re - 0.1));
            assert_eq!(LmiRegion::band(0.5).unwrap().contains(z, 0.0), z.im.abs() < 0.5);
            assert_eq!(LmiRegion::left_half_plane(0.0).contains(z, 0.0), z.re < 0.0);
        }
    }

    #[test]
    fn matrix_char_fn_examples() {
        let d = LmiRegion::disk(1.0, 0.0).unwrap();
        let m = d.matrix_char_fn(&dmatrix![0.0], &dmatrix![1.0]).unwrap();
        assert_eq!(m, DMatrix::<f64>::identity(2, 2));
        let h = LmiRegion::half_plane(0.0);
        assert_eq!(h.matrix_char_fn(&dmatrix![1.0], &dmatrix![2.0]).unwrap(), dmatrix![4.0]);
        // disk(1,0): [[P, AP], [P A^T, P]]
        let a = dmatrix![0.2, 0.5; -0.3, 0.1];
        let p = dmatrix![2.0, 0.3; 0.3, 1.0];
        let md = d.matrix_char_fn(&a, &p).unwrap();
        let ap = &a * &p;
        assert_eq!(md.view((0, 0), (2, 2)), p);
        assert_eq!(md.view((0, 2), (2, 2)), ap);
        assert_eq!(md.view((2, 0), (2, 2)), ap.transpose());
        assert_eq!(md.view((2, 2), (2, 2)), p);
        assert!(d.matrix_char_fn(&a, &dmatrix![1.0]).is_err());
    }

    #[test]
    fn scalar_consistency() {
        let regions = [LmiRegion::half_plane(0.3), LmiRegion::disk(0.7, 0.1).unwrap(), LmiRegion::cone(1.2, -0.4).unwrap()];
        for r in &regions {
            for &(a, p) in &[(0.5, 2.0), (-1.3, 0.4), (0.0, 1.0)] {
                let m = r.matrix_char_fn(&dmatrix![a], &dmatrix![p]).unwrap();
                let f = r.char_fn(c(a, 0.0)).map(|z| z.re * p);
                assert!((m - f).abs().max() < 1e-14);
            }
        }
    }

    #[test]
    fn eig_membership_examples() {
        let d = LmiRegion::disk(1.0, 0.0).unwrap();
        assert!(d.eig_membership(&dmatrix![0.5, 0.0; 0.0, -0.2], 0.0).unwrap());
        let lhp = LmiRegion::left_half_plane(0.0);
        assert!(!lhp.eig_membership(&dmatrix![0.0, 1.0; 0.0, 0.0], 0.0).unwrap());
        assert!(!LmiRegion::half_plane(0.3).eig_membership(&dmatrix![0.3], 0.0).unwrap());
    }

    #[test]
    fn tightened_residual_examples() {
        let c1 = TightenedRegionConstraint::<f64>::new(LmiRegion::half_plane(0.0), dmatrix![0.1], dmatrix![1.0], 0.5).unwrap();
        let r = c1.residuals(&dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((r.lmi[(0, 0)] - 1.9).abs() < 1e-15);
        assert_eq!(r.p, dmatrix![1.0]);
        assert!((r.trace_slack - 1.0).abs() < 1e-15);
        assert!(r.feasible(0.0));
        let r0 = c1.residuals(&dmatrix![1.0], &dmatrix![0.0]).unwrap();
        assert_eq!(r0.lmi, dmatrix![-0.1]);
        assert!(!r0.feasible(0.0));
    }

    #[test]
    fn shift_certification() {
        let d = LmiRegion::disk(1.0, 0.0).unwrap();
        let n = 2;
        let q = dmatrix![1.0, 0.2; 0.2, 0.5];
        let mut m = DMatrix::zeros(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(&q);
        assert!(TightenedRegionConstraint::new(d.clone(), m.clone(), DMatrix::identity(n, n), 0.1).is_ok());
        // same semidefinite pattern on a half-plane is rejected
        let h = LmiRegion::half_plane(0.0);
        let semi = dmatrix![1.0, 0.0; 0.0, 0.0];
        assert!(TightenedRegionConstraint::new(h, semi, DMatrix::identity(2, 2), 0.1).is_err());
        // zero shift on a disk is rejected
        assert!(TightenedRegionConstraint::new(d.clone(), DMatrix::zeros(4, 4), DMatrix::identity(2, 2), 0.1).is_err());
        // V must be definite, epsilon positive
        assert!(TightenedRegionConstraint::with_defaults(d.clone(), 2, 0.0).is_err());
        assert!(TightenedRegionConstraint::new(d, DMatrix::identity(4, 4), DMatrix::zeros(2, 2), 0.1).is_err());
    }

    #[test]
    fn definiteness_propagation_on_random_feasible_points() {
        // Whenever the tightened residuals are feasible with M > 0, both P and
        // M_D(A, P) are positive definite.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = LmiRegion::disk(1.0, 0.0).unwrap().intersect(&LmiRegion::half_plane(-0.5));
        let mut hits = 0;
        for _ in 0..2000 {
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.8..0.8));
            let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.5..1.5));
            let p = &b * b.transpose();
            let con = TightenedRegionConstraint::with_defaults(d.clone(), 2, 0.05).unwrap();
            let res = con.residuals(&a, &p).unwrap();
            if res.feasible(0.0) {
                hits += 1;
                assert!(min_sym_eigenvalue(&p) > 0.0);
                assert!(min_sym_eigenvalue(&d.matrix_char_fn(&a, &p).unwrap()) > 0.0);
                assert!(d.eig_membership(&a, 0.0).unwrap());
            }
        }
        assert!(hits > 20, "too few feasible samples: {hits}");
    }
}
