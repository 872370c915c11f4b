use lmisysid::bmz::{complete_lj, forward_t, inverse_t, reconstruct_q};
use lmisysid::model::{filter_innovations, simulate};
use lmisysid::{Dataset, IndexSet, InnovationModel, LmiRegion, Matrix, Vector};
use nalgebra::{Cholesky, Complex};
use proptest::prelude::*;

fn pattern_from_mask(n: usize, mask: &[bool]) -> IndexSet {
    let mut pairs = Vec::new();
    let mut k = 0;
    for i in 1..=n {
        for j in 1..i {
            if mask[k % mask.len()] {
                pairs.push((i, j));
            }
            k += 1;
        }
        pairs.push((i, i));
    }
    IndexSet::from_pairs(n, &pairs).unwrap()
}

fn factor_on(pattern: &IndexSet, vals: &[f64], pivots: &[f64]) -> Matrix {
    let n = pattern.dim();
    let mut l = Matrix::zeros(n, n);
    for (k, (i, j)) in pattern.entries().into_iter().enumerate() {
        l[(i - 1, j - 1)] = if i == j { pivots[(i - 1) % pivots.len()] } else { vals[k % vals.len()] };
    }
    l
}

fn sym_from(vals: &[f64], n: usize) -> Matrix {
    let m = Matrix::from_fn(n, n, |i, j| vals[(i * n + j) % vals.len()]);
    (&m + m.transpose()) * 0.5
}

prop_compose! {
    fn completion_case()(n in 1usize..=7)(
        n in Just(n),
        mask in prop::collection::vec(any::<bool>(), 1..=21),
        vals in prop::collection::vec(-1.0f64..1.0, 1..=28),
        pivots in prop::collection::vec(0.3f64..2.0, 1..=7),
        hvals in prop::collection::vec(-1.0f64..1.0, 1..=49),
    ) -> (IndexSet, Matrix, Matrix) {
        let pattern = pattern_from_mask(n, &mask);
        let l = factor_on(&pattern, &vals, &pivots);
        (pattern, l, sym_from(&hvals, n))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn completion_zeroes_complement_and_keeps_gap_definite((pattern, l_i, h) in completion_case()) {
        let l_j = complete_lj(&pattern, &l_i, &h).unwrap();
        let q = reconstruct_q(&h, &l_i, &l_j).unwrap();
        let n = pattern.dim();
        let scale = q.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if !pattern.contains(i + 1, j + 1) {
                    prop_assert!(q[(i, j)].abs() <= 1e-10 * scale, "Q[{i},{j}] = {}", q[(i, j)]);
                }
            }
        }
        prop_assert!(Cholesky::new(&q - &h).is_some());
    }

    #[test]
    fn factor_round_trip((pattern, l_i, h) in completion_case(), x in -0.5f64..0.5) {
        let h_of = |z: &Vector| &h * z[0];
        let x = Vector::from_element(1, x);
        let (x1, q) = forward_t(&x, &l_i, h_of, &pattern).unwrap();
        let (x2, l_back) = inverse_t(&x1, &q, h_of, &pattern).unwrap();
        prop_assert_eq!(x2, x);
        prop_assert!((&l_back - &l_i).amax() <= 1e-8 * l_i.amax().max(1.0));
    }

    #[test]
    fn intersection_is_conjunction(re in -2.0f64..2.0, im in -2.0f64..2.0, x0 in -0.5f64..0.5, s in 0.3f64..1.5) {
        let z = Complex::new(re, im);
        let a = LmiRegion::half_plane(x0);
        let b = LmiRegion::disk(s, x0).unwrap();
        let both = a.intersect(&b);
        let margin = (re - x0).abs().min((s - (z - x0).norm()).abs());
        prop_assume!(margin > 1e-6);
        prop_assert_eq!(both.contains_default(z), a.contains_default(z) && b.contains_default(z));
    }

    #[test]
    fn preset_regions_match_geometry(re in -2.0f64..2.0, im in -2.0f64..2.0, x0 in -0.5f64..0.5, s in 0.3f64..1.5) {
        let z = Complex::new(re, im);
        let cases = [
            (LmiRegion::half_plane(x0), re - x0),
            (LmiRegion::disk(s, x0).unwrap(), s - (z - x0).norm()),
            (LmiRegion::cone(s, x0).unwrap(), s * (re - x0) - im.abs()),
        ];
        for (region, signed) in cases {
            prop_assume!(signed.abs() > 1e-6);
            prop_assert_eq!(region.contains_default(z), signed > 0.0, "{} at {}", region.label(), z);
        }
    }

    #[test]
    fn innovations_invert_simulation(
        n in 1usize..=3,
        p in 1usize..=2,
        seed in 0u64..1000,
        vals in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let at = |k: usize| vals[k % vals.len()];
        let a = Matrix::from_fn(n, n, |i, j| 0.3 * at(i * 3 + j));
        let c = Matrix::from_fn(p, n, |i, j| at(9 + i * 3 + j));
        let k = Matrix::from_fn(n, p, |i, j| 0.2 * at(15 + i * 2 + j));
        let b = Matrix::from_fn(n, 1, |i, _| at(21 + i));
        let d = Matrix::zeros(p, 1);
        let re = Matrix::identity(p, p) * 0.2;
        let model = InnovationModel::new(a, b, c, d, Vector::zeros(n), k, re).unwrap();
        prop_assume!(model.filter_matrix().complex_eigenvalues().iter().all(|z| z.norm() < 0.95));
        let u = Matrix::from_fn(200, 1, |t, _| (t as f64 * 0.37).sin());
        let sim = simulate(&model, &u, seed, true).unwrap();
        let data = Dataset::new(u, sim.y.clone(), 1.0).unwrap();
        let e = filter_innovations(&model, &data).unwrap().e;
        prop_assert!((&e - &sim.e).amax() <= 1e-10 * sim.e.amax().max(1.0));
    }
}

#[test]
fn reference_kalman_recursion_matches_filter() {
    let model = InnovationModel::new(
        nalgebra::dmatrix![0.6, 0.1; 0.0, 0.9],
        nalgebra::dmatrix![1.0; 0.5],
        nalgebra::dmatrix![1.0, 0.0; 0.0, 1.0],
        Matrix::zeros(2, 1),
        Vector::from_vec(vec![0.2, -0.1]),
        nalgebra::dmatrix![0.3, 0.0; 0.1, 0.2],
        Matrix::identity(2, 2) * 0.05,
    )
    .unwrap();
    let u = Matrix::from_fn(50, 1, |t, _| if t % 7 < 3 { 1.0 } else { -1.0 });
    let y = Matrix::from_fn(50, 2, |t, j| ((t + 3 * j) as f64 * 0.21).cos());
    let data = Dataset::new(u.clone(), y.clone(), 1.0).unwrap();
    let e = filter_innovations(&model, &data).unwrap().e;
    let mut x = model.x0.clone();
    for t in 0..50 {
        let ut = u.row(t).transpose();
        let et = y.row(t).transpose() - &model.c * &x - &model.d * &ut;
        assert!((et.transpose() - e.row(t)).amax() < 1e-12);
        x = &model.a * &x + &model.b * &ut + &model.k * &et;
    }
}
