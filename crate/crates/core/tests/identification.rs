use lmisysid::ident::{epsilon_continuation, fit, FitOptions, Init, Target};
use lmisysid::model::{neg_log_likelihood, simulate, PlantForm};
use lmisysid::{Dataset, EigConstraintSpec, LadmSpec, LmiRegion, Matrix, ProblemSpec, ThetaPoint, Vector};
use nalgebra::dmatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_ladm() -> LadmSpec {
    LadmSpec::new(1, 1, dmatrix![0.0], dmatrix![1.0], PlantForm::Full, Some(dmatrix![1.0])).unwrap()
}

fn scalar_truth() -> ThetaPoint {
    ThetaPoint { beta: Vector::from_vec(vec![0.7, 0.5, 0.3, 0.2]), sigma: dmatrix![0.1] }
}

fn dataset(ladm: &LadmSpec, truth: &ThetaPoint, n: usize, seed: u64) -> Dataset {
    let model = ladm.assemble(&truth.beta, &truth.sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Matrix::from_fn(n, ladm.n_inputs, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    let y = simulate(&model, &u, seed, true).unwrap().y;
    Dataset::new(u, y, 1.0).unwrap()
}

#[test]
fn two_output_fit_improves_on_truth() {
    let ladm = LadmSpec::output_disturbance(2, 1, 2, PlantForm::Full).unwrap();
    let mut beta = Vector::zeros(ladm.n_beta());
    // A_s, B_s, C_s, K_s, K_d
    beta.rows_mut(0, 4).copy_from_slice(&[0.5, 0.2, -0.1, 0.6]);
    beta.rows_mut(4, 2).copy_from_slice(&[1.0, 0.5]);
    beta.rows_mut(6, 4).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    beta.rows_mut(10, 4).copy_from_slice(&[0.3, 0.0, 0.0, 0.3]);
    beta.rows_mut(14, 4).copy_from_slice(&[0.1, 0.0, 0.0, 0.1]);
    let truth = ThetaPoint { beta, sigma: dmatrix![0.1, 0.02; 0.02, 0.05] };
    let data = dataset(&ladm, &truth, 1500, 21);
    let spec = ProblemSpec::new(ladm.clone()).unwrap();
    let f = fit(&spec, &data, &Init::Theta(truth.clone()), &FitOptions::default()).unwrap();
    let l_true = neg_log_likelihood(&ladm.assemble(&truth.beta, &truth.sigma).unwrap(), &data).unwrap();
    assert!(f.report.converged(), "{:?}", f.report.status);
    assert!(f.report.neg_log_likelihood <= l_true + 1e-8);
    assert!(f.report.min_eig_blocks[0] >= -1e-7);
}

#[test]
fn open_loop_disk_constraint_holds() {
    let ladm = scalar_ladm();
    let data = dataset(&ladm, &scalar_truth(), 400, 22);
    let spec = ProblemSpec::new(ladm)
        .unwrap()
        .with_constraint(EigConstraintSpec::new(LmiRegion::disk(0.999, 0.0).unwrap(), Target::PlantBlock, 0.01).unwrap());
    let f = fit(&spec, &data, &Init::Theta(scalar_truth()), &FitOptions::default()).unwrap();
    assert!(f.report.converged(), "{:?}", f.report.status);
    assert!(f.model.a[(0, 0)].abs() <= 0.999 + 1e-6);
    assert!(f.oracle_check().unwrap().iter().all(|ok| *ok));
}

#[test]
fn continuation_values_do_not_increase() {
    let ladm = scalar_ladm();
    let data = dataset(&ladm, &scalar_truth(), 300, 23);
    let spec = ProblemSpec::new(ladm).unwrap();
    let schedule = [1e-1, 1e-2, 1e-4, 1e-6];
    let c = epsilon_continuation(&spec, &data, &Init::Theta(scalar_truth()), &schedule, &FitOptions::default(), 1e-5)
        .unwrap();
    assert_eq!(c.steps.len(), 4);
    assert!(c.monotone);
    for w in c.steps.windows(2) {
        assert!(w[1].mu <= w[0].mu + 1e-5, "{} then {}", w[0].mu, w[1].mu);
    }
    assert!(c.steps.iter().all(|s| s.fit.report.converged()));
}

#[test]
fn constrained_start_outside_region_is_rejected() {
    let ladm = scalar_ladm();
    let data = dataset(&ladm, &scalar_truth(), 100, 24);
    let spec = ProblemSpec::new(ladm)
        .unwrap()
        .with_constraint(EigConstraintSpec::new(LmiRegion::half_plane(0.3), Target::Filter, 0.03).unwrap());
    let err = fit(&spec, &data, &Init::Theta(scalar_truth()), &FitOptions::default()).unwrap_err();
    assert!(err.to_string().contains("filter"), "{err}");
}

#[test]
fn multistart_is_deterministic_and_no_worse() {
    let ladm = scalar_ladm();
    let data = dataset(&ladm, &scalar_truth(), 300, 25);
    let spec = ProblemSpec::new(ladm).unwrap();
    let init = Init::Theta(scalar_truth());
    let single = fit(&spec, &data, &init, &FitOptions::default()).unwrap();
    let opts = FitOptions { multistart: 3, seed: 9, ..FitOptions::default() };
    let a = fit(&spec, &data, &init, &opts).unwrap();
    let b = fit(&spec, &data, &init, &opts).unwrap();
    assert!(a.report.converged());
    assert_eq!(a.theta_hat, b.theta_hat);
    assert!(a.report.objective <= single.report.objective + 1e-12);
}
