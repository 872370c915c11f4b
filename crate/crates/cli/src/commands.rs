//! The `fit`, `simulate`, `eval` and `eig` verbs. Each returns the process
//! exit code on success.

use std::fs;
use std::path::{Path, PathBuf};

use lmisysid::ident::{fit, FitOptions, Init};
use lmisysid::model::{
    eigen_report, filter_innovations, identification_index, moving_average, neg_log_likelihood, noise_free_response,
    simulate, Spectrum,
};
use lmisysid::oracle::barrier_solve;
use lmisysid::{BarrierQuery, Dataset, InnovationModel, Matrix, SolveOptions, ThetaPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{resolve_config_path, InitSource, LoadedConfig};
use crate::data::{read_dataset, read_table, write_rows, write_table, Table};
use crate::error::{CliError, CliResult, EXIT_NUMERICAL};
use crate::modelfile::{read_model, write_model};
use crate::region_syntax::parse_region;

/// Windows of the moving averages written by `eval`.
pub const EVAL_WINDOWS: [usize; 3] = [1, 10, 100];
/// Self-test tolerance on the region margin below which verdicts may differ.
pub const BOUNDARY_TOL: f64 = 1e-6;

/// Flags shared by every verb.
#[derive(Clone, Debug, Default)]
pub struct Global {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub verbose: bool,
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn to_toml<S: Serialize>(v: &S) -> CliResult<String> {
    toml::to_string(v).map_err(|e| CliError::input(e.to_string()))
}

fn complex_pairs(s: &Spectrum<f64>) -> Vec<[f64; 2]> {
    s.eigenvalues.iter().map(|z| [z.re, z.im]).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<[f64; 2]>,
    pub spectral_radius: f64,
    pub spectral_abscissa: f64,
}

impl From<&Spectrum<f64>> for SpectrumReport {
    fn from(s: &Spectrum<f64>) -> Self {
        Self { eigenvalues: complex_pairs(s), spectral_radius: s.spectral_radius, spectral_abscissa: s.spectral_abscissa }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstraintReport {
    pub label: String,
    pub epsilon: f64,
    pub region_margin: f64,
    pub oracle_feasible: bool,
}

/// Contents of `report.toml` written by `fit`.
#[derive(Clone, Debug, Serialize)]
pub struct FitReportFile {
    pub format: String,
    pub version: u32,
    pub status: String,
    pub converged: bool,
    pub n_samples: usize,
    pub neg_log_likelihood: f64,
    pub objective: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_secs: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub stationarity: f64,
    pub min_eig_sigma: f64,
    pub min_eig_blocks: Vec<f64>,
    pub delta: f64,
    pub epsilon: f64,
    pub warnings: Vec<String>,
    pub open_loop: SpectrumReport,
    pub filter: SpectrumReport,
    pub constraints: Vec<ConstraintReport>,
}

fn load_config(g: &Global) -> CliResult<LoadedConfig> {
    LoadedConfig::read(&resolve_config_path(g.config.as_deref())?)
}

fn check_dims(model_in: usize, model_out: usize, data: &Dataset) -> CliResult<()> {
    if data.n_inputs() != model_in || data.n_outputs() != model_out {
        return Err(CliError::input(format!(
            "data has {} input(s) and {} output(s), the model has {model_in} and {model_out}",
            data.n_inputs(),
            data.n_outputs()
        )));
    }
    Ok(())
}

/// Fits the configured model. Writes `model.toml` and `report.toml` into the
/// output directory; exit 0 on convergence, 2 otherwise.
pub fn cmd_fit(g: &Global, init_override: Option<&Path>) -> CliResult<i32> {
    let loaded = load_config(g)?;
    let cfg = &loaded.config;
    let data_path = g
        .data
        .clone()
        .or_else(|| loaded.path(&cfg.io.data))
        .ok_or_else(|| CliError::input("no data file: pass --data or set io.data"))?;
    let out_dir = g
        .out
        .clone()
        .or_else(|| loaded.path(&cfg.io.out))
        .ok_or_else(|| CliError::input("no output directory: pass --out or set io.out"))?;
    let data = read_dataset(&data_path)?;
    let ladm = cfg.ladm()?;
    check_dims(ladm.n_inputs, ladm.n_outputs(), &data).map_err(|e| e.context(data_path.display()))?;

    let source = match init_override {
        Some(p) => InitSource::Model(p.to_path_buf()),
        None => cfg.init_source(&loaded.base_dir),
    };
    let init_theta = match &source {
        InitSource::Auto => None,
        InitSource::Model(p) => {
            let m = read_model(p)?;
            let beta = ladm.pack(&m).map_err(|e| CliError::from(e).context(p.display()))?;
            Some(ThetaPoint { beta, sigma: m.re.clone() })
        }
    };
    let spec = cfg.problem_spec(&loaded.base_dir, init_theta.as_ref())?;
    let init = init_theta.map_or(Init::Auto, Init::Theta);
    let opts = FitOptions {
        solver: cfg.solver.options(g.verbose),
        multistart: cfg.solver.multistart.unwrap_or(0),
        seed: g.seed.or(cfg.io.seed).unwrap_or(0),
    };
    let f = fit(&spec, &data, &init, &opts)?;
    let checks = f.oracle_check()?;

    let r = &f.report;
    let constraints = spec
        .eig_constraints
        .iter()
        .zip(&r.region_margins)
        .zip(&checks)
        .map(|((c, m), ok)| ConstraintReport { label: c.label(), epsilon: c.epsilon, region_margin: *m, oracle_feasible: *ok })
        .collect();
    let report = FitReportFile {
        format: "lmisysid-fit-report".into(),
        version: 1,
        status: r.status.to_string(),
        converged: r.converged(),
        n_samples: data.len(),
        neg_log_likelihood: r.neg_log_likelihood,
        objective: r.objective,
        outer_iterations: r.outer_iterations,
        inner_iterations: r.inner_iterations,
        wall_time_secs: r.wall_time_secs,
        eq_violation: r.eq_violation,
        ineq_violation: r.ineq_violation,
        stationarity: r.stationarity,
        min_eig_sigma: r.min_eig_sigma,
        min_eig_blocks: r.min_eig_blocks.clone(),
        delta: r.delta,
        epsilon: r.epsilon,
        warnings: f.solve.warnings.clone(),
        open_loop: (&r.eigen.open_loop).into(),
        filter: (&r.eigen.filter).into(),
        constraints,
    };
    fs::create_dir_all(&out_dir).map_err(|e| CliError::input(format!("{}: {e}", out_dir.display())))?;
    write_model(&out_dir.join("model.toml"), &f.model)?;
    let text = to_toml(&report)?;
    write_text(&out_dir.join("report.toml"), &text)?;
    print!("{text}");
    if !r.converged() {
        eprintln!("fit did not converge: {}", r.status);
        return Ok(EXIT_NUMERICAL);
    }
    Ok(0)
}

/// Input signal for `simulate`.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSpec {
    /// Inputs read from a CSV file (header `t,u1..um`, output columns ignored).
    File(PathBuf),
    Zero { samples: usize, dt: f64 },
    /// Random binary levels `+-amplitude`, redrawn every `hold` samples.
    Prbs { samples: usize, dt: f64, amplitude: f64, hold: usize },
}

/// `+-amplitude` binary sequence; each channel switches with probability 1/2
/// at multiples of `hold`.
pub fn prbs(samples: usize, channels: usize, amplitude: f64, hold: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let hold = hold.max(1);
    let mut u = Matrix::zeros(samples, channels);
    let mut level = vec![amplitude; channels];
    for k in 0..samples {
        for (j, l) in level.iter_mut().enumerate() {
            if k % hold == 0 {
                *l = if rng.random_bool(0.5) { amplitude } else { -amplitude };
            }
            u[(k, j)] = *l;
        }
    }
    u
}

/// Simulates a model file into a dataset CSV.
pub fn cmd_simulate(g: &Global, model_path: &Path, input: &InputSpec, noise: bool) -> CliResult<i32> {
    let model = read_model(model_path)?;
    let out = g.out.clone().ok_or_else(|| CliError::input("no output file: pass --out"))?;
    let seed = g.seed.unwrap_or(0);
    let m = model.n_inputs();
    let (t, u) = match input {
        InputSpec::File(p) => {
            let tab = read_table(p)?;
            if tab.u.ncols() != m {
                return Err(CliError::input(format!(
                    "{}: {} input column(s), the model has {m}",
                    p.display(),
                    tab.u.ncols()
                )));
            }
            (tab.t, tab.u)
        }
        InputSpec::Zero { samples, dt } => (time_axis(*samples, *dt)?, Matrix::zeros(*samples, m)),
        InputSpec::Prbs { samples, dt, amplitude, hold } => {
            if !(amplitude.is_finite() && *amplitude > 0.0) {
                return Err(CliError::input("PRBS amplitude must be positive"));
            }
            (time_axis(*samples, *dt)?, prbs(*samples, m, *amplitude, *hold, seed))
        }
    };
    let sim = simulate(&model, &u, seed, noise)?;
    write_table(&out, &Table { t, u, y: sim.y })?;
    if g.verbose {
        eprintln!("wrote {} samples to {}", sim.e.nrows(), out.display());
    }
    Ok(0)
}

fn time_axis(samples: usize, dt: f64) -> CliResult<Vec<f64>> {
    if samples == 0 {
        return Err(CliError::input("sample count must be positive"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CliError::input("sample period must be positive"));
    }
    Ok((0..samples).map(|k| k as f64 * dt).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub n_samples: usize,
    pub n_outputs: usize,
    pub neg_log_likelihood: f64,
    pub mean_q: f64,
    pub max_q: f64,
    pub windows: Vec<usize>,
}

/// Per-sample diagnostics: innovations, identification index, its moving
/// averages and the noise-free response.
pub fn cmd_eval(g: &Global, model_path: &Path) -> CliResult<i32> {
    let model = read_model(model_path)?;
    let data_path = g.data.clone().ok_or_else(|| CliError::input("no data file: pass --data"))?;
    let out = g.out.clone().ok_or_else(|| CliError::input("no output file: pass --out"))?;
    let tab = read_table(&data_path)?;
    let t = tab.t.clone();
    let data = tab.into_dataset()?;
    check_dims(model.n_inputs(), model.n_outputs(), &data).map_err(|e| e.context(data_path.display()))?;
    let (summary, header, rows) = evaluate(&model, &data, &t)?;
    write_rows(&out, &header, rows)?;
    print!("{}", to_toml(&summary)?);
    Ok(0)
}

type EvalTable = (EvalSummary, Vec<String>, Vec<Vec<Option<f64>>>);

/// Columns `t, e1..ep, q, q_avg1, q_avg10, q_avg100, yhat1..yhatp`.
pub fn evaluate(model: &InnovationModel, data: &Dataset, t: &[f64]) -> CliResult<EvalTable> {
    let inn = filter_innovations(model, data)?;
    let q = identification_index(&inn.e, &model.re)?;
    let avgs = EVAL_WINDOWS.iter().map(|&w| moving_average(&q, w)).collect::<Result<Vec<_>, _>>()?;
    let yhat = noise_free_response(model, &data.u)?;
    let p = model.n_outputs();
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|j| format!("e{j}")));
    header.push("q".into());
    header.extend(EVAL_WINDOWS.iter().map(|w| format!("q_avg{w}")));
    header.extend((1..=p).map(|j| format!("yhat{j}")));
    let rows = (0..data.len())
        .map(|k| {
            let mut row = vec![Some(t[k])];
            row.extend(inn.e.row(k).iter().map(|v| Some(*v)));
            row.push(Some(q[k]));
            row.extend(avgs.iter().map(|a| a[k]));
            row.extend(yhat.row(k).iter().map(|v| Some(*v)));
            row
        })
        .collect();
    let summary = EvalSummary {
        n_samples: data.len(),
        n_outputs: p,
        neg_log_likelihood: neg_log_likelihood(model, data)?,
        mean_q: q.mean(),
        max_q: q.max(),
        windows: EVAL_WINDOWS.to_vec(),
    };
    Ok((summary, header, rows))
}

/// Matrix inspected by `eig`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigTarget {
    OpenLoop,
    Filter,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionVerdict {
    pub region: String,
    pub target: String,
    pub epsilon: f64,
    /// Smallest `min eig f_D(lambda)` over the target spectrum.
    pub margin: f64,
    pub direct_member: bool,
    /// `phi_D` with `M = epsilon I`, `V = I`; `inf` when infeasible.
    pub barrier_value: f64,
    /// Finite barrier value.
    pub oracle_member: bool,
    /// `phi_D <= 1/epsilon`.
    pub oracle_feasible_at_epsilon: bool,
    pub agree: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EigReport {
    pub open_loop: SpectrumReport,
    pub filter: SpectrumReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<RegionVerdict>,
}

/// Verdicts of the direct eigenvalue test and the barrier SDP for one matrix.
pub fn region_verdict(region_text: &str, a: &Matrix, epsilon: f64, target: &str) -> CliResult<RegionVerdict> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(CliError::input("epsilon must be positive"));
    }
    let region = parse_region(region_text)?;
    let margin = region.spectrum_margin(a)?;
    let direct_member = a.nrows() > 0 && region.eig_membership(a, 0.0)?;
    let q = BarrierQuery::new(region.clone(), a.clone(), epsilon)?;
    let sol = barrier_solve(&q, &SolveOptions::default())?;
    let oracle_member = sol.feasible();
    let agree = direct_member == oracle_member || margin.abs() <= BOUNDARY_TOL;
    Ok(RegionVerdict {
        region: region.label().to_string(),
        target: target.to_string(),
        epsilon,
        margin,
        direct_member,
        barrier_value: sol.value,
        oracle_member,
        oracle_feasible_at_epsilon: sol.value <= (1.0 + 1e-6) / epsilon,
        agree,
    })
}

/// Prints both spectra and, with a region, the membership verdicts. In
/// self-test mode a disagreement away from the boundary exits with 2.
pub fn cmd_eig(
    model_path: &Path,
    region: Option<&str>,
    epsilon: f64,
    target: EigTarget,
    self_test: bool,
) -> CliResult<i32> {
    let model = read_model(model_path)?;
    let er = eigen_report(&model)?;
    let check = match region {
        None => None,
        Some(text) => {
            let (a, name) = match target {
                EigTarget::OpenLoop => (model.a.clone(), "open_loop"),
                EigTarget::Filter => (model.filter_matrix(), "filter"),
            };
            Some(region_verdict(text, &a, epsilon, name)?)
        }
    };
    let report = EigReport { open_loop: (&er.open_loop).into(), filter: (&er.filter).into(), check };
    print!("{}", to_toml(&report)?);
    if self_test {
        if let Some(c) = &report.check {
            if !c.agree {
                eprintln!("direct and oracle verdicts disagree (margin {:e})", c.margin);
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(0)
}
