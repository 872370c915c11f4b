use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lmisysid"));
    c.env_remove("LMISYSID_CONFIG_DIR");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, name: &str, samples: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let o = run(bin()
        .args(["simulate", "--samples", &samples.to_string(), "--seed", &seed.to_string()])
        .arg("--model")
        .arg(fixture("truth.toml"))
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

fn toml_value(text: &str) -> toml::Table {
    text.parse::<toml::Table>().expect("valid TOML")
}

fn scalar(table: &toml::Table, key: &str) -> f64 {
    match &table[key] {
        toml::Value::Float(v) => *v,
        toml::Value::Integer(v) => *v as f64,
        v => panic!("{key} is {v:?}"),
    }
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read(simulate(dir.path(), "a.csv", 200, 5)).unwrap();
    let b = fs::read(simulate(dir.path(), "b.csv", 200, 5)).unwrap();
    let c = fs::read(simulate(dir.path(), "c.csv", 200, 6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn simulate_prbs_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let o = run(bin()
        .args(["simulate", "--samples", "300", "--amplitude", "2.5", "--hold", "3", "--seed", "1"])
        .arg("--model")
        .arg(fixture("truth.toml"))
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    for line in text.lines().skip(1) {
        let u: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(u == 2.5 || u == -2.5, "{u}");
    }
}

#[test]
fn simulate_noise_free_zero_input_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z.csv");
    let o = run(bin()
        .args(["simulate", "--samples", "50", "--zero-input", "--no-noise"])
        .arg("--model")
        .arg(fixture("truth.toml"))
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 51);
    for line in text.lines().skip(1) {
        let y: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(y, 0.0);
    }
}

#[test]
fn simulate_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("u.csv");
    fs::write(&input, "t,u1\n0,1\n0.5,0\n1,-1\n").unwrap();
    let out = dir.path().join("y.csv");
    let o = run(bin().arg("simulate").arg("--model").arg(fixture("truth.toml")).arg("--input").arg(&input).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("t,u1,y1\n0,1,"), "{text}");
    assert!(text.contains("\n0.5,0,"));
}

#[test]
fn pipeline_exits_zero_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "data.csv", 400, 3);
    let mut reports = Vec::new();
    for run_id in 0..2 {
        let out = dir.path().join(format!("fit{run_id}"));
        let o = run(bin().arg("fit").arg("--config").arg(fixture("fit.toml")).arg("--data").arg(&data).arg("--out").arg(&out));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let mut report = toml_value(&fs::read_to_string(out.join("report.toml")).unwrap());
        assert!(scalar(&report, "neg_log_likelihood").is_finite());
        assert_eq!(report["converged"], toml::Value::Boolean(true));
        report.remove("wall_time_secs");
        reports.push(report);

        let model = out.join("model.toml");
        let eval_out = dir.path().join(format!("eval{run_id}.csv"));
        let o = run(bin().arg("eval").arg("--model").arg(&model).arg("--data").arg(&data).arg("--out").arg(&eval_out));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let summary = toml_value(&stdout(&o));
        assert!((scalar(&summary, "neg_log_likelihood") - scalar(&reports[run_id], "neg_log_likelihood")).abs() < 1e-9);

        let o = run(bin()
            .arg("eig")
            .arg("--model")
            .arg(&model)
            .args(["--check-region", "intersect [half_plane(0.2), disk(0.998)]", "--epsilon", "0.03", "--self-test"]));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let eig = toml_value(&stdout(&o));
        let check = eig["check"].as_table().unwrap();
        assert_eq!(check["direct_member"], toml::Value::Boolean(true));
        assert_eq!(check["oracle_feasible_at_epsilon"], toml::Value::Boolean(true));
    }
    assert_eq!(reports[0], reports[1]);
    let e0 = fs::read(dir.path().join("eval0.csv")).unwrap();
    let e1 = fs::read(dir.path().join("eval1.csv")).unwrap();
    assert_eq!(e0, e1);
}

#[test]
fn fit_from_truth_does_not_lose_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "data.csv", 300, 11);
    let cfg = dir.path().join("free.toml");
    fs::write(
        &cfg,
        "[model]\nn_s = 1\nn_inputs = 1\nn_outputs = 1\nbd = [[0.0]]\nc_fixed = [[1.0]]\n",
    )
    .unwrap();
    let o = run(bin().arg("eval").arg("--model").arg(fixture("truth.toml")).arg("--data").arg(&data).arg("--out").arg(dir.path().join("e.csv")));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let truth_nll = scalar(&toml_value(&stdout(&o)), "neg_log_likelihood");
    let out = dir.path().join("fit");
    let o = run(bin()
        .arg("fit")
        .arg("--config")
        .arg(&cfg)
        .arg("--init")
        .arg(fixture("truth.toml"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = toml_value(&fs::read_to_string(out.join("report.toml")).unwrap());
    assert!(scalar(&report, "neg_log_likelihood") <= truth_nll + 1e-6);
}

#[test]
fn eval_mean_index_matches_output_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "data.csv", 5000, 21);
    let o = run(bin().arg("eval").arg("--model").arg(fixture("truth.toml")).arg("--data").arg(&data).arg("--out").arg(dir.path().join("e.csv")));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mean_q = scalar(&toml_value(&stdout(&o)), "mean_q");
    assert!((mean_q - 1.0).abs() < 0.1, "{mean_q}");
    let header = fs::read_to_string(dir.path().join("e.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,e1,q,q_avg1,q_avg10,q_avg100,yhat1");
}

#[test]
fn eval_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "t,y1,y2\n0,1,2\n1,2,3\n").unwrap();
    let o = run(bin().arg("eval").arg("--model").arg(fixture("truth.toml")).arg("--data").arg(&data).arg("--out").arg(dir.path().join("e.csv")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("output(s)"), "{}", stderr(&o));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "t,u1,y1\n0,1,0.5\n1,1,oops\n").unwrap();
    let o = run(bin().arg("fit").arg("--config").arg(fixture("fit.toml")).arg("--data").arg(&data).arg("--out").arg(dir.path().join("f")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn infeasible_initial_model_names_block() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "data.csv", 200, 2);
    let cfg = dir.path().join("tight.toml");
    fs::write(
        &cfg,
        "[model]\nn_s = 1\nn_inputs = 1\nn_outputs = 1\nbd = [[0.0]]\nc_fixed = [[1.0]]\n\n\
         [[constraints]]\nregion = \"disk(0.5)\"\ntarget = \"filter\"\nepsilon = 0.01\n",
    )
    .unwrap();
    let o = run(bin()
        .arg("fit")
        .arg("--config")
        .arg(&cfg)
        .arg("--init")
        .arg(fixture("truth.toml"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("f")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("filter"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[model]\nn_s = 1\nn_inputs = 1\nn_outputs = 1\nsize = 3\n").unwrap();
    let o = run(bin().arg("fit").arg("--config").arg(&cfg).arg("--data").arg("x.csv").arg("--out").arg("o"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));
}

#[test]
fn config_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "data.csv", 300, 4);
    let o = run(bin()
        .env("LMISYSID_CONFIG_DIR", fixture(""))
        .args(["fit", "--config", "fit.toml"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("f")));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(bin().current_dir(dir.path()).args(["fit", "--data", "data.csv", "--out", "f"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("LMISYSID_CONFIG_DIR"), "{}", stderr(&o));
}

#[test]
fn eig_reports_jordan_block_counterexample() {
    let o = run(bin()
        .arg("eig")
        .arg("--model")
        .arg(fixture("jordan.toml"))
        .args(["--check-region", "left_half_plane(0)", "--target", "open-loop", "--self-test"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = toml_value(&stdout(&o));
    let check = report["check"].as_table().unwrap();
    assert_eq!(check["direct_member"], toml::Value::Boolean(false));
    assert_eq!(check["oracle_member"], toml::Value::Boolean(false));
    assert!(scalar(check, "barrier_value").is_infinite());
}

#[test]
fn eig_stable_scalar_filter_in_unit_disk() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.toml");
    fs::write(
        &model,
        "format = \"lmisysid-model\"\nversion = 1\na = [[0.8]]\nb = [[1.0]]\nc = [[1.0]]\nd = [[0.0]]\nx0 = [0.0]\nk = [[0.3]]\nre = [[1.0]]\n",
    )
    .unwrap();
    let o = run(bin().arg("eig").arg("--model").arg(&model).args(["--check-region", "disk(1, 0)", "--self-test"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = toml_value(&stdout(&o));
    let check = report["check"].as_table().unwrap();
    assert_eq!(check["direct_member"], toml::Value::Boolean(true));
    assert_eq!(check["oracle_feasible_at_epsilon"], toml::Value::Boolean(true));
}

#[test]
fn eig_region_parse_error() {
    let o = run(bin().arg("eig").arg("--model").arg(fixture("truth.toml")).args(["--check-region", "disc(1)"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown region"), "{}", stderr(&o));
}

#[test]
fn bad_usage_exits_one() {
    let o = run(bin().arg("frobnicate"));
    assert_eq!(o.status.code(), Some(1));
    let o = run(bin().args(["simulate", "--model", "m.toml"]));
    assert_eq!(o.status.code(), Some(1));
}
