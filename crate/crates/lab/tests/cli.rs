use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn lab(command: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yamabe-lab"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("YAMABE_LAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_file(command: &str, file: &str) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(command, &scenarios().join(file), dir.path());
    (out, dir)
}

fn run_text(command: &str, text: &str) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.conf");
    fs::write(&cfg, text).unwrap();
    let out = lab(command, &cfg, &dir.path().join("out"));
    (out, dir)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn geometry_exits_zero_with_one_row_per_node() {
    let (out, dir) = run_file("geometry", "geometry_euclidean.conf");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&dir.path().join("geometry.csv")), 1001);
    let m = manifest(dir.path());
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["seed"], 0);
    assert_eq!(m["threads"], 2);
    assert!(m["version"].is_string());
}

#[test]
fn poisson_exits_zero_in_both_modes() {
    for file in ["poisson_m.conf", "poisson_h.conf"] {
        let (out, dir) = run_file("poisson", file);
        assert_eq!(code(&out), 0, "{file}: {}", String::from_utf8_lossy(&out.stderr));
        let header = fs::read_to_string(dir.path().join("poisson.csv")).unwrap();
        assert!(header.starts_with("r,v,w,residual\n"));
    }
}

#[test]
fn poisson_with_negative_l_phi_exits_two() {
    let text = fs::read_to_string(scenarios().join("poisson_h.conf")).unwrap() + "phi = exponential\n";
    let (out, dir) = run_text("poisson", &text);
    assert_eq!(code(&out), 2);
    let m = manifest(&dir.path().join("out"));
    assert_eq!(m["exit_code"], 2);
    assert!(m["failures"][0].as_str().unwrap().contains("L phi"));
    assert!(dir.path().join("out/poisson.json").exists());
}

#[test]
fn flow_exits_zero() {
    let (out, dir) = run_file("flow", "flow_envelope.conf");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("flow.json")).unwrap()).unwrap();
    assert_eq!(report["in_AC"], true);
    assert!(report["C1"].as_f64().unwrap() > 0.0);
    assert!(report["C1"].as_f64() <= report["C2"].as_f64());
}

#[test]
fn stability_exits_zero() {
    let (out, dir) = run_file("stability", "stability_pme.conf");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data_rows(&dir.path().join("stability.csv")) >= 10);
}

#[test]
fn stability_with_leak_fault_exits_two() {
    let (out, dir) = run_file("stability", "stability_fault.conf");
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["exit_code"], 2);
    assert!(!m["failures"].as_array().unwrap().is_empty());
    assert!(dir.path().join("stability.json").exists());
}

#[test]
fn decay_end_to_end() {
    let (out, dir) = run_file("decay", "decay.conf");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&dir.path().join("decay.csv")), 3);
}

#[test]
fn riccati_exits_zero_for_both_cases() {
    for file in ["riccati_fixture.conf", "riccati_fixture_case2.conf"] {
        let (out, _dir) = run_file("riccati", file);
        assert_eq!(code(&out), 0, "{file}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn riccati_blow_up_exits_two() {
    let text = fs::read_to_string(scenarios().join("riccati_fixture.conf")).unwrap() + "a0 = 5\n";
    let (out, _dir) = run_text("riccati", &text);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_propagates_the_worst_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let good = scenarios().join("geometry_euclidean.conf");
    let bad = scenarios().join("stability_fault.conf");
    let cfg = dir.path().join("report.conf");
    fs::write(
        &cfg,
        format!("name = mixed\ncommand = report\n\n[report]\nscenarios = {}, {}\n", good.display(), bad.display()),
    )
    .unwrap();
    let out = lab("report", &cfg, &dir.path().join("out"));
    assert_eq!(code(&out), 2);
    let table = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(table.contains("geometry-euclidean,geometry,0"));
    assert!(table.contains("stability-fault,stability,2"));
    assert!(dir.path().join("out/geometry-euclidean/geometry.csv").exists());
}

#[test]
fn config_errors_exit_one() {
    let base = fs::read_to_string(scenarios().join("geometry_euclidean.conf")).unwrap();
    let (out, _dir) = run_text("geometry", &base.replace("n = 3", "n = 2"));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n must be ≥ 3"));

    let (out, _dir) = run_text("geometry", &(base.clone() + "dtt = 0.1\n"));
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dtt") && err.contains("line"), "{err}");

    let (out, _dir) = run_text("flow", &base);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab("geometry", &dir.path().join("absent.conf"), dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab("plot", &scenarios().join("decay.conf"), dir.path());
    assert_ne!(code(&out), 0);
}

#[test]
fn seed_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_yamabe-lab"))
        .args(["geometry", "--config"])
        .arg(scenarios().join("geometry_cylinder.conf"))
        .arg("--out")
        .arg(dir.path())
        .args(["--seed", "17"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(manifest(dir.path())["seed"], 17);
}

#[test]
fn repeated_runs_write_identical_csv() {
    let (a, da) = run_file("stability", "stability_coefficient.conf");
    let (b, db) = run_file("stability", "stability_coefficient.conf");
    assert_eq!((code(&a), code(&b)), (0, 0));
    let read = |d: &Path| fs::read(d.join("stability.csv")).unwrap();
    assert_eq!(read(da.path()), read(db.path()));
}

#[test]
fn every_command_rejects_unknown_keys_with_exit_one() {
    let files = [
        ("geometry", "geometry_euclidean.conf"),
        ("poisson", "poisson_m.conf"),
        ("flow", "flow_envelope.conf"),
        ("stability", "stability_pme.conf"),
        ("decay", "decay.conf"),
        ("riccati", "riccati_fixture.conf"),
        ("report", "regression.conf"),
    ];
    for (command, file) in files {
        let text = fs::read_to_string(scenarios().join(file)).unwrap() + "bogus = 1\n";
        let (out, dir) = run_text(command, &text);
        assert_eq!(code(&out), 1, "{command}");
        assert!(!dir.path().join("out").exists(), "{command}");
    }
}
