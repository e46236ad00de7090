use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mongeampere"));
    c.env_remove("MONGEAMPERE_THREADS");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn write_config(dir: &TempDir, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path) -> Output {
    let mut c = bin();
    c.arg(args[0]);
    c.args(&args[1..]);
    c.arg(config);
    c.output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn cheng_yau(nodes: usize) -> Value {
    json!({
        "n": 2,
        "resolution": nodes,
        "boundary": "r2 - 1",
        "rhs": { "family": "exponential", "kappa": 1.0, "w": "32*exp(1 - r2)" },
        "subsolution_seed": "r2 - 1",
        "solver": { "tol_outer": 1e-8, "max_outer": 25 }
    })
}

#[test]
fn shipped_example_solves() {
    let out = run(&["solve"], &example("cheng_yau_n2.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert_eq!(v["converged"], true);
    assert!(v["final_residual"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["sandwich_ok"], true);
    for key in ["outer_iters", "psh_defect"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn shipped_example_seed_is_a_subsolution() {
    let out = bin()
        .args(["verify"])
        .arg(example("cheng_yau_n2.json"))
        .args(["--check", "subsolution"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout_json(&out)["pass"], true);
}

#[test]
fn decreasing_rhs_is_rejected() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    cfg["rhs"] = json!({ "family": "expression", "expr": "exp(-t)" });
    cfg.as_object_mut().unwrap().remove("subsolution_seed");
    let out = run(&["solve"], &write_config(&dir, "c.json", &cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rhs not nondecreasing in t"), "{}", stderr(&out));
    assert!(stderr(&out).contains("hypothesis 1"));
}

#[test]
fn positive_boundary_needs_free_mode() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    cfg["boundary"] = json!("r2 - 0.5");
    cfg["rhs"] = json!({ "family": "constant", "w": 32 });
    cfg.as_object_mut().unwrap().remove("subsolution_seed");
    let path = write_config(&dir, "c.json", &cfg);
    let out = run(&["solve"], &path);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nonpositive"), "{}", stderr(&out));

    cfg["mode"] = json!("free");
    let out = run(&["solve"], &write_config(&dir, "free.json", &cfg));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert_eq!(v["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn failing_seed_is_rejected() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    cfg["subsolution_seed"] = json!("0.5*(r2 - 1)");
    let out = run(&["solve"], &write_config(&dir, "c.json", &cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("hypothesis 3"), "{}", stderr(&out));
}

#[test]
fn failing_check_exits_one() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    cfg["rhs"] = json!({ "family": "constant", "w": 100 });
    let out = bin()
        .arg("verify")
        .arg(write_config(&dir, "c.json", &cfg))
        .args(["--check", "subsolution"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert_eq!(stdout_json(&out)["pass"], false);
}

#[test]
fn solver_failure_exits_three_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    cfg["solver"]["max_newton"] = json!(1);
    let out = run(&["solve"], &write_config(&dir, "c.json", &cfg));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert_eq!(v["converged"], false);
    assert!(v["error"].as_str().unwrap().contains("Newton"));
}

#[test]
fn malformed_configs_exit_two() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    cfg["solver"]["tolerance"] = json!(1e-3);
    let out = run(&["solve"], &write_config(&dir, "unknown.json", &cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tolerance"));

    let mut cfg = cheng_yau(9);
    cfg["boundary"] = json!("1 + * 2");
    let out = run(&["solve"], &write_config(&dir, "syntax.json", &cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("offset 4"), "{}", stderr(&out));

    let mut cfg = cheng_yau(9);
    cfg["boundary"] = json!("x3 - 1");
    let out = run(&["solve"], &write_config(&dir, "dims.json", &cfg));
    assert_eq!(out.status.code(), Some(2));

    let mut cfg = cheng_yau(9);
    cfg["subsolution_seed"] = json!("t + r2");
    let out = run(&["solve"], &write_config(&dir, "t.json", &cfg));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_override_is_validated() {
    let out = bin()
        .env("MONGEAMPERE_THREADS", "0")
        .arg("solve")
        .arg(example("cheng_yau_n2.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    cfg["checks"] = json!({ "trials": 5, "comparison_nodes": 7 });
    let path = write_config(&dir, "c.json", &cfg);
    let a = run(&["solve"], &path);
    let b = bin().env("MONGEAMPERE_THREADS", "2").arg("solve").arg(&path).output().unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let check = |threads: &str| {
        bin()
            .env("MONGEAMPERE_THREADS", threads)
            .arg("verify")
            .arg(&path)
            .args(["--check", "comparison"])
            .output()
            .unwrap()
    };
    let (c, d) = (check("1"), check("3"));
    assert_eq!(c.status.code(), Some(0), "{}", stderr(&c));
    assert_eq!(c.stdout, d.stdout);
}

#[test]
fn dumps_round_trip() {
    let dir = TempDir::new().unwrap();
    let mut cfg = cheng_yau(9);
    let csv = dir.path().join("u.csv");
    let binary = dir.path().join("u.bin");
    let maximal = dir.path().join("f.bin");
    cfg["outputs"] = json!({ "solution": csv, "maximal": maximal });
    let out = run(&["solve"], &write_config(&dir, "a.json", &cfg));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    cfg["outputs"] = json!({ "solution": binary });
    let out = run(&["solve"], &write_config(&dir, "b.json", &cfg));
    assert_eq!(out.status.code(), Some(0));

    let from_csv = mongeampere::dump::load(&csv).unwrap();
    let from_bin = mongeampere::dump::load(&binary).unwrap();
    assert!(from_csv.grid().same_layout(from_bin.grid()));
    let bits = |f: &mongeampere::ScalarField| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&from_csv), bits(&from_bin));
    let f = mongeampere::dump::load(&maximal).unwrap();
    assert!(from_bin.values().iter().zip(f.values()).all(|(u, f)| u <= &(f + 2e-10)));
}

#[test]
fn radial_example_reproduces_the_quadratic() {
    let out = run(&["radial"], &example("radial_n3.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert!(v["sup_error"].as_f64().unwrap() <= 1e-7);
    assert_eq!(v["mesh_size"], 512);
}

#[test]
fn radial_needs_a_ball() {
    let out = run(&["radial"], &example("cheng_yau_n2.json"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn convergence_study_writes_a_table() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "n": 1,
        "boundary": "r2 - 1",
        "rhs": { "family": "constant", "w": 4 },
        "study": { "exact": "r2 - 1", "resolutions": [9, 17, 33] },
        "outputs": { "report": dir.path().join("rows.json") }
    });
    let out = run(&["study", "convergence"], &write_config(&dir, "c.json", &cfg));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "resolution,h,sup_error,l2_error,order_sup,order_l2,converged"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].contains("exact"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rows.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 3);
}

#[test]
fn radial_convergence_study_is_second_order() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "n": 2,
        "domain": { "kind": "ball", "radius": 1.0 },
        "boundary": 0,
        "rhs": { "family": "expression", "expr": "2*(4 + 4*r2)*exp(r2)*4*exp(r2)" },
        "study": { "exact": "exp(r2) - exp(1)", "meshes": [64, 128, 256] }
    });
    let out = run(&["study", "convergence"], &write_config(&dir, "r.json", &cfg));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    let order: f64 = last.split(',').nth(4).unwrap().parse().unwrap();
    assert!((1.8..=2.2).contains(&order), "order {order}");
}

#[test]
fn stability_study_passes_and_cap_is_enforced() {
    let out = run(&["study", "stability"], &example("stability_n2.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);

    let dir = TempDir::new().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(example("stability_n2.json")).unwrap()).unwrap();
    cfg["study"]["perturbations"] = json!([5.0, 0.5]);
    let out = run(&["study", "stability"], &write_config(&dir, "cap.json", &cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dominating measure"), "{}", stderr(&out));
}
