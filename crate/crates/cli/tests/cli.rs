use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cqp"))
}

fn tmp_path(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cqp-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn toy_instance(name: &str) -> PathBuf {
    let qpsk: Vec<f64> = (0..4).map(|k| k as f64 * std::f64::consts::FRAC_PI_2).collect();
    let v = serde_json::json!({
        "format": 1,
        "kind": "raw-cqp",
        "problem": {
            "n": 2,
            "q": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]],
            "c": [[-1.0, 0.0], [0.0, 0.0]],
            "bounds": [[1.0, 1.0], [1.0, 1.0]],
            "args": [
                {"type": "discrete", "angles": qpsk},
                {"type": "discrete", "angles": qpsk}
            ]
        }
    });
    let p = tmp_path(name);
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn generate_writes_deterministic_instances() {
    let a = tmp_path("det-a.json");
    let b = tmp_path("det-b.json");
    for p in [&a, &b] {
        run_ok(&[
            "generate", "mimo", "--m", "8", "--n", "6", "--mod", "4", "--snr", "15", "--seed",
            "1", "--out",
            p.to_str().unwrap(),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v = read_json(&a);
    assert_eq!(v["kind"], "mimo");
    assert_eq!(v["m"], 8);
    assert_eq!(v["n"], 6);
    assert_eq!(v["constellation"], 4);
    assert_eq!(v["seed"], 1);
}

#[test]
fn generate_radar_records_the_halfwidth() {
    let p = tmp_path("radar.json");
    run_ok(&["generate", "radar", "--delta", "pi/6", "--seed", "3", "--out", p.to_str().unwrap()]);
    let v = read_json(&p);
    assert_eq!(v["kind"], "radar");
    let delta = v["delta_angle"].as_f64().unwrap();
    assert!((delta - std::f64::consts::PI / 6.0).abs() < 1e-15);
    assert_eq!(v["fd_tr"], 0.15);
}

#[test]
fn relaxation_bounds_are_ordered() {
    let inst = tmp_path("vb-order.json");
    run_ok(&["generate", "vb", "--m", "2", "--n", "2", "--seed", "9", "--out", inst.to_str().unwrap()]);
    let rc = tmp_path("vb-order-csdr.json");
    let re = tmp_path("vb-order-ecsdr.json");
    run_ok(&["solve", "--in", inst.to_str().unwrap(), "--relaxation", "csdr", "--out", rc.to_str().unwrap()]);
    run_ok(&["solve", "--in", inst.to_str().unwrap(), "--relaxation", "ecsdr", "--out", re.to_str().unwrap()]);
    let vc = read_json(&rc);
    let ve = read_json(&re);
    assert_eq!(vc["status"], "optimal");
    assert_eq!(ve["status"], "optimal");
    let lbd_c = vc["lbd_c"].as_f64().unwrap();
    let lbd_e = ve["lbd_e"].as_f64().unwrap();
    assert!(lbd_e >= lbd_c - 1e-7, "enhanced bound {lbd_e} below conventional {lbd_c}");
    assert_eq!(ve["maximize"], true);
}

#[test]
fn branch_and_bound_solves_the_toy() {
    let inst = toy_instance("toy-bb.json");
    let out = tmp_path("toy-bb-result.json");
    run_ok(&["solve", "--in", inst.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let v = read_json(&out);
    assert_eq!(v["mode"], "bb");
    assert_eq!(v["status"], "epsilon-optimal");
    assert!(v["obj_val"].as_f64().unwrap().abs() <= 1e-4);
    assert_eq!(v["theoretical_k"].as_f64().unwrap(), 16.0);
    assert_eq!(v["epsilon"].as_f64().unwrap(), 1e-4);
}

#[test]
fn time_limited_runs_keep_a_valid_sandwich() {
    let inst = tmp_path("tl.json");
    run_ok(&[
        "generate", "mimo", "--m", "4", "--n", "4", "--mod", "4", "--snr", "5", "--seed", "2",
        "--out",
        inst.to_str().unwrap(),
    ]);
    let out = tmp_path("tl-result.json");
    run_ok(&[
        "solve", "--in", inst.to_str().unwrap(), "--time-limit", "0.000001", "--out",
        out.to_str().unwrap(),
    ]);
    let v = read_json(&out);
    assert_eq!(v["status"], "time-limit");
    let obj = v["obj_val"].as_f64().unwrap();
    let lower = v["lower"].as_f64().unwrap();
    assert!(lower <= obj + 1e-9, "lower {lower} above objective {obj}");
    assert_eq!(v["maximize"], false);
    assert!(v["offset"].as_f64().unwrap() > 0.0);
}

#[test]
fn oracle_rejects_continuous_instances() {
    let inst = tmp_path("radar-oracle.json");
    run_ok(&["generate", "radar", "--seed", "1", "--out", inst.to_str().unwrap()]);
    let out = bin().args(["oracle", "--in", inst.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("discrete"));
}

#[test]
fn oracle_scans_the_toy() {
    let inst = toy_instance("toy-oracle.json");
    let out = tmp_path("toy-truth.json");
    run_ok(&["oracle", "--in", inst.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let v = read_json(&out);
    assert_eq!(v["points"], 16);
    assert!(v["value"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["minimizer"][0][0].as_f64().unwrap(), 1.0);
    assert_eq!(v["minimizer"][1][0].as_f64().unwrap(), 1.0);
}

#[test]
fn solve_records_are_idempotent_apart_from_timing() {
    let inst = tmp_path("idem.json");
    run_ok(&["generate", "vb", "--m", "2", "--n", "2", "--seed", "5", "--out", inst.to_str().unwrap()]);
    let r1 = tmp_path("idem-1.json");
    let r2 = tmp_path("idem-2.json");
    for r in [&r1, &r2] {
        run_ok(&["solve", "--in", inst.to_str().unwrap(), "--out", r.to_str().unwrap()]);
    }
    let mut v1 = read_json(&r1);
    let mut v2 = read_json(&r2);
    for v in [&mut v1, &mut v2] {
        let obj = v.as_object_mut().unwrap();
        obj.remove("time_total_s");
        obj.remove("time_e_s");
        obj.remove("time_c_s");
    }
    assert_eq!(v1, v2);
}

#[test]
fn bench_aggregates_cells() {
    let empty = run_ok(&["bench", "--suite", "vb", "--reps", "0", "--m", "2", "--n", "2"]);
    let stdout = String::from_utf8_lossy(&empty.stdout);
    assert!(stdout.contains("ObjVal"), "missing header in:\n{stdout}");

    let out = tmp_path("bench.json");
    let full = run_ok(&[
        "bench", "--suite", "vb", "--reps", "2", "--m", "2", "--n", "2", "--out",
        out.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&full.stdout);
    assert!(stdout.contains("UBdE"), "beamforming table should show upper bounds:\n{stdout}");
    let v = read_json(&out);
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0]["reps"], 2);
    assert_eq!(cells[0]["failures"], 0);
    let gap = cells[0]["cld_gap"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&gap), "gap {gap} out of range");
    assert!(cells[0]["obj_val"].as_f64().unwrap() > 0.0, "received power is positive");
}

#[test]
fn expanded_instances_solve_identically() {
    let spec = tmp_path("expand-spec.json");
    let raw = tmp_path("expand-raw.json");
    run_ok(&["generate", "vb", "--m", "2", "--n", "2", "--seed", "11", "--out", spec.to_str().unwrap()]);
    run_ok(&[
        "generate", "vb", "--m", "2", "--n", "2", "--seed", "11", "--expand", "--out",
        raw.to_str().unwrap(),
    ]);
    assert_eq!(read_json(&raw)["kind"], "raw-cqp");

    let rs = tmp_path("expand-spec-result.json");
    let rr = tmp_path("expand-raw-result.json");
    run_ok(&["solve", "--in", spec.to_str().unwrap(), "--out", rs.to_str().unwrap()]);
    run_ok(&["solve", "--in", raw.to_str().unwrap(), "--out", rr.to_str().unwrap()]);
    let vs = read_json(&rs);
    let vr = read_json(&rr);
    assert_eq!(vs["obj_val"], vr["obj_val"]);
    assert_eq!(vs["lbd_e"], vr["lbd_e"]);
    // The expanded file no longer knows it came from a maximization.
    assert_eq!(vr["maximize"], false);
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().args(["solve", "--in", "/nonexistent-cqp-file.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let never = tmp_path("never.json");
    let out = bin()
        .args([
            "generate", "mimo", "--m", "2", "--n", "4", "--mod", "4", "--snr", "10", "--seed",
            "0", "--out",
            never.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!never.exists());

    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
