use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fqaoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fqaoa"))
        .args(args)
        .env_remove("FQAOA_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_json(o: &Output) -> Value {
    let line = stderr(o).lines().last().unwrap_or_default().to_owned();
    serde_json::from_str(&line).unwrap_or_else(|_| panic!("stderr is not error JSON: {}", stderr(o)))
}

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_returns.csv");

#[test]
fn fixed_run_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fqaoa(&["run", "--gen-seed", "42", "--driver", "cyc", "--p", "1", "--seed", "42", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["report_cyc.json", "histogram_cyc.csv", "pm_cyc.csv", "instance.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let hist = fs::read_to_string(a.join("histogram_cyc.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_lo,bin_hi,probability"));
    assert_eq!(hist.lines().count(), 11);
    let pm = fs::read_to_string(a.join("pm_cyc.csv")).unwrap();
    assert_eq!(pm.lines().next(), Some("M,probability,random"));
    assert_eq!(pm.lines().count(), 18);

    let r = read_json(&a.join("report_cyc.json"));
    let total: f64 = r["energy_histogram"].as_array().unwrap().iter().map(|b| b["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(r["metadata"]["M"], 4);
    assert!((r["P_M"][4].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(r["gate_counts"]["single_qubit"], 620);
    assert_eq!(r["gate_counts"]["two_qubit"], 368);
    let de = r["delta_e_over_w"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&de));
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let o = fqaoa(&[
            "run", "--gen-seed", "3", "--n", "4", "--d", "2", "--k", "2", "--driver", "lad", "--noise-p2", "0.02",
            "--trajectories", "40", "--shots", "500", "--seed", "9", "--threads", threads, "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(fs::read(out.join("report_lad.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn optimize_mode_reports_both_energies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("opt");
    let o = fqaoa(&["run", "--gen-seed", "42", "--driver", "lad", "--mode", "optimize", "--trace", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out.join("report_lad.json"));
    let fixed = r["fixed_energy"].as_f64().unwrap();
    let opt = r["optimized_energy"].as_f64().unwrap();
    assert!(opt <= fixed + 1e-12);
    assert!(!r["optimization"]["trace"].as_array().unwrap().is_empty());
    assert_eq!(r["metadata"]["mode"], "optimize");
}

#[test]
fn noisy_pair_writes_comparison_with_ordering_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("noisy");
    let o = fqaoa(&[
        "run", "--gen-seed", "5", "--n", "4", "--d", "2", "--k", "2", "--driver", "cyc", "--driver", "lad",
        "--noise-p2", "0.01", "--trajectories", "2000", "--shots", "10000", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("driver,p,delta_e_over_w"));
    assert!(header.ends_with("cyc_ge_lad_P_M,cyc_ge_lad_lowest_bin"));
    let cmp = read_json(&out.join("comparison.json"));
    assert_eq!(cmp["P_M_order"]["cyc_ge_lad"], true, "{cmp}");
    assert!(csv.lines().nth(1).unwrap().starts_with("cyc,1,"));
    let cyc = read_json(&out.join("report_cyc.json"));
    assert_eq!(cyc["post_selected"], true);
    assert_eq!(cyc["metadata"]["trajectories"], 2000);
}

#[test]
fn gatecount_matches_closed_forms() {
    let cases = [
        (vec!["--driver", "cyc", "--p", "1"], "total: 620 1q, 368 2q"),
        (vec!["--driver", "lad", "--p", "1"], "total: 892 1q, 608 2q"),
        (vec!["--driver", "cyc", "--p", "0"], "total: 388 1q, 96 2q"),
        (vec!["--driver", "cyc", "--p", "3"], "total: 1084 1q, 912 2q"),
    ];
    for (extra, want) in cases {
        let mut args = vec!["gatecount", "--n", "8", "--d", "2", "--k", "4"];
        args.extend(extra);
        let o = fqaoa(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).trim_end().ends_with(want), "{}", stdout(&o));
    }
    let o = fqaoa(&["gatecount", "--json"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["match"], true);
    assert_eq!(v["total_census"]["two_qubit"], 368);
}

#[test]
fn verify_reports_conditions() {
    let o = fqaoa(&["verify", "--driver", "cyc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["conditions"]["degenerate"], false);
    assert!((v["conditions"]["E0"].as_f64().unwrap() + 7.24902).abs() < 1e-5);

    let o = fqaoa(&["verify", "--driver", "lad"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["conditions"]["degenerate"], true);
    assert!(v["notes"][0].as_str().unwrap().contains("degenerate"));
}

#[test]
fn verify_flags_disconnected_custom_graph() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edges.json");
    fs::write(&path, r#"{"n_sites": 6, "edges": [[1, 2, 1.0], [2, 3, 1.0], [4, 5, 1.0], [5, 6, 1.0]]}"#).unwrap();
    let o = fqaoa(&["verify", "--edges", path.to_str().unwrap(), "--k", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["conditions"]["condition_II"], false);
    assert_eq!(v["conditions"]["condition_I"], true);
    assert_eq!(error_json(&o)["error"], "numerical");

    fs::write(&path, r#"{"n_sites": 4, "edges": [[1, 2, 1.0], [2, 3, 1.0], [3, 4, 1.0]]}"#).unwrap();
    let o = fqaoa(&["verify", "--edges", path.to_str().unwrap(), "--k", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn instance_gen_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let mut hashes = Vec::new();
    for p in [&a, &b] {
        let o = fqaoa(&["instance", "gen", "--seed", "42", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
        hashes.push(v["instance_hash"].as_str().unwrap().to_owned());
        assert_eq!(v["feasible_states"], 1820);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0], "d253bf47b366ea3d");

    let o = fqaoa(&["instance", "show", "--instance", a.to_str().unwrap()]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["instance_hash"].as_str(), Some(hashes[0].as_str()));
}

#[test]
fn show_warns_on_flat_instance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.json");
    fs::write(&path, r#"{"N":2,"D":2,"K":1,"lambda":0.0,"sigma":[[1,0],[0,1]],"mu":[0,0]}"#).unwrap();
    let o = fqaoa(&["instance", "show", "--instance", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("W = 0"), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["W"], 0.0);
}

#[test]
fn from_returns_builds_valid_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inst.json");
    let o = fqaoa(&["instance", "from-returns", "--returns", SAMPLE, "--d", "2", "--k", "4", "--lambda", "0.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["N"], 8);
    assert_eq!(v["feasible_states"], 1820);
    assert!(v["W"].as_f64().unwrap() > 0.0);
    let inst = fqaoa::instance::load_instance(&out).unwrap();
    assert_eq!(inst.content_hash(), v["instance_hash"].as_str().unwrap());

    let run_dir = dir.path().join("run");
    let o = fqaoa(&["run", "--returns", SAMPLE, "--lambda", "0.5", "--out", run_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn exit_codes_and_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();

    let o = fqaoa(&["run", "--gen-seed", "1", "--p", "0", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_json(&o);
    assert_eq!(e["error"], "validation");
    assert_eq!(e["exit_code"], 1);

    let o = fqaoa(&["run", "--gen-seed", "1", "--noise-p2", "1.5", "--out", out]);
    assert_eq!(o.status.code(), Some(1));

    let o = fqaoa(&["run", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "validation");

    let o = fqaoa(&["run", "--gen-seed", "1", "--n", "20", "--d", "2", "--k", "4", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "capacity");

    let o = fqaoa(&["run", "--instance", "/nonexistent/inst.json", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "io");

    let o = fqaoa(&["gatecount", "--n", "3", "--d", "1", "--k", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
