use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const SMALL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/small.toml");

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uav-isac"))
        .args(args)
        .env("ISAC_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn run_small(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--scenario", SMALL, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every file but the manifest is listed with its size and hash, and nothing
/// else is in the directory.
fn check_manifest(dir: &Path) -> Value {
    let m = manifest(dir);
    let mut listed: Vec<String> = Vec::new();
    for f in m["files"].as_array().unwrap() {
        let name = f["path"].as_str().unwrap();
        let bytes = fs::read(dir.join(name)).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64, "{name}");
        assert_eq!(f["sha256"].as_str().unwrap(), format!("{:x}", Sha256::digest(&bytes)), "{name}");
        listed.push(name.to_string());
    }
    let mut present: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    listed.sort();
    present.sort();
    assert_eq!(listed, present);
    let config = &m["config"];
    assert_eq!(
        m["config_hash"].as_str().unwrap(),
        format!("{:x}", Sha256::digest(config.to_string().as_bytes()))
    );
    m
}

fn header(path: PathBuf) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn feasibility_writes_a_complete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = run_small("feasibility", &out, &["--resolution", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = check_manifest(&out);
    assert_eq!(m["command"], "feasibility");
    assert_eq!(m["exit_code"], 0);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("feasibility.json")).unwrap()).unwrap();
    assert_eq!(summary["verdict"], "Feasible");
    assert_eq!(summary["nodes"], 81);
    assert_eq!(header(out.join("grid.csv")), "x,y,feasible,reachable");
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 6);
}

#[test]
fn unreachable_threshold_exits_two_with_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = run_small("feasibility", &out, &["--resolution", "100", "--gamma-dbm", "40"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let m = check_manifest(&out);
    assert_eq!(m["exit_code"], 2);
    assert_eq!(fs::read_to_string(out.join("feasible_set.csv")).unwrap(), "x,y\n");

    let out = tmp.path().join("s");
    let o = run_small("solve-static", &out, &["--resolution", "100", "--gamma-dbm", "40"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    check_manifest(&out);
    assert!(out.join("infeasible.json").exists());
}

#[test]
fn static_design_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--resolution", "100", "--map-resolution", "100"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let oa = run_small("solve-static", &a, &[&args[..], &["--jobs", "1"]].concat());
    let ob = run_small("solve-static", &b, &[&args[..], &["--jobs", "3"]].concat());
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(ob.status.success(), "{}", stderr(&ob));
    let m = check_manifest(&a);
    for f in m["files"].as_array().unwrap() {
        let name = f["path"].as_str().unwrap();
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());

    let sol: Value = serde_json::from_str(&fs::read_to_string(a.join("static_solution.json")).unwrap()).unwrap();
    let trace = sol["sca_trace"].as_array().unwrap();
    let objectives: Vec<f64> = trace.iter().map(|t| t["objective"].as_f64().unwrap()).collect();
    assert!(objectives.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{objectives:?}");
    assert!(sol["beams"]["total_power"].as_f64().unwrap() <= 0.5 * (1.0 + 1e-6));
}

#[test]
fn mobile_design_and_its_benchmarks() {
    let tmp = tempfile::tempdir().unwrap();
    let common = ["--resolution", "100", "--witness-resolution", "50"];
    let mut objective = std::collections::HashMap::new();
    for bench in ["isac", "sf", "fhf", "comm-only"] {
        let out = tmp.path().join(bench);
        let o = run_small("solve-mobile", &out, &[&common[..], &["--benchmark", bench]].concat());
        assert!(o.status.success(), "{bench}: {}", stderr(&o));
        check_manifest(&out);
        let sol: Value = serde_json::from_str(&fs::read_to_string(out.join("mobile_solution.json")).unwrap()).unwrap();
        objective.insert(bench, sol["objective"].as_f64().unwrap());
        let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
        let rows: Vec<&str> = traj.lines().skip(1).collect();
        assert_eq!(rows.len(), 6, "{bench}");
        assert!(rows[0].ends_with(",0.0,150.0") && rows[5].ends_with(",400.0,150.0"), "{bench}: {traj}");
    }
    assert!(objective["isac"] >= objective["sf"] - 1e-6, "{objective:?}");
    assert!(objective["isac"] >= objective["fhf"] - 1e-6, "{objective:?}");
    assert!(objective["comm-only"] >= objective["isac"] - 1e-6, "{objective:?}");

    let out = tmp.path().join("maps");
    let o = run_small("solve-mobile", &out, &[&common[..], &["--maps", "1,6", "--map-resolution", "100"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(&out);
    assert_eq!(header(out.join("beampattern_slot_6.csv")), "kind,index,x,y,tx_gain,rx_gain,rate");
}

#[test]
fn sensing_only_mobile_design() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = run_small("solve-mobile", &out, &["--benchmark", "sensing-only", "--witness-resolution", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(&out);
    assert!(header(out.join("rate_trace.csv")).contains("min_normalized_gain"));
}

#[test]
fn threshold_sweep_keeps_the_requested_order() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let o = run_small("sweep", &out, &["--values", "-50,off,-43", "--resolution", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(&out);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    let gammas: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(gammas, ["-50.0", "", "-43.0"]);
    let rate = |r: &csv::StringRecord| r[4].parse::<f64>().unwrap();
    // Looser thresholds never lose rate.
    assert!(rate(&rows[1]) >= rate(&rows[0]) - 1e-6);
    assert!(rate(&rows[0]) >= rate(&rows[2]) - 1e-6);
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let args = ["--resolution", "100"];
    assert!(run_small("feasibility", &out, &args).status.success());
    let o = run_small("feasibility", &out, &args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let o = run_small("feasibility", &out, &[&args[..], &["--force"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(&out);

    fs::write(out.join("notes.txt"), "mine").unwrap();
    let o = run_small("feasibility", &out, &[&args[..], &["--force"]].concat());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn bad_scenarios_exit_one_and_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(SMALL).unwrap();

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, text.replace("altitude_m = 100.0", "altitude_m = 100.0\nheight = 3.0")).unwrap();
    let o = run(&["feasibility", "--scenario", unknown.to_str().unwrap(), "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("height"), "{}", stderr(&o));

    let zero = tmp.path().join("zero.toml");
    fs::write(&zero, text.replace("num_antennas = 4", "num_antennas = 0")).unwrap();
    let o = run(&["feasibility", "--scenario", zero.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("num_antennas"), "{}", stderr(&o));

    let o = run(&["feasibility", "--scenario", "/nonexistent.toml", "--out", tmp.path().join("c").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["solve-static", "--gamma-dbm", "loud", "--out", tmp.path().join("d").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("loud"), "{}", stderr(&o));
}
