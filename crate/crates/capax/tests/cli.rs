use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn capax(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capax"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

const BEC: &str = "0.6,0.4,0\n0,0.4,0.6\n";

#[test]
fn help_and_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(capax(&["--help"], d.path()).status.code(), Some(0));
    assert_eq!(capax(&["dmc", "solve", "--help"], d.path()).status.code(), Some(0));
    let out = capax(&["dmc", "solve", "--channel", "ch.csv", "--eps", "-1"], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(capax(&["dmc", "solve", "--channel", "ch.csv", "--frobnicate"], d.path()).status.code(), Some(2));
    assert_eq!(capax(&["dmc", "solve", "--channel", "ch.csv", "--eps", "1e-3", "--iters", "10"], d.path()).status.code(), Some(2));
    assert_eq!(capax(&["poisson", "bounds", "--A", "0", "--eta", "1"], d.path()).status.code(), Some(2));
    assert_eq!(capax(&[], d.path()).status.code(), Some(2));
}

#[test]
fn bec_run_reports_interval() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "bec.csv", BEC);
    let out = capax(&["dmc", "solve", "--channel", "bec.csv", "--eps", "1e-4"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["command"], "dmc solve");
    assert!(r["version"].is_string());
    assert!(r["wall_time_s"].as_f64().unwrap() >= 0.0);
    let lower = r["result"]["lower"].as_f64().unwrap();
    let upper = r["result"]["upper"].as_f64().unwrap();
    assert!(lower <= 0.6 && 0.6 <= upper);
}

#[test]
fn bad_row_is_malformed_input() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "bad.csv", "0.5,0.5\n0.5,0.4\n");
    let out = capax(&["dmc", "solve", "--channel", "bad.csv"], d.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));
    write(d.path(), "junk.csv", "0.5,abc\n");
    assert_eq!(capax(&["dmc", "ba", "--channel", "junk.csv"], d.path()).status.code(), Some(3));
    assert_eq!(capax(&["dmc", "ba", "--channel", "missing.csv"], d.path()).status.code(), Some(3));
}

#[test]
fn require_apriori_without_slater_point() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.toml", "moments = [0.0]\nradii = [1e-9]\nsupport_interval = [0.0, 1.0]\n");
    let out = capax(&["maxent", "solve", "--config", "m.toml", "--require-apriori"], d.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("certificate unavailable"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.toml", "moments = [0.3]\nradii = [0.01]\nsupport_interval = [0.0, 1.0]\nmoment = 1\n");
    assert_eq!(capax(&["maxent", "solve", "--config", "m.toml"], d.path()).status.code(), Some(3));
}

#[test]
fn trace_csv_and_atomic_report() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "bsc.csv", "0.89,0.11\n0.11,0.89\n");
    let out = capax(
        &["dmc", "solve", "--channel", "bsc.csv", "--iters", "2000", "--trace", "t.csv", "--out", "r.json"],
        d.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["trace"], "t.csv");
    let text = std::fs::read_to_string(d.path().join("t.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,upper,lower,gap"));
    let mut last_k = 0;
    let mut n = 0;
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
        assert!(v[0] as usize > last_k);
        last_k = v[0] as usize;
        assert!((v[3] - (v[1] - v[2])).abs() <= 1e-12);
        n += 1;
    }
    assert!(n > 0);
    let out = capax(
        &["dmc", "solve", "--channel", "bsc.csv", "--iters", "100", "--trace", "no/such/dir/t.csv"],
        d.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn report_round_trip_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "bsc.csv", "0.8,0.2\n0.3,0.7\n");
    let a = report(&capax(&["dmc", "solve", "--channel", "bsc.csv", "--iters", "500"], d.path()));
    let b = report(&capax(&["dmc", "solve", "--channel", "bsc.csv", "--iters", "500"], d.path()));
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["input"], b["input"]);
    std::fs::write(d.path().join("prev.json"), serde_json::to_vec(&a).unwrap()).unwrap();
    let c = report(&capax(&["dmc", "solve", "--channel", "prev.json", "--iters", "500"], d.path()));
    assert_eq!(a["input"]["channel"], c["input"]["channel"]);
    assert_eq!(a["result"], c["result"]);
}

#[test]
fn ba_and_poisson_commands() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "bsc.csv", "0.89,0.11\n0.11,0.89\n");
    let r = report(&capax(&["dmc", "ba", "--channel", "bsc.csv", "--iters", "500"], d.path()));
    let i = r["result"]["mutual_information"].as_f64().unwrap();
    assert!((i - 0.500084).abs() < 1e-5);
    let out = capax(&["poisson", "bounds", "--A", "1", "--eta", "1", "--M", "16", "--iters", "500"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    let res = &r["result"];
    assert!(res["lower"].as_f64().unwrap() <= res["upper"].as_f64().unwrap());
    assert!(res["lapidoth_moser_lower"].is_number());
    assert_eq!(res["m"], 16);
    assert_eq!(capax(&["poisson", "bounds", "--A", "1", "--eta", "0", "--M", "4"], d.path()).status.code(), Some(2));
}

#[test]
fn kernel_and_maxent_configs() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "k.toml",
        "input_grid = [0.0, 0.5, 1.0]\nrows = [[0.8, 0.6, 0.2], [0.15, 0.3, 0.5], [0.05, 0.1, 0.3]]\niterations = 1000\n",
    );
    let out = capax(&["kernel", "bounds", "--config", "k.toml"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert!(r["result"]["lower"].as_f64().unwrap() <= r["result"]["upper"].as_f64().unwrap());
    write(d.path(), "m.toml", "moments = [1.0]\nradii = [0.05]\nsupport_points = [0.0, 1.0, 2.5]\n");
    let out = capax(&["maxent", "solve", "--config", "m.toml", "--eps", "0.01"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let res = report(&out)["result"].clone();
    let up = res["entropy_upper"].as_f64().unwrap();
    let lo = res["entropy_lower"].as_f64().unwrap();
    assert!(lo <= up && up - lo <= 0.01);
}

#[test]
fn closure_commands_write_csv() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "c.toml",
        "k1_per_time = 1.0\nk2_per_time = 10.0\nm0_molecules = 10\nd0_molecules = 0\nt_end_time = 0.1\ndt_time = 0.01\n",
    );
    let out = capax(&["closure", "run", "--config", "c.toml", "--csv", "traj.csv"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.path().join("traj.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,M1,M2,zeta"));
    assert_eq!(text.lines().count(), 12);
    let out = capax(&["closure", "ssa", "--config", "c.toml", "--traj", "500", "--seed", "3", "--grid", "5"], d.path());
    assert_eq!(out.status.code(), Some(0));
    let a = report(&out)["result"].clone();
    let b = report(&capax(&["closure", "ssa", "--config", "c.toml", "--traj", "500", "--seed", "3", "--grid", "5"], d.path()))["result"].clone();
    assert_eq!(a, b);
}
