use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_est-entropy"))
}

fn cfg(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn field(text: &str, name: &str) -> String {
    let header: Vec<&str> = text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    data_rows(text)[0][k].clone()
}

fn write_tmp(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn dubin_bound_reproduces_feasibility_value() {
    let out = run(&["bound", "--config", cfg("dubin.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let gc: f64 = field(&text, "gc").parse().unwrap();
    assert!((gc - 0.0098).abs() < 2e-4, "{gc}");
    assert_eq!(field(&text, "feasible"), "true");
    // floats carry nine significant digits
    assert_eq!(field(&text, "gc"), format!("{gc:.8e}"));
}

#[test]
fn closed_system_bound_nears_limit() {
    let out = run(&["bound", "--config", cfg("closed.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let go: f64 = field(&String::from_utf8(out.stdout).unwrap(), "go").parse().unwrap();
    let limit = 30.0 / std::f64::consts::LN_2;
    assert!((go - limit).abs() <= 0.1 * limit, "{go}");
}

#[test]
fn infeasible_bound_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_tmp(
        dir.path(),
        "bad.cfg",
        "[system]\nname = integrator\n[budget]\neta = 1\n[accuracy]\neps = 0.1\n[bound]\ngain_x = 0.5\ngain_u = 1\ntp = 0.5\ndu = 0.1\n",
    );
    let out = run(&["bound", "--config", c.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(field(&String::from_utf8(out.stdout).unwrap(), "feasible"), "false");
}

#[test]
fn malformed_config_exits_64_without_output() {
    let dir = tempfile::tempdir().unwrap();
    for body in ["[system]\nname dubin\n", "[system]\ncolour = red\n", "[nowhere]\n", "[accuracy]\neps = abc\n"] {
        let c = write_tmp(dir.path(), "bad.cfg", body);
        let out = run(&["bound", "--config", c.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(64), "{body:?}");
        assert!(out.stdout.is_empty());
    }
    assert_eq!(run(&["bound", "--config", "/no/such/file"]).status.code(), Some(64));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(64));
}

#[test]
fn estimate_round_trip_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let c = cfg("integrator.cfg");
    let out = run(&["estimate", "--config", c.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("estimate.csv")).unwrap();
    let err: f64 = field(&summary, "sup_error").parse().unwrap();
    assert!(err <= 0.1);
    assert_eq!(field(&summary, "bit_rate"), field(&summary, "go"));

    let stream = out_dir.join("stream.txt");
    let dec_dir = dir.path().join("dec");
    let out = run(&[
        "estimate",
        "--config",
        c.to_str().unwrap(),
        "--stream",
        stream.to_str().unwrap(),
        "--out",
        dec_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let z = fs::read_to_string(out_dir.join("z.csv")).unwrap();
    let decoded = fs::read_to_string(dec_dir.join("decoded.csv")).unwrap();
    assert_eq!(data_rows(&decoded), data_rows(&z));

    let text = fs::read_to_string(&stream).unwrap();
    let cut = write_tmp(dir.path(), "cut.txt", &text[..text.len() - 2]);
    let out = run(&["estimate", "--config", c.to_str().unwrap(), "--stream", cut.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
    let prefix = data_rows(&String::from_utf8(out.stdout).unwrap());
    assert!(!prefix.is_empty() && prefix.len() < data_rows(&z).len());
    assert_eq!(prefix[..], data_rows(&z)[..prefix.len()]);
}

#[test]
fn infeasible_estimate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_tmp(
        dir.path(),
        "bad.cfg",
        "[system]\nname = integrator\n[accuracy]\neps = 0.1\n[bound]\ntp = 0.01\ndu = 0.1\ndx = 1.0\n",
    );
    let out = run(&["estimate", "--config", c.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn outputs_are_deterministic() {
    let c = cfg("integrator.cfg");
    let a = run(&["estimate", "--config", c.to_str().unwrap(), "--seed", "3"]);
    let b = run(&["estimate", "--config", c.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let d = run(&["estimate", "--config", c.to_str().unwrap(), "--seed", "4"]);
    assert_ne!(a.stdout, d.stdout);
    let s1 = run(&["switched", "--config", cfg("switched.cfg").to_str().unwrap()]);
    let s2 = run(&["switched", "--config", cfg("switched.cfg").to_str().unwrap()]);
    assert_eq!(s1.stdout, s2.stdout);
}

#[test]
fn separated_family_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["separated", "--config", cfg("separated.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(field(&text, "count"), "1024");
    assert_eq!(field(&text, "separated"), "true");

    let c = write_tmp(
        dir.path(),
        "small.cfg",
        "[accuracy]\neps = 0.1\n[separated]\nhorizon = 0.6\nmax_switches = 2\ndump_gaps = true\n",
    );
    let od = dir.path().join("o");
    let out = run(&["separated", "--config", c.to_str().unwrap(), "--out", od.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let gaps = fs::read_to_string(od.join("gaps.csv")).unwrap();
    assert_eq!(data_rows(&gaps).len(), 4);

    let c = write_tmp(dir.path(), "cap.cfg", "[separated]\nmax_switches = 10\nmax_members = 8\n");
    assert_eq!(run(&["separated", "--config", c.to_str().unwrap()]).status.code(), Some(64));
}

#[test]
fn switched_bound_is_reported() {
    let out = run(&["switched", "--config", cfg("switched.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let bound: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("# bound = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((bound - 17.86).abs() < 0.05, "{bound}");
    let rows = data_rows(&text);
    let last: f64 = rows.last().unwrap()[1].parse().unwrap();
    assert!((last - 1.0).abs() < 1e-9);
}

#[test]
fn sweep_slopes() {
    let out = run(&["sweep", "--config", cfg("sweep.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rows = data_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 8);
    let slope = |r: &Vec<String>| r[5].parse::<f64>().unwrap();
    assert!((slope(&rows[3]) - 10.0 / 3.0).abs() < 1e-6);
    assert!((slope(&rows[7]) - 20.0 / 3.0).abs() < 1e-6);
    assert_eq!(rows[0][3], "0");
}
