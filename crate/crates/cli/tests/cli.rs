use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_subsetlab"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error record");
    serde_json::from_str(line).unwrap()
}

/// Monthly panel 1990:1..2019:12 with the three targets and eight other series.
fn write_fredmd(path: &Path) {
    let names = ["PAYEMS", "INDPRO", "CPIAUCSL", "X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8"];
    let codes = [5, 5, 6, 1, 2, 5, 5, 2, 1, 5, 6];
    let mut s = format!("sasdate,{}\nTransform:,{}\n", names.join(","), codes.map(|c| c.to_string()).join(","));
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut noise = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut levels = [100.0f64; 11];
    for i in 0..360 {
        let (year, month) = (1990 + i / 12, i % 12 + 1);
        let common = noise();
        for (j, v) in levels.iter_mut().enumerate() {
            *v *= 1.0 + 0.002 + 0.01 * (0.6 * common + noise()) * (1.0 + j as f64 / 10.0);
        }
        let row: Vec<String> = levels.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&format!("{month}/1/{year},{}\n", row.join(",")));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn unknown_solver_is_rejected_with_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["simulate", "--solvers", "fs,lars", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let rec = stderr_record(&o);
    assert_eq!(rec["error"], "ConfigInvalid");
    assert_eq!(rec["field"], "solvers");
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--config", dir.path().join("none.ini").to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert_eq!(stderr_record(&o)["error"], "InputMissing");

    let out = dir.path().join("bt");
    let o = run(&["backtest", "--fredmd", dir.path().join("none.csv").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_record(&o)["error"], "InputMissing");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "error");
    assert_eq!(manifest["error"]["error"], "InputMissing");
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.ini");
    fs::write(&cfg, "seed = 11\n[simulate]\nsetting = 2\nt = 60\nreps = 2\n").unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--solvers", "fs,iht", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["status"], "ok");
        assert_eq!(manifest["seed"], 11);
        csvs.push(fs::read(out.join("setting2-t60.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.pop().unwrap()).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("method,completed,failures,mspe_mean,mspe_se"));
    assert!(header.contains("dc_mean"));
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["FS", "IHT"]);
}

#[test]
fn oracle_check_flags_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["oracle-check", "--p", "15", "--k", "3", "--seeds", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("oracle_check.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 20 * 4);
    assert!(rows.iter().all(|r| r.contains(",true,") || r.contains(",false,")));
}

#[test]
fn ingest_and_backtest_on_a_synthetic_vintage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("vintage.csv");
    write_fredmd(&data);
    let out = dir.path().join("ingest");
    let o = run(&["ingest", "--fredmd", data.to_str().unwrap(), "--target", "emp,cpi", "--horizon", "1,12", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for stem in ["emp_h1", "emp_h12", "cpi_h1", "cpi_h12"] {
        assert!(out.join(format!("{stem}.csv")).is_file());
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(format!("{stem}.json"))).unwrap()).unwrap();
        assert_eq!(m["checksum"].as_str().unwrap().len(), 64);
    }

    let mut summaries = Vec::new();
    for name in ["bt1", "bt2"] {
        let out = dir.path().join(name);
        let o = run(&[
            "backtest",
            "--fredmd",
            data.to_str().unwrap(),
            "--target",
            "ip",
            "--horizon",
            "3",
            "--solvers",
            "ar,fa,fs,smc",
            "--set",
            "backtest.first_target=2015:01",
            "--set",
            "backtest.last_target=2015:04",
            "--set",
            "smc.particles=60",
            "--set",
            "k_max=4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let forecasts = fs::read_to_string(out.join("ip_forecasts.csv")).unwrap();
        assert_eq!(forecasts.lines().count(), 1 + 4 * 4);
        let summary = fs::read_to_string(out.join("ip_summary.csv")).unwrap();
        let ar = summary.lines().find(|l| l.contains(",AR,")).unwrap();
        assert!(ar.ends_with(",1.000000"), "{ar}");
        assert!(fs::read_to_string(out.join("backtest.md")).unwrap().contains("h=3"));
        summaries.push((forecasts, summary));
    }
    assert_eq!(summaries[0], summaries[1]);
}
