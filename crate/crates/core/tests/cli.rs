mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpdmon"))
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture(name: &str) -> String {
    root().join("tests/fixtures").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dpdmon")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Keys must match exactly; numeric values within a relative 1e-9 so the
/// goldens survive libm differences across platforms.
fn assert_matches_golden(out: &str, golden: &str) {
    let want = kv(&std::fs::read_to_string(root().join("tests/golden").join(golden)).unwrap());
    let got = kv(out);
    assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>(), "{golden}");
    for (k, w) in &want {
        let g = &got[k];
        match (w.parse::<f64>(), g.parse::<f64>()) {
            (Ok(a), Ok(b)) if w.contains('e') => {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{golden} {k}: {g} vs {w}")
            }
            _ => assert_eq!(g, w, "{golden} {k}"),
        }
    }
}

#[test]
fn fit_goldens() {
    let o = run(&["fit", "--series", &fixture("garch_clean.csv"), "--alpha", "0.2"]);
    assert!(o.status.success());
    assert_matches_golden(&stdout(&o), "fit_garch_clean_a02.txt");

    let o = run(&["fit", "--series", &fixture("garch_clean.csv"), "--alpha", "0.1", "--engine", "normal"]);
    assert!(o.status.success());
    assert_matches_golden(&stdout(&o), "fit_normal_a01.txt");

    let o = run(&["fit", "--series", &fixture("prices.csv"), "--prices", "--alpha", "0.3"]);
    assert!(o.status.success());
    assert_matches_golden(&stdout(&o), "fit_prices_a03.txt");
}

#[test]
fn alpha_zero_is_qmle() {
    let o = run(&["fit", "--series", &fixture("garch_clean.csv"), "--alpha", "0"]);
    assert!(o.status.success());
    let m = kv(&stdout(&o));
    let ours = ["theta.omega", "theta.alpha1", "theta.beta1"].map(|k| m[k].parse::<f64>().unwrap());
    let x = dpdmon::series::read_series(Path::new(&fixture("garch_clean.csv"))).unwrap().values;
    let oracle = common::qmle_garch11(&x);
    for i in 0..3 {
        assert!((ours[i] - oracle[i]).abs() < 1e-5, "{i}: {} vs {}", ours[i], oracle[i]);
    }
}

#[test]
fn fit_writes_round_trippable_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.txt");
    let o = run(&["fit", "--series", &fixture("garch_clean.csv"), "--alpha", "0.2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let written = std::fs::read_to_string(&out).unwrap();
    assert_matches_golden(&written, "fit_garch_clean_a02.txt");
    let x = dpdmon::series::read_series(Path::new(&fixture("garch_clean.csv"))).unwrap().values;
    let f = dpdmon::fit(
        &x,
        dpdmon::Engine::Garch { p: 1, q: 1 },
        dpdmon::Alpha::new(0.2).unwrap(),
        &dpdmon::FitOptions::default(),
    )
    .unwrap();
    let m = kv(&written);
    assert_eq!(m["theta.omega"].parse::<f64>().unwrap(), f.theta.to_vec()[0]);
    assert_eq!(m["objective"].parse::<f64>().unwrap(), f.objective);
}

#[test]
fn monitor_detects_shift_and_writes_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    let o = run(&[
        "monitor",
        "--hist",
        &fixture("monitor_hist.csv"),
        "--stream",
        &fixture("monitor_stream_shift.csv"),
        "--alpha",
        "0.2",
        "--path-out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_matches_golden(&out, "monitor_shift_a02.txt");
    let stop: usize = kv(&out)["stop_k"].parse().unwrap();

    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["k", "detector", "boundary", "alarm"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), stop);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), i + 1);
        let d: f64 = r[1].parse().unwrap();
        let b: f64 = r[2].parse().unwrap();
        assert_eq!(r[3] == *"1", d > b);
        assert_eq!(r[3] == *"1", i + 1 == stop);
    }
}

#[test]
fn monitor_without_alarm_exits_3() {
    let o = run(&[
        "monitor",
        "--hist",
        &fixture("monitor_hist.csv"),
        "--stream",
        &fixture("monitor_stream_clean.csv"),
        "--alpha",
        "0.2",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(kv(&stdout(&o))["verdict"], "no_change");
}

#[test]
fn retro_golden_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stat.csv");
    let o = run(&[
        "retro",
        "--series",
        &fixture("retro_change.csv"),
        "--alpha",
        "0.2",
        "--critical",
        "3.0",
        "--path-out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_matches_golden(&out, "retro_change_a02.txt");
    let m = kv(&out);
    let stat: f64 = m["statistic"].parse().unwrap();
    let cp: usize = m["change_point"].parse().unwrap();

    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let vals: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(vals.len(), 1000);
    let (i, max) = vals.iter().enumerate().fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    assert_eq!(max, stat);
    assert_eq!(i + 1, cp);
}

#[test]
fn retro_mc_critical_value_is_seeded() {
    let args = [
        "retro",
        "--series",
        &fixture("retro_change.csv"),
        "--alpha",
        "0.2",
        "--seed",
        "11",
        "--grid",
        "1000",
        "--reps",
        "10000",
    ];
    let dir = tempfile::tempdir().unwrap();
    let a = bin().args(args).env("DPD_CACHE_DIR", dir.path()).output().unwrap();
    let b = bin().args(args).env("DPD_CACHE_DIR", dir.path()).output().unwrap();
    assert!(a.status.success() && b.status.success());
    let (ma, mb) = (kv(&stdout(&a)), kv(&stdout(&b)));
    assert_eq!(ma["critical"], mb["critical"]);
    let c = dpdmon::critval::critical_value_retro(3, 0.05, 1000, 10_000, 11).unwrap();
    assert_eq!(ma["critical"].parse::<f64>().unwrap(), c);
    assert!(dir.path().join("retro_critval.txt").exists());
}

#[test]
fn critval_prints_tabulated_constant() {
    let o = run(&["critval", "--d", "3", "--level", "0.05"]);
    assert!(o.status.success());
    let b: f64 = kv(&stdout(&o))["b"].parse().unwrap();
    assert!((b - 2.632).abs() < 1e-3);
    assert_eq!(b, dpdmon::critval::critical_value_sequential(3, 0.05).unwrap());
}

#[test]
fn usage_and_input_errors_exit_2() {
    let cases: Vec<Vec<String>> = vec![
        vec!["critval".into(), "--d".into(), "0".into(), "--level".into(), "0.05".into()],
        vec!["critval".into(), "--d".into(), "3".into(), "--level".into(), "1.5".into()],
        vec!["fit".into(), "--series".into(), fixture("malformed.csv"), "--alpha".into(), "0.2".into()],
        vec!["fit".into(), "--series".into(), fixture("does_not_exist.csv"), "--alpha".into(), "0.2".into()],
        vec!["fit".into(), "--series".into(), fixture("garch_clean.csv"), "--alpha".into(), "2".into()],
        vec!["retro".into(), "--series".into(), fixture("retro_change.csv"), "--alpha".into(), "0.2".into()],
        vec!["bogus".into()],
    ];
    for args in cases {
        let o = bin().args(&args).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["fit", "--series", &fixture("malformed.csv"), "--alpha", "0.2"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(
        &cfg,
        "theta0 = [0.2, 0.2, 0.6]\nn_hist = 500\nalpha_grid = [0.2]\nseed = 1\ncontamination = \"H\"\np_outlier = 1.2\n",
    )
    .unwrap();
    let o = run(&["experiment", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, "theta0 = [0.2, 0.2, 0.6]\nn_hist = 500\nalpha_grid = [0.2]\nseed = 1\nunknown = 3\n").unwrap();
    let o = run(&["experiment", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_smoke_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(
        &cfg,
        "theta0 = [0.2, 0.2, 0.6]\ntheta1 = [0.5, 0.2, 0.6]\nk_star = 50\nn_hist = 500\nhorizon = 300\nalpha_grid = [0.0, 0.2]\nreps = 20\nseed = 99\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--reps",
            "12",
        ]);
        assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
        let files: Vec<String> = ["rejection.csv", "delay.csv", "report.txt"]
            .iter()
            .map(|f| {
                let text = std::fs::read_to_string(out.join(f)).unwrap();
                text.lines().filter(|l| !l.starts_with("out_dir=")).collect::<Vec<_>>().join("\n")
            })
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let rej = &outputs[0][0];
    assert!(rej.starts_with("alpha,k,rejection_rate"));
    assert_eq!(rej.lines().count(), 1 + 2 * 300);
    assert!(outputs[0][2].contains("reps = 12"));
}
