use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stasmc::pom::{BlockKind, BlockNetwork};

fn stasmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stasmc")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_bound_zero_writes_initial_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = stasmc(&["simulate", "--seed", "1", "--bound", "0", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("events.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_ms,instance,location,event_kind,channel"));
    assert!(lines.all(|l| l.starts_with("0,") && l.contains(",init,")));
}

#[test]
fn simulate_is_byte_identical_and_energy_grows() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = stasmc(&["simulate", "--seed", "5", "--run", "3", "--watch", "energy1.total_energy", "--out", p(d)]);
        assert_eq!(code(&o), 0);
    }
    for f in ["events.csv", "watch_0.csv", "taps.csv", "manifest.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mut r = csv::Reader::from_path(a.join("watch_0.csv")).unwrap();
    let vals: Vec<f64> = r.records().map(|x| x.unwrap()[1].parse().unwrap()).collect();
    assert!(vals.len() > 2);
    assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-6));
    assert!(vals.last().unwrap() > &0.0);
}

#[test]
fn query_kinds() {
    let o = stasmc(&["query", "--seed", "3", "--kind", "estimate", "--bound", "100", "true"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("estimate [0.9500;1.0000] runs 738 seed 3"), "{}", stdout(&o));

    let o = stasmc(&["query", "--seed", "3", "--kind", "test", "--set", "comm_loss_prob=0", "--bound", "500", "true"]);
    assert!(stdout(&o).starts_with("test accepted"), "{}", stdout(&o));

    let dir = tempfile::tempdir().unwrap();
    let (row, hist) = (dir.path().join("row.csv"), dir.path().join("hist.csv"));
    let o = stasmc(&[
        "query", "--seed", "3", "--kind", "expected", "--runs", "20", "energy1.braking_energy",
        "--out", p(&row), "--histogram", p(&hist), "--bins", "5",
    ]);
    assert_eq!(code(&o), 0);
    let mean: f64 = stdout(&o).split_whitespace().nth(1).unwrap().split(';').next().unwrap().parse().unwrap();
    assert!(mean > 0.0 && mean < 30_000.0);
    let mut r = csv::Reader::from_path(&row).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["query_id", "kind", "lo", "hi", "verdict", "runs_used", "seed"]);
    let rec = r.records().next().unwrap().unwrap();
    let (lo, hi): (f64, f64) = (rec[2].parse().unwrap(), rec[3].parse().unwrap());
    assert!(lo <= mean && mean <= hi && &rec[5] == "20");
    let mut h = csv::Reader::from_path(&hist).unwrap();
    let counts: Vec<usize> = h.records().map(|x| x.unwrap()[2].parse().unwrap()).collect();
    assert_eq!((counts.len(), counts.iter().sum()), (5, 20));
}

#[test]
fn suite_exit_codes_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r27.csv");
    let o = stasmc(&["suite", "--seed", "4", "--only", "R27", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let report = fs::read_to_string(&out).unwrap();
    assert_eq!(report.lines().count(), 2);

    let exp = dir.path().join("export");
    let o = stasmc(&[
        "suite", "--seed", "4", "--only", "R23", "--set", "turn_location_propagation=false", "--export", p(&exp),
    ]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("violated"));
    let files: Vec<_> = fs::read_dir(&exp).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(files.iter().any(|f| f.starts_with("R23_run") && f.ends_with("_taps.csv")), "{files:?}");
}

#[test]
fn verify_pom_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let save = |name: &str, net: &BlockNetwork| {
        let path = dir.path().join(name);
        fs::write(&path, net.to_json()).unwrap();
        path
    };
    let mut taut = BlockNetwork::default().input("a");
    taut.add("na", BlockKind::Not, &["a"]);
    taut.add("either", BlockKind::Or, &["a", "na"]);
    taut.add("objective", BlockKind::ProofObjective, &["either"]);
    let taut = save("taut.json", &taut);

    let mut bare = BlockNetwork::default().input("a").input("b").input("c").input("d");
    bare.add("objective", BlockKind::ProofObjective, &["a"]);
    let bare = save("bare.json", &bare);

    let cex = dir.path().join("cex.csv");
    let o = stasmc(&["verify-pom", p(&taut), "--horizon", "4", "--out", p(&cex)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = stasmc(&["verify-pom", p(&bare), "--horizon", "3", "--out", p(&cex)]);
    assert_eq!(code(&o), 1);
    assert!(fs::read_to_string(&cex).unwrap().lines().count() > 1);
    let o = stasmc(&["verify-pom", p(&bare), "--horizon", "10", "--budget", "1000", "--out", p(&cex)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn monitor_reads_exported_taps() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stasmc(&["simulate", "--seed", "2", "--out", p(dir.path())])), 0);
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"kind": "periodic_noncumulative", "event": "vd1", "period": 50, "jitter": 10}"#).unwrap();
    let verdicts = dir.path().join("verdicts.csv");
    let taps = dir.path().join("taps.csv");
    let o = stasmc(&["monitor", "--spec", p(&spec), p(&taps), "--out", p(&verdicts)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("NoFail"));
    assert!(fs::read_to_string(&verdicts).unwrap().lines().count() > 10);

    fs::write(&spec, r#"{"kind": "sporadic", "event": "vd1", "min": 80}"#).unwrap();
    assert_eq!(code(&stasmc(&["monitor", "--spec", p(&spec), p(&taps)])), 1);
}

#[test]
fn bad_configuration_exits_2() {
    assert_eq!(code(&stasmc(&["query", "--kind", "estimate", "--set", "no_such_key=1", "true"])), 2);
    assert_eq!(code(&stasmc(&["query", "--kind", "estimate", "--set", "initial_gear=99", "true"])), 2);
    assert_eq!(code(&stasmc(&["query", "--kind", "estimate", "--seed", "1", "nonsense ++"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "initial_gap = \"far\"\n").unwrap();
    assert_eq!(code(&stasmc(&["suite", "--config", p(&cfg), "--only", "R1"])), 2);
}
