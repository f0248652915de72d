//! Acceptance run: one line per criterion, non-zero exit if any fails.

mod common;

use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stasmc::cas::{build_platoon, PlatoonConfig};
use stasmc::fixtures::{bernoulli, mutex_predicate, mutual_exclusion};
use stasmc::ltl::{ltl_oracle, BoolTrace, Formula};
use stasmc::pom::{build_pattern, Pattern, StepTrace};
use stasmc::sim::{simulate_compiled, RngStream};
use stasmc::smc::{
    estimate_probability, expected_value, hypothesis_test, EstimateParams, Extremum, HypothesisParams, PathProperty, Query,
    QueryOptions, Shape, Verdict,
};
use stasmc::sta::expr::parse_expr;
use stasmc::sta::network::CompiledNetwork;
use stasmc::suite::{run_suite, EntryVerdict, Runner, SuiteOptions};
use stasmc::tadl::{run_monitor, ConstraintSpec, OccVerdict};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn monitor_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0;
    for kind in 0..7 {
        for _ in 0..10_000 {
            let s = common::random_stream(&mut rng, 200);
            let spec = common::random_spec(&mut rng, kind);
            let got: Vec<OccVerdict> = run_monitor(&spec, &s).map_err(|e| e.to_string())?.iter().map(|o| o.verdict).collect();
            if common::tally(&got) != common::tally(&common::oracle(&spec, &s)) {
                return Err(format!("{} disagrees on a stream of {} events", spec.kind(), s.events.len()));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} streams, all agree"))
}

fn estimator_calibration() -> Check {
    let params = EstimateParams { epsilon: 0.05, alpha: 0.05 };
    if params.runs() != 738 {
        return Err(format!("Chernoff run count {} != 738", params.runs()));
    }
    let mut worst = 1.0f64;
    for p in [0.1, 0.3, 0.5, 0.9] {
        let net = CompiledNetwork::compile(&bernoulli(p)).map_err(|e| e.to_string())?;
        let prop = PathProperty::parse(Shape::Eventually, 1.0, "coin.heads").map_err(|e| e.to_string())?;
        let mut hit = 0;
        for trial in 0..200 {
            let (lo, hi) = estimate_probability(&net, &prop, params, trial).map_err(|e| e.to_string())?.interval().unwrap();
            hit += (lo <= p && p <= hi) as usize;
        }
        worst = worst.min(hit as f64 / 200.0);
    }
    if worst >= 0.93 {
        Ok(format!("worst coverage {worst:.3}"))
    } else {
        Err(format!("worst coverage {worst:.3} < 0.93"))
    }
}

fn sprt_error_rates() -> Check {
    let params = HypothesisParams { p0: 0.5, delta: 0.05, alpha: 0.05, beta: 0.05, max_runs: 10_000 };
    let prop = PathProperty::parse(Shape::Eventually, 1.0, "coin.heads").map_err(|e| e.to_string())?;
    let mut rates = vec![];
    for (p, want) in [(0.2, Verdict::Rejected), (0.8, Verdict::Accepted)] {
        let net = CompiledNetwork::compile(&bernoulli(p)).map_err(|e| e.to_string())?;
        let mut right = 0;
        for trial in 0..200 {
            right += (hypothesis_test(&net, &prop, params, trial).map_err(|e| e.to_string())?.verdict() == Some(want)) as usize;
        }
        rates.push(right as f64 / 200.0);
    }
    let msg = format!("p=0.2 rejected {:.3}, p=0.8 accepted {:.3}", rates[0], rates[1]);
    if rates.iter().all(|&r| r >= 0.95) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn block_ltl_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut identity_breaks = 0;
    let mut example = None;
    let n_cases = 10_000;
    for case in 0..n_cases {
        let t = rng.random_range(1..=16);
        let len = rng.random_range(t + 2..=64);
        let p: Vec<bool> = (0..len).map(|_| rng.random_bool(0.6)).collect();
        let q: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
        let tr: BoolTrace = [("p".to_string(), p), ("q".to_string(), q)].into();
        let pat = match case % 3 {
            0 => Pattern::AlwaysWithin { p: "p".into(), t },
            1 => Pattern::EventuallyWithin { p: "p".into(), t },
            _ => Pattern::UntilWithin { p: "p".into(), q: "q".into(), t },
        };
        let net = build_pattern(&pat, 10.0).map_err(|e| e.to_string())?;
        let (_, rep) = net.compile().and_then(|c| c.eval(&StepTrace::from_bools(10.0, &tr))).map_err(|e| e.to_string())?;
        let want = ltl_oracle(&pat.formula().unwrap(), &tr).map_err(|e| e.to_string())?;
        mismatches += (rep.valid() != want || !rep.pending.is_empty()) as usize;
        if let Pattern::UntilWithin { t, .. } = pat {
            let split = Formula::parse(&format!("F[0,{t}] q && G[0,{t}] (!q -> p)")).unwrap();
            if ltl_oracle(&split, &tr).map_err(|e| e.to_string())? != want {
                identity_breaks += 1;
                example.get_or_insert(t);
            }
        }
    }
    let msg = format!(
        "{mismatches} block/LTL mismatches in {n_cases}; until identity broken on {identity_breaks} of {} until cases{}",
        n_cases / 3,
        example.map(|t| format!(" (first at t={t})")).unwrap_or_default()
    );
    if mismatches == 0 && identity_breaks == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn duality() -> Check {
    let net = CompiledNetwork::compile(&mutual_exclusion(3, true)).map_err(|e| e.to_string())?;
    let opts = QueryOptions::default();
    let mut cells = vec![];
    for i in 0..10 {
        let p = 0.05 + 0.1 * i as f64;
        let q = Query::parse(&format!("Pr[<=200]([] {}) >= {p:.2}", mutex_predicate(3))).map_err(|e| e.to_string())?;
        let d = q.dualize().map_err(|e| e.to_string())?;
        let a = q.execute(&net, &opts, 5).map_err(|e| e.to_string())?.verdict();
        let b = d.execute(&net, &opts, 5).map_err(|e| e.to_string())?.verdict();
        if a != b {
            return Err(format!("p={p:.2}: {a:?} vs dual {b:?}"));
        }
        cells.push(format!("{p:.2}:{}", a.unwrap()));
    }
    Ok(cells.join(" "))
}

fn cas_regression() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut counts = vec![];
    for fix in [false, true] {
        let cfg = PlatoonConfig { turn_location_propagation: fix, ..PlatoonConfig::default() };
        let runner = Runner::new(&cfg, &["R23".into()], 23).map_err(|e| e.to_string())?;
        let mut fails = vec![];
        for i in 0..1000 {
            if runner.run(i).map_err(|e| e.to_string())?[0] == stasmc::suite::Outcome::Pass(false) {
                fails.push(i);
            }
        }
        if let Some(&i) = fails.first() {
            let files = runner.export_run(i, dir.path(), "r23").map_err(|e| e.to_string())?;
            let f = std::fs::File::open(&files[1]).map_err(|e| e.to_string())?;
            stasmc::tadl::EventStream::read_csv(f).map_err(|e| e.to_string())?;
        }
        counts.push(fails.len());
    }
    let cfg = PlatoonConfig::default();
    let report = run_suite(&cfg, &SuiteOptions { only: vec!["R23".into()], ..SuiteOptions::new(23) }).map_err(|e| e.to_string())?;
    let v = report.get("R23").unwrap().verdict;
    let msg = format!("fails without fix {}, with fix {}, test {}", counts[0], counts[1], v.as_str());
    if counts[0] >= 1 && counts[1] == 0 && v == EntryVerdict::Satisfied {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn periodic_trigger() -> Check {
    let runner = Runner::new(&PlatoonConfig::default(), &["R27".into()], 27).map_err(|e| e.to_string())?;
    let spec = ConstraintSpec::PeriodicNoncumulative { event: "vd1".into(), period: 50.0, jitter: 10.0 };
    let mut fails = 0;
    let mut occurrences = 0;
    for i in 0..100 {
        let (_, stream) = runner.run_with_stream(i).map_err(|e| e.to_string())?;
        let occ = run_monitor(&spec, &stream).map_err(|e| e.to_string())?;
        occurrences += occ.len();
        fails += occ.iter().filter(|o| o.verdict == OccVerdict::Fail).count();
    }
    let msg = format!("{fails} fails over {occurrences} occurrences in 100 runs");
    if fails == 0 && occurrences > 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn energy() -> Check {
    let mean = |cfg: &PlatoonConfig, seed: u64| -> Result<f64, String> {
        let net = CompiledNetwork::compile(&build_platoon(cfg).map_err(|e| e.to_string())?.network).map_err(|e| e.to_string())?;
        let e = parse_expr("energy1.braking_energy").map_err(|e| e.to_string())?;
        let r = expected_value(&net, 3000.0, 100, Extremum::Max, &e, seed).map_err(|e| e.to_string())?;
        Ok(r.mean().unwrap().0)
    };
    let base = PlatoonConfig::default();
    let mut doubled = base.clone();
    doubled.energy_coeffs.b *= 2.0;
    let m0 = mean(&base, 1)?;
    let mut increases = 0;
    for seed in 1..=5 {
        increases += (mean(&doubled, seed)? > mean(&base, seed)?) as usize;
    }
    let msg = format!("mean {m0:.1} J, doubling b raises the mean on {increases} of 5 seeds");
    if m0 < 30_000.0 && increases == 5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str, jobs: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let st = Command::new(env!("CARGO_BIN_EXE_stasmc"))
            .args(["suite", "--seed", "9", "--jobs", jobs, "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if st.status.code() != Some(0) {
            return Err(format!("suite exited {:?}: {}", st.status.code(), String::from_utf8_lossy(&st.stderr)));
        }
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let a = run("a.csv", "1")?;
    let b = run("b.csv", "1")?;
    let c = run("c.csv", "8")?;
    let rows = a.iter().filter(|&&b| b == b'\n').count();
    if a == b && a == c {
        Ok(format!("{rows} lines identical across runs and job counts"))
    } else {
        Err(format!("reports differ (same jobs {}, jobs 1 vs 8 {})", a == b, a == c))
    }
}

fn non_interference() -> Check {
    let cfg = PlatoonConfig::default();
    let bare = CompiledNetwork::compile(&build_platoon(&cfg).map_err(|e| e.to_string())?.network).map_err(|e| e.to_string())?;
    let observed = Runner::new(&cfg, &[], 10).map_err(|e| e.to_string())?;
    let extra = observed.net.instances.len() - bare.instances.len();
    for seed in 0..100 {
        let a = simulate_compiled(&bare, 3000.0, RngStream::new(seed, 0), &[]).map_err(|e| e.to_string())?;
        let b = simulate_compiled(&observed.net, 3000.0, RngStream::new(seed, 0), &[]).map_err(|e| e.to_string())?;
        if a.model_events() != b.model_events() {
            return Err(format!("seed {seed}: event lists differ"));
        }
    }
    Ok(format!("100 seeds identical with {extra} observers attached"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("monitor/oracle equivalence", monitor_oracle_equivalence),
        ("estimator calibration", estimator_calibration),
        ("SPRT error rates", sprt_error_rates),
        ("block/LTL equivalence", block_ltl_equivalence),
        ("duality", duality),
        ("CAS regression R23", cas_regression),
        ("periodic trigger R27", periodic_trigger),
        ("energy R48", energy),
        ("determinism", determinism),
        ("observer non-interference", non_interference),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
