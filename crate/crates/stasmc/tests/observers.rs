//! Observer automata attached to the platoon against the offline monitor
//! run on the same simulated events.

use stasmc::cas::{build_platoon, PlatoonConfig};
use stasmc::sim::{simulate_compiled, RngStream};
use stasmc::sta::network::CompiledNetwork;
use stasmc::tadl::{aggregate, attach, run_monitor, Aggregate, ConstraintSpec, EventBinding, EventStream, TapSet};

const BOUND: f64 = 3000.0;

/// (runs where the observer failed, runs compared)
fn compare(spec: &ConstraintSpec, binds: &[(&str, &str, Option<&str>)], runs: u64) -> (usize, u64) {
    let base = build_platoon(&PlatoonConfig::default()).unwrap().network;
    let bindings: Vec<EventBinding> = binds
        .iter()
        .map(|(tag, ch, p)| match p {
            Some(p) => EventBinding::channel(tag, ch).with_payload(p),
            None => EventBinding::channel(tag, ch),
        })
        .collect();
    let (net, handle) = attach(spec, &base, &bindings, "mon").unwrap();
    let net = CompiledNetwork::compile(&net).unwrap();
    let mut taps = TapSet::default();
    for (tag, ch, p) in binds {
        taps.add(&net, tag, ch, *p).unwrap();
    }
    let watch = vec![("fail".to_string(), net.compile_str(&handle.fail_predicate).unwrap())];
    let mut online_fails = 0;
    for i in 0..runs {
        let run = simulate_compiled(&net, BOUND, RngStream::new(77, i), &watch).unwrap();
        let online = run.signals[0].points.iter().any(|&(_, v)| v > 0.5);
        let mut stream = EventStream { end: Some(run.end), ..EventStream::default() };
        for (k, ev) in run.events.iter().enumerate() {
            taps.record(&net, &run.snapshots[k + 1], ev, &mut stream).unwrap();
        }
        let offline = aggregate(&run_monitor(spec, &stream).unwrap()) == Aggregate::SomeFail;
        assert_eq!(online, offline, "run {i} of {spec:?}");
        online_fails += online as usize;
    }
    (online_fails, runs)
}

#[test]
fn periodic_trigger_observers_agree() {
    let loose = ConstraintSpec::PeriodicNoncumulative { event: "vd1".into(), period: 50.0, jitter: 10.0 };
    assert_eq!(compare(&loose, &[("vd1", "vd_1", None)], 20).0, 0);
    let tight = ConstraintSpec::PeriodicCumulative { event: "vd2".into(), period: 50.0, jitter: 4.0 };
    let (fails, runs) = compare(&tight, &[("vd2", "vd_2", None)], 20);
    assert!(fails > 0 && fails as u64 <= runs);
}

#[test]
fn execution_observer_agrees() {
    let spec = ConstraintSpec::Execution { input: "in".into(), output: "out".into(), lower: 55.0, upper: 95.0 };
    let (fails, _) = compare(&spec, &[("in", "cd_in_1", None), ("out", "cd_ok_1", None)], 20);
    assert!(fails > 0);
}

#[test]
fn sporadic_observer_agrees() {
    let spec = ConstraintSpec::Sporadic { event: "c".into(), min: 300.0 };
    compare(&spec, &[("c", "cin_2", None)], 20);
}

#[test]
fn synchronization_observer_agrees() {
    let spec = ConstraintSpec::Synchronization { members: vec!["p".into(), "v".into()], tolerance: 60.0 };
    compare(&spec, &[("p", "rd_pos_2", None), ("v", "rd_vel_2", None)], 20);
}

#[test]
fn end_to_end_observer_agrees_by_id() {
    let spec = ConstraintSpec::EndToEnd { source: "s".into(), target: "t".into(), lower: 300.0, upper: 700.0 };
    compare(&spec, &[("s", "cout_1", Some("cseq_1")), ("t", "cout_2", Some("used_2"))], 20);
}

#[test]
fn comparison_has_no_observer() {
    let spec = ConstraintSpec::Comparison {
        lhs: stasmc::tadl::TimingExpr::Const(1.0),
        rel: stasmc::tadl::Relation::Le,
        rhs: stasmc::tadl::TimingExpr::Const(2.0),
    };
    let base = build_platoon(&PlatoonConfig::default()).unwrap().network;
    assert!(attach(&spec, &base, &[], "mon").is_err());
}
