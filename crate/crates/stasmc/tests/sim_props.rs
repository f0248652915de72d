use proptest::prelude::*;
use stasmc::cas::{build_platoon, PlatoonConfig};
use stasmc::fixtures::mutual_exclusion;
use stasmc::sim::{simulate_compiled, RngStream, Run};
use stasmc::sta::model::{Edge, Location, Network, Template};
use stasmc::sta::network::{CompiledNetwork, StateEnv};

fn run(net: &CompiledNetwork, bound: f64, seed: u64) -> Run {
    simulate_compiled(net, bound, RngStream::new(seed, 0), &[]).unwrap()
}

/// Every snapshot satisfies `pred`, evaluated in the query scope.
fn holds_everywhere(net: &CompiledNetwork, r: &Run, pred: &str) -> bool {
    let e = net.compile_str(pred).unwrap();
    r.snapshots.iter().all(|st| e.eval_bool(&StateEnv { net, state: st, inst: None, dt: 0.0 }).unwrap())
}

fn platoon() -> CompiledNetwork {
    CompiledNetwork::compile(&build_platoon(&PlatoonConfig::default()).unwrap().network).unwrap()
}

/// One loop with two weighted self-edges, taken every time unit.
fn coin_loop(w: (f64, f64)) -> CompiledNetwork {
    let t = Template::new("Loop", "s")
        .clock("x")
        .loc(Location { invariant: Some("x <= 1".into()), ..Location::new("s") })
        .loc(Location { invariant: Some("x <= 0".into()), ..Location::new("a") })
        .loc(Location { invariant: Some("x <= 0".into()), ..Location::new("b") })
        .edge(Edge::new("s", "a").guard("x >= 1").weight(w.0).update("x = 0"))
        .edge(Edge::new("s", "b").guard("x >= 1").weight(w.1).update("x = 0"))
        .edge(Edge::new("a", "s"))
        .edge(Edge::new("b", "s"));
    CompiledNetwork::compile(&Network::default().with_template(t).instance("l", "Loop", vec![])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn time_never_goes_back(seed in any::<u64>()) {
        for net in [platoon(), CompiledNetwork::compile(&mutual_exclusion(3, false)).unwrap()] {
            let r = run(&net, 1500.0, seed);
            prop_assert!(r.events.windows(2).all(|w| w[0].time <= w[1].time));
            prop_assert!(r.events.last().is_none_or(|e| e.time <= r.end) && r.end <= 1500.0);
        }
    }

    #[test]
    fn invariants_hold_after_every_event(seed in any::<u64>()) {
        let net = CompiledNetwork::compile(&mutual_exclusion(3, true)).unwrap();
        let r = run(&net, 200.0, seed);
        for p in ["p1", "p2", "p3"] {
            let inv = format!("({p}.idle && {p}.c <= 10.000001) || ({p}.cs && {p}.c <= 5.000001)");
            prop_assert!(holds_everywhere(&net, &r, &inv));
        }
        let net = platoon();
        let r = run(&net, 1500.0, seed);
        prop_assert!(holds_everywhere(&net, &r, "veh1.t <= 60.000001 && veh2.t <= 60.000001 && veh3.t <= 60.000001"));
    }

    #[test]
    fn runs_are_a_function_of_the_seed(seed in any::<u64>(), index in 0u64..1000) {
        let net = platoon();
        let a = simulate_compiled(&net, 800.0, RngStream::new(seed, index), &[]).unwrap();
        let b = simulate_compiled(&net, 800.0, RngStream::new(seed, index), &[]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lock_is_never_shared_when_safe(seed in any::<u64>()) {
        let net = CompiledNetwork::compile(&mutual_exclusion(3, true)).unwrap();
        let r = run(&net, 300.0, seed);
        prop_assert!(holds_everywhere(&net, &r, &stasmc::fixtures::mutex_predicate(3)));
    }
}

#[test]
fn branch_frequencies_stay_within_three_sigma() {
    let net = coin_loop((3.0, 7.0));
    let a = net.templates[0].location("a").unwrap();
    let p = 0.3;
    let mut inside = 0;
    let seeds = 200;
    for seed in 0..seeds {
        let r = run(&net, 1000.0, seed);
        let picks: Vec<bool> = r
            .events
            .iter()
            .filter(|e| e.participants[0].from == net.templates[0].location("s").unwrap())
            .map(|e| e.participants[0].to == a)
            .collect();
        let n = picks.len() as f64;
        let freq = picks.iter().filter(|&&x| x).count() as f64 / n;
        if (freq - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt() {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.99 * seeds as f64, "{inside} of {seeds}");
}
