use proptest::prelude::*;
use stasmc::fixtures::bernoulli;
use stasmc::smc::{
    estimate_with, hypothesis_with, EstimateParams, HypothesisParams, Query, Sprt, Threshold, Verdict,
};
use stasmc::sta::network::CompiledNetwork;

fn query() -> impl Strategy<Value = String> {
    (0u32..2, 1u32..100, 1u32..1000, prop::sample::select(vec!["x > 2", "a.b && !c", "true"]), 0u32..3).prop_map(
        |(shape, bound, p, pred, test)| {
            let sh = if shape == 0 { "[]" } else { "<>" };
            let t = match test {
                0 => String::new(),
                1 => format!(" >= {}", p as f64 / 1000.0),
                _ => format!(" <= {}", p as f64 / 1000.0),
            };
            format!("Pr[<={bound}]({sh} {pred}){t}")
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chernoff_runs_shrink_with_looser_params(e in 0.01f64..0.3, a in 0.01f64..0.3) {
        let base = EstimateParams { epsilon: e, alpha: a }.runs();
        let wider = EstimateParams { epsilon: e * 1.5, alpha: a };
        let riskier = EstimateParams { epsilon: e, alpha: a * 1.5 };
        prop_assert!(wider.runs() <= base && riskier.runs() <= base);
        prop_assert!(2.0 * (-2.0 * base as f64 * e * e).exp() <= a + 1e-12);
    }

    #[test]
    fn estimate_interval_is_p_hat_plus_minus_epsilon(k in 0usize..=738, seed in any::<u64>()) {
        let params = EstimateParams::default();
        let r = estimate_with(params, seed, &|s| Ok(s.index < k as u64)).unwrap();
        let (lo, hi) = r.interval().unwrap();
        let p_hat = k as f64 / params.runs() as f64;
        prop_assert!((lo - (p_hat - 0.05).max(0.0)).abs() < 1e-12);
        prop_assert!((hi - (p_hat + 0.05).min(1.0)).abs() < 1e-12);
    }

    #[test]
    fn threshold_complement_is_an_involution(p in 0u64..=1_000_000_000) {
        let t = Threshold(p);
        prop_assert_eq!(t.complement().complement(), t);
    }

    #[test]
    fn parse_display_and_dual_round_trip(src in query()) {
        let q = Query::parse(&src).unwrap();
        prop_assert_eq!(Query::parse(&q.to_string()).unwrap(), q.clone());
        if let Ok(d) = q.dualize() {
            prop_assert_eq!(d.dualize().unwrap(), q);
        }
    }

    #[test]
    fn sprt_decides_constant_streams(p0 in 0.05f64..0.9, ok in any::<bool>()) {
        let mut t = Sprt::new(HypothesisParams { delta: 0.04, ..HypothesisParams::new(p0) }).unwrap();
        let v = (0..10_000).find_map(|_| t.push(ok)).unwrap();
        prop_assert_eq!(v, if ok { Verdict::Accepted } else { Verdict::Rejected });
        prop_assert_eq!(t.push(!ok), Some(v));
    }

    #[test]
    fn hypothesis_outcome_depends_only_on_seed(seed in any::<u64>()) {
        let net = CompiledNetwork::compile(&bernoulli(0.5)).unwrap();
        let q = Query::parse("Pr[<=1](<> coin.heads) >= 0.5").unwrap();
        let a = q.execute(&net, &Default::default(), seed).unwrap();
        let b = q.execute(&net, &Default::default(), seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn run_cap_leaves_the_test_undecided() {
    let params = HypothesisParams { max_runs: 50, ..HypothesisParams::new(0.5) };
    let r = hypothesis_with(params, 1, &|s| Ok(s.index % 2 == 0)).unwrap();
    assert_eq!(r.verdict(), Some(Verdict::Undecided));
    assert_eq!(r.runs_used, 50);
}
