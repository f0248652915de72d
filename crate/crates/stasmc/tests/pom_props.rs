use proptest::prelude::*;
use stasmc::ltl::{ltl_oracle, BoolTrace};
use stasmc::pom::{build_pattern, eval, BlockKind, BlockNetwork, Pattern, StepTrace};

fn pattern(kind: u8, t: usize) -> Pattern {
    match kind {
        0 => Pattern::AlwaysWithin { p: "p".into(), t },
        1 => Pattern::EventuallyWithin { p: "p".into(), t },
        _ => Pattern::UntilWithin { p: "p".into(), q: "q".into(), t },
    }
}

fn traces() -> impl Strategy<Value = (u8, usize, Vec<bool>, Vec<bool>)> {
    (0u8..3, 1usize..=16).prop_flat_map(|(k, t)| {
        (t + 2..=64).prop_flat_map(move |n| {
            (Just(k), Just(t), prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn patterns_agree_with_ltl((kind, t, p, q) in traces()) {
        let pat = pattern(kind, t);
        let net = build_pattern(&pat, 10.0).unwrap();
        let tr: BoolTrace = [("p".to_string(), p), ("q".to_string(), q)].into_iter().collect();
        let (_, rep) = eval(&net, &StepTrace::from_bools(10.0, &tr)).unwrap();
        let want = ltl_oracle(&pat.formula().unwrap(), &tr).unwrap();
        prop_assert_eq!(rep.valid(), want);
    }

    #[test]
    fn extender_covers_its_input(x in prop::collection::vec(any::<bool>(), 1..64), n in 1usize..10) {
        let mut net = BlockNetwork::default().input("x");
        net.add("e", BlockKind::Extender { steps: n }, &["x"]);
        let (tr, _) = eval(&net, &StepTrace::new(10.0).with_bools("x", &x)).unwrap();
        let e = tr.bools("e").unwrap();
        prop_assert!(x.iter().zip(&e).all(|(a, b)| !a || *b));
    }

    #[test]
    fn within_implies_falls_only_right_after_a_duration(
        a in prop::collection::vec(any::<bool>(), 1..64),
        o in prop::collection::vec(any::<bool>(), 64),
    ) {
        let mut net = BlockNetwork::default().input("a").input("o");
        net.add("w", BlockKind::WithinImplies, &["a", "o"]);
        let o = &o[..a.len()];
        let (tr, _) = eval(&net, &StepTrace::new(10.0).with_bools("a", &a).with_bools("o", o)).unwrap();
        let w = tr.bools("w").unwrap();
        for k in 0..a.len() {
            if !w[k] {
                prop_assert!(k > 0 && a[k - 1] && !a[k]);
                let start = (0..k).rev().take_while(|&j| a[j]).last().unwrap();
                prop_assert!(!o[start..k].iter().any(|&x| x));
            }
        }
    }
}
