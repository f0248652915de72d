//! A hypothesis test and its dual give the same verdict on a safe lock,
//! and both flag the unsafe one.

use stasmc::fixtures::{mutex_predicate, mutual_exclusion};
use stasmc::smc::{HypothesisParams, Query, QueryOptions};
use stasmc::sta::network::CompiledNetwork;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let opts = QueryOptions { hypothesis: HypothesisParams { delta: 0.01, ..HypothesisParams::new(0.5) }, ..Default::default() };
    for safe in [true, false] {
        let net = CompiledNetwork::compile(&mutual_exclusion(3, safe))?;
        println!("{} lock", if safe { "safe" } else { "unsafe" });
        for p in [0.15, 0.55, 0.95] {
            let q = Query::parse(&format!("Pr[<=100]([] {}) >= {p}", mutex_predicate(3)))?;
            let d = q.dualize()?;
            let a = q.execute(&net, &opts, 9)?.verdict().expect("verdict");
            let b = d.execute(&net, &opts, 9)?.verdict().expect("verdict");
            println!("  p={p}: {a} / {b}    {d}");
        }
    }
    Ok(())
}
