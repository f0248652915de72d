//! Chernoff-bounded estimation on a biased coin, then the same query
//! written as text.

use stasmc::fixtures::bernoulli;
use stasmc::smc::{estimate_probability, EstimateParams, PathProperty, Query, QueryOptions};
use stasmc::sta::network::CompiledNetwork;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.3);
    let net = CompiledNetwork::compile(&bernoulli(p))?;

    let params = EstimateParams { epsilon: 0.05, alpha: 0.05 };
    println!("runs needed: {}", params.runs());
    let prop = PathProperty::parse(stasmc::smc::Shape::Eventually, 1.0, "coin.heads")?;
    let r = estimate_probability(&net, &prop, params, 42)?;
    let (lo, hi) = r.interval().expect("interval");
    println!("{prop}: [{lo:.3}, {hi:.3}] (true p = {p})");

    let q = Query::parse("Pr[<=1](<> coin.tails)")?;
    let r = q.execute(&net, &QueryOptions::default(), 42)?;
    println!("{q}: {:?}", r.interval().expect("interval"));
    Ok(())
}
