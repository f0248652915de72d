//! Wald's sequential test, first fed by hand and then run against a model.

use rand::Rng;
use rand::SeedableRng;
use stasmc::fixtures::bernoulli;
use stasmc::smc::{hypothesis_test, HypothesisParams, PathProperty, Shape, Sprt};
use stasmc::sta::network::CompiledNetwork;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = HypothesisParams { delta: 0.05, ..HypothesisParams::new(0.5) };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for p in [0.2, 0.8] {
        let mut t = Sprt::new(params)?;
        let verdict = loop {
            if let Some(v) = t.push(rng.random_bool(p)) {
                break v;
            }
        };
        println!("p = {p} vs p0 = 0.5: {verdict} after {} samples", t.used());
    }

    let net = CompiledNetwork::compile(&bernoulli(0.9))?;
    let prop = PathProperty::parse(Shape::Eventually, 1.0, "coin.heads")?;
    for p0 in [0.8, 0.95] {
        let r = hypothesis_test(&net, &prop, HypothesisParams::new(p0), 3)?;
        println!("Pr(heads) >= {p0}: {} ({} runs)", r.verdict().expect("verdict"), r.runs_used);
    }
    Ok(())
}
