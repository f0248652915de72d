//! Expected peak braking energy of the leader over 3 s, and how it moves
//! when an energy coefficient is doubled. Only the braking
//! coefficient should matter; the config refuses changes that break
//! b > d > c > a.

use stasmc::cas::{build_platoon, PlatoonConfig};
use stasmc::smc::Query;
use stasmc::sta::network::CompiledNetwork;

fn mean(cfg: &PlatoonConfig, seed: u64) -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let net = CompiledNetwork::compile(&build_platoon(cfg)?.network)?;
    let q = Query::parse("E[<=3000;100](max: energy1.braking_energy)")?;
    Ok(q.execute(&net, &Default::default(), seed)?.mean().expect("mean"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = PlatoonConfig::default();
    let (m, hw) = mean(&base, 1)?;
    println!("defaults: {m:.1} +- {hw:.1} J (limit 30000)");
    for (name, bump) in [
        ("a", (|c: &mut PlatoonConfig| c.energy_coeffs.a *= 2.0) as fn(&mut PlatoonConfig)),
        ("b", |c| c.energy_coeffs.b *= 2.0),
        ("d", |c| c.energy_coeffs.d *= 2.0),
    ] {
        let mut cfg = base.clone();
        bump(&mut cfg);
        let (m2, _) = mean(&cfg, 1)?;
        println!("2{name}: {m2:.1} J ({:+.1})", m2 - m);
    }
    Ok(())
}
