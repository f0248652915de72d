//! A lamp that stays on for 2 to 5 time units, then off for a random
//! exponential spell. Prints the event log and a watched clock as CSV.

use stasmc::sim::{simulate, write_signal_csv};
use stasmc::sta::model::{Edge, Location, Network, RateSpec, Template};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lamp = Template::new("Lamp", "on")
        .clock("x")
        .clock("burn")
        .loc(Location { invariant: Some("x <= 5".into()), ..Location::new("on") })
        .loc(Location {
            exit_rate: 0.5,
            rates: [("burn".to_string(), RateSpec::Const(0.0))].into(),
            ..Location::new("off")
        })
        .edge(Edge::new("on", "off").guard("x >= 2").update("x = 0"))
        .edge(Edge::new("off", "on").update("x = 0"));
    let net = Network::default().with_template(lamp).instance("lamp", "Lamp", vec![]);

    let run = simulate(&net, 20.0, 7, &["lamp.burn"])?;
    for ev in &run.events {
        let who: Vec<_> = ev.participants.iter().map(|p| p.name.as_str()).collect();
        println!("t={:7.3}  {}", ev.time, who.join(","));
    }
    println!();
    write_signal_csv(&run.signals[0], std::io::stdout())?;
    Ok(())
}
