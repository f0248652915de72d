//! Same-lane check for the second follower with the turn-location fix off
//! and on. Every seeded run is replayed under both settings; the first
//! failing run is exported for offline inspection.
//!
//!     cargo run --release --example platoon_r23_refinement -- 300 out/

use std::path::PathBuf;

use stasmc::cas::PlatoonConfig;
use stasmc::suite::{Outcome, Runner};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let runs: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "r23_counterexample".into()));
    for fix in [false, true] {
        let cfg = PlatoonConfig { turn_location_propagation: fix, ..PlatoonConfig::default() };
        let runner = Runner::new(&cfg, &["R23".into()], 2024)?;
        let mut fails = vec![];
        for i in 0..runs {
            if runner.run(i)?[0] == Outcome::Pass(false) {
                fails.push(i);
            }
        }
        println!("fix {fix}: {} of {runs} runs fail {:?}", fails.len(), &fails[..fails.len().min(8)]);
        if let Some(&i) = fails.first() {
            for p in runner.export_run(i, &dir, &format!("r23_run{i}"))? {
                println!("  wrote {}", p.display());
            }
        }
    }
    Ok(())
}
