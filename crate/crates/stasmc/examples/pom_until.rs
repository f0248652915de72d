//! The bounded-until pattern as blocks: evaluate it on one trace, check it
//! against the direct LTL semantics, then search all short input traces
//! for a counterexample. With a path argument the block network is also
//! written as JSON for `stasmc verify-pom`.

use stasmc::ltl::ltl_oracle;
use stasmc::pom::{build_pattern, eval, verify_bounded, BoundedResult, Pattern, StepTrace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pattern = Pattern::UntilWithin { p: "p".into(), q: "q".into(), t: 3 };
    let net = build_pattern(&pattern, 10.0)?;
    println!("{} blocks, {} delays", net.blocks.len(), net.count("delay"));

    let p = [true, true, false, false, false, false];
    let q = [false, false, true, false, false, false];
    let input = StepTrace::new(10.0).with_bools("p", &p).with_bools("q", &q);
    let (trace, report) = eval(&net, &input)?;
    let formula = pattern.formula().expect("until is in the LTL fragment");
    let oracle = ltl_oracle(&formula, &[("p".to_string(), p.to_vec()), ("q".to_string(), q.to_vec())].into())?;
    println!("{formula}: blocks say {}, oracle says {oracle}", report.valid());
    trace.write_csv(std::io::stdout())?;

    match verify_bounded(&net, 4, 1 << 12)? {
        BoundedResult::Counterexample { trace, report } => {
            println!("counterexample, first failure at step {}", report.failures[0].step);
            trace.write_csv(std::io::stdout())?;
        }
        other => println!("{other:?}"),
    }
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, net.to_json())?;
        println!("wrote {path}");
    }
    Ok(())
}
