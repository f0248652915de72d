//! Every constraint kind run over one hand-written stream, plus an m-of-k
//! reading of the periodic verdicts. Pass a CSV path (columns `time_ms`,
//! `tag`, optional `id`) to monitor that stream instead.

use stasmc::tadl::{
    aggregate, apply_weakly_hard, run_monitor, ConstraintSpec, EventStream, Relation, StreamEvent, TimingExpr, WeaklyHard,
};

fn demo_stream() -> EventStream {
    let mut s = EventStream::default();
    for (i, t) in [50.0, 102.0, 151.0, 213.0, 250.0].into_iter().enumerate() {
        s.push(StreamEvent::new(t, "tick"));
        s.push(StreamEvent::with_id(t + 1.0, "in", i as u64));
        s.push(StreamEvent::with_id(t + 4.0 + i as f64, "out", i as u64));
    }
    s.events.sort_by(|a, b| a.time.total_cmp(&b.time));
    s
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stream = match std::env::args().nth(1) {
        Some(p) => EventStream::read_csv(std::fs::File::open(p)?)?,
        None => demo_stream(),
    };
    let specs = [
        ConstraintSpec::Execution { input: "in".into(), output: "out".into(), lower: 0.0, upper: 6.0 },
        ConstraintSpec::EndToEnd { source: "in".into(), target: "out".into(), lower: 1.0, upper: 10.0 },
        ConstraintSpec::Synchronization { members: vec!["tick".into(), "in".into()], tolerance: 2.0 },
        ConstraintSpec::PeriodicCumulative { event: "tick".into(), period: 50.0, jitter: 5.0 },
        ConstraintSpec::PeriodicNoncumulative { event: "tick".into(), period: 50.0, jitter: 5.0 },
        ConstraintSpec::Sporadic { event: "tick".into(), min: 40.0 },
        ConstraintSpec::Comparison {
            lhs: TimingExpr::Wcet { input: "in".into(), output: "out".into() },
            rel: Relation::Le,
            rhs: TimingExpr::Const(6.0),
        },
    ];
    for spec in &specs {
        let occ = run_monitor(spec, &stream)?;
        let v: Vec<String> = occ.iter().map(|o| o.verdict.to_string()).collect();
        println!("{:<23} {:?}  {}", spec.kind(), aggregate(&occ), v.join(" "));
    }

    let occ = run_monitor(&specs[4], &stream)?;
    let verdicts: Vec<_> = occ.iter().map(|o| o.verdict).collect();
    for (m, k) in [(3, 3), (2, 3)] {
        println!("noncumulative as ({m},{k}): {:?}", apply_weakly_hard(&verdicts, WeaklyHard::new(m, k)?));
    }
    Ok(())
}
