//! Small networks with known answers.

use crate::sta::model::{Edge, Literal, Location, Network, Template, VarKind};

/// One coin flipped at time 0: `coin.heads` with probability `p`.
pub fn bernoulli(p: f64) -> Network {
    assert!(p > 0.0 && p < 1.0, "p must lie in (0, 1)");
    Network::default()
        .with_template(
            Template::new("Coin", "flip")
                .clock("u")
                .loc(Location { invariant: Some("u <= 0".into()), ..Location::new("flip") })
                .loc(Location::new("heads"))
                .loc(Location::new("tails"))
                .edge(Edge::new("flip", "heads").weight(p))
                .edge(Edge::new("flip", "tails").weight(1.0 - p)),
        )
        .instance("coin", "Coin", vec![])
}

/// Test-and-set lock shared by `n` processes, each with a `cs` location.
/// The unsafe variant flips a fair coin at time 0; on heads every process
/// ignores the lock.
pub fn mutual_exclusion(n: usize, safe: bool) -> Network {
    let enter = if safe { "lock == 0" } else { "lock == 0 || broken" };
    let wait = if safe { "lock != 0" } else { "lock != 0 && !broken" };
    let proc_ = Template::new("Proc", "idle")
        .param("pid", VarKind::Int)
        .clock("c")
        .loc(Location { invariant: Some("c <= 10".into()), ..Location::new("idle") })
        .loc(Location { invariant: Some("c <= 5".into()), ..Location::new("cs") })
        .edge(Edge::new("idle", "cs").guard(format!("c >= 1 && ({enter})")).update("lock = pid, c = 0"))
        .edge(Edge::new("idle", "idle").guard(format!("c >= 1 && {wait}")).update("c = 0"))
        .edge(Edge::new("cs", "idle").guard("c >= 1").update("lock = 0, c = 0"));
    let mut net = Network::default()
        .global("lock", VarKind::Int, Literal::Int(0))
        .global("broken", VarKind::Bool, Literal::Bool(false))
        .with_template(proc_);
    if !safe {
        net = net
            .with_template(
                Template::new("Fault", "start")
                    .clock("u")
                    .loc(Location { invariant: Some("u <= 0".into()), ..Location::new("start") })
                    .loc(Location::new("on"))
                    .loc(Location::new("off"))
                    .edge(Edge::new("start", "on").update("broken = true"))
                    .edge(Edge::new("start", "off")),
            )
            .instance("fault", "Fault", vec![]);
    }
    for i in 1..=n {
        net = net.instance(&format!("p{i}"), "Proc", vec![Literal::Int(i as i64)]);
    }
    net
}

/// `no two processes in cs at once`, as a query predicate.
pub fn mutex_predicate(n: usize) -> String {
    let mut parts = vec![];
    for i in 1..=n {
        for j in i + 1..=n {
            parts.push(format!("!(p{i}.cs && p{j}.cs)"));
        }
    }
    if parts.is_empty() {
        "true".into()
    } else {
        parts.join(" && ")
    }
}
