use std::fmt::Write;

use tiersplat::sim::StrategyComparison;

/// Strategy table: one row per strategy, one column per edge.
pub fn comparison(cmp: &StrategyComparison) -> String {
    let edges: Vec<_> = cmp
        .even
        .per_edge
        .keys()
        .chain(cmp.arp.per_edge.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<10} {:>12}", "strategy", "end_to_end");
    for e in &edges {
        let _ = write!(out, " {:>10}", format!("edge {e}"));
    }
    out.push('\n');
    for (name, row) in [("even", &cmp.even), ("adaptive", &cmp.arp)] {
        let _ = write!(out, "{name:<10} {:>12.3}", row.end_to_end);
        for e in &edges {
            match row.per_edge.get(e) {
                Some(t) => {
                    let _ = write!(out, " {:>10.3}", t.total);
                }
                None => {
                    let _ = write!(out, " {:>10}", "-");
                }
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "reduction  {:>11.2}%", 100.0 * cmp.reduction);
    out
}
