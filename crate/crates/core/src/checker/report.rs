//! Renderings of exploration results and state-count comparisons.

use std::fmt::Write as _;

use super::{explore, CheckConfig, ExploreResult, Features};

/// Reachable states of one feature set relative to the first row.
#[derive(Clone, Debug, PartialEq)]
pub struct StateCountRow {
    pub features: Features,
    pub result: ExploreResult,
    pub ratio: f64,
}

/// Explores `base` and each feature variant of it; ratios are relative to
/// `base`.
pub fn compare_state_counts(base: &CheckConfig, variants: &[Features]) -> Result<Vec<StateCountRow>, String> {
    let first = explore(base)?;
    let base_states = first.states as f64;
    let mut rows = vec![StateCountRow { features: base.features, result: first, ratio: 1.0 }];
    for &f in variants {
        let cfg = CheckConfig { features: f, ..base.clone() };
        let r = explore(&cfg)?;
        rows.push(StateCountRow { features: f, ratio: r.states as f64 / base_states, result: r });
    }
    Ok(rows)
}

pub fn format_csv(rows: &[StateCountRow]) -> String {
    let mut s = String::from("config,states,search_states,transitions,violations,deadlocks,max_frontier,ratio\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.4}",
            r.features.label(),
            r.result.states,
            r.result.search_states,
            r.result.transitions,
            r.result.violations.len(),
            r.result.deadlocks,
            r.result.max_frontier,
            r.ratio
        );
    }
    s
}

pub fn format_text(rows: &[StateCountRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} states {:>9} (search {:>9})  ratio {:.3}  violations {}  deadlocks {}  max frontier {}",
            r.features.label(),
            r.result.states,
            r.result.search_states,
            r.ratio,
            r.result.violations.len(),
            r.result.deadlocks,
            r.result.max_frontier
        );
        for v in &r.result.violations {
            let _ = writeln!(s, "  {:?}: {} ({} steps)", v.invariant, v.message, v.trace.len());
            for a in &v.trace {
                let _ = writeln!(s, "    {a}");
            }
        }
        if let Some(f) = r.result.budget_exceeded {
            let _ = writeln!(s, "  state budget exceeded with {f} states on the frontier");
        }
    }
    s
}
