use super::*;
use crate::selector::RequestType::*;

fn op(kind: OpKind, addr: u8, req: RequestType) -> ScriptOp {
    ScriptOp { kind, addr, req }
}

fn small(features: Features, alphabet: Vec<Vec<ScriptOp>>) -> CheckConfig {
    CheckConfig { n_cores: alphabet.len(), n_addresses: 1, features, alphabet: Some(alphabet), ..Default::default() }
}

#[test]
fn single_core_loads_only_is_a_handful() {
    // Initial state, request in flight, response in flight, filled: four
    // vectors (budget 1).
    let cfg = CheckConfig { ops_per_core: 1, ..small(Features::BASELINE, vec![vec![op(OpKind::Load, 0, ReqV)]]) };
    let r = explore(&cfg).unwrap();
    assert!(r.is_clean(), "{r:?}");
    assert_eq!(r.states, 4);
}

#[test]
fn racing_ownership_requests_serialize() {
    let a = vec![op(OpKind::Store, 0, ReqO)];
    let r = explore(&small(Features::BASELINE, vec![a.clone(), a])).unwrap();
    assert!(r.is_clean(), "{:?}", r.violations);
}

#[test]
fn frontier_order_does_not_change_counts() {
    let cfg = CheckConfig { n_addresses: 1, features: Features::PRED, ..Default::default() };
    let bfs = explore(&cfg).unwrap();
    let dfs = explore(&CheckConfig { depth_first: true, ..cfg }).unwrap();
    assert_eq!(bfs.states, dfs.states);
    assert_eq!(bfs.search_states, dfs.search_states);
}

#[test]
fn baseline_ratio_is_one() {
    let cfg = CheckConfig { n_addresses: 1, ops_per_core: 1, ..Default::default() };
    let rows = compare_state_counts(&cfg, &[Features::BASELINE]).unwrap();
    assert_eq!(rows[1].ratio, 1.0);
    assert!(format_csv(&rows).starts_with("config,states"));
}

#[test]
fn specialized_variants_stay_close_to_baseline() {
    let cfg = CheckConfig { n_addresses: 1, ops_per_core: 1, ..Default::default() };
    let rows = compare_state_counts(&cfg, &[Features::FWD, Features::PRED]).unwrap();
    for row in &rows {
        assert!(row.result.is_clean(), "{}", row.features.label());
        assert!(row.ratio > 0.75 && row.ratio < 1.25, "{} {}", row.features.label(), row.ratio);
    }
    assert_ne!(rows[1].result.states, rows[0].result.states);
}

#[test]
fn skipped_revoke_breaks_single_owner() {
    let cfg = CheckConfig {
        n_addresses: 1,
        mutations: Mutations { skip_revoke: true, ..Default::default() },
        ..small(Features::BASELINE, vec![vec![op(OpKind::Store, 0, ReqO)], vec![op(OpKind::Store, 0, ReqO)]])
    };
    let r = explore(&cfg).unwrap();
    let v = r.violation(Invariant::SingleOwner).expect("detected");
    let m = minimize_counterexample(&cfg, v);
    assert!(m.trace.len() <= 12, "{:?}", m.trace);
    assert!(replay_violates(&cfg, &m.trace, m.invariant).is_some());
}

#[test]
fn skipped_sharer_invalidation_is_detected() {
    let cfg = CheckConfig {
        mutations: Mutations { skip_sharer_invalidate: true, ..Default::default() },
        ..small(Features::BASELINE, vec![vec![op(OpKind::Load, 0, ReqS)], vec![op(OpKind::Store, 0, ReqO)]])
    };
    let r = explore(&cfg).unwrap();
    assert!(r.violation(Invariant::SharedOwnedExclusion).is_some(), "{:?}", r.violations);
}

#[test]
fn dropped_retry_deadlocks() {
    let own = op(OpKind::Store, 0, ReqO);
    let fwd = op(OpKind::Store, 0, ReqWTfwd);
    let cfg = CheckConfig {
        mutations: Mutations { drop_nack_retry: true, ..Default::default() },
        ..small(Features::FWD, vec![vec![own], vec![own], vec![fwd]])
    };
    let r = explore(&cfg).unwrap();
    assert!(r.deadlocks > 0);
    assert!(r.violation(Invariant::Deadlock).is_some());
}

#[test]
fn minimal_counterexample_is_kept() {
    let cfg = CheckConfig {
        mutations: Mutations { skip_sharer_invalidate: true, ..Default::default() },
        ..small(Features::BASELINE, vec![vec![op(OpKind::Load, 0, ReqS)], vec![op(OpKind::Store, 0, ReqO)]])
    };
    let v = explore(&cfg).unwrap().violation(Invariant::SharedOwnedExclusion).unwrap().clone();
    let once = minimize_counterexample(&cfg, &v);
    let twice = minimize_counterexample(&cfg, &once);
    assert_eq!(once.trace, twice.trace);
    assert!(once.trace.len() <= v.trace.len());
}

#[test]
fn irrelevant_load_is_removed() {
    let cfg = CheckConfig {
        n_cores: 3,
        mutations: Mutations { skip_sharer_invalidate: true, ..Default::default() },
        ..small(
            Features::BASELINE,
            vec![vec![op(OpKind::Load, 0, ReqS)], vec![op(OpKind::Store, 0, ReqO)], vec![op(OpKind::Load, 0, ReqV)]],
        )
    };
    let v = explore(&cfg).unwrap().violation(Invariant::SharedOwnedExclusion).unwrap().clone();
    // A complete load by core 2 in front of the real counterexample.
    let model = Model::new(&cfg);
    let mut padded = vec![Action::Issue { core: 2, op: 0 }];
    let mut s = model.apply(&model.initial(), &padded[0]).unwrap().0;
    while let Some(m) = s.net.first().cloned() {
        padded.push(Action::Deliver(m.clone()));
        s = model.apply(&s, &Action::Deliver(m)).unwrap().0;
    }
    assert_eq!(padded.len(), 3);
    padded.extend(v.trace.iter().cloned());
    let m = minimize_counterexample(&cfg, &CheckViolation { trace: padded, ..v });
    assert!(!m.trace.iter().any(|a| matches!(a, Action::Issue { core: 2, .. })), "{:?}", m.trace);
}

#[test]
fn rejects_out_of_range_configs() {
    assert!(explore(&CheckConfig { n_cores: 4, ..Default::default() }).is_err());
    let bad = small(Features::BASELINE, vec![vec![op(OpKind::Store, 0, ReqWTfwd)]]);
    assert!(explore(&bad).is_err());
}

#[test]
fn budget_exhaustion_is_reported() {
    let cfg = CheckConfig { state_budget: 50, ..Default::default() };
    let r = explore(&cfg).unwrap();
    assert!(r.budget_exceeded.is_some());
    assert!(!r.is_clean());
}

#[test]
fn two_word_lines_are_clean() {
    for features in [Features::BASELINE, Features::PRED] {
        let cfg = CheckConfig { n_addresses: 2, words_per_line: 2, ops_per_core: 1, features, ..Default::default() };
        let r = explore(&cfg).unwrap();
        assert!(r.is_clean(), "{}: {:?}", features.label(), r.violations.first());
        assert!(r.states > 100);
    }
}
