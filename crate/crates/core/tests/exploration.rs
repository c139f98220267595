use anondesa::explore::{explore, ExploreError, Limits};
use anondesa::sched::execute_schedule;
use anondesa::*;

#[test]
fn v1_two_by_three_is_clean_for_both_policies() {
    for policy in [ContenderPolicy::FixedIndex, ContenderPolicy::SeededRandom] {
        for perm_seed in 0..3 {
            let cfg = Config::new(2, 3, Variant::V1)
                .with_policy(policy)
                .with_seed(perm_seed + 5);
            let r = explore(&cfg, &Setup::random(2, 3, perm_seed), Limits::default()).unwrap();
            assert!(r.passed(), "{policy:?} {perm_seed}: {:?}", r.violations);
            assert!(r.terminals >= 2);
        }
    }
}

#[test]
fn exploration_is_deterministic() {
    let cfg = Config::new(2, 3, Variant::V2);
    let setup = Setup::random(2, 3, 4);
    let a = explore(&cfg, &setup, Limits::default()).unwrap();
    let b = explore(&cfg, &setup, Limits::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.passed(), "{:?}", a.violations);
}

#[test]
fn literal_second_phase_can_strand_a_laggard() {
    let cfg = Config::new(2, 3, Variant::V2).with_mode(V2Mode::Literal);
    let setup = Setup::random(2, 3, 4);
    let r = explore(&cfg, &setup, Limits::default()).unwrap();
    assert!(!r.passed());
    let v = &r.violations[0];
    assert_eq!(v.check, "liveness");
    assert!(v.detail.contains("LaggardScan"), "{}", v.detail);

    // From the reported state no process can ever finish line 07.
    let mut trace = Trace::default();
    let state = execute_schedule(&cfg, &setup, &v.schedule, &mut trace).unwrap();
    assert!(!state.all_done());
}

#[test]
fn skipping_the_desa_broadcast_is_caught_with_a_counterexample() {
    let cfg = Config::new(2, 3, Variant::V1).with_mutant(Mutant::SkipDesaBroadcast);
    let setup = Setup::identity(2, 3);
    let r = explore(&cfg, &setup, Limits::default()).unwrap();
    assert!(!r.passed());
    assert!(!r.violations[0].schedule.is_empty());
}

#[test]
fn state_cap_reports_incomplete() {
    let cfg = Config::new(2, 3, Variant::V2);
    let limits = Limits {
        max_states: 100,
        ..Limits::default()
    };
    let r = explore(&cfg, &Setup::identity(2, 3), limits).unwrap();
    assert!(!r.complete);
    assert!(!r.passed());
    assert_eq!(r.states_visited, 100);
}

#[test]
fn infeasible_and_oversized_inputs_are_rejected() {
    let cfg = Config::new(2, 4, Variant::V1);
    assert!(matches!(
        explore(&cfg, &Setup::identity(2, 4), Limits::default()),
        Err(ExploreError::Config(_))
    ));
    let cfg = Config::new(3, 25, Variant::V1);
    assert!(matches!(
        explore(&cfg, &Setup::identity(3, 25), Limits::default()),
        Err(ExploreError::TooLarge { .. })
    ));
}
