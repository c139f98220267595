use anondesa::desa::{DesaPc, StepError};
use anondesa::sched::run_quiet;
use anondesa::trace::NullRecorder;
use anondesa::verify::check_safety;
use anondesa::*;
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_process_reads_every_value() {
    let cfg = Config::new(3, 5, Variant::V1);
    for seed in 0..20u64 {
        let setup = Setup::random(3, 5, seed);
        let (mut state, outcome) = run_quiet(&cfg, &setup, Scheduler::Random(seed)).unwrap();
        assert_eq!(outcome, Outcome::Completed);
        for i in 0..3 {
            let y = i + 1;
            assert_eq!(state.appl_read(i, y, &mut NullRecorder).unwrap(), None);
            state
                .appl_write(i, y, 100 + i as u64, &mut NullRecorder)
                .unwrap();
        }
        for j in 0..3 {
            for y in 1..=3 {
                assert_eq!(
                    state.appl_read(j, y, &mut NullRecorder).unwrap(),
                    Some(99 + y as u64)
                );
            }
        }
    }
}

#[test]
fn late_laggard_reads_indices_from_application_values() {
    let cfg = Config::new(3, 5, Variant::V1);
    let mut hits = 0;
    for seed in 0..50u64 {
        let setup = Setup::random(3, 5, seed);
        let mut state = SystemState::new(&cfg, &setup).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut written = false;
        while let Some(i) = state.enabled().choose(&mut rng) {
            state.step(i, &cfg, &mut NullRecorder).unwrap();
            let winner = state.procs.iter().position(|p| p.last1 && p.map.is_some());
            let waiting = state.procs.iter().any(|p| p.map.is_none());
            if let (Some(w), true, false) = (winner, waiting, written) {
                for y in 1..=5 {
                    state
                        .appl_write(w, y, y as u64 * 7, &mut NullRecorder)
                        .unwrap();
                }
                written = true;
                hits += 1;
            }
        }
        assert!(state.all_done());
        assert!(
            check_safety(&state.procs, &setup.perms).passed,
            "seed {seed}"
        );
        if written {
            for p in 0..3 {
                for y in 1..=5 {
                    assert_eq!(
                        state.appl_read(p, y, &mut NullRecorder).unwrap(),
                        Some(y as u64 * 7)
                    );
                }
            }
        }
    }
    assert!(hits > 0);
}

#[test]
fn application_access_needs_a_map() {
    let cfg = Config::new(2, 3, Variant::V1);
    let mut state = SystemState::new(&cfg, &Setup::identity(2, 3)).unwrap();
    assert_eq!(state.procs[0].pc, DesaPc::Acquire(1));
    assert!(matches!(
        state.appl_write(0, 1, 1, &mut NullRecorder),
        Err(StepError::NoMap)
    ));
}
