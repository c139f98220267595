//! Bounded exhaustive exploration of all interleavings.
//!
//! States are explored breadth-first, so every counterexample schedule is a
//! shortest one. Each transition and each terminal state is checked as it is
//! discovered; once the graph is complete, every state must still be able to
//! reach a terminal state.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonmem::ConfigError;
use crate::config::{Config, Setup, Variant};
use crate::sched::{execute_schedule, SystemState};
use crate::trace::{NullRecorder, Trace};
use crate::verify::{self, CheckResult};

/// Largest system the explorer accepts.
pub const MAX_N: usize = 3;
pub const MAX_M: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("exploration is limited to n ≤ {MAX_N} and m ≤ {MAX_M}, got n={n}, m={m}")]
    TooLarge { n: usize, m: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_states: usize,
    /// Stop after this many violations.
    pub max_violations: usize,
    /// Re-run every trace checker on one path to each terminal state.
    pub check_terminal_traces: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_states: 3_000_000,
            max_violations: 1,
            check_terminal_traces: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub detail: String,
    /// Ordinals of the processes to step, from the initial state.
    pub schedule: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub n: usize,
    pub m: usize,
    pub variant: Variant,
    pub states_visited: usize,
    pub transitions: usize,
    pub terminals: usize,
    pub max_depth: usize,
    /// The whole reachable graph was built.
    pub complete: bool,
    pub violations: Vec<Violation>,
}

impl ExplorationReport {
    pub fn passed(&self) -> bool {
        self.complete && self.violations.is_empty()
    }
}

struct Graph {
    states: Vec<SystemState>,
    buckets: HashMap<u64, Vec<u32>>,
    parent: Vec<Option<(u32, u8)>>,
    depth: Vec<u32>,
    preds: Vec<Vec<u32>>,
}

fn fingerprint(s: &SystemState) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

impl Graph {
    fn find(&self, s: &SystemState, fp: u64) -> Option<u32> {
        self.buckets
            .get(&fp)?
            .iter()
            .copied()
            .find(|&k| self.states[k as usize] == *s)
    }

    fn insert(&mut self, s: SystemState, fp: u64, parent: Option<(u32, u8)>, depth: u32) -> u32 {
        let k = self.states.len() as u32;
        self.states.push(s);
        self.buckets.entry(fp).or_default().push(k);
        self.parent.push(parent);
        self.depth.push(depth);
        self.preds.push(Vec::new());
        k
    }

    fn schedule_to(&self, mut k: u32) -> Vec<usize> {
        let mut out = Vec::new();
        while let Some((p, i)) = self.parent[k as usize] {
            out.push(i as usize);
            k = p;
        }
        out.reverse();
        out
    }
}

/// Explores every interleaving of `(cfg, setup)`.
pub fn explore(
    cfg: &Config,
    setup: &Setup,
    limits: Limits,
) -> Result<ExplorationReport, ExploreError> {
    if cfg.n > MAX_N || cfg.m > MAX_M {
        return Err(ExploreError::TooLarge { n: cfg.n, m: cfg.m });
    }
    let init = SystemState::new(cfg, setup)?;
    let mut g = Graph {
        states: Vec::new(),
        buckets: HashMap::new(),
        parent: Vec::new(),
        depth: Vec::new(),
        preds: Vec::new(),
    };
    let fp = fingerprint(&init);
    g.insert(init, fp, None, 0);

    let mut violations = Vec::new();
    let mut terminals = Vec::new();
    let mut transitions = 0usize;
    let mut complete = true;
    let mut queue = VecDeque::from([0u32]);

    let report =
        |g: &Graph, at: u32, extra: Option<usize>, r: CheckResult, out: &mut Vec<Violation>| {
            let mut schedule = g.schedule_to(at);
            schedule.extend(extra);
            out.push(Violation {
                check: r.name,
                detail: r.detail.unwrap_or_default(),
                schedule,
            });
        };

    'bfs: while let Some(k) = queue.pop_front() {
        let depth = g.depth[k as usize];
        let enabled: Vec<usize> = g.states[k as usize].enabled().collect();
        if enabled.is_empty() {
            terminals.push(k);
            for r in verify::check_terminal(cfg, setup, &g.states[k as usize]) {
                if !r.passed {
                    report(&g, k, None, r, &mut violations);
                }
            }
        }
        for i in enabled {
            if violations.len() >= limits.max_violations {
                break 'bfs;
            }
            let before = &g.states[k as usize];
            let mut next = before.clone();
            transitions += 1;
            if let Err(e) = next.step(i, cfg, &mut NullRecorder) {
                report(
                    &g,
                    k,
                    Some(i),
                    CheckResult::fail("fault", format!("p{i}: {e}")),
                    &mut violations,
                );
                continue;
            }
            if let Err(r) = verify::check_state(cfg, &next)
                .and_then(|()| verify::check_transition(cfg, &setup.ids, before, i, &next))
            {
                report(&g, k, Some(i), r, &mut violations);
                continue;
            }
            let fp = fingerprint(&next);
            let succ = match g.find(&next, fp) {
                Some(s) => s,
                None => {
                    if g.states.len() >= limits.max_states {
                        complete = false;
                        break 'bfs;
                    }
                    let s = g.insert(next, fp, Some((k, i as u8)), depth + 1);
                    queue.push_back(s);
                    s
                }
            };
            g.preds[succ as usize].push(k);
        }
    }
    if violations.len() >= limits.max_violations {
        complete = complete && queue.is_empty();
    }

    if complete && violations.is_empty() {
        // Every reachable state must still be able to terminate.
        let mut live = vec![false; g.states.len()];
        let mut stack: Vec<u32> = terminals.clone();
        for &t in &terminals {
            live[t as usize] = true;
        }
        while let Some(k) = stack.pop() {
            for &p in &g.preds[k as usize] {
                if !live[p as usize] {
                    live[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        // The deepest stuck state makes the most informative counterexample.
        let stuck = (0..g.states.len())
            .filter(|&k| !live[k])
            .max_by_key(|&k| (g.depth[k], std::cmp::Reverse(k)));
        if let Some(stuck) = stuck {
            let s = &g.states[stuck];
            let pcs: Vec<String> = s
                .procs
                .iter()
                .map(|p| format!("p{}@{:?}", p.ordinal, p.pc))
                .collect();
            report(
                &g,
                stuck as u32,
                None,
                CheckResult::fail(
                    "liveness",
                    format!("no terminal state reachable from {}", pcs.join(", ")),
                ),
                &mut violations,
            );
        }
    }

    if limits.check_terminal_traces && violations.is_empty() {
        for &t in &terminals {
            let schedule = g.schedule_to(t);
            let mut trace = Trace::default();
            let state = match execute_schedule(cfg, setup, &schedule, &mut trace) {
                Ok(s) => s,
                Err(e) => {
                    report(
                        &g,
                        t,
                        None,
                        CheckResult::fail("replay", e.to_string()),
                        &mut violations,
                    );
                    break;
                }
            };
            let failed = terminal_trace_checks(cfg, setup, &trace, &state)
                .into_iter()
                .find(|r| !r.passed);
            if let Some(r) = failed {
                report(&g, t, None, r, &mut violations);
                break;
            }
        }
    }

    Ok(ExplorationReport {
        n: cfg.n,
        m: cfg.m,
        variant: cfg.variant,
        states_visited: g.states.len(),
        transitions,
        terminals: terminals.len(),
        max_depth: g.depth.iter().copied().max().unwrap_or(0) as usize,
        complete,
        violations,
    })
}

fn terminal_trace_checks(
    cfg: &Config,
    setup: &Setup,
    trace: &Trace,
    state: &SystemState,
) -> Vec<CheckResult> {
    vec![
        verify::check_safety(&state.procs, &setup.perms),
        verify::check_winner(cfg, trace, state),
        verify::check_counter_sequence(cfg, trace, Some(&state.procs)),
        verify::check_lemma1(cfg, trace),
        verify::check_mutex_contract(cfg, &setup.ids, trace),
        verify::check_memory_model(cfg, &setup.perms, trace),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mutant;

    #[test]
    fn two_processes_three_registers_is_clean() {
        let cfg = Config::new(2, 3, Variant::V1);
        let r = explore(&cfg, &Setup::random(2, 3, 1), Limits::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.terminals > 0);
        assert!(r.states_visited > r.terminals);
    }

    #[test]
    fn rejects_large_systems() {
        let cfg = Config::new(4, 5, Variant::V1);
        assert_eq!(
            explore(&cfg, &Setup::identity(4, 5), Limits::default()),
            Err(ExploreError::TooLarge { n: 4, m: 5 })
        );
    }

    #[test]
    fn counterexample_replays_to_the_violation() {
        let cfg = Config::new(2, 3, Variant::V1).with_mutant(Mutant::DoubleIncrement);
        let setup = Setup::identity(2, 3);
        let r = explore(&cfg, &setup, Limits::default()).unwrap();
        assert!(!r.passed());
        let v = &r.violations[0];
        assert_eq!(v.check, "counter");
        let mut t = Trace::default();
        assert!(execute_schedule(&cfg, &setup, &v.schedule, &mut t).is_ok());
    }
}
