//! Step-by-step execution of all processes under a scheduler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonmem::{AnonymousMemory, ConfigError, Payload, Port};
use crate::config::{Config, Setup};
use crate::desa::{desa_step, DesaProcess, StepError, StepStatus};
use crate::mutex::Arbiter;
use crate::trace::{NullRecorder, Recorder, Trace};

/// Full configuration of the simulated system.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub mem: AnonymousMemory,
    pub procs: Vec<DesaProcess>,
    pub arbiter: Arbiter,
}

impl SystemState {
    pub fn new(cfg: &Config, setup: &Setup) -> Result<Self, ConfigError> {
        cfg.validate()?;
        setup.validate(cfg)?;
        let mem = AnonymousMemory::new(cfg.n, cfg.m, setup.perms.clone())?;
        let procs = setup
            .ids
            .iter()
            .enumerate()
            .map(|(ord, &id)| DesaProcess::new(id, ord, cfg))
            .collect();
        Ok(SystemState {
            mem,
            procs,
            arbiter: Arbiter::default(),
        })
    }

    pub fn is_enabled(&self, ordinal: usize) -> bool {
        !self.procs[ordinal].is_done()
    }

    pub fn enabled(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.procs.len()).filter(|&i| self.is_enabled(i))
    }

    pub fn all_done(&self) -> bool {
        self.procs.iter().all(DesaProcess::is_done)
    }

    /// Runs one step of process `ordinal`.
    pub fn step(
        &mut self,
        ordinal: usize,
        cfg: &Config,
        rec: &mut dyn Recorder,
    ) -> Result<StepStatus, StepError> {
        let other_in_cs = self.arbiter.in_cs && self.arbiter.holder != Some(ordinal);
        let proc = &mut self.procs[ordinal];
        let mut port = Port::new(&mut self.mem, ordinal, rec);
        let status = desa_step(proc, &mut port, &mut self.arbiter, cfg)?;
        if port.wrote() && other_in_cs {
            proc.mutex.writes_this_epoch = proc.mutex.writes_this_epoch.saturating_add(1);
        }
        Ok(status)
    }

    /// Process `ordinal` stores `payload` under the common name `y`.
    pub fn appl_write(
        &mut self,
        ordinal: usize,
        y: usize,
        payload: Payload,
        rec: &mut dyn Recorder,
    ) -> Result<(), StepError> {
        let mut port = Port::new(&mut self.mem, ordinal, rec);
        self.procs[ordinal].appl_write(&mut port, y, payload)
    }

    /// Process `ordinal` reads the application value under the common name `y`.
    pub fn appl_read(
        &mut self,
        ordinal: usize,
        y: usize,
        rec: &mut dyn Recorder,
    ) -> Result<Option<Payload>, StepError> {
        let mut port = Port::new(&mut self.mem, ordinal, rec);
        self.procs[ordinal].appl_read(&mut port, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    RoundRobin,
    Random(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    BudgetExceeded,
    Fault { ordinal: usize, error: String },
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: Trace,
    pub state: SystemState,
    pub outcome: Outcome,
    pub steps: u64,
    /// Longest run of selections any enabled process sat out.
    pub max_wait: u64,
}

impl RunResult {
    pub fn completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }
}

/// Selections after which the random scheduler forces a waiting process.
/// With at most `n - 1` others forced ahead of it, no enabled process ever
/// waits more than `8·n·m` selections.
pub fn starvation_threshold(n: usize, m: usize) -> u64 {
    (8 * n * m - (n - 1)) as u64
}

struct Picker {
    kind: Scheduler,
    rng: Option<ChaCha8Rng>,
    next_rr: usize,
    waits: Vec<u64>,
    threshold: u64,
    max_wait: u64,
}

impl Picker {
    fn new(kind: Scheduler, n: usize, m: usize) -> Self {
        Picker {
            kind,
            rng: match kind {
                Scheduler::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
                Scheduler::RoundRobin => None,
            },
            next_rr: 0,
            waits: vec![0; n],
            threshold: starvation_threshold(n, m),
            max_wait: 0,
        }
    }

    fn pick(&mut self, state: &SystemState) -> usize {
        let n = state.procs.len();
        let chosen = match self.kind {
            Scheduler::RoundRobin => {
                let i = (0..n)
                    .map(|k| (self.next_rr + k) % n)
                    .find(|&i| state.is_enabled(i))
                    .expect("some process enabled");
                self.next_rr = (i + 1) % n;
                i
            }
            Scheduler::Random(_) => {
                let starving = state
                    .enabled()
                    .filter(|&i| self.waits[i] >= self.threshold)
                    .max_by_key(|&i| (self.waits[i], std::cmp::Reverse(i)));
                match starving {
                    Some(i) => i,
                    None => {
                        let enabled: Vec<usize> = state.enabled().collect();
                        let rng = self.rng.as_mut().expect("random scheduler has an rng");
                        enabled[rng.gen_range(0..enabled.len())]
                    }
                }
            }
        };
        for i in state.enabled() {
            if i == chosen {
                self.waits[i] = 0;
            } else {
                self.waits[i] += 1;
                self.max_wait = self.max_wait.max(self.waits[i]);
            }
        }
        chosen
    }
}

/// Runs until every process is done, the step budget is spent, or a step fails.
pub fn run_with(
    cfg: &Config,
    setup: &Setup,
    scheduler: Scheduler,
    rec: &mut dyn Recorder,
) -> Result<(SystemState, Outcome, u64, u64), ConfigError> {
    let mut state = SystemState::new(cfg, setup)?;
    let mut picker = Picker::new(scheduler, cfg.n, cfg.m);
    let mut steps = 0u64;
    let outcome = loop {
        if state.all_done() {
            break Outcome::Completed;
        }
        if steps >= cfg.step_budget {
            break Outcome::BudgetExceeded;
        }
        let i = picker.pick(&state);
        steps += 1;
        if let Err(e) = state.step(i, cfg, rec) {
            break Outcome::Fault {
                ordinal: i,
                error: e.to_string(),
            };
        }
    };
    Ok((state, outcome, steps, picker.max_wait))
}

/// [`run_with`] recording the trace.
pub fn run(cfg: &Config, setup: &Setup, scheduler: Scheduler) -> Result<RunResult, ConfigError> {
    let mut trace = Trace::default();
    let (state, outcome, steps, max_wait) = run_with(cfg, setup, scheduler, &mut trace)?;
    Ok(RunResult {
        trace,
        state,
        outcome,
        steps,
        max_wait,
    })
}

/// [`run_with`] without recording; returns the final state and outcome.
pub fn run_quiet(
    cfg: &Config,
    setup: &Setup,
    scheduler: Scheduler,
) -> Result<(SystemState, Outcome), ConfigError> {
    let (state, outcome, _, _) = run_with(cfg, setup, scheduler, &mut NullRecorder)?;
    Ok((state, outcome))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("configuration does not match the trace: {0}")]
    Config(#[from] ConfigError),
    #[error("replay diverged from the recorded trace at entry {entry}")]
    Diverged { entry: usize },
    #[error("scheduled ordinal {ordinal} is not enabled at turn {turn}")]
    NotEnabled { ordinal: usize, turn: usize },
    #[error("step failed during replay: {0}")]
    Step(#[from] StepError),
}

/// Re-executes a fixed sequence of scheduler turns.
pub fn execute_schedule(
    cfg: &Config,
    setup: &Setup,
    schedule: &[usize],
    rec: &mut dyn Recorder,
) -> Result<SystemState, ReplayError> {
    let mut state = SystemState::new(cfg, setup)?;
    for (turn, &i) in schedule.iter().enumerate() {
        if i >= cfg.n || !state.is_enabled(i) {
            return Err(ReplayError::NotEnabled { ordinal: i, turn });
        }
        state.step(i, cfg, rec)?;
    }
    Ok(state)
}

/// Re-runs the schedule embedded in `trace` and checks that the same trace
/// comes out.
pub fn replay_trace(cfg: &Config, setup: &Setup, trace: &Trace) -> Result<Trace, ReplayError> {
    let mut out = Trace::default();
    let schedule = trace.schedule();
    let res = execute_schedule(cfg, setup, &schedule, &mut out);
    // A step that failed in the original run still left its turn in the schedule.
    if let Err(ReplayError::Step(_)) = res {
        if out.len() < trace.len() {
            return Err(ReplayError::Diverged { entry: out.len() });
        }
    } else {
        res?;
    }
    if let Some(k) =
        (0..trace.len().max(out.len())).find(|&k| trace.entries().get(k) != out.entries().get(k))
    {
        return Err(ReplayError::Diverged { entry: k });
    }
    Ok(out)
}

/// Re-runs `(cfg, setup, scheduler)` from scratch.
pub fn replay_seed(
    cfg: &Config,
    setup: &Setup,
    scheduler: Scheduler,
) -> Result<Trace, ConfigError> {
    run(cfg, setup, scheduler).map(|r| r.trace)
}
