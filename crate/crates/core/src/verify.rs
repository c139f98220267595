//! Executable safety, liveness and counter properties.
//!
//! Trace checkers rebuild whatever they need (register contents, per-process
//! counters) from the trace itself, so they stay independent of the code that
//! produced it. The state-level monitors at the bottom are what exhaustive
//! exploration evaluates on every transition.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anonmem::{Permutation, ProcessId, RegisterBody, RegisterWord};
use crate::config::{Config, Setup, Variant};
use crate::desa::{DesaPc, DesaProcess};
use crate::mutex::MutexPhase;
use crate::sched::{run, RunResult, Scheduler, SystemState};
use crate::trace::{AccessKind, Trace, TraceEntry};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    pub fn pass(name: &str) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: true,
            detail: None,
        }
    }

    pub fn fail(name: &str, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: false,
            detail: Some(detail.into()),
        }
    }

    fn from(name: &str, r: Result<(), String>) -> Self {
        match r {
            Ok(()) => CheckResult::pass(name),
            Err(d) => CheckResult::fail(name, d),
        }
    }
}

/// Register contents rebuilt from the writes in a trace.
struct Shadow {
    cells: Vec<RegisterWord>,
    /// Last writer of each physical cell, and whether that write was part of
    /// a release sweep.
    writer: Vec<Option<(usize, bool)>>,
}

impl Shadow {
    fn new(m: usize) -> Self {
        Shadow {
            cells: vec![RegisterWord::INITIAL; m],
            writer: vec![None; m],
        }
    }

    fn apply(&mut self, e: &TraceEntry) {
        if e.kind != AccessKind::Write {
            return;
        }
        if let (Some(phys), Some(after)) = (e.physical_index, e.after) {
            if (1..=self.cells.len()).contains(&phys) {
                self.cells[phys - 1] = after;
                self.writer[phys - 1] = Some((e.ordinal, e.sub() == Some("sweep")));
            }
        }
    }
}

fn is_acquire_line(line: &str) -> bool {
    matches!(line, "DESA-01" | "BITDESA-01" | "BITDESA-10")
}

fn is_increment_line(line: &str) -> bool {
    matches!(line, "DESA-02" | "BITDESA-02" | "BITDESA-11")
}

fn is_bit_write(e: &TraceEntry) -> bool {
    e.kind == AccessKind::Write && e.line() == "BITDESA-15"
}

/// Common-name agreement: every map is a permutation and `f_i(map_i(y))`
/// is the same physical register for all `i`.
pub fn check_safety(procs: &[DesaProcess], perms: &[Permutation]) -> CheckResult {
    const NAME: &str = "safety";
    let Some(m) = perms.first().map(Permutation::len) else {
        return CheckResult::fail(NAME, "no processes");
    };
    let mut maps = Vec::with_capacity(procs.len());
    for p in procs {
        match &p.map {
            Some(map) if map.len() == m => maps.push(map),
            Some(map) => {
                return CheckResult::fail(
                    NAME,
                    format!("p{} map has size {}", p.ordinal, map.len()),
                )
            }
            None => return CheckResult::fail(NAME, format!("p{} has no map", p.ordinal)),
        }
    }
    for y in 1..=m {
        let cells: HashSet<usize> = maps
            .iter()
            .zip(perms)
            .map(|(map, f)| f.apply(map.apply(y)))
            .collect();
        if cells.len() != 1 {
            let mut v: Vec<_> = cells.into_iter().collect();
            v.sort_unstable();
            return CheckResult::fail(
                NAME,
                format!("common name {y} reaches physical registers {v:?}"),
            );
        }
    }
    CheckResult::pass(NAME)
}

/// Every process finished within the budget.
pub fn check_liveness(run: &RunResult) -> CheckResult {
    const NAME: &str = "liveness";
    if run.completed() && run.state.all_done() {
        return CheckResult::pass(NAME);
    }
    let pending: Vec<_> = run
        .state
        .procs
        .iter()
        .filter(|p| !p.is_done())
        .map(|p| format!("p{}@{:?}", p.ordinal, p.pc))
        .collect();
    CheckResult::fail(
        NAME,
        format!(
            "{:?} after {} steps; pending {}",
            run.outcome,
            run.steps,
            pending.join(", ")
        ),
    )
}

/// For each critical section, in entry order: `(ordinal, k, cells)` where
/// `cells` is the number of physical registers that, when the `k`-th entrant
/// finishes its release, still hold a sweep write of that process stamped `k`.
pub fn lemma1_counts(cfg: &Config, trace: &Trace) -> Vec<(usize, u32, usize)> {
    let mut shadow = Shadow::new(cfg.m);
    let mut k = 0u32;
    let mut entry_k = vec![0u32; cfg.n];
    let mut out = Vec::new();
    for e in trace.entries() {
        shadow.apply(e);
        match e.kind {
            AccessKind::CsEnter => {
                k += 1;
                entry_k[e.ordinal] = k;
            }
            AccessKind::CsExit => {
                let kk = entry_k[e.ordinal];
                let cells = shadow
                    .cells
                    .iter()
                    .zip(&shadow.writer)
                    .filter(|(w, who)| w.ct == kk && **who == Some((e.ordinal, true)))
                    .count();
                out.push((e.ordinal, kk, cells));
            }
            _ => {}
        }
    }
    out
}

/// The `k`-th process to enter the critical section leaves the stamp `k` in
/// at least `m - (n - 1)` registers when its release completes.
pub fn check_lemma1(cfg: &Config, trace: &Trace) -> CheckResult {
    const NAME: &str = "lemma1";
    let need = cfg.m.saturating_sub(cfg.n - 1);
    for (ord, k, cells) in lemma1_counts(cfg, trace) {
        if cells < need {
            return CheckResult::fail(
                NAME,
                format!("entrant k={k} (p{ord}) left stamp {k} in {cells} registers, need {need}"),
            );
        }
    }
    CheckResult::pass(NAME)
}

/// Counter values after each increment, in trace order, recomputed from the
/// mutex reads (`ct ← max(ct, stamp)`) and the increment lines.
pub fn derived_increments(cfg: &Config, trace: &Trace) -> Result<Vec<(usize, u32)>, String> {
    let mut ct = vec![0u32; cfg.n];
    let mut incs = Vec::new();
    for e in trace.entries() {
        let i = e.ordinal;
        if i >= cfg.n {
            return Err(format!("entry {} names ordinal {i}", e.step));
        }
        match e.kind {
            AccessKind::Read if e.is_mutex_access() => {
                if let Some(w) = e.before {
                    ct[i] = ct[i].max(w.ct);
                }
            }
            AccessKind::Local if is_increment_line(e.line()) => {
                ct[i] += 1;
                incs.push((i, ct[i]));
            }
            AccessKind::Write if !is_bit_write(e) => {
                let stamp = e.after.map(|w| w.ct);
                if stamp != Some(ct[i]) {
                    return Err(format!(
                        "entry {}: p{i} wrote stamp {stamp:?} but its counter is {}",
                        e.step, ct[i]
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(incs)
}

/// Critical-section increments are exactly `1..n` (then `n+1..2n`), and the
/// final counters are the last of those values.
pub fn check_counter_sequence(
    cfg: &Config,
    trace: &Trace,
    procs: Option<&[DesaProcess]>,
) -> CheckResult {
    const NAME: &str = "counter";
    let incs = match derived_increments(cfg, trace) {
        Ok(v) => v,
        Err(d) => return CheckResult::fail(NAME, d),
    };
    let n = cfg.n as u32;
    let values: Vec<u32> = incs.iter().map(|&(_, v)| v).collect();
    let expected: Vec<u32> = (1..=n * cfg.phases() as u32).collect();
    if !expected.starts_with(&values) {
        return CheckResult::fail(
            NAME,
            format!("increments {values:?}, expected a prefix of {expected:?}"),
        );
    }
    let Some(procs) = procs else {
        return CheckResult::pass(NAME);
    };
    if procs.iter().all(DesaProcess::is_done) {
        if values != expected {
            return CheckResult::fail(
                NAME,
                format!("increments {values:?}, expected {expected:?}"),
            );
        }
        let mut finals: Vec<u32> = procs.iter().map(|p| p.ct).collect();
        finals.sort_unstable();
        let want: Vec<u32> = match cfg.variant {
            Variant::V1 => (1..=n).collect(),
            Variant::V2 => (n + 1..=2 * n).collect(),
        };
        if finals != want {
            return CheckResult::fail(
                NAME,
                format!("final counters {finals:?}, expected {want:?}"),
            );
        }
    }
    CheckResult::pass(NAME)
}

/// No two processes inside their critical sections at once.
pub fn mutual_exclusion(trace: &Trace) -> CheckResult {
    const NAME: &str = "mutual_exclusion";
    let mut inside: Option<usize> = None;
    for e in trace.entries() {
        match e.kind {
            AccessKind::CsEnter => {
                if let Some(q) = inside {
                    return CheckResult::fail(
                        NAME,
                        format!(
                            "entry {}: p{} enters while p{q} is inside",
                            e.step, e.ordinal
                        ),
                    );
                }
                inside = Some(e.ordinal);
            }
            AccessKind::CsExit => {
                if inside != Some(e.ordinal) {
                    return CheckResult::fail(
                        NAME,
                        format!(
                            "entry {}: p{} exits without being inside",
                            e.step, e.ordinal
                        ),
                    );
                }
                inside = None;
            }
            _ => {}
        }
    }
    CheckResult::pass(NAME)
}

/// Acquire windows per process: `(start entry, CS_ENTER entry)`.
fn acquire_windows(n: usize, trace: &Trace) -> Vec<Vec<(usize, Option<usize>)>> {
    let mut windows = vec![Vec::new(); n];
    let mut open: Vec<Option<usize>> = vec![None; n];
    for (k, e) in trace.entries().iter().enumerate() {
        let i = e.ordinal;
        if i >= n {
            continue;
        }
        if e.kind == AccessKind::CsEnter {
            if let Some(start) = open[i].take() {
                windows[i].push((start, Some(k)));
            }
        } else if e.kind.is_turn() && is_acquire_line(e.line()) && open[i].is_none() {
            open[i] = Some(k);
        }
    }
    for (i, o) in open.into_iter().enumerate() {
        if let Some(start) = o {
            windows[i].push((start, None));
        }
    }
    windows
}

/// Every acquire present in the trace reaches its critical section.
pub fn deadlock_freedom(cfg: &Config, trace: &Trace) -> CheckResult {
    const NAME: &str = "deadlock_freedom";
    for (i, ws) in acquire_windows(cfg.n, trace).iter().enumerate() {
        if let Some((start, _)) = ws.iter().find(|(_, end)| end.is_none()) {
            return CheckResult::fail(
                NAME,
                format!("p{i} acquire from entry {start} never enters"),
            );
        }
    }
    CheckResult::pass(NAME)
}

/// Mutex-1: mutex writes carry the writer's identity or ⊥.
pub fn mutex1_writes_id_or_bottom(ids: &[ProcessId], trace: &Trace) -> CheckResult {
    const NAME: &str = "mutex1";
    for e in trace.entries() {
        if e.kind != AccessKind::Write || !e.is_mutex_access() {
            continue;
        }
        let ok = match e.after.map(|w| w.body) {
            Some(RegisterBody::Mutex { val }) | Some(RegisterBody::IndexedMutex { val, .. }) => {
                val.is_none() || val == ids.get(e.ordinal).copied()
            }
            _ => false,
        };
        if !ok {
            return CheckResult::fail(
                NAME,
                format!("entry {}: p{} wrote {:?}", e.step, e.ordinal, e.after),
            );
        }
    }
    CheckResult::pass(NAME)
}

/// Mutex-2: an acquire reads every local index before entering.
pub fn mutex2_reads_all_before_cs(cfg: &Config, trace: &Trace) -> CheckResult {
    const NAME: &str = "mutex2";
    let entries = trace.entries();
    for (i, ws) in acquire_windows(cfg.n, trace).iter().enumerate() {
        for &(start, end) in ws {
            let Some(end) = end else { continue };
            let read: HashSet<usize> = entries[start..end]
                .iter()
                .filter(|e| e.ordinal == i && e.kind == AccessKind::Read && e.is_mutex_access())
                .filter_map(|e| e.local_index)
                .collect();
            if read.len() != cfg.m {
                return CheckResult::fail(
                    NAME,
                    format!(
                        "p{i} entered at entry {end} having read {} of {} registers",
                        read.len(),
                        cfg.m
                    ),
                );
            }
        }
    }
    CheckResult::pass(NAME)
}

/// Mutex-3: on entry, every register holds the entrant's identity.
pub fn mutex3_all_cells_on_entry(cfg: &Config, ids: &[ProcessId], trace: &Trace) -> CheckResult {
    const NAME: &str = "mutex3";
    let mut shadow = Shadow::new(cfg.m);
    for e in trace.entries() {
        shadow.apply(e);
        if e.kind == AccessKind::CsEnter {
            let id = ids.get(e.ordinal).copied();
            if let Some(x) = shadow.cells.iter().position(|w| w.body.mutex_value() != id) {
                return CheckResult::fail(
                    NAME,
                    format!(
                        "entry {}: p{} entered, physical {} holds {:?}",
                        e.step,
                        e.ordinal,
                        x + 1,
                        shadow.cells[x]
                    ),
                );
            }
        }
    }
    CheckResult::pass(NAME)
}

/// Mutex-4: each other process writes at most once inside one critical
/// section, and at most once per acquire while others are inside;
/// release writes ⊥ wherever it reads `p`'s identity, and leaves no register
/// holding it.
pub fn mutex4_at_most_one_write(cfg: &Config, ids: &[ProcessId], trace: &Trace) -> CheckResult {
    const NAME: &str = "mutex4";
    let entries = trace.entries();
    let mut shadow = Shadow::new(cfg.m);
    let mut holder: Option<usize> = None;
    let mut writes = vec![0u32; cfg.n];
    let mut acquiring = vec![false; cfg.n];
    let mut in_interval = vec![0u32; cfg.n];
    // Local index whose ⊥ write must be the next turn of that process.
    let mut owed: Vec<Option<usize>> = vec![None; cfg.n];
    for e in entries {
        shadow.apply(e);
        let i = e.ordinal;
        if i >= cfg.n {
            return CheckResult::fail(NAME, format!("entry {} names ordinal {i}", e.step));
        }
        if e.kind.is_turn() {
            if let Some(x) = owed[i].take() {
                let cleared = e.kind == AccessKind::Write
                    && e.local_index == Some(x)
                    && e.after.is_some_and(|w| w.body.mutex_value().is_none());
                if !cleared {
                    return CheckResult::fail(
                        NAME,
                        format!("entry {}: p{i} read its identity at local {x} but did not write ⊥ there", e.step),
                    );
                }
            }
        }
        if e.kind.is_turn() && is_acquire_line(e.line()) && !acquiring[i] {
            acquiring[i] = true;
            writes[i] = 0;
        }
        match e.kind {
            AccessKind::CsEnter => {
                holder = Some(i);
                acquiring[i] = false;
                in_interval.iter_mut().for_each(|w| *w = 0);
            }
            AccessKind::CsExit => {
                holder = None;
                let id = ids.get(i).copied();
                if let Some(x) = shadow.cells.iter().position(|w| w.body.mutex_value() == id) {
                    return CheckResult::fail(
                        NAME,
                        format!(
                            "entry {}: p{i} released but physical {} still holds its identity",
                            e.step,
                            x + 1
                        ),
                    );
                }
            }
            AccessKind::Write => {
                if let Some(h) = holder.filter(|&h| h != i) {
                    in_interval[i] += 1;
                    if in_interval[i] > 1 {
                        return CheckResult::fail(
                            NAME,
                            format!(
                                "entry {}: p{i} wrote {} times during p{h}'s critical section",
                                e.step, in_interval[i]
                            ),
                        );
                    }
                    writes[i] += 1;
                    if writes[i] > 1 {
                        return CheckResult::fail(
                            NAME,
                            format!("entry {}: p{i} wrote {} times in one acquire while others were inside", e.step, writes[i]),
                        );
                    }
                }
            }
            AccessKind::Read => {
                if e.sub() == Some("sweep")
                    && e.before.and_then(|w| w.body.mutex_value()) == ids.get(i).copied()
                {
                    owed[i] = e.local_index;
                }
            }
            AccessKind::Local => {}
        }
    }
    CheckResult::pass(NAME)
}

/// The six mutex monitors; passes iff all pass.
pub fn mutex_monitors(cfg: &Config, ids: &[ProcessId], trace: &Trace) -> Vec<CheckResult> {
    vec![
        mutual_exclusion(trace),
        deadlock_freedom(cfg, trace),
        mutex1_writes_id_or_bottom(ids, trace),
        mutex2_reads_all_before_cs(cfg, trace),
        mutex3_all_cells_on_entry(cfg, ids, trace),
        mutex4_at_most_one_write(cfg, ids, trace),
    ]
}

pub fn check_mutex_contract(cfg: &Config, ids: &[ProcessId], trace: &Trace) -> CheckResult {
    const NAME: &str = "mutex";
    let failed: Vec<String> = mutex_monitors(cfg, ids, trace)
        .into_iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.name, r.detail.unwrap_or_default()))
        .collect();
    if failed.is_empty() {
        CheckResult::pass(NAME)
    } else {
        CheckResult::fail(NAME, failed.join("; "))
    }
}

/// A single winner whose map is the identity; in the bit variant a single
/// bit writer, all bits set at the end, and no waiter released before the
/// first bit write or before every process has its map.
pub fn check_winner(cfg: &Config, trace: &Trace, state: &SystemState) -> CheckResult {
    const NAME: &str = "winner";
    CheckResult::from(NAME, winner_conditions(cfg, trace, state))
}

fn winner_conditions(cfg: &Config, trace: &Trace, state: &SystemState) -> Result<(), String> {
    let procs = &state.procs;
    let winners: Vec<&DesaProcess> = procs.iter().filter(|p| p.last1).collect();
    if winners.len() != 1 {
        return Err(format!("{} processes have last1", winners.len()));
    }
    if let Some(map) = &winners[0].map {
        if !map.is_identity() {
            return Err(format!("winner p{} has map {map:?}", winners[0].ordinal));
        }
    }
    if cfg.variant == Variant::V1 {
        return Ok(());
    }
    let bit_writers = procs.iter().filter(|p| p.last2).count();
    if bit_writers != 1 {
        return Err(format!("{bit_writers} processes have last2"));
    }
    if state.all_done() {
        if let Some(x) = state.mem.cells().iter().position(|w| w.bit != 1) {
            return Err(format!("physical {} has bit 0 at termination", x + 1));
        }
    }
    // The map is known once line 06 finishes (winner) or line 08 runs.
    let m = cfg.m;
    let mut has_map = vec![false; cfg.n];
    let mut first_bit_write: Option<usize> = None;
    let mut exit: Vec<Option<usize>> = vec![None; cfg.n];
    let mut pass_seen = vec![false; cfg.n];
    for (k, e) in trace.entries().iter().enumerate() {
        let i = e.ordinal;
        match (e.kind, e.line()) {
            (AccessKind::Write, "BITDESA-06") if e.local_index == Some(m) => has_map[i] = true,
            (AccessKind::Local, "BITDESA-08") => has_map[i] = true,
            (AccessKind::Write, "BITDESA-15") => {
                first_bit_write.get_or_insert(k);
            }
            (AccessKind::Read, "BITDESA-16") => {
                if e.local_index == Some(1) {
                    pass_seen[i] = false;
                }
                pass_seen[i] |= e.before.is_some_and(|w| w.bit == 1);
                if e.local_index == Some(m) && pass_seen[i] {
                    exit[i] = Some(k);
                    if !first_bit_write.is_some_and(|w| w < k) {
                        return Err(format!(
                            "entry {k}: p{i} left line 16 before any line-15 write"
                        ));
                    }
                    if !has_map.iter().all(|&h| h) {
                        return Err(format!(
                            "entry {k}: p{i} left line 16 before every map was known"
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(p) = procs
        .iter()
        .find(|p| p.is_done() && !p.last2 && exit[p.ordinal].is_none())
    {
        return Err(format!("p{} is done without leaving line 16", p.ordinal));
    }
    Ok(())
}

/// Trace bookkeeping: increasing steps, `physical = f_i(local)`, reads return
/// the last written value, bits never go back to 0.
pub fn check_memory_model(cfg: &Config, perms: &[Permutation], trace: &Trace) -> CheckResult {
    const NAME: &str = "memory";
    let mut shadow = Shadow::new(cfg.m);
    let mut prev: Option<u64> = None;
    for e in trace.entries() {
        if prev.is_some_and(|p| e.step <= p) {
            return CheckResult::fail(NAME, format!("step {} does not increase", e.step));
        }
        prev = Some(e.step);
        if !matches!(e.kind, AccessKind::Read | AccessKind::Write) {
            continue;
        }
        let (Some(x), Some(phys)) = (e.local_index, e.physical_index) else {
            return CheckResult::fail(NAME, format!("entry {} lacks indices", e.step));
        };
        let f = match perms.get(e.ordinal) {
            Some(f) if (1..=f.len()).contains(&x) => f,
            _ => return CheckResult::fail(NAME, format!("entry {}: bad local index {x}", e.step)),
        };
        if f.apply(x) != phys {
            return CheckResult::fail(
                NAME,
                format!(
                    "entry {}: f(local {x}) = {} but trace says {phys}",
                    e.step,
                    f.apply(x)
                ),
            );
        }
        let current = shadow.cells[phys - 1];
        if e.before != Some(current) {
            return CheckResult::fail(
                NAME,
                format!(
                    "entry {}: observed {:?}, register held {current:?}",
                    e.step, e.before
                ),
            );
        }
        if e.kind == AccessKind::Write && e.after.is_some_and(|w| w.bit < current.bit) {
            return CheckResult::fail(
                NAME,
                format!("entry {}: bit of physical {phys} reset", e.step),
            );
        }
        shadow.apply(e);
    }
    CheckResult::pass(NAME)
}

/// Names accepted by [`run_checks`].
pub const CHECK_NAMES: [&str; 7] = [
    "liveness", "safety", "lemma1", "counter", "mutex", "winner", "memory",
];

/// Runs the named checks on a finished run (all of them for `None`).
pub fn run_checks(
    cfg: &Config,
    setup: &Setup,
    run: &RunResult,
    only: Option<&[String]>,
) -> Vec<CheckResult> {
    let want = |name: &str| only.is_none_or(|o| o.iter().any(|s| s == name));
    let mut out = Vec::new();
    if want("liveness") {
        out.push(check_liveness(run));
    }
    if want("safety") {
        out.push(check_safety(&run.state.procs, &setup.perms));
    }
    if want("lemma1") {
        out.push(check_lemma1(cfg, &run.trace));
    }
    if want("counter") {
        out.push(check_counter_sequence(
            cfg,
            &run.trace,
            Some(&run.state.procs),
        ));
    }
    if want("mutex") {
        out.push(check_mutex_contract(cfg, &setup.ids, &run.trace));
    }
    if want("winner") {
        out.push(check_winner(cfg, &run.trace, &run.state));
    }
    if want("memory") {
        out.push(check_memory_model(cfg, &setup.perms, &run.trace));
    }
    out
}

/// Renames identities through `rename` (old → new, by position in `ids`).
fn rename_entry(e: &TraceEntry, old: &[ProcessId], new: &[ProcessId]) -> TraceEntry {
    let map_id =
        |v: Option<ProcessId>| v.map(|id| old.iter().position(|&o| o == id).map_or(id, |k| new[k]));
    let map_word = |w: Option<RegisterWord>| {
        w.map(|mut w| {
            w.body = match w.body {
                RegisterBody::Mutex { val } => RegisterBody::Mutex { val: map_id(val) },
                RegisterBody::IndexedMutex { y, val } => RegisterBody::IndexedMutex {
                    y,
                    val: map_id(val),
                },
                b => b,
            };
            w
        })
    };
    TraceEntry {
        before: map_word(e.before),
        after: map_word(e.after),
        ..e.clone()
    }
}

fn first_difference(a: &Trace, b: &Trace) -> Option<usize> {
    (0..a.len().max(b.len())).find(|&k| a.entries().get(k) != b.entries().get(k))
}

/// Runs `(cfg, setup, scheduler)` three times: as given, with identities
/// replaced by `new_ids`, and with every `f_i` replaced by `g ∘ f_i`. Passes
/// iff the three traces agree up to the renaming and the relabeling.
pub fn check_equivariance(
    cfg: &Config,
    setup: &Setup,
    scheduler: Scheduler,
    new_ids: &[ProcessId],
    g: &Permutation,
) -> CheckResult {
    const NAME: &str = "equivariance";
    let base = match run(cfg, setup, scheduler) {
        Ok(r) => r.trace,
        Err(e) => return CheckResult::fail(NAME, e.to_string()),
    };

    let renamed_setup = Setup {
        perms: setup.perms.clone(),
        ids: new_ids.to_vec(),
    };
    let renamed = match run(cfg, &renamed_setup, scheduler) {
        Ok(r) => r.trace,
        Err(e) => return CheckResult::fail(NAME, e.to_string()),
    };
    let expected: Trace = base
        .entries()
        .iter()
        .map(|e| rename_entry(e, &setup.ids, new_ids))
        .collect::<Vec<_>>()
        .into();
    if let Some(k) = first_difference(&expected, &renamed) {
        return CheckResult::fail(
            NAME,
            format!("identity renaming changes the trace at entry {k}"),
        );
    }

    let relabeled_setup = Setup {
        perms: setup.perms.iter().map(|f| g.compose(f)).collect(),
        ids: setup.ids.clone(),
    };
    let relabeled = match run(cfg, &relabeled_setup, scheduler) {
        Ok(r) => r.trace,
        Err(e) => return CheckResult::fail(NAME, e.to_string()),
    };
    let expected: Trace = base
        .entries()
        .iter()
        .map(|e| TraceEntry {
            physical_index: e.physical_index.map(|p| g.apply(p)),
            ..e.clone()
        })
        .collect::<Vec<_>>()
        .into();
    if let Some(k) = first_difference(&expected, &relabeled) {
        return CheckResult::fail(
            NAME,
            format!("register relabeling changes the trace at entry {k}"),
        );
    }
    CheckResult::pass(NAME)
}

/// Draws a fresh identity set and a register relabeling from `seed`.
pub fn random_renaming(n: usize, m: usize, seed: u64) -> (Vec<ProcessId>, Permutation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens: Vec<u64> = Vec::with_capacity(n);
    while tokens.len() < n {
        let t = rng.gen_range(1..1_000_000u64);
        if !tokens.contains(&t) {
            tokens.push(t);
        }
    }
    tokens.shuffle(&mut rng);
    let ids = tokens.into_iter().map(ProcessId::from_token).collect();
    (ids, Permutation::random(m, &mut rng))
}

/// [`check_equivariance`] with a renaming and relabeling drawn from `seed`.
pub fn check_equivariance_seeded(
    cfg: &Config,
    setup: &Setup,
    scheduler: Scheduler,
    seed: u64,
) -> CheckResult {
    let (ids, g) = random_renaming(cfg.n, cfg.m, seed);
    check_equivariance(cfg, setup, scheduler, &ids, &g)
}

// State-level monitors used by exhaustive exploration.

/// Invariants of a single reachable state.
pub fn check_state(cfg: &Config, s: &SystemState) -> Result<(), CheckResult> {
    let inside = s.procs.iter().filter(|p| p.mutex.in_cs()).count();
    if inside > 1 {
        return Err(CheckResult::fail(
            "mutual_exclusion",
            format!("{inside} processes inside"),
        ));
    }
    if let Some(p) = s.procs.iter().find(|p| p.mutex.writes_this_epoch > 1) {
        return Err(CheckResult::fail(
            "mutex4",
            format!(
                "p{} wrote {} times in one acquire while others were inside",
                p.ordinal, p.mutex.writes_this_epoch
            ),
        ));
    }
    if let Some(p) = s.procs.iter().find(|p| p.ct > 2 * cfg.n as u32) {
        return Err(CheckResult::fail(
            "counter",
            format!("p{} counter {}", p.ordinal, p.ct),
        ));
    }
    Ok(())
}

/// Properties of a single transition of process `i` from `before` to `after`.
pub fn check_transition(
    cfg: &Config,
    ids: &[ProcessId],
    before: &SystemState,
    i: usize,
    after: &SystemState,
) -> Result<(), CheckResult> {
    let (pb, pa) = (&before.procs[i], &after.procs[i]);
    let n = cfg.n as u32;
    // Mutex-3 at entry.
    if pa.mutex.phase == MutexPhase::InCs && pb.mutex.phase != MutexPhase::InCs {
        let id = Some(ids[i]);
        if let Some(x) = after
            .mem
            .cells()
            .iter()
            .position(|w| w.body.mutex_value() != id)
        {
            return Err(CheckResult::fail(
                "mutex3",
                format!("p{i} entered, physical {} not its identity", x + 1),
            ));
        }
    }
    // Counter increment equals the number of increments so far.
    if let (DesaPc::Increment(phase), DesaPc::Release(_)) = (pb.pc, pa.pc) {
        let done: u32 = after
            .procs
            .iter()
            .filter(|p| p.increments_done() >= phase)
            .count() as u32;
        let want = done + if phase == 2 { n } else { 0 };
        if pa.ct != want {
            return Err(CheckResult::fail(
                "counter",
                format!("p{i} incremented to {}, expected {want}", pa.ct),
            ));
        }
        if pa.ct < pb.ct {
            return Err(CheckResult::fail(
                "counter",
                format!("p{i} counter decreased"),
            ));
        }
    }
    // Stamp count at release completion.
    if matches!(pb.mutex.phase, MutexPhase::ReleaseSweep { .. })
        && pa.mutex.phase == MutexPhase::Idle
    {
        let need = cfg.m.saturating_sub(cfg.n - 1);
        let stamped = after
            .mem
            .cells()
            .iter()
            .filter(|w| w.ct == pa.ct && w.body.mutex_value().is_none())
            .count();
        if stamped < need {
            return Err(CheckResult::fail(
                "lemma1",
                format!(
                    "p{i} released leaving stamp {} in {stamped} registers",
                    pa.ct
                ),
            ));
        }
        if let Some(x) = after
            .mem
            .cells()
            .iter()
            .position(|w| w.body.mutex_value() == Some(ids[i]))
        {
            return Err(CheckResult::fail(
                "mutex4",
                format!("p{i} released, physical {} still holds it", x + 1),
            ));
        }
    }
    // Leaving line 16 requires every map to be known.
    if matches!(pb.pc, DesaPc::BitScan(_))
        && pa.is_done()
        && after.procs.iter().any(|p| p.map.is_none())
    {
        return Err(CheckResult::fail(
            "winner",
            format!("p{i} left line 16 before all maps were computed"),
        ));
    }
    Ok(())
}

/// Properties of a terminal state (every process done).
pub fn check_terminal(cfg: &Config, setup: &Setup, s: &SystemState) -> Vec<CheckResult> {
    let mut out = vec![check_safety(&s.procs, &setup.perms)];
    let winners = s.procs.iter().filter(|p| p.last1).count();
    let mut finals: Vec<u32> = s.procs.iter().map(|p| p.ct).collect();
    finals.sort_unstable();
    let n = cfg.n as u32;
    let want: Vec<u32> = match cfg.variant {
        Variant::V1 => (1..=n).collect(),
        Variant::V2 => (n + 1..=2 * n).collect(),
    };
    out.push(if finals == want {
        CheckResult::pass("counter")
    } else {
        CheckResult::fail(
            "counter",
            format!("final counters {finals:?}, expected {want:?}"),
        )
    });
    let mut winner = Ok(());
    if winners != 1 {
        winner = Err(format!("{winners} processes have last1"));
    } else if s
        .procs
        .iter()
        .any(|p| p.last1 && !p.map.as_ref().is_some_and(Permutation::is_identity))
    {
        winner = Err("winner map is not the identity".into());
    } else if cfg.variant == Variant::V2 {
        let w2 = s.procs.iter().filter(|p| p.last2).count();
        if w2 != 1 {
            winner = Err(format!("{w2} processes have last2"));
        } else if s.mem.cells().iter().any(|w| w.bit != 1) {
            winner = Err("some bit is 0 at termination".into());
        }
    }
    out.push(CheckResult::from("winner", winner));
    out
}
