//! The desanonymization protocols.
//!
//! Each process runs the same code and uses its identity only through
//! equality. Phase 1: the processes go through the mutex one after the
//! other, each incrementing the shared counter inside its critical section.
//! The counter is carried on the stamps of the mutex's own reads and writes.
//! The process that sees the counter reach `n` is the winner: it writes
//! `desa(x)` at each of its local indices `x`, which makes its own addressing
//! the common one. Everybody else scans until every register carries a common
//! index and inverts what it saw into its map.
//!
//! [`Variant::V2`] adds a second pass through the mutex; the process reaching
//! `2n` sets the control bit of every register, and the others wait for a set
//! bit. After that every process knows that all maps have been computed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonmem::{
    MemoryError, Payload, Permutation, Port, ProcessId, RegisterBody, RegisterWord, WriteDelta,
};
use crate::config::{Config, Mutant, V2Mode, Variant};
use crate::mutex::{self, Arbiter, MutexEnv, MutexError, MutexLabels, MutexProcState, MutexStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("snapshot entry {x} carries no common index")]
    MissingIndex { x: usize },
    #[error("common index {y} appears more than once in the snapshot")]
    DuplicateIndex { y: usize },
    #[error("common index {y} outside 1..={m}")]
    OutOfRange { y: usize, m: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Mutex(#[from] MutexError),
    #[error("map computation failed: {0}")]
    Map(#[from] MapError),
    #[error("mutex write of a value that is neither the writer's identity nor ⊥")]
    ForeignValue,
    #[error("the process has no map yet")]
    NoMap,
    #[error("common index {y} outside 1..={m}")]
    BadCommonIndex { y: usize, m: usize },
    #[error("process already finished")]
    AlreadyDone,
}

/// What the mutex's register accesses need to know about the caller.
pub struct AccessCtx<'a> {
    pub id: ProcessId,
    pub ct: &'a mut u32,
    /// Set when mutex writes must carry the common index of their target.
    pub index_map: Option<&'a Permutation>,
}

/// Read on behalf of the mutex: harvests the counter stamp and returns the
/// value position (`desa`/`appl` bodies read as ⊥).
pub fn instrumented_read(
    port: &mut Port<'_>,
    x: usize,
    ctx: &mut AccessCtx<'_>,
    pc: &'static str,
) -> Result<Option<ProcessId>, StepError> {
    let word = port.read(x, pc)?;
    *ctx.ct = (*ctx.ct).max(word.ct);
    Ok(word.body.mutex_value())
}

/// Write on behalf of the mutex: `mutex<ct_i, v>`, or its indexed form when
/// the caller's map is known and indexed mode is on. The bit is untouched.
pub fn instrumented_write(
    port: &mut Port<'_>,
    x: usize,
    v: Option<ProcessId>,
    ctx: &mut AccessCtx<'_>,
    pc: &'static str,
) -> Result<(), StepError> {
    if v.is_some_and(|v| v != ctx.id) {
        return Err(StepError::ForeignValue);
    }
    let body = match ctx.index_map {
        Some(map) => RegisterBody::IndexedMutex {
            y: map.preimage(x),
            val: v,
        },
        None => RegisterBody::Mutex { val: v },
    };
    port.write(x, WriteDelta::Rm { ct: *ctx.ct, body }, pc)?;
    Ok(())
}

/// `map(y) = x` for every snapshot entry `x` that carries common index `y`.
pub fn compute_map_from_snapshot(sm: &[RegisterWord]) -> Result<Permutation, MapError> {
    let m = sm.len();
    let mut table = vec![0usize; m];
    for (k, w) in sm.iter().enumerate() {
        let x = k + 1;
        let y = w.body.index().ok_or(MapError::MissingIndex { x })?;
        if y == 0 || y > m {
            return Err(MapError::OutOfRange { y, m });
        }
        if table[y - 1] != 0 {
            return Err(MapError::DuplicateIndex { y });
        }
        table[y - 1] = x;
    }
    Ok(Permutation::from_table(table).expect("every slot filled exactly once"))
}

/// Protocol line a process is about to execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesaPc {
    /// Lines 01 / 10.
    Acquire(u8),
    /// Lines 02–03 / 11–12.
    Increment(u8),
    /// Lines 04 / 13.
    Release(u8),
    /// Line 06, next local index.
    WinnerWrite(usize),
    /// Line 07, next local index of the current scan.
    LaggardScan(usize),
    /// Line 08.
    ComputeMap,
    /// Line 15, next local index.
    BitWrite(usize),
    /// Line 16, next local index of the current bit scan.
    BitScan(usize),
    /// Only reachable under [`Mutant::BitReset`].
    BitUndo,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Running,
    Done,
}

/// Trace labels for one synchronization phase.
#[derive(Debug)]
pub struct PhaseLabels {
    pub mutex: MutexLabels,
    pub increment: &'static str,
    pub winner: &'static str,
    pub laggard: &'static str,
    pub map: &'static str,
}

pub static V1_LABELS: PhaseLabels = PhaseLabels {
    mutex: MutexLabels {
        scan: "DESA-01/MUTEX-RW-01:scan",
        contend: "DESA-01/MUTEX-RW-04:contend",
        spin: "DESA-01/MUTEX-RW-01:spin",
        enter: "DESA-01/MUTEX-RW-04:enter",
        cs_enter: "DESA-01",
        sweep_read: "DESA-04/MUTEX-RW-01:sweep",
        sweep_write: "DESA-04/MUTEX-RW-04:sweep",
        cs_exit: "DESA-04",
    },
    increment: "DESA-02",
    winner: "DESA-06",
    laggard: "DESA-07",
    map: "DESA-08",
};

pub static V2_PHASE1_LABELS: PhaseLabels = PhaseLabels {
    mutex: MutexLabels {
        scan: "BITDESA-01/MUTEX-RW-01:scan",
        contend: "BITDESA-01/MUTEX-RW-04:contend",
        spin: "BITDESA-01/MUTEX-RW-01:spin",
        enter: "BITDESA-01/MUTEX-RW-04:enter",
        cs_enter: "BITDESA-01",
        sweep_read: "BITDESA-04/MUTEX-RW-01:sweep",
        sweep_write: "BITDESA-04/MUTEX-RW-04:sweep",
        cs_exit: "BITDESA-04",
    },
    increment: "BITDESA-02",
    winner: "BITDESA-06",
    laggard: "BITDESA-07",
    map: "BITDESA-08",
};

pub static V2_PHASE2_LABELS: PhaseLabels = PhaseLabels {
    mutex: MutexLabels {
        scan: "BITDESA-10/MUTEX-RW-01:scan",
        contend: "BITDESA-10/MUTEX-RW-04:contend",
        spin: "BITDESA-10/MUTEX-RW-01:spin",
        enter: "BITDESA-10/MUTEX-RW-04:enter",
        cs_enter: "BITDESA-10",
        sweep_read: "BITDESA-13/MUTEX-RW-01:sweep",
        sweep_write: "BITDESA-13/MUTEX-RW-04:sweep",
        cs_exit: "BITDESA-13",
    },
    increment: "BITDESA-11",
    winner: "BITDESA-15",
    laggard: "BITDESA-16",
    map: "BITDESA-08",
};

pub const APPL_LABEL: &str = "APPL";

pub fn phase_labels(variant: Variant, phase: u8) -> &'static PhaseLabels {
    match (variant, phase) {
        (Variant::V1, _) => &V1_LABELS,
        (Variant::V2, 1) => &V2_PHASE1_LABELS,
        (Variant::V2, _) => &V2_PHASE2_LABELS,
    }
}

/// Protocol state of one process.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesaProcess {
    pub id: ProcessId,
    /// Harness bookkeeping; the protocol never looks at it except to name
    /// itself to the arbiter.
    pub ordinal: usize,
    pub ct: u32,
    pub last1: bool,
    pub last2: bool,
    /// Current (possibly partial) line-07 snapshot.
    pub sm: Vec<RegisterWord>,
    /// Some bit seen set during the current line-16 scan.
    pub bit_seen: bool,
    pub map: Option<Permutation>,
    pub pc: DesaPc,
    pub mutex: MutexProcState,
}

impl DesaProcess {
    pub fn new(id: ProcessId, ordinal: usize, cfg: &Config) -> Self {
        let mut mutex = MutexProcState::default();
        mutex::begin_acquire(&mut mutex, cfg).expect("first acquire is always allowed");
        DesaProcess {
            id,
            ordinal,
            ct: 0,
            last1: false,
            last2: false,
            sm: vec![RegisterWord::INITIAL; cfg.m],
            bit_seen: false,
            map: None,
            pc: DesaPc::Acquire(1),
            mutex,
        }
    }

    pub fn is_done(&self) -> bool {
        self.pc == DesaPc::Done
    }

    /// Critical sections this process has completed the increment of.
    pub fn increments_done(&self) -> u8 {
        match self.pc {
            DesaPc::Acquire(1) | DesaPc::Increment(1) => 0,
            DesaPc::Release(1)
            | DesaPc::WinnerWrite(_)
            | DesaPc::LaggardScan(_)
            | DesaPc::ComputeMap
            | DesaPc::Acquire(_)
            | DesaPc::Increment(_) => 1,
            DesaPc::Release(_) | DesaPc::BitWrite(_) | DesaPc::BitScan(_) | DesaPc::BitUndo => 2,
            DesaPc::Done => self.mutex.acquires,
        }
    }

    fn access_ctx<'a>(
        id: ProcessId,
        ct: &'a mut u32,
        map: &'a Option<Permutation>,
        cfg: &Config,
    ) -> AccessCtx<'a> {
        let indexed = cfg.variant == Variant::V2 && cfg.v2_mode == V2Mode::Indexed;
        AccessCtx {
            id,
            ct,
            index_map: if indexed { map.as_ref() } else { None },
        }
    }

    fn end_of_phase1(&mut self, cfg: &Config) -> Result<(), StepError> {
        match cfg.variant {
            Variant::V1 => self.pc = DesaPc::Done,
            Variant::V2 => {
                mutex::begin_acquire(&mut self.mutex, cfg)?;
                self.pc = DesaPc::Acquire(2);
            }
        }
        Ok(())
    }

    /// Writes `appl(y, payload)` into the register commonly named `y`.
    pub fn appl_write(
        &self,
        port: &mut Port<'_>,
        y: usize,
        payload: Payload,
    ) -> Result<(), StepError> {
        let x = self.local_of(y, port.m())?;
        let body = RegisterBody::Appl { y, payload };
        port.write(x, WriteDelta::Rm { ct: self.ct, body }, APPL_LABEL)?;
        Ok(())
    }

    /// Payload of the register commonly named `y`, or `None` if it holds no
    /// application value yet.
    pub fn appl_read(&self, port: &mut Port<'_>, y: usize) -> Result<Option<Payload>, StepError> {
        let x = self.local_of(y, port.m())?;
        let word = port.read(x, APPL_LABEL)?;
        Ok(match word.body {
            RegisterBody::Appl { payload, .. } => Some(payload),
            _ => None,
        })
    }

    fn local_of(&self, y: usize, m: usize) -> Result<usize, StepError> {
        let map = self.map.as_ref().ok_or(StepError::NoMap)?;
        if y == 0 || y > m {
            return Err(StepError::BadCommonIndex { y, m });
        }
        Ok(map.apply(y))
    }
}

/// Advances `p` by one step: at most one shared-memory access.
pub fn desa_step(
    p: &mut DesaProcess,
    port: &mut Port<'_>,
    arb: &mut Arbiter,
    cfg: &Config,
) -> Result<StepStatus, StepError> {
    let m = cfg.m;
    let n = cfg.n as u32;
    match p.pc {
        DesaPc::Done => return Err(StepError::AlreadyDone),
        DesaPc::Acquire(phase) => {
            let labels = phase_labels(cfg.variant, phase);
            let mut env = MutexEnv {
                ordinal: p.ordinal,
                cfg,
                access: DesaProcess::access_ctx(p.id, &mut p.ct, &p.map, cfg),
                labels: &labels.mutex,
            };
            if mutex::acquire_step(&mut p.mutex, arb, port, &mut env)? == MutexStatus::Entered {
                p.pc = DesaPc::Increment(phase);
            }
        }
        DesaPc::Increment(phase) => {
            port.local(phase_labels(cfg.variant, phase).increment)?;
            p.ct += if cfg.is_mutant(Mutant::DoubleIncrement) {
                2
            } else {
                1
            };
            if phase == 1 {
                p.last1 = p.ct == n;
            } else {
                p.last2 = p.ct == 2 * n;
            }
            mutex::begin_release(&mut p.mutex)?;
            p.pc = DesaPc::Release(phase);
        }
        DesaPc::Release(phase) => {
            let labels = phase_labels(cfg.variant, phase);
            let mut env = MutexEnv {
                ordinal: p.ordinal,
                cfg,
                access: DesaProcess::access_ctx(p.id, &mut p.ct, &p.map, cfg),
                labels: &labels.mutex,
            };
            if mutex::release_step(&mut p.mutex, arb, port, &mut env)? == MutexStatus::Released {
                match (phase, p.last1, p.last2) {
                    (1, true, _) if cfg.is_mutant(Mutant::SkipDesaBroadcast) => {
                        p.map = Some(Permutation::identity(m));
                        p.end_of_phase1(cfg)?;
                    }
                    (1, true, _) => p.pc = DesaPc::WinnerWrite(1),
                    (1, false, _) => p.pc = DesaPc::LaggardScan(1),
                    (_, _, true) => p.pc = DesaPc::BitWrite(1),
                    (_, _, false) => p.pc = DesaPc::BitScan(1),
                }
            }
        }
        DesaPc::WinnerWrite(x) => {
            let label = phase_labels(cfg.variant, 1).winner;
            // Stamped with the counter so the value n survives the overwrite
            // of the release's broadcast.
            let delta = WriteDelta::Rm {
                ct: p.ct,
                body: RegisterBody::Desa { y: x },
            };
            port.write(x, delta, label)?;
            if x < m {
                p.pc = DesaPc::WinnerWrite(x + 1);
            } else {
                p.map = Some(Permutation::identity(m));
                p.end_of_phase1(cfg)?;
            }
        }
        DesaPc::LaggardScan(x) => {
            let word = port.read(x, phase_labels(cfg.variant, 1).laggard)?;
            if cfg.is_mutant(Mutant::ScanUpdatesCt) {
                p.ct = p.ct.max(word.ct);
            }
            p.sm[x - 1] = word;
            p.pc = if x < m {
                DesaPc::LaggardScan(x + 1)
            } else if p.sm.iter().all(|w| w.body.index().is_some()) {
                DesaPc::ComputeMap
            } else {
                DesaPc::LaggardScan(1)
            };
        }
        DesaPc::ComputeMap => {
            port.local(phase_labels(cfg.variant, 1).map)?;
            p.map = Some(compute_map_from_snapshot(&p.sm)?);
            p.end_of_phase1(cfg)?;
        }
        DesaPc::BitWrite(x) => {
            port.write(x, WriteDelta::Bit(1), V2_PHASE2_LABELS.winner)?;
            p.pc = if x < m {
                DesaPc::BitWrite(x + 1)
            } else if cfg.is_mutant(Mutant::BitReset) {
                DesaPc::BitUndo
            } else {
                DesaPc::Done
            };
        }
        DesaPc::BitUndo => {
            port.write(1, WriteDelta::Bit(0), V2_PHASE2_LABELS.winner)?;
            p.pc = DesaPc::Done;
        }
        DesaPc::BitScan(x) => {
            let word = port.read(x, V2_PHASE2_LABELS.laggard)?;
            p.bit_seen |= word.bit == 1;
            p.pc = if x < m {
                DesaPc::BitScan(x + 1)
            } else if p.bit_seen {
                DesaPc::Done
            } else {
                DesaPc::BitScan(1)
            };
            if x == m {
                p.bit_seen = false;
            }
        }
    }
    Ok(if p.is_done() {
        StepStatus::Done
    } else {
        StepStatus::Running
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonmem::AnonymousMemory;
    use crate::trace::Trace;

    fn word(ct: u32, body: RegisterBody) -> RegisterWord {
        RegisterWord { bit: 0, ct, body }
    }

    fn mem_with(cells: &[RegisterWord]) -> AnonymousMemory {
        let m = cells.len();
        let mut mem = AnonymousMemory::new(2, m, vec![Permutation::identity(m); 2]).unwrap();
        for (k, w) in cells.iter().enumerate() {
            mem.phys_write(
                0,
                k + 1,
                WriteDelta::Rm {
                    ct: w.ct,
                    body: w.body,
                },
            )
            .unwrap();
        }
        mem
    }

    #[test]
    fn instrumented_read_harvests_stamp() {
        let q = ProcessId::from_token(7);
        let me = ProcessId::from_token(1);
        let cases = [
            (1, word(3, RegisterBody::BOTTOM), None, 3),
            (5, word(3, RegisterBody::Mutex { val: Some(q) }), Some(q), 5),
            (2, word(2, RegisterBody::Desa { y: 3 }), None, 2),
            (
                0,
                word(4, RegisterBody::IndexedMutex { y: 1, val: Some(q) }),
                Some(q),
                4,
            ),
        ];
        for (start, cell, want, ct_after) in cases {
            let mut mem = mem_with(&[cell]);
            let mut trace = Trace::default();
            let mut port = Port::new(&mut mem, 0, &mut trace);
            let mut ct = start;
            let mut ctx = AccessCtx {
                id: me,
                ct: &mut ct,
                index_map: None,
            };
            assert_eq!(
                instrumented_read(&mut port, 1, &mut ctx, "T").unwrap(),
                want
            );
            assert_eq!(ct, ct_after);
        }
    }

    #[test]
    fn instrumented_write_stamps_and_indexes() {
        let me = ProcessId::from_token(1);
        let mut mem = mem_with(&[RegisterWord::INITIAL; 3]);
        let mut trace = Trace::default();
        let mut ct = 1;
        {
            let mut port = Port::new(&mut mem, 0, &mut trace);
            let mut ctx = AccessCtx {
                id: me,
                ct: &mut ct,
                index_map: None,
            };
            instrumented_write(&mut port, 1, None, &mut ctx, "T").unwrap();
        }
        assert_eq!(mem.cells()[0], word(1, RegisterBody::BOTTOM));

        // invert(map)(2) = 3
        let map = Permutation::from_table(vec![3, 1, 2]).unwrap();
        {
            let mut port = Port::new(&mut mem, 0, &mut trace);
            let mut ctx = AccessCtx {
                id: me,
                ct: &mut ct,
                index_map: Some(&map),
            };
            instrumented_write(&mut port, 2, Some(me), &mut ctx, "T").unwrap();
        }
        assert_eq!(
            mem.cells()[1],
            word(
                1,
                RegisterBody::IndexedMutex {
                    y: 3,
                    val: Some(me)
                }
            )
        );

        let mut port = Port::new(&mut mem, 0, &mut trace);
        let mut ctx = AccessCtx {
            id: me,
            ct: &mut ct,
            index_map: None,
        };
        assert_eq!(
            instrumented_write(&mut port, 1, Some(ProcessId::from_token(2)), &mut ctx, "T"),
            Err(StepError::ForeignValue)
        );
    }

    #[test]
    fn map_from_snapshot() {
        let d = |y| word(0, RegisterBody::Desa { y });
        assert!(compute_map_from_snapshot(&[d(1), d(2), d(3)])
            .unwrap()
            .is_identity());
        let map = compute_map_from_snapshot(&[d(2), d(3), d(1)]).unwrap();
        assert_eq!((map.apply(2), map.apply(3), map.apply(1)), (1, 2, 3));
        assert_eq!(
            compute_map_from_snapshot(&[d(1), RegisterWord::INITIAL, d(3)]),
            Err(MapError::MissingIndex { x: 2 })
        );
        assert_eq!(
            compute_map_from_snapshot(&[d(1), d(1), d(3)]),
            Err(MapError::DuplicateIndex { y: 1 })
        );
        let mixed = [
            word(0, RegisterBody::Appl { y: 3, payload: 9 }),
            word(0, RegisterBody::IndexedMutex { y: 1, val: None }),
            d(2),
        ];
        let map = compute_map_from_snapshot(&mixed).unwrap();
        assert_eq!(map.as_slice(), &[2, 3, 1]);
    }

    #[test]
    fn appl_needs_a_map() {
        let cfg = Config::new(2, 3, Variant::V1);
        let mut p = DesaProcess::new(ProcessId::from_token(1), 0, &cfg);
        let mut mem = mem_with(&[RegisterWord::INITIAL; 3]);
        let mut trace = Trace::default();
        let mut port = Port::new(&mut mem, 0, &mut trace);
        assert_eq!(p.appl_write(&mut port, 1, 5), Err(StepError::NoMap));
        p.map = Some(Permutation::from_table(vec![2, 3, 1]).unwrap());
        assert_eq!(p.appl_read(&mut port, 1).unwrap(), None);
        let mut port = Port::new(&mut mem, 0, &mut trace);
        p.appl_write(&mut port, 1, 5).unwrap();
        assert_eq!(mem.cells()[1].body, RegisterBody::Appl { y: 1, payload: 5 });
        let mut port = Port::new(&mut mem, 0, &mut trace);
        assert_eq!(p.appl_read(&mut port, 1).unwrap(), Some(5));
        let mut port = Port::new(&mut mem, 0, &mut trace);
        assert_eq!(
            p.appl_read(&mut port, 4),
            Err(StepError::BadCommonIndex { y: 4, m: 3 })
        );
    }
}
