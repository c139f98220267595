//! One-shot mutual exclusion over the anonymous memory.
//!
//! This is a specification mutex: its register behavior is exactly what the
//! desanonymization protocols rely on, and who gets the lock next is decided
//! by a hidden FIFO [`Arbiter`] instead of by the register contents.
//!
//! * Mutex-1: the only values written are the writer's identity or ⊥.
//! * Mutex-2: an acquire reads every register. The process that is granted
//!   the lock reads all registers again before it writes, so it sees every
//!   counter stamp left by the previous holder's release.
//! * Mutex-3: the holder writes its identity to all registers, and nobody
//!   else writes while it does, so all registers hold its identity on entry.
//! * Mutex-4: a contender writes its identity once per acquire; release
//!   writes ⊥ into every register that still holds the releaser's identity.
//!
//! Every step performs exactly one register access.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonmem::{Port, ProcessId};
use crate::config::{Config, ContenderPolicy, Mutant};
use crate::desa::{instrumented_read, instrumented_write, AccessCtx, StepError};
use crate::trace::AccessKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutexError {
    #[error("acquire number {attempt} exceeds the {allowed} allowed for this variant")]
    TooManyAcquires { attempt: u8, allowed: u8 },
    #[error("release called by a process that is not in its critical section")]
    NotHolder,
    #[error("acquire step on a process that is not acquiring")]
    NotAcquiring,
    #[error("release step on a process that is not releasing")]
    NotReleasing,
}

/// Where a process is within acquire/release.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutexPhase {
    Idle,
    /// Next read of the acquire scan, at local index `k`.
    AcquireScan(usize),
    /// The contender's single identity write.
    ContendWrite,
    /// Waiting for the lock, reading local index 1.
    Spin,
    /// Holder writing its identity at local index `k`.
    EnterWrite(usize),
    InCs,
    /// Release at local index `k`; `clear` means the read found our identity
    /// there and the ⊥ write is next.
    ReleaseSweep {
        k: usize,
        clear: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutexProcState {
    pub phase: MutexPhase,
    /// Joined the arbiter queue for the current acquire.
    pub queued: bool,
    /// Issued the contender write for the current acquire.
    pub contended: bool,
    /// Writes issued during the current acquire while another process held
    /// the critical section.
    pub writes_this_epoch: u8,
    pub acquires: u8,
}

impl Default for MutexProcState {
    fn default() -> Self {
        MutexProcState {
            phase: MutexPhase::Idle,
            queued: false,
            contended: false,
            writes_this_epoch: 0,
            acquires: 0,
        }
    }
}

impl MutexProcState {
    /// Between the critical-section entry and the end of release.
    pub fn in_cs(&self) -> bool {
        matches!(
            self.phase,
            MutexPhase::InCs | MutexPhase::ReleaseSweep { .. }
        )
    }

    pub fn is_acquiring(&self) -> bool {
        matches!(
            self.phase,
            MutexPhase::AcquireScan(_)
                | MutexPhase::ContendWrite
                | MutexPhase::Spin
                | MutexPhase::EnterWrite(_)
        )
    }
}

/// Hidden arbitration state: FIFO of waiting ordinals, by arrival.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arbiter {
    pub queue: VecDeque<usize>,
    pub holder: Option<usize>,
    /// The holder is writing its identity everywhere.
    pub entering: bool,
    /// The holder has entered its critical section and not finished release.
    pub in_cs: bool,
}

/// Trace labels for one acquire/release pair.
#[derive(Debug)]
pub struct MutexLabels {
    pub scan: &'static str,
    pub contend: &'static str,
    pub spin: &'static str,
    pub enter: &'static str,
    pub cs_enter: &'static str,
    pub sweep_read: &'static str,
    pub sweep_write: &'static str,
    pub cs_exit: &'static str,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutexStatus {
    Pending,
    /// The acquire completed: the caller is in its critical section.
    Entered,
    /// The release completed.
    Released,
}

/// Per-step view of the caller for the mutex.
pub struct MutexEnv<'a> {
    pub ordinal: usize,
    pub cfg: &'a Config,
    pub access: AccessCtx<'a>,
    pub labels: &'static MutexLabels,
}

/// Starts a new acquire; the first step joins the arbiter queue.
pub fn begin_acquire(st: &mut MutexProcState, cfg: &Config) -> Result<(), MutexError> {
    let allowed = cfg.phases();
    if st.acquires >= allowed {
        return Err(MutexError::TooManyAcquires {
            attempt: st.acquires + 1,
            allowed,
        });
    }
    st.acquires += 1;
    st.phase = MutexPhase::AcquireScan(1);
    st.queued = false;
    st.contended = false;
    st.writes_this_epoch = 0;
    Ok(())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Local index of the contender write.
pub fn contender_target(cfg: &Config, ordinal: usize, acquires: u8, id: ProcessId) -> usize {
    if cfg.is_mutant(Mutant::IdentityOrder) {
        return (id.token() % cfg.m as u64) as usize + 1;
    }
    match cfg.contender_policy {
        ContenderPolicy::FixedIndex => 1,
        ContenderPolicy::SeededRandom => {
            let h = splitmix(cfg.seed ^ splitmix(((ordinal as u64) << 8) | acquires as u64));
            (h % cfg.m as u64) as usize + 1
        }
    }
}

/// One step of acquire.
pub fn acquire_step(
    st: &mut MutexProcState,
    arb: &mut Arbiter,
    port: &mut Port<'_>,
    env: &mut MutexEnv<'_>,
) -> Result<MutexStatus, StepError> {
    let me = env.ordinal;
    let m = env.cfg.m;
    if !st.is_acquiring() {
        return Err(MutexError::NotAcquiring.into());
    }
    if !st.queued {
        arb.queue.push_back(me);
        st.queued = true;
    }
    // Lock granted: start over with a full read pass as holder.
    if arb.holder.is_none() && arb.queue.front() == Some(&me) {
        arb.queue.pop_front();
        arb.holder = Some(me);
        st.phase = MutexPhase::AcquireScan(1);
    }
    let holding = arb.holder == Some(me);
    let labels = env.labels;

    match st.phase {
        MutexPhase::AcquireScan(k) => {
            instrumented_read(port, k, &mut env.access, labels.scan)?;
            st.phase = if k < m {
                MutexPhase::AcquireScan(k + 1)
            } else if holding {
                arb.entering = true;
                MutexPhase::EnterWrite(1)
            } else if !st.contended {
                MutexPhase::ContendWrite
            } else {
                MutexPhase::Spin
            };
        }
        MutexPhase::ContendWrite => {
            if arb.entering {
                // Hold the write back until the holder has covered every register.
                instrumented_read(port, 1, &mut env.access, labels.spin)?;
            } else {
                let target = contender_target(env.cfg, me, st.acquires, env.access.id);
                let id = env.access.id;
                instrumented_write(port, target, Some(id), &mut env.access, labels.contend)?;
                st.contended = true;
                st.phase = MutexPhase::Spin;
            }
        }
        MutexPhase::Spin => {
            instrumented_read(port, 1, &mut env.access, labels.spin)?;
        }
        MutexPhase::EnterWrite(k) => {
            let id = env.access.id;
            instrumented_write(port, k, Some(id), &mut env.access, labels.enter)?;
            if k < m {
                st.phase = MutexPhase::EnterWrite(k + 1);
            } else {
                st.phase = MutexPhase::InCs;
                arb.entering = false;
                arb.in_cs = true;
                port.event(AccessKind::CsEnter, labels.cs_enter);
                return Ok(MutexStatus::Entered);
            }
        }
        MutexPhase::Idle | MutexPhase::InCs | MutexPhase::ReleaseSweep { .. } => unreachable!(),
    }
    Ok(MutexStatus::Pending)
}

/// Starts release; only the process in its critical section may call it.
pub fn begin_release(st: &mut MutexProcState) -> Result<(), MutexError> {
    if st.phase != MutexPhase::InCs {
        return Err(MutexError::NotHolder);
    }
    st.phase = MutexPhase::ReleaseSweep { k: 1, clear: false };
    Ok(())
}

/// One step of release.
pub fn release_step(
    st: &mut MutexProcState,
    arb: &mut Arbiter,
    port: &mut Port<'_>,
    env: &mut MutexEnv<'_>,
) -> Result<MutexStatus, StepError> {
    let MutexPhase::ReleaseSweep { k, clear } = st.phase else {
        return Err(MutexError::NotReleasing.into());
    };
    let m = env.cfg.m;
    let labels = env.labels;
    let advance = if clear {
        instrumented_write(port, k, None, &mut env.access, labels.sweep_write)?;
        true
    } else {
        let v = instrumented_read(port, k, &mut env.access, labels.sweep_read)?;
        let own = v == Some(env.access.id);
        if own && !env.cfg.is_mutant(Mutant::SkipBottomSweep) {
            st.phase = MutexPhase::ReleaseSweep { k, clear: true };
            false
        } else {
            true
        }
    };
    if advance {
        if k < m {
            st.phase = MutexPhase::ReleaseSweep {
                k: k + 1,
                clear: false,
            };
        } else {
            st.phase = MutexPhase::Idle;
            arb.holder = None;
            arb.in_cs = false;
            port.event(AccessKind::CsExit, labels.cs_exit);
            return Ok(MutexStatus::Released);
        }
    }
    Ok(MutexStatus::Pending)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    #[test]
    fn acquire_budget_per_variant() {
        let cfg = Config::new(2, 3, Variant::V1);
        let mut st = MutexProcState::default();
        begin_acquire(&mut st, &cfg).unwrap();
        assert_eq!(
            begin_acquire(&mut st, &cfg),
            Err(MutexError::TooManyAcquires {
                attempt: 2,
                allowed: 1
            })
        );
        let cfg2 = Config::new(2, 3, Variant::V2);
        let mut st = MutexProcState::default();
        begin_acquire(&mut st, &cfg2).unwrap();
        begin_acquire(&mut st, &cfg2).unwrap();
        assert!(begin_acquire(&mut st, &cfg2).is_err());
    }

    #[test]
    fn release_requires_cs() {
        let mut st = MutexProcState::default();
        assert_eq!(begin_release(&mut st), Err(MutexError::NotHolder));
        st.phase = MutexPhase::Spin;
        assert_eq!(begin_release(&mut st), Err(MutexError::NotHolder));
        st.phase = MutexPhase::InCs;
        assert!(begin_release(&mut st).is_ok());
    }

    #[test]
    fn seeded_targets_are_in_range_and_stable() {
        let cfg = Config::new(3, 5, Variant::V1)
            .with_policy(ContenderPolicy::SeededRandom)
            .with_seed(42);
        let id = ProcessId::from_token(1);
        let mut hit = [false; 5];
        for ord in 0..3 {
            for a in 1..=2 {
                let t = contender_target(&cfg, ord, a, id);
                assert!((1..=5).contains(&t));
                assert_eq!(t, contender_target(&cfg, ord, a, id));
                hit[t - 1] = true;
            }
        }
        assert!(hit.iter().filter(|h| **h).count() > 1);
        let fixed = Config::new(3, 5, Variant::V1);
        assert_eq!(contender_target(&fixed, 2, 1, id), 1);
    }
}
