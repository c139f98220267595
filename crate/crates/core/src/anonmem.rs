//! Anonymous read/write shared memory.
//!
//! The memory holds `m` physical registers. Process `i` never sees physical
//! indices: every access it issues at local index `x` lands on physical
//! register `f_i(x)`, where `f_i` is a private permutation picked by the
//! adversary. Protocol code only ever gets a [`Port`], which performs the
//! translation and records the access; the permutations and physical cells
//! are reachable from the harness side only.

use std::borrow::Cow;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{AccessKind, Recorder, TraceEntry};

/// Opaque process identity.
///
/// Identities can be compared for equality and nothing else: there is no
/// ordering and the token is not readable from outside the crate.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(u64);

impl ProcessId {
    /// Builds an identity from a harness-chosen token.
    pub fn from_token(token: u64) -> Self {
        ProcessId(token)
    }

    pub(crate) fn token(self) -> u64 {
        self.0
    }

    /// `n` pairwise distinct identities.
    pub fn distinct(n: usize) -> Vec<ProcessId> {
        (1..=n as u64).map(ProcessId).collect()
    }
}

impl fmt::Debug for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "id#{}", self.0)
    }
}

/// Opaque application payload carried by `appl` values.
pub type Payload = u64;

/// Tagged body of a register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum RegisterBody {
    /// `mutex<ct, val>`; `None` is ⊥.
    Mutex { val: Option<ProcessId> },
    /// `desa(y)`.
    Desa { y: usize },
    /// Mutex value that also carries the common index of the cell.
    IndexedMutex { y: usize, val: Option<ProcessId> },
    /// `appl(y, payload)`.
    Appl { y: usize, payload: Payload },
}

impl RegisterBody {
    pub const BOTTOM: RegisterBody = RegisterBody::Mutex { val: None };

    /// Common index carried by the body, if any.
    pub fn index(&self) -> Option<usize> {
        match *self {
            RegisterBody::Mutex { .. } => None,
            RegisterBody::Desa { y }
            | RegisterBody::IndexedMutex { y, .. }
            | RegisterBody::Appl { y, .. } => Some(y),
        }
    }

    /// Value seen by the mutex algorithm. `desa` and `appl` bodies read as ⊥.
    pub fn mutex_value(&self) -> Option<ProcessId> {
        match *self {
            RegisterBody::Mutex { val } | RegisterBody::IndexedMutex { val, .. } => val,
            RegisterBody::Desa { .. } | RegisterBody::Appl { .. } => None,
        }
    }

    pub fn is_desa(&self) -> bool {
        matches!(self, RegisterBody::Desa { .. })
    }
}

/// Full content of one register: control bit, counter stamp and body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterWord {
    pub bit: u8,
    pub ct: u32,
    pub body: RegisterBody,
}

impl RegisterWord {
    /// `mutex<0, ⊥>` with bit 0.
    pub const INITIAL: RegisterWord = RegisterWord {
        bit: 0,
        ct: 0,
        body: RegisterBody::BOTTOM,
    };
}

impl Default for RegisterWord {
    fn default() -> Self {
        RegisterWord::INITIAL
    }
}

/// The parts of a register touched by one write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WriteDelta {
    /// Overwrites stamp and body, leaves the bit alone.
    Rm { ct: u32, body: RegisterBody },
    /// Overwrites the bit only.
    Bit(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("local index {index} outside 1..={m}")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("process ordinal {ordinal} has no permutation (n={n})")]
    UnknownProcess { ordinal: usize, n: usize },
    #[error("bit of physical register {physical} cannot go from 1 back to {value}")]
    BitReset { physical: usize, value: u8 },
    #[error("bit value {0} is not 0 or 1")]
    BadBit(u8),
    #[error("a step may access shared memory at most once")]
    SecondAccess,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("need at least 2 processes, got n={0}")]
    TooFewProcesses(usize),
    #[error("need at least 1 register, got m={0}")]
    NoRegisters(usize),
    #[error("permutation table {table:?} is not a bijection on 1..={m}")]
    NotBijective { table: Vec<usize>, m: usize },
    #[error("expected {expected} permutations, got {got}")]
    PermutationCount { expected: usize, got: usize },
    #[error("permutation has size {got}, memory has {expected} registers")]
    PermutationSize { expected: usize, got: usize },
    #[error("identities are not pairwise distinct")]
    DuplicateIdentity,
    #[error("expected {expected} identities, got {got}")]
    IdentityCount { expected: usize, got: usize },
    #[error("m={m} is not in M({n}): gcd({l},{m})={g}, but gcd(l,m)=1 is required for every 1<l<=n (and m != 1)")]
    Infeasible {
        n: usize,
        m: usize,
        l: usize,
        g: usize,
    },
}

/// Bijection on `1..=m`, stored as its forward table.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(m: usize) -> Self {
        Permutation((1..=m).collect())
    }

    /// Accepts a 1-based forward table if every index appears exactly once.
    pub fn from_table(table: Vec<usize>) -> Result<Self, ConfigError> {
        let m = table.len();
        let mut seen = vec![false; m];
        for &v in &table {
            if v == 0 || v > m || seen[v - 1] {
                return Err(ConfigError::NotBijective { table, m });
            }
            seen[v - 1] = true;
        }
        Ok(Permutation(table))
    }

    /// Uniformly random permutation of `1..=m`.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        let mut table: Vec<usize> = (1..=m).collect();
        table.shuffle(rng);
        Permutation(table)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Image of `x`. Panics if `x` is outside `1..=m`.
    pub fn apply(&self, x: usize) -> usize {
        self.0[x - 1]
    }

    /// `p.compose(q)` maps `x` to `p(q(x))`.
    pub fn compose(&self, inner: &Permutation) -> Permutation {
        assert_eq!(
            self.len(),
            inner.len(),
            "composing permutations of different sizes"
        );
        Permutation(inner.0.iter().map(|&x| self.apply(x)).collect())
    }

    pub fn invert(&self) -> Permutation {
        let mut inv = vec![0; self.len()];
        for (x, &y) in self.0.iter().enumerate() {
            inv[y - 1] = x + 1;
        }
        Permutation(inv)
    }

    /// Preimage of `y`, without building the inverse.
    pub fn preimage(&self, y: usize) -> usize {
        self.0
            .iter()
            .position(|&v| v == y)
            .map(|p| p + 1)
            .expect("index in range")
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(x, &y)| x + 1 == y)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = ConfigError;

    fn try_from(table: Vec<usize>) -> Result<Self, Self::Error> {
        Permutation::from_table(table)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// The `m` physical registers together with each process's adversary permutation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AnonymousMemory {
    cells: Vec<RegisterWord>,
    perms: Vec<Permutation>,
}

impl AnonymousMemory {
    /// All registers start as `mutex<0, ⊥>` with bit 0.
    pub fn new(n: usize, m: usize, perms: Vec<Permutation>) -> Result<Self, ConfigError> {
        if n < 2 {
            return Err(ConfigError::TooFewProcesses(n));
        }
        if m < 1 {
            return Err(ConfigError::NoRegisters(m));
        }
        if perms.len() != n {
            return Err(ConfigError::PermutationCount {
                expected: n,
                got: perms.len(),
            });
        }
        if let Some(p) = perms.iter().find(|p| p.len() != m) {
            return Err(ConfigError::PermutationSize {
                expected: m,
                got: p.len(),
            });
        }
        Ok(AnonymousMemory {
            cells: vec![RegisterWord::INITIAL; m],
            perms,
        })
    }

    /// Draws `n` independent uniform permutations from `rng`.
    pub fn random_perms<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Permutation> {
        (0..n).map(|_| Permutation::random(m, rng)).collect()
    }

    pub fn m(&self) -> usize {
        self.cells.len()
    }

    pub fn n(&self) -> usize {
        self.perms.len()
    }

    /// Physical registers, indexed from 0 (physical register `k` is `cells()[k-1]`).
    pub fn cells(&self) -> &[RegisterWord] {
        &self.cells
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    /// `f_i(x)`.
    pub fn physical_index(&self, ordinal: usize, x: usize) -> Result<usize, MemoryError> {
        let m = self.m();
        if x == 0 || x > m {
            return Err(MemoryError::IndexOutOfRange { index: x, m });
        }
        let perm = self.perms.get(ordinal).ok_or(MemoryError::UnknownProcess {
            ordinal,
            n: self.n(),
        })?;
        Ok(perm.apply(x))
    }

    /// Reads `SM_i[x]`, i.e. physical register `f_i(x)`.
    pub fn phys_read(&self, ordinal: usize, x: usize) -> Result<RegisterWord, MemoryError> {
        let phys = self.physical_index(ordinal, x)?;
        Ok(self.cells[phys - 1])
    }

    /// Applies `delta` to `SM_i[x]`. Returns the physical index with the
    /// words before and after the write.
    pub fn phys_write(
        &mut self,
        ordinal: usize,
        x: usize,
        delta: WriteDelta,
    ) -> Result<(usize, RegisterWord, RegisterWord), MemoryError> {
        let phys = self.physical_index(ordinal, x)?;
        let cell = &mut self.cells[phys - 1];
        let before = *cell;
        match delta {
            WriteDelta::Rm { ct, body } => {
                cell.ct = ct;
                cell.body = body;
            }
            WriteDelta::Bit(b) => {
                if b > 1 {
                    return Err(MemoryError::BadBit(b));
                }
                if cell.bit == 1 && b == 0 {
                    return Err(MemoryError::BitReset {
                        physical: phys,
                        value: b,
                    });
                }
                cell.bit = b;
            }
        }
        Ok((phys, before, *cell))
    }

    /// Reads all registers in local order in one go. Protocol code performs
    /// its scans one read per step instead (see [`Port`]).
    pub fn scan(&self, ordinal: usize) -> Result<Vec<RegisterWord>, MemoryError> {
        (1..=self.m()).map(|x| self.phys_read(ordinal, x)).collect()
    }

    /// Replaces every `f_i` by `g ∘ f_i` and moves each cell to its image under `g`.
    pub fn relabel(&self, g: &Permutation) -> AnonymousMemory {
        let mut cells = vec![RegisterWord::INITIAL; self.m()];
        for (k, w) in self.cells.iter().enumerate() {
            cells[g.apply(k + 1) - 1] = *w;
        }
        AnonymousMemory {
            cells,
            perms: self.perms.iter().map(|f| g.compose(f)).collect(),
        }
    }
}

/// Protocol-side handle on the memory for a single step of process `ordinal`.
///
/// Only local indices go in and only register words come out. Each access is
/// appended to the recorder with its physical index. At most one read or
/// write (or one local transition) may happen per step.
pub struct Port<'a> {
    mem: &'a mut AnonymousMemory,
    ordinal: usize,
    rec: &'a mut dyn Recorder,
    used: bool,
    wrote: bool,
}

impl<'a> Port<'a> {
    pub fn new(mem: &'a mut AnonymousMemory, ordinal: usize, rec: &'a mut dyn Recorder) -> Self {
        Port {
            mem,
            ordinal,
            rec,
            used: false,
            wrote: false,
        }
    }

    pub fn m(&self) -> usize {
        self.mem.m()
    }

    pub fn n(&self) -> usize {
        self.mem.n()
    }

    fn take_turn(&mut self) -> Result<(), MemoryError> {
        if self.used {
            return Err(MemoryError::SecondAccess);
        }
        self.used = true;
        Ok(())
    }

    /// Whether this step performed a write.
    pub fn wrote(&self) -> bool {
        self.wrote
    }

    pub fn read(&mut self, x: usize, pc: &'static str) -> Result<RegisterWord, MemoryError> {
        self.take_turn()?;
        let phys = self.mem.physical_index(self.ordinal, x)?;
        let word = self.mem.cells[phys - 1];
        self.rec.record(TraceEntry {
            step: 0,
            ordinal: self.ordinal,
            kind: AccessKind::Read,
            local_index: Some(x),
            physical_index: Some(phys),
            before: Some(word),
            after: Some(word),
            pc: Cow::Borrowed(pc),
        });
        Ok(word)
    }

    pub fn write(
        &mut self,
        x: usize,
        delta: WriteDelta,
        pc: &'static str,
    ) -> Result<(), MemoryError> {
        self.take_turn()?;
        let (phys, before, after) = self.mem.phys_write(self.ordinal, x, delta)?;
        self.wrote = true;
        self.rec.record(TraceEntry {
            step: 0,
            ordinal: self.ordinal,
            kind: AccessKind::Write,
            local_index: Some(x),
            physical_index: Some(phys),
            before: Some(before),
            after: Some(after),
            pc: Cow::Borrowed(pc),
        });
        Ok(())
    }

    /// A step that touches no register.
    pub fn local(&mut self, pc: &'static str) -> Result<(), MemoryError> {
        self.take_turn()?;
        self.rec
            .record(TraceEntry::event(self.ordinal, AccessKind::Local, pc));
        Ok(())
    }

    /// Critical-section entry/exit marker; not a memory access.
    pub fn event(&mut self, kind: AccessKind, pc: &'static str) {
        self.rec.record(TraceEntry::event(self.ordinal, kind, pc));
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// First `l` in `2..=n` with `gcd(l, m) != 1`, with that gcd.
pub fn m_witness(n: usize, m: usize) -> Option<(usize, usize)> {
    (2..=n).map(|l| (l, gcd(l, m))).find(|&(_, g)| g != 1)
}

/// `m ∈ M(n)`: `m != 1` and `gcd(l, m) = 1` for every `1 < l <= n`.
pub fn is_in_m(n: usize, m: usize) -> bool {
    m != 1 && m_witness(n, m).is_none()
}

/// Smallest `m > m_prime` in `M(n)`.
pub fn next_in_m(n: usize, m_prime: usize) -> usize {
    (m_prime + 1..)
        .find(|&m| is_in_m(n, m))
        .expect("primes above n are in M(n)")
}

/// Control bits needed per register for `desa(x)` / `appl(x, -)` values:
/// one tag bit plus `ceil(log2 m)` index bits.
pub fn control_bits(m: usize) -> u32 {
    assert!(m >= 1, "control_bits needs m >= 1");
    1 + (m as u64).next_power_of_two().trailing_zeros()
}

/// Rejects `m ∉ M(n)` with the first offending `l`.
pub fn check_feasible(n: usize, m: usize) -> Result<(), ConfigError> {
    if m == 1 {
        return Err(ConfigError::Infeasible { n, m, l: 1, g: 1 });
    }
    match m_witness(n, m) {
        Some((l, g)) => Err(ConfigError::Infeasible { n, m, l, g }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Trace;

    fn perm(t: &[usize]) -> Permutation {
        Permutation::from_table(t.to_vec()).unwrap()
    }

    #[test]
    fn fresh_memory_is_uniform() {
        let mem = AnonymousMemory::new(2, 3, vec![Permutation::identity(3); 2]).unwrap();
        assert!(mem.cells().iter().all(|&w| w == RegisterWord::INITIAL));
        assert_eq!(mem.scan(0).unwrap(), vec![RegisterWord::INITIAL; 3]);
    }

    #[test]
    fn constructor_errors() {
        assert!(matches!(
            Permutation::from_table(vec![1, 1, 3]),
            Err(ConfigError::NotBijective { .. })
        ));
        assert!(Permutation::from_table(vec![0, 1]).is_err());
        assert_eq!(
            AnonymousMemory::new(1, 3, vec![Permutation::identity(3)]),
            Err(ConfigError::TooFewProcesses(1))
        );
        assert_eq!(
            AnonymousMemory::new(2, 0, vec![]),
            Err(ConfigError::NoRegisters(0))
        );
        assert!(AnonymousMemory::new(2, 3, vec![Permutation::identity(3)]).is_err());
        assert!(AnonymousMemory::new(
            2,
            3,
            vec![Permutation::identity(3), Permutation::identity(4)]
        )
        .is_err());
    }

    #[test]
    fn writes_land_on_translated_cell() {
        let mut mem = AnonymousMemory::new(2, 3, vec![perm(&[2, 3, 1]), perm(&[3, 1, 2])]).unwrap();
        let body = RegisterBody::Desa { y: 1 };
        mem.phys_write(0, 1, WriteDelta::Rm { ct: 0, body })
            .unwrap();
        assert_eq!(mem.cells()[1].body, body);
        // p2 reaches physical 3 at local 1, physical 2 at local 3.
        assert_eq!(mem.phys_read(1, 3).unwrap().body, body);
        assert_eq!(mem.phys_read(1, 1).unwrap(), mem.cells()[2]);
        assert_eq!(
            mem.phys_read(0, 0),
            Err(MemoryError::IndexOutOfRange { index: 0, m: 3 })
        );
        assert!(mem.phys_read(0, 4).is_err());
    }

    #[test]
    fn write_parts_are_independent() {
        let id = ProcessId::from_token(9);
        let mut mem = AnonymousMemory::new(2, 3, vec![Permutation::identity(3); 2]).unwrap();
        mem.cells[0] = RegisterWord {
            bit: 1,
            ct: 1,
            body: RegisterBody::Mutex { val: Some(id) },
        };
        mem.phys_write(
            0,
            1,
            WriteDelta::Rm {
                ct: 4,
                body: RegisterBody::Desa { y: 2 },
            },
        )
        .unwrap();
        assert_eq!(
            mem.cells()[0],
            RegisterWord {
                bit: 1,
                ct: 4,
                body: RegisterBody::Desa { y: 2 }
            }
        );

        mem.cells[1] = RegisterWord {
            bit: 0,
            ct: 3,
            body: RegisterBody::Desa { y: 1 },
        };
        mem.phys_write(0, 2, WriteDelta::Bit(1)).unwrap();
        assert_eq!(
            mem.cells()[1],
            RegisterWord {
                bit: 1,
                ct: 3,
                body: RegisterBody::Desa { y: 1 }
            }
        );
        assert_eq!(
            mem.phys_write(0, 2, WriteDelta::Bit(0)),
            Err(MemoryError::BitReset {
                physical: 2,
                value: 0
            })
        );
        assert!(mem.phys_write(0, 3, WriteDelta::Bit(0)).is_ok());
    }

    #[test]
    fn port_records_and_limits_accesses() {
        let mut mem =
            AnonymousMemory::new(2, 3, vec![perm(&[3, 1, 2]), Permutation::identity(3)]).unwrap();
        let mut trace = Trace::default();
        let mut port = Port::new(&mut mem, 0, &mut trace);
        port.read(1, "T").unwrap();
        assert_eq!(port.read(2, "T"), Err(MemoryError::SecondAccess));
        assert_eq!(trace.entries().len(), 1);
        assert_eq!(trace.entries()[0].physical_index, Some(3));
    }

    #[test]
    fn m_membership_examples() {
        assert!(!is_in_m(2, 4));
        assert!(!is_in_m(2, 1));
        assert!(is_in_m(3, 5));
        assert!(!is_in_m(3, 9));
        assert!(!is_in_m(2, 0));
        assert_eq!(next_in_m(2, 3), 5);
        assert_eq!(next_in_m(4, 4), 5);
        assert_eq!(next_in_m(3, 0), 5);
        assert!(matches!(
            check_feasible(2, 4),
            Err(ConfigError::Infeasible { l: 2, g: 2, .. })
        ));
    }

    #[test]
    fn control_bit_counts() {
        assert_eq!(control_bits(8), 4);
        assert_eq!(control_bits(5), 4);
        assert_eq!(control_bits(1), 1);
        assert_eq!(control_bits(2), 2);
    }

    #[test]
    fn permutation_algebra() {
        let id = Permutation::identity(3);
        assert_eq!(id.invert(), id);
        let p = perm(&[2, 3, 1]);
        assert_eq!(p.invert(), perm(&[3, 1, 2]));
        assert_eq!(p.preimage(1), 3);
        assert_eq!(p.compose(&p.invert()).invert(), id);
        assert!(serde_json::from_str::<Permutation>("[1,1,2]").is_err());
        assert_eq!(serde_json::to_string(&p).unwrap(), "[2,3,1]");
    }

    fn all_perms(m: usize) -> Vec<Permutation> {
        fn go(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Permutation>) {
            if left.is_empty() {
                out.push(Permutation(prefix.clone()));
                return;
            }
            for i in 0..left.len() {
                let v = left.remove(i);
                prefix.push(v);
                go(prefix, left, out);
                prefix.pop();
                left.insert(i, v);
            }
        }
        let mut out = Vec::new();
        go(&mut Vec::new(), &mut (1..=m).collect(), &mut out);
        out
    }

    #[test]
    fn compose_matches_pointwise_application() {
        for m in 1..=7 {
            let ps = all_perms(m);
            for p in &ps {
                for q in &ps {
                    let pq = p.compose(q);
                    assert!((1..=m).all(|x| pq.apply(x) == p.apply(q.apply(x))));
                }
            }
        }
    }

    #[test]
    fn relabel_moves_cells_and_perms() {
        let mut mem =
            AnonymousMemory::new(2, 3, vec![perm(&[2, 3, 1]), Permutation::identity(3)]).unwrap();
        mem.phys_write(
            0,
            1,
            WriteDelta::Rm {
                ct: 1,
                body: RegisterBody::Desa { y: 1 },
            },
        )
        .unwrap();
        let g = perm(&[3, 1, 2]);
        let r = mem.relabel(&g);
        for ord in 0..2 {
            assert_eq!(mem.scan(ord).unwrap(), r.scan(ord).unwrap());
        }
    }
}
