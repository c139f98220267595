//! Execution traces and their JSON-lines form.

use std::borrow::Cow;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::anonmem::RegisterWord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccessKind {
    Read,
    Write,
    CsEnter,
    CsExit,
    Local,
}

impl AccessKind {
    /// Read, write and local entries are scheduler turns; CS markers ride along
    /// with the turn that produced them.
    pub fn is_turn(self) -> bool {
        matches!(
            self,
            AccessKind::Read | AccessKind::Write | AccessKind::Local
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub ordinal: usize,
    pub kind: AccessKind,
    pub local_index: Option<usize>,
    pub physical_index: Option<usize>,
    pub before: Option<RegisterWord>,
    pub after: Option<RegisterWord>,
    pub pc: Cow<'static, str>,
}

impl TraceEntry {
    pub(crate) fn event(ordinal: usize, kind: AccessKind, pc: &'static str) -> Self {
        TraceEntry {
            step: 0,
            ordinal,
            kind,
            local_index: None,
            physical_index: None,
            before: None,
            after: None,
            pc: Cow::Borrowed(pc),
        }
    }

    /// Line label without the mutex sub-phase, e.g. `DESA-01` for
    /// `DESA-01/MUTEX-RW-01:scan`.
    pub fn line(&self) -> &str {
        let end = self.pc.find(['/', ':']).unwrap_or(self.pc.len());
        &self.pc[..end]
    }

    /// Mutex sub-phase (`scan`, `contend`, `spin`, `enter`, `sweep`), if any.
    pub fn sub(&self) -> Option<&str> {
        self.pc.split_once(':').map(|(_, s)| s)
    }

    /// Access issued through the counter-piggybacking read/write of the mutex.
    pub fn is_mutex_access(&self) -> bool {
        self.pc.contains("MUTEX-RW")
    }

    /// Index of the line number within the label: `DESA-07` → 7.
    pub fn line_no(&self) -> Option<u32> {
        self.line()
            .rsplit_once('-')
            .and_then(|(_, d)| d.parse().ok())
    }
}

/// Sink for trace entries.
pub trait Recorder {
    fn record(&mut self, entry: TraceEntry);
}

/// Drops everything; used when only states matter.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullRecorder;

impl Recorder for NullRecorder {
    fn record(&mut self, _entry: TraceEntry) {}
}

/// Totally ordered record of one execution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    entries: Vec<TraceEntry>,
}

impl Recorder for Trace {
    fn record(&mut self, mut entry: TraceEntry) {
        entry.step = self.entries.len() as u64;
        self.entries.push(entry);
    }
}

impl Trace {
    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ordinals of the scheduler turns, in order.
    pub fn schedule(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.kind.is_turn())
            .map(|e| e.ordinal)
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Trace> {
        let mut entries = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(Trace { entries })
    }
}

impl From<Vec<TraceEntry>> for Trace {
    fn from(entries: Vec<TraceEntry>) -> Self {
        Trace { entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_field_names() {
        let mut t = Trace::default();
        t.record(TraceEntry::event(1, AccessKind::CsEnter, "DESA-01"));
        let line = t.to_jsonl();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        let mut want = vec![
            "step",
            "ordinal",
            "kind",
            "local_index",
            "physical_index",
            "before",
            "after",
            "pc",
        ];
        want.sort();
        let mut got = keys.clone();
        got.sort();
        assert_eq!(got, want);
        assert_eq!(v["kind"], "CS_ENTER");
        assert_eq!(Trace::read_jsonl(line.as_bytes()).unwrap(), t);
    }

    #[test]
    fn label_parts() {
        let e = TraceEntry::event(0, AccessKind::Read, "BITDESA-10/MUTEX-RW-01:spin");
        assert_eq!(e.line(), "BITDESA-10");
        assert_eq!(e.sub(), Some("spin"));
        assert_eq!(e.line_no(), Some(10));
        assert!(e.is_mutex_access());
        let e = TraceEntry::event(0, AccessKind::Local, "DESA-02");
        assert_eq!(e.line(), "DESA-02");
        assert_eq!(e.sub(), None);
        assert!(!e.is_mutex_access());
    }
}
