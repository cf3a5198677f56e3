//! Occupancy-tracked memory hierarchy and the append-only transfer log.

use super::ExecError;
use crate::hw::{HardwareSpec, MemoryLevel};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum TransferKind {
    Dma,
    Broadcast,
}

impl std::fmt::Display for TransferKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferKind::Dma => write!(f, "dma"),
            TransferKind::Broadcast => write!(f, "broadcast"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRecord {
    pub kind: TransferKind,
    pub src: MemoryLevel,
    pub dst: MemoryLevel,
    pub bytes: u64,
    pub tag: &'static str,
}

/// Ordered log of every transfer an execution performed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TransferTrace {
    records: Vec<TransferRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummaryRow {
    pub kind: TransferKind,
    pub tag: String,
    pub count: u64,
    pub bytes: u64,
}

impl TransferTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        kind: TransferKind,
        src: MemoryLevel,
        dst: MemoryLevel,
        bytes: u64,
        tag: &'static str,
    ) {
        assert!(bytes > 0, "zero-byte transfer tagged {tag}");
        self.records.push(TransferRecord {
            kind,
            src,
            dst,
            bytes,
            tag,
        });
    }

    pub fn records(&self) -> &[TransferRecord] {
        &self.records
    }

    /// Number of transfers carrying this tag.
    pub fn count(&self, tag: &str) -> u64 {
        self.records.iter().filter(|r| r.tag == tag).count() as u64
    }

    /// Total bytes moved under this tag.
    pub fn bytes(&self, tag: &str) -> u64 {
        self.records
            .iter()
            .filter(|r| r.tag == tag)
            .map(|r| r.bytes)
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.bytes).sum()
    }

    /// Per-(kind, tag) counts and byte totals, deterministically ordered.
    pub fn summary(&self) -> Vec<TraceSummaryRow> {
        let mut acc: BTreeMap<(TransferKind, &str), (u64, u64)> = BTreeMap::new();
        for r in &self.records {
            let e = acc.entry((r.kind, r.tag)).or_insert((0, 0));
            e.0 += 1;
            e.1 += r.bytes;
        }
        acc.into_iter()
            .map(|((kind, tag), (count, bytes))| TraceSummaryRow {
                kind,
                tag: tag.to_string(),
                count,
                bytes,
            })
            .collect()
    }
}

/// Byte occupancy counters for each memory level, checked against the
/// hardware spec on every charge. SM and AM limits model one DSP's working
/// set (all DSPs hold congruent tiles); GSM and DDR are cluster-wide.
#[derive(Debug, Clone)]
pub struct SimMemory {
    limits: BTreeMap<MemoryLevel, u64>,
    used: BTreeMap<MemoryLevel, u64>,
    high_water: BTreeMap<MemoryLevel, u64>,
}

impl SimMemory {
    pub fn new(spec: &HardwareSpec) -> Self {
        let mut limits = BTreeMap::new();
        for level in [
            MemoryLevel::Sm,
            MemoryLevel::Am,
            MemoryLevel::Gsm,
            MemoryLevel::Ddr,
        ] {
            limits.insert(level, spec.capacity(level));
        }
        Self {
            limits,
            used: BTreeMap::new(),
            high_water: BTreeMap::new(),
        }
    }

    /// Reserves bytes at a level; errors if the level would overflow.
    pub fn charge(&mut self, level: MemoryLevel, bytes: u64, step: &str) -> Result<(), ExecError> {
        self.charge_hint(level, bytes, step, "")
    }

    /// Like [`charge`](Self::charge) with a remediation hint appended to
    /// the error message.
    pub fn charge_hint(
        &mut self,
        level: MemoryLevel,
        bytes: u64,
        step: &str,
        hint: &str,
    ) -> Result<(), ExecError> {
        let used = self.used.entry(level).or_insert(0);
        let limit = self.limits[&level];
        if *used + bytes > limit {
            return Err(ExecError::CapacityExceeded {
                level,
                step: step.to_string(),
                needed: *used + bytes,
                available: limit,
                hint: if hint.is_empty() {
                    String::new()
                } else {
                    format!(" ({hint})")
                },
            });
        }
        *used += bytes;
        let hw = self.high_water.entry(level).or_insert(0);
        *hw = (*hw).max(*used);
        Ok(())
    }

    pub fn release(&mut self, level: MemoryLevel, bytes: u64) {
        let used = self.used.entry(level).or_insert(0);
        debug_assert!(*used >= bytes, "releasing more than charged at {level}");
        *used = used.saturating_sub(bytes);
    }

    pub fn used(&self, level: MemoryLevel) -> u64 {
        self.used.get(&level).copied().unwrap_or(0)
    }

    pub fn high_water(&self, level: MemoryLevel) -> u64 {
        self.high_water.get(&level).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_respects_limits() {
        let spec = HardwareSpec::default();
        let mut mem = SimMemory::new(&spec);
        mem.charge(MemoryLevel::Sm, 65_536, "fill").unwrap();
        let err = mem.charge(MemoryLevel::Sm, 1, "overflow").unwrap_err();
        match err {
            ExecError::CapacityExceeded { level, needed, available, .. } => {
                assert_eq!(level, MemoryLevel::Sm);
                assert_eq!(needed, 65_537);
                assert_eq!(available, 65_536);
            }
            other => panic!("unexpected {other:?}"),
        }
        mem.release(MemoryLevel::Sm, 65_536);
        assert_eq!(mem.used(MemoryLevel::Sm), 0);
        assert_eq!(mem.high_water(MemoryLevel::Sm), 65_536);
    }

    #[test]
    fn trace_summary_groups_by_kind_and_tag() {
        let mut t = TransferTrace::new();
        t.record(TransferKind::Dma, MemoryLevel::Ddr, MemoryLevel::Gsm, 10, "x");
        t.record(TransferKind::Dma, MemoryLevel::Ddr, MemoryLevel::Gsm, 20, "x");
        t.record(TransferKind::Broadcast, MemoryLevel::Ddr, MemoryLevel::Am, 5, "w");
        assert_eq!(t.count("x"), 2);
        assert_eq!(t.bytes("x"), 30);
        assert_eq!(t.total_bytes(), 35);
        let summary = t.summary();
        assert_eq!(summary.len(), 2);
        assert_eq!(summary[0].kind, TransferKind::Dma);
        assert_eq!(summary[0].count, 2);
    }
}
