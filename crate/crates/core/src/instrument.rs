//! Per-rank primitive counters and an optional primitive trace.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimKind {
    Put,
    PutNbi,
    Get,
    GetNbi,
    PutSignal,
    PutSignalNbi,
    SignalOp,
    Wait,
    AtomicCas,
    AtomicAdd,
    LdAcquire,
    RedRelease,
    IntP,
    BarrierAll,
    BarrierIntraNode,
    SyncAll,
    Quiet,
    Fence,
    MultimemSt,
    MultimemLdReduce,
    Broadcast,
    LlPack,
    LlRecvPack,
    LlRecvUnpack,
    CopyAsync,
}

impl PrimKind {
    pub const ALL: [PrimKind; 25] = [
        PrimKind::Put,
        PrimKind::PutNbi,
        PrimKind::Get,
        PrimKind::GetNbi,
        PrimKind::PutSignal,
        PrimKind::PutSignalNbi,
        PrimKind::SignalOp,
        PrimKind::Wait,
        PrimKind::AtomicCas,
        PrimKind::AtomicAdd,
        PrimKind::LdAcquire,
        PrimKind::RedRelease,
        PrimKind::IntP,
        PrimKind::BarrierAll,
        PrimKind::BarrierIntraNode,
        PrimKind::SyncAll,
        PrimKind::Quiet,
        PrimKind::Fence,
        PrimKind::MultimemSt,
        PrimKind::MultimemLdReduce,
        PrimKind::Broadcast,
        PrimKind::LlPack,
        PrimKind::LlRecvPack,
        PrimKind::LlRecvUnpack,
        PrimKind::CopyAsync,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Default)]
pub(crate) struct Counters {
    slots: [AtomicU64; PrimKind::ALL.len()],
}

impl Counters {
    pub(crate) fn bump(&self, kind: PrimKind) {
        self.slots[kind.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self) -> Counts {
        Counts(std::array::from_fn(|i| {
            self.slots[i].load(Ordering::Relaxed)
        }))
    }

    pub(crate) fn clear(&self) {
        for s in &self.slots {
            s.store(0, Ordering::Relaxed);
        }
    }
}

/// Snapshot of one rank's primitive counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts([u64; PrimKind::ALL.len()]);

impl Counts {
    pub fn get(&self, kind: PrimKind) -> u64 {
        self.0[kind.index()]
    }

    /// Barriers of either scope plus quiets: the operations an LL path must avoid.
    pub fn completion_ops(&self) -> u64 {
        self.get(PrimKind::BarrierAll)
            + self.get(PrimKind::BarrierIntraNode)
            + self.get(PrimKind::SyncAll)
            + self.get(PrimKind::Quiet)
    }

    pub fn since(&self, earlier: &Counts) -> Counts {
        Counts(std::array::from_fn(|i| self.0[i] - earlier.0[i]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub rank: usize,
    pub kind: PrimKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peer: Option<usize>,
    pub bytes: usize,
    /// Virtual time at issue, microseconds (0 outside timed mode).
    pub t_us: f64,
}
