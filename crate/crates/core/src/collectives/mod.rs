//! AllGather, ReduceScatter and AllToAll built from one-sided primitives
//! and async tasks.
//!
//! Every collective comes in two layers: a `*_tasks` function that appends
//! one rank's streams to a [`Program`] (so pipelines can fuse it with
//! compute), and a wrapper that builds the whole program, launches it and
//! reads the results back.

mod alltoall;
mod gather;
mod ll_gather;
mod reduce;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::WaitCond;
use crate::runtime::LaunchReport;
use crate::sched::SchedulerMode;
use crate::shmem::Pe;

pub use alltoall::{alltoall_combine, alltoall_dispatch, A2aBuffers, ExpertRouting, Received};
pub use gather::{
    allgather_pull_intra, allgather_pull_tasks, allgather_push_intra, allgather_push_tasks,
    AgBuffers,
};
pub use ll_gather::{allgather_ll_inter, allgather_ll_tasks, LlAgBuffers};
pub use reduce::{
    reducescatter_inter, reducescatter_inter_tasks, reducescatter_push_intra,
    reducescatter_push_tasks, InterRsBuffers, RsBuffers,
};

/// How a consumer acquires a chunk announced by a signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncStyle {
    /// `signal_wait_until(EQ, value)`.
    #[default]
    WaitUntil,
    /// `wait` followed by `consume_token`.
    Token,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Opts {
    pub mode: SchedulerMode,
    pub sync: SyncStyle,
    /// Zero each rank's own signals once it has consumed them.
    pub reset_signals: bool,
    /// Round number for LL flags.
    pub round: u64,
}

impl Default for Opts {
    fn default() -> Self {
        Opts {
            mode: SchedulerMode::Free,
            sync: SyncStyle::WaitUntil,
            reset_signals: true,
            round: 0,
        }
    }
}

impl Opts {
    pub fn with_mode(mut self, mode: SchedulerMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_sync(mut self, sync: SyncStyle) -> Self {
        self.sync = sync;
        self
    }
}

/// Per-rank results plus the launch record they came from.
#[derive(Clone, Debug)]
pub struct CollectiveRun {
    pub outputs: Vec<Vec<u8>>,
    pub report: LaunchReport,
}

/// Equal per-rank chunks laid out by rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkLayout {
    pub chunks: usize,
    pub chunk_bytes: usize,
    pub elem_width: usize,
}

impl ChunkLayout {
    pub fn new(chunks: usize, chunk_bytes: usize, elem_width: usize) -> Result<Self> {
        if elem_width == 0 || !chunk_bytes.is_multiple_of(elem_width) {
            return Err(Error::arg(format!(
                "chunk of {chunk_bytes} bytes is not a whole number of {elem_width}-byte elements"
            )));
        }
        Ok(ChunkLayout {
            chunks,
            chunk_bytes,
            elem_width,
        })
    }

    pub fn total_bytes(&self) -> usize {
        self.chunks * self.chunk_bytes
    }

    /// `(offset, bytes)` of chunk `i`.
    pub fn chunk(&self, i: usize) -> (usize, usize) {
        assert!(i < self.chunks, "chunk {i} of {}", self.chunks);
        (i * self.chunk_bytes, self.chunk_bytes)
    }
}

pub(crate) fn acquire(pe: &Pe<'_>, sig: usize, value: u64, style: SyncStyle) -> Result<()> {
    match style {
        SyncStyle::WaitUntil => pe.signal_wait_until(sig, WaitCond::Eq, value).map(drop),
        SyncStyle::Token => {
            let tok = pe.wait(sig, value)?;
            pe.consume_token(&tok, ())
        }
    }
}

pub(crate) fn check_inputs(
    inputs: &[Vec<u8>],
    world: usize,
    bytes: usize,
    what: &str,
) -> Result<()> {
    if inputs.len() != world {
        return Err(Error::arg(format!(
            "{what}: {} inputs for {world} ranks",
            inputs.len()
        )));
    }
    if let Some((r, v)) = inputs.iter().enumerate().find(|(_, v)| v.len() != bytes) {
        return Err(Error::arg(format!(
            "{what}: rank {r} input has {} bytes, expected {bytes}",
            v.len()
        )));
    }
    Ok(())
}

/// Rotation `rank, rank+1, ...`: at every step each rank targets a distinct peer.
pub(crate) fn ring_order(rank: usize, world: usize) -> Vec<usize> {
    (0..world).map(|k| (rank + k) % world).collect()
}
