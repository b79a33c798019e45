//! World construction, the symmetric heap, remote address translation and
//! world-level synchronization.
//!
//! Ranks are execution contexts inside one process. The heap is a single
//! arena of 64-bit atomic words split into `world_size` equal slabs; every
//! slab holds `heap_bytes` of data followed by a pad of `signal_count`
//! signal words. A [`SymHandle`] is an `(offset, len)` pair that resolves to
//! the same offset in every slab.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::costmodel::TimingModel;
use crate::error::{Error, Result};
use crate::instrument::{Counters, Counts, PrimKind, TraceEvent};
use crate::primitives::PendingQueue;
use crate::sched::{self, Spinner};

pub const WORD: usize = 8;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub world_size: usize,
    pub n_nodes: usize,
    pub local_world_size: usize,
    pub heap_bytes: usize,
    pub signal_count: usize,
}

impl WorldSpec {
    /// Geometry with a heap and signal pad sized for small tests.
    pub fn new(n_nodes: usize, local_world_size: usize) -> Self {
        let world_size = n_nodes * local_world_size;
        WorldSpec {
            world_size,
            n_nodes,
            local_world_size,
            heap_bytes: 1 << 16,
            signal_count: (4 * world_size).max(64),
        }
    }

    pub fn with_heap(mut self, heap_bytes: usize) -> Self {
        self.heap_bytes = heap_bytes;
        self
    }

    pub fn with_signals(mut self, signal_count: usize) -> Self {
        self.signal_count = signal_count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.world_size == 0 {
            return Err(Error::config("world_size must be at least 1"));
        }
        if self.world_size != self.n_nodes * self.local_world_size {
            return Err(Error::config(format!(
                "world_size {} != n_nodes {} x local_world_size {}",
                self.world_size, self.n_nodes, self.local_world_size
            )));
        }
        if self.heap_bytes == 0 {
            return Err(Error::config("heap_bytes must be positive"));
        }
        if self.signal_count < self.world_size {
            return Err(Error::config(format!(
                "signal_count {} < world_size {}",
                self.signal_count, self.world_size
            )));
        }
        Ok(())
    }
}

/// Execution identity of one rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RankCtx {
    pub rank: usize,
    pub node_id: usize,
    pub local_rank: usize,
    pub world_size: usize,
    pub n_nodes: usize,
    pub local_world_size: usize,
}

impl RankCtx {
    pub fn new(spec: &WorldSpec, rank: usize) -> Self {
        RankCtx {
            rank,
            node_id: rank / spec.local_world_size,
            local_rank: rank % spec.local_world_size,
            world_size: spec.world_size,
            n_nodes: spec.n_nodes,
            local_world_size: spec.local_world_size,
        }
    }

    pub fn my_pe(&self) -> usize {
        self.rank
    }

    pub fn n_pes(&self) -> usize {
        self.world_size
    }

    /// Global rank of local index `local` on node `node`.
    pub fn global(&self, node: usize, local: usize) -> usize {
        node * self.local_world_size + local
    }

    pub fn same_node(&self, peer: usize) -> bool {
        peer / self.local_world_size == self.node_id
    }

    pub fn node_ranks(&self) -> std::ops::Range<usize> {
        let base = self.node_id * self.local_world_size;
        base..base + self.local_world_size
    }
}

/// Rank-independent address of a symmetric allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymHandle {
    pub offset: usize,
    pub len: usize,
}

impl SymHandle {
    /// Sub-range `[off, off + len)` of this handle.
    pub fn slice(&self, off: usize, len: usize) -> Result<SymHandle> {
        if off + len > self.len {
            return Err(Error::Range {
                offset: off,
                len,
                limit: self.len,
            });
        }
        Ok(SymHandle {
            offset: self.offset + off,
            len,
        })
    }

    /// The `i`-th of `self.len / chunk` equal chunks.
    pub fn chunk(&self, i: usize, chunk: usize) -> Result<SymHandle> {
        self.slice(i * chunk, chunk)
    }
}

/// A contiguous block of signal words in every rank's signal pad.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSet {
    pub base: usize,
    pub count: usize,
}

impl SignalSet {
    /// Absolute signal index of `S + i`.
    pub fn at(&self, i: usize) -> usize {
        assert!(i < self.count, "signal S+{i} outside set of {}", self.count);
        self.base + i
    }
}

/// Plain per-rank memory, never addressed remotely.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LocalBuffer(Vec<u8>);

impl LocalBuffer {
    pub fn zeroed(len: usize) -> Self {
        LocalBuffer(vec![0; len])
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl From<Vec<u8>> for LocalBuffer {
    fn from(v: Vec<u8>) -> Self {
        LocalBuffer(v)
    }
}

impl Deref for LocalBuffer {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl DerefMut for LocalBuffer {
    fn deref_mut(&mut self) -> &mut [u8] {
        &mut self.0
    }
}

/// How non-blocking puts reach their destination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NbiMode {
    /// Applied at issue time.
    #[default]
    Eager,
    /// Queued per rank, delivered in random order within fence epochs by
    /// opportunistic progress, and drained by quiet or barrier.
    Deferred,
}

#[derive(Clone, Debug)]
pub struct RuntimeConfig {
    pub timeout: Duration,
    pub nbi: NbiMode,
    pub seed: u64,
    pub timing: Option<Arc<TimingModel>>,
    pub record_trace: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            timeout: DEFAULT_TIMEOUT,
            nbi: NbiMode::Eager,
            seed: 0,
            timing: None,
            record_trace: false,
        }
    }
}

pub(crate) struct Barrier {
    parties: usize,
    arrived: AtomicUsize,
    generation: AtomicU64,
    clock_max: [AtomicU64; 2],
}

impl Barrier {
    fn new(parties: usize) -> Self {
        Barrier {
            parties,
            arrived: AtomicUsize::new(0),
            generation: AtomicU64::new(0),
            clock_max: [AtomicU64::new(0), AtomicU64::new(0)],
        }
    }

    /// Sense-reversing rendezvous. Returns the latest virtual arrival time.
    pub(crate) fn wait(&self, spinner: &mut Spinner<'_>, what: &str) -> Result<f64> {
        let gen = self.generation.load(Ordering::Acquire);
        let slot = &self.clock_max[(gen % 2) as usize];
        slot.fetch_max(sched::clock().to_bits(), Ordering::AcqRel);
        if self.arrived.fetch_add(1, Ordering::AcqRel) + 1 == self.parties {
            self.arrived.store(0, Ordering::Relaxed);
            self.clock_max[((gen + 1) % 2) as usize].store(0, Ordering::Relaxed);
            self.generation.fetch_add(1, Ordering::AcqRel);
        } else {
            while self.generation.load(Ordering::Acquire) == gen {
                spinner.spin(|| what.to_string())?;
            }
        }
        Ok(f64::from_bits(slot.load(Ordering::Acquire)))
    }
}

pub(crate) fn write_bytes(slab: &[AtomicU64], off: usize, data: &[u8], order: Ordering) {
    let mut pos = 0;
    while pos < data.len() {
        let abs = off + pos;
        let w = abs / WORD;
        let within = abs % WORD;
        let take = (WORD - within).min(data.len() - pos);
        if take == WORD {
            let v = u64::from_le_bytes(data[pos..pos + WORD].try_into().unwrap());
            slab[w].store(v, order);
        } else {
            let _ = slab[w].fetch_update(order, Ordering::Relaxed, |old| {
                let mut b = old.to_le_bytes();
                b[within..within + take].copy_from_slice(&data[pos..pos + take]);
                Some(u64::from_le_bytes(b))
            });
        }
        pos += take;
    }
}

pub(crate) fn read_bytes(slab: &[AtomicU64], off: usize, out: &mut [u8], order: Ordering) {
    let mut pos = 0;
    while pos < out.len() {
        let abs = off + pos;
        let w = abs / WORD;
        let within = abs % WORD;
        let take = (WORD - within).min(out.len() - pos);
        let b = slab[w].load(order).to_le_bytes();
        out[pos..pos + take].copy_from_slice(&b[within..within + take]);
        pos += take;
    }
}

struct Allocator {
    cursor: usize,
    signal_cursor: usize,
}

pub struct World {
    spec: WorldSpec,
    pub(crate) cfg: RuntimeConfig,
    data_words: usize,
    slab_words: usize,
    words: Box<[AtomicU64]>,
    /// Virtual arrival time per heap word (timed mode only).
    pub(crate) word_time: Box<[AtomicU64]>,
    alloc: Mutex<Allocator>,
    world_barrier: Barrier,
    node_barriers: Vec<Barrier>,
    pub(crate) pending: Vec<Mutex<PendingQueue>>,
    pub(crate) pending_len: Vec<AtomicUsize>,
    counters: Vec<Counters>,
    pub(crate) cancelled: AtomicBool,
    bcast_roots: Box<[AtomicU64]>,
    trace: Mutex<Vec<TraceEvent>>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl World {
    pub fn init(spec: WorldSpec) -> Result<World> {
        World::with_config(spec, RuntimeConfig::default())
    }

    pub fn with_config(spec: WorldSpec, cfg: RuntimeConfig) -> Result<World> {
        spec.validate()?;
        let data_words = spec.heap_bytes.div_ceil(WORD);
        let slab_words = data_words + spec.signal_count;
        let total = slab_words * spec.world_size;
        let words = (0..total).map(|_| AtomicU64::new(0)).collect();
        let stamped = if cfg.timing.is_some() { total } else { 0 };
        let word_time: Box<[AtomicU64]> = (0..stamped).map(|_| AtomicU64::new(0)).collect();
        Ok(World {
            data_words,
            slab_words,
            words,
            word_time,
            alloc: Mutex::new(Allocator {
                cursor: 0,
                signal_cursor: 0,
            }),
            world_barrier: Barrier::new(spec.world_size),
            node_barriers: (0..spec.n_nodes)
                .map(|_| Barrier::new(spec.local_world_size))
                .collect(),
            pending: (0..spec.world_size)
                .map(|r| {
                    Mutex::new(PendingQueue::new(
                        cfg.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    ))
                })
                .collect(),
            pending_len: (0..spec.world_size).map(|_| AtomicUsize::new(0)).collect(),
            counters: (0..spec.world_size).map(|_| Counters::default()).collect(),
            cancelled: AtomicBool::new(false),
            bcast_roots: (0..spec.world_size).map(|_| AtomicU64::new(0)).collect(),
            trace: Mutex::new(Vec::new()),
            spec,
            cfg,
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.cfg
    }

    pub fn world_size(&self) -> usize {
        self.spec.world_size
    }

    pub fn ctx(&self, rank: usize) -> RankCtx {
        assert!(rank < self.spec.world_size, "rank {rank} out of range");
        RankCtx::new(&self.spec, rank)
    }

    /// Primitive handle for `rank`.
    pub fn pe(&self, rank: usize) -> Pe<'_> {
        Pe {
            world: self,
            ctx: self.ctx(rank),
        }
    }

    pub fn timing(&self) -> Option<&TimingModel> {
        self.cfg.timing.as_deref()
    }

    /// Collective symmetric allocation. The single shared bump allocator makes
    /// the returned handle identical on every rank.
    pub fn alloc_symmetric(&self, bytes: usize, align: usize) -> Result<SymHandle> {
        if align == 0 || !align.is_power_of_two() {
            return Err(Error::arg(format!(
                "alignment {align} is not a power of two"
            )));
        }
        let mut a = self.alloc.lock();
        let offset = a.cursor.next_multiple_of(align);
        if offset + bytes > self.spec.heap_bytes {
            return Err(Error::Alloc {
                requested: bytes,
                cursor: a.cursor,
                heap_bytes: self.spec.heap_bytes,
            });
        }
        a.cursor = offset + bytes;
        Ok(SymHandle { offset, len: bytes })
    }

    pub fn alloc_signals(&self, count: usize) -> Result<SignalSet> {
        let mut a = self.alloc.lock();
        if a.signal_cursor + count > self.spec.signal_count {
            return Err(Error::Alloc {
                requested: count * WORD,
                cursor: a.signal_cursor * WORD,
                heap_bytes: self.spec.signal_count * WORD,
            });
        }
        let set = SignalSet {
            base: a.signal_cursor,
            count,
        };
        a.signal_cursor += count;
        Ok(set)
    }

    /// Current allocator cursor (bytes).
    pub fn heap_cursor(&self) -> usize {
        self.alloc.lock().cursor
    }

    pub(crate) fn slab(&self, rank: usize) -> &[AtomicU64] {
        &self.words[rank * self.slab_words..rank * self.slab_words + self.data_words]
    }

    pub(crate) fn slab_time(&self, rank: usize) -> &[AtomicU64] {
        &self.word_time[rank * self.slab_words..rank * self.slab_words + self.data_words]
    }

    pub(crate) fn signal_word(&self, rank: usize, sig: usize) -> &AtomicU64 {
        &self.words[rank * self.slab_words + self.data_words + sig]
    }

    pub(crate) fn signal_time(&self, rank: usize, sig: usize) -> Option<&AtomicU64> {
        if self.word_time.is_empty() {
            None
        } else {
            Some(&self.word_time[rank * self.slab_words + self.data_words + sig])
        }
    }

    pub(crate) fn check_rank(&self, peer: usize) -> Result<()> {
        if peer >= self.spec.world_size {
            return Err(Error::arg(format!(
                "peer {peer} out of range for world of {}",
                self.spec.world_size
            )));
        }
        Ok(())
    }

    pub(crate) fn check_range(&self, offset: usize, len: usize) -> Result<()> {
        if offset + len > self.spec.heap_bytes {
            return Err(Error::Range {
                offset,
                len,
                limit: self.spec.heap_bytes,
            });
        }
        Ok(())
    }

    pub(crate) fn check_signal(&self, sig: usize) -> Result<()> {
        if sig >= self.spec.signal_count {
            return Err(Error::arg(format!(
                "signal {sig} out of range for pad of {}",
                self.spec.signal_count
            )));
        }
        Ok(())
    }

    /// Host-side read of `handle` on `rank`'s replica.
    pub fn read_symmetric(&self, rank: usize, handle: SymHandle) -> Vec<u8> {
        let mut out = vec![0; handle.len];
        read_bytes(self.slab(rank), handle.offset, &mut out, Ordering::Acquire);
        out
    }

    /// Host-side write into `rank`'s replica (setup only; not a primitive).
    pub fn write_symmetric(&self, rank: usize, handle: SymHandle, data: &[u8]) -> Result<()> {
        if data.len() > handle.len {
            return Err(Error::Range {
                offset: 0,
                len: data.len(),
                limit: handle.len,
            });
        }
        write_bytes(self.slab(rank), handle.offset, data, Ordering::Release);
        Ok(())
    }

    /// Host-side read of an absolute signal word.
    pub fn signal_value(&self, rank: usize, sig: usize) -> u64 {
        self.signal_word(rank, sig).load(Ordering::Acquire)
    }

    /// Non-blocking operations issued by `rank` that have not completed yet.
    pub fn pending_ops(&self, rank: usize) -> usize {
        self.pending_len[rank].load(Ordering::Acquire)
    }

    /// Zeroes every signal word on every rank, then verifies with a sweep read.
    pub fn reset_signals(&self) -> Result<()> {
        if let Some(r) = (0..self.spec.world_size).find(|&r| self.pending_ops(r) > 0) {
            return Err(Error::usage(format!(
                "cannot reset signals: rank {r} has {} non-blocking operations in flight",
                self.pending_ops(r)
            )));
        }
        for r in 0..self.spec.world_size {
            for s in 0..self.spec.signal_count {
                self.signal_word(r, s).store(0, Ordering::Release);
                if let Some(t) = self.signal_time(r, s) {
                    t.store(0, Ordering::Relaxed);
                }
            }
        }
        if !self.signals_all_zero() {
            return Err(Error::usage(
                "signal sweep found a nonzero word after reset",
            ));
        }
        Ok(())
    }

    pub fn signals_all_zero(&self) -> bool {
        (0..self.spec.world_size)
            .all(|r| (0..self.spec.signal_count).all(|s| self.signal_value(r, s) == 0))
    }

    /// Clears virtual arrival stamps on data words (timed mode).
    pub fn reset_clocks(&self) {
        for t in self.word_time.iter() {
            t.store(0, Ordering::Relaxed);
        }
    }

    pub fn counts(&self, rank: usize) -> Counts {
        self.counters[rank].snapshot()
    }

    pub fn clear_counts(&self) {
        for c in &self.counters {
            c.clear();
        }
    }

    pub fn take_trace(&self) -> Vec<TraceEvent> {
        std::mem::take(&mut *self.trace.lock())
    }

    pub(crate) fn record(&self, rank: usize, kind: PrimKind, peer: Option<usize>, bytes: usize) {
        self.counters[rank].bump(kind);
        if self.cfg.record_trace {
            self.trace.lock().push(TraceEvent {
                rank,
                kind,
                peer,
                bytes,
                t_us: sched::clock(),
            });
        }
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Release);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Acquire)
    }

    /// Clears a previous cancellation so the world can be reused.
    pub fn clear_cancel(&self) {
        self.cancelled.store(false, Ordering::Release);
    }

    pub(crate) fn bcast_roots(&self) -> &[AtomicU64] {
        &self.bcast_roots
    }

    pub(crate) fn world_barrier(&self) -> &Barrier {
        &self.world_barrier
    }

    pub(crate) fn node_barrier(&self, node: usize) -> &Barrier {
        &self.node_barriers[node]
    }

    /// Runs `f` once per rank on its own thread with no scheduler attached.
    pub fn run_spmd<R, F>(&self, f: F) -> Vec<Result<R>>
    where
        R: Send,
        F: Fn(Pe<'_>) -> Result<R> + Sync,
    {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..self.world_size())
                .map(|r| {
                    let f = &f;
                    s.spawn(move || f(self.pe(r)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rank thread panicked"))
                .collect()
        })
    }
}

/// A rank's view of the world; every primitive is a method on it.
#[derive(Clone, Copy)]
pub struct Pe<'w> {
    pub(crate) world: &'w World,
    pub(crate) ctx: RankCtx,
}

impl std::fmt::Debug for Pe<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pe").field("ctx", &self.ctx).finish()
    }
}

/// A window onto one rank's replica of a symmetric allocation.
#[derive(Clone, Copy)]
pub struct RemoteRegion<'w> {
    world: &'w World,
    pub rank: usize,
    pub handle: SymHandle,
}

impl RemoteRegion<'_> {
    pub fn len(&self) -> usize {
        self.handle.len
    }

    pub fn is_empty(&self) -> bool {
        self.handle.len == 0
    }

    pub fn read(&self, off: usize, out: &mut [u8]) -> Result<()> {
        self.bounds(off, out.len())?;
        read_bytes(
            self.world.slab(self.rank),
            self.handle.offset + off,
            out,
            Ordering::Acquire,
        );
        Ok(())
    }

    pub fn write(&self, off: usize, data: &[u8]) -> Result<()> {
        self.bounds(off, data.len())?;
        write_bytes(
            self.world.slab(self.rank),
            self.handle.offset + off,
            data,
            Ordering::Release,
        );
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.world.read_symmetric(self.rank, self.handle)
    }

    fn bounds(&self, off: usize, len: usize) -> Result<()> {
        if off + len > self.handle.len {
            return Err(Error::Range {
                offset: off,
                len,
                limit: self.handle.len,
            });
        }
        Ok(())
    }
}

impl<'w> Pe<'w> {
    pub fn ctx(&self) -> &RankCtx {
        &self.ctx
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn my_pe(&self) -> usize {
        self.ctx.rank
    }

    pub fn n_pes(&self) -> usize {
        self.ctx.world_size
    }

    pub(crate) fn spinner(&self) -> Spinner<'w> {
        Spinner::new(self.world.cfg.timeout, &self.world.cancelled, self.ctx.rank)
    }

    /// Translates a local symmetric handle into `peer`'s replica.
    pub fn remote_ptr(&self, handle: SymHandle, peer: usize) -> Result<RemoteRegion<'w>> {
        self.world.check_rank(peer)?;
        self.world.check_range(handle.offset, handle.len)?;
        Ok(RemoteRegion {
            world: self.world,
            rank: peer,
            handle,
        })
    }

    pub fn local(&self, handle: SymHandle) -> Result<RemoteRegion<'w>> {
        self.remote_ptr(handle, self.ctx.rank)
    }

    /// All-rank barrier; completes every outstanding non-blocking operation first.
    pub fn barrier_all(&self) -> Result<()> {
        self.world
            .record(self.ctx.rank, PrimKind::BarrierAll, None, 0);
        self.quiet_inner()?;
        let mut sp = self.spinner();
        let t = self.world.world_barrier().wait(&mut sp, "barrier_all")?;
        self.barrier_clock(t);
        Ok(())
    }

    /// Control-flow rendezvous only; pending non-blocking operations stay pending.
    pub fn sync_all(&self) -> Result<()> {
        self.world.record(self.ctx.rank, PrimKind::SyncAll, None, 0);
        sched::yield_point();
        let mut sp = self.spinner();
        let t = self.world.world_barrier().wait(&mut sp, "sync_all")?;
        self.barrier_clock(t);
        Ok(())
    }

    pub fn barrier_all_intra_node(&self) -> Result<()> {
        self.world
            .record(self.ctx.rank, PrimKind::BarrierIntraNode, None, 0);
        self.quiet_inner()?;
        let mut sp = self.spinner();
        let t = self
            .world
            .node_barrier(self.ctx.node_id)
            .wait(&mut sp, "barrier_all_intra_node")?;
        self.barrier_clock(t);
        Ok(())
    }

    fn barrier_clock(&self, arrival_max: f64) {
        if let Some(tm) = self.world.timing() {
            sched::advance_to(arrival_max + tm.params.barrier_us);
        }
    }
}
