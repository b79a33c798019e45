//! The primitive set: data movement, signals, atomics, memory-ordered
//! accesses, multimem emulation and the wait / consume_token / notify trio.
//!
//! Signals are 64-bit unsigned words in the per-rank signal pad. Payload
//! bytes are always written before the signal word that announces them, with
//! release ordering on the signal and acquire ordering on every wait.

use std::sync::atomic::{fence as mem_fence, AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::instrument::PrimKind;
use crate::sched;
use crate::shmem::{read_bytes, write_bytes, NbiMode, Pe, SignalSet, SymHandle, World, WORD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SignalOpKind {
    Set,
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WaitCond {
    Eq,
    Ne,
    Ge,
    Gt,
    Le,
    Lt,
}

impl WaitCond {
    pub fn holds(self, observed: u64, value: u64) -> bool {
        match self {
            WaitCond::Eq => observed == value,
            WaitCond::Ne => observed != value,
            WaitCond::Ge => observed >= value,
            WaitCond::Gt => observed > value,
            WaitCond::Le => observed <= value,
            WaitCond::Lt => observed < value,
        }
    }
}

/// Source of a put: a private buffer or the caller's own replica of a
/// symmetric allocation.
#[derive(Clone, Copy, Debug)]
pub enum Src<'a> {
    Local(&'a [u8]),
    Sym(SymHandle),
}

impl<'a> From<&'a [u8]> for Src<'a> {
    fn from(b: &'a [u8]) -> Self {
        Src::Local(b)
    }
}

impl<'a> From<&'a Vec<u8>> for Src<'a> {
    fn from(b: &'a Vec<u8>) -> Self {
        Src::Local(b)
    }
}

impl<'a> From<&'a crate::shmem::LocalBuffer> for Src<'a> {
    fn from(b: &'a crate::shmem::LocalBuffer) -> Self {
        Src::Local(b)
    }
}

impl From<SymHandle> for Src<'_> {
    fn from(h: SymHandle) -> Self {
        Src::Sym(h)
    }
}

/// Witness that a wait completed; consumed exactly once by `consume_token`.
#[derive(Clone, Debug)]
pub struct Token {
    rank: usize,
    pub sig: usize,
    pub observed: u64,
    consumed: Arc<AtomicBool>,
}

#[derive(Debug)]
enum PendingKind {
    Put {
        peer: usize,
        offset: usize,
        data: Vec<u8>,
    },
    PutSignal {
        peer: usize,
        offset: usize,
        data: Vec<u8>,
        sig: usize,
        value: u64,
        op: SignalOpKind,
    },
}

#[derive(Debug)]
struct PendingOp {
    epoch: u64,
    arrival: f64,
    kind: PendingKind,
}

pub(crate) struct PendingQueue {
    ops: Vec<PendingOp>,
    epoch: u64,
    rng: ChaCha8Rng,
    max_arrival: f64,
}

impl PendingQueue {
    pub(crate) fn new(seed: u64) -> Self {
        PendingQueue {
            ops: Vec::new(),
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_arrival: 0.0,
        }
    }

    /// Removes a deliverable batch: everything (drain) or a random subset of
    /// the oldest fence epoch, in random order.
    fn take_batch(&mut self, drain: bool) -> Vec<PendingOp> {
        if self.ops.is_empty() {
            return Vec::new();
        }
        if drain {
            let mut all = std::mem::take(&mut self.ops);
            all.sort_by_key(|o| o.epoch);
            let mut start = 0;
            while start < all.len() {
                let e = all[start].epoch;
                let end = start + all[start..].iter().take_while(|o| o.epoch == e).count();
                all[start..end].shuffle(&mut self.rng);
                start = end;
            }
            return all;
        }
        let oldest = self.ops.iter().map(|o| o.epoch).min().unwrap();
        let mut idx: Vec<usize> = (0..self.ops.len())
            .filter(|&i| self.ops[i].epoch == oldest)
            .collect();
        idx.shuffle(&mut self.rng);
        let k = self.rng.gen_range(0..=idx.len());
        idx.truncate(k);
        let mut slots: Vec<Option<PendingOp>> = std::mem::take(&mut self.ops)
            .into_iter()
            .map(Some)
            .collect();
        let out = idx.iter().map(|&i| slots[i].take().unwrap()).collect();
        self.ops = slots.into_iter().flatten().collect();
        out
    }
}

impl World {
    /// Drops undelivered non-blocking operations on every rank. Recovery
    /// after a faulted launch only; never sound while ranks are running.
    pub fn discard_pending(&self) {
        for (q, n) in self.pending.iter().zip(&self.pending_len) {
            let mut q = q.lock();
            q.ops.clear();
            q.max_arrival = 0.0;
            n.store(0, Ordering::Release);
        }
    }
}

/// Records when the bytes now held by these words arrived (last writer wins).
pub(crate) fn stamp_words(world: &World, peer: usize, offset: usize, len: usize, t: f64) {
    if world.word_time.is_empty() || len == 0 {
        return;
    }
    let times = world.slab_time(peer);
    for w in offset / WORD..(offset + len).div_ceil(WORD) {
        times[w].store(t.to_bits(), Ordering::Release);
    }
}

fn apply_signal(world: &World, peer: usize, sig: usize, op: SignalOpKind, value: u64, t: f64) {
    if let Some(ts) = world.signal_time(peer, sig) {
        ts.fetch_max(t.to_bits(), Ordering::AcqRel);
    }
    let word = world.signal_word(peer, sig);
    match op {
        SignalOpKind::Set => word.store(value, Ordering::Release),
        SignalOpKind::Add => {
            word.fetch_add(value, Ordering::AcqRel);
        }
    }
}

fn deliver(world: &World, op: PendingOp) {
    match op.kind {
        PendingKind::Put { peer, offset, data } => {
            write_bytes(world.slab(peer), offset, &data, Ordering::Release);
            stamp_words(world, peer, offset, data.len(), op.arrival);
        }
        PendingKind::PutSignal {
            peer,
            offset,
            data,
            sig,
            value,
            op: sop,
        } => {
            write_bytes(world.slab(peer), offset, &data, Ordering::Release);
            stamp_words(world, peer, offset, data.len(), op.arrival);
            apply_signal(world, peer, sig, sop, value, op.arrival);
        }
    }
}

impl<'w> Pe<'w> {
    fn rank(&self) -> usize {
        self.ctx.rank
    }

    /// Opportunistic delivery of this rank's queued non-blocking operations.
    pub(crate) fn progress(&self, drain: bool) {
        let w = self.world;
        if w.cfg.nbi == NbiMode::Eager || w.pending_ops(self.rank()) == 0 {
            return;
        }
        let batch = {
            let mut q = w.pending[self.rank()].lock();
            q.take_batch(drain)
        };
        let n = batch.len();
        for op in batch {
            deliver(w, op);
        }
        w.pending_len[self.rank()].fetch_sub(n, Ordering::AcqRel);
    }

    fn enter(&self) {
        sched::yield_point();
        self.progress(false);
    }

    fn source_bytes(&self, src: Src<'_>, bytes: usize) -> Result<Vec<u8>> {
        match src {
            Src::Local(b) => {
                if bytes > b.len() {
                    return Err(Error::Range {
                        offset: 0,
                        len: bytes,
                        limit: b.len(),
                    });
                }
                Ok(b[..bytes].to_vec())
            }
            Src::Sym(h) => {
                if bytes > h.len {
                    return Err(Error::Range {
                        offset: 0,
                        len: bytes,
                        limit: h.len,
                    });
                }
                self.world.check_range(h.offset, bytes)?;
                let mut out = vec![0; bytes];
                read_bytes(
                    self.world.slab(self.rank()),
                    h.offset,
                    &mut out,
                    Ordering::Acquire,
                );
                Ok(out)
            }
        }
    }

    fn check_dst(&self, dst: SymHandle, bytes: usize, peer: usize) -> Result<()> {
        self.world.check_rank(peer)?;
        if bytes > dst.len {
            return Err(Error::Range {
                offset: dst.offset,
                len: bytes,
                limit: dst.len,
            });
        }
        self.world.check_range(dst.offset, bytes)
    }

    /// Virtual cost of moving `bytes` to `peer`: (issue, arrival) times.
    fn put_times(&self, peer: usize, bytes: usize, blocking: bool) -> (f64, f64) {
        let now = sched::clock();
        match self.world.timing() {
            None => (now, now),
            Some(tm) => {
                let same = self.ctx.same_node(peer);
                let arrival = now + tm.p2p_us(same, bytes);
                if blocking {
                    (arrival, arrival)
                } else {
                    (now + tm.params.issue_us, arrival)
                }
            }
        }
    }

    fn enqueue_or_apply(&self, op: PendingOp) {
        let w = self.world;
        {
            let mut q = w.pending[self.rank()].lock();
            q.max_arrival = q.max_arrival.max(op.arrival);
            if w.cfg.nbi == NbiMode::Deferred {
                let epoch = q.epoch;
                q.ops.push(PendingOp { epoch, ..op });
                w.pending_len[self.rank()].fetch_add(1, Ordering::AcqRel);
                return;
            }
        }
        deliver(w, op);
    }

    fn put_inner(
        &self,
        dst: SymHandle,
        src: Src<'_>,
        bytes: usize,
        peer: usize,
        signal: Option<(usize, u64, SignalOpKind)>,
        blocking: bool,
    ) -> Result<()> {
        self.enter();
        self.check_dst(dst, bytes, peer)?;
        if let Some((sig, _, _)) = signal {
            self.world.check_signal(sig)?;
        }
        let kind = match (signal.is_some(), blocking) {
            (false, true) => PrimKind::Put,
            (false, false) => PrimKind::PutNbi,
            (true, true) => PrimKind::PutSignal,
            (true, false) => PrimKind::PutSignalNbi,
        };
        self.world.record(self.rank(), kind, Some(peer), bytes);
        let data = self.source_bytes(src, bytes)?;
        let (after_issue, arrival) = self.put_times(peer, bytes, blocking);
        let kind = match signal {
            None => PendingKind::Put {
                peer,
                offset: dst.offset,
                data,
            },
            Some((sig, value, op)) => PendingKind::PutSignal {
                peer,
                offset: dst.offset,
                data,
                sig,
                value,
                op,
            },
        };
        let op = PendingOp {
            epoch: 0,
            arrival,
            kind,
        };
        if blocking {
            deliver(self.world, op);
        } else {
            self.enqueue_or_apply(op);
        }
        sched::advance_to(after_issue);
        Ok(())
    }

    /// Blocking put: the bytes are visible at `peer` when this returns.
    pub fn putmem<'a>(
        &self,
        dst: SymHandle,
        src: impl Into<Src<'a>>,
        bytes: usize,
        peer: usize,
    ) -> Result<()> {
        self.put_inner(dst, src.into(), bytes, peer, None, true)
    }

    /// Non-blocking put: completes at the next quiet or barrier.
    pub fn putmem_nbi<'a>(
        &self,
        dst: SymHandle,
        src: impl Into<Src<'a>>,
        bytes: usize,
        peer: usize,
    ) -> Result<()> {
        self.put_inner(dst, src.into(), bytes, peer, None, false)
    }

    /// Put followed by a signal update that is never observable before the payload.
    #[allow(clippy::too_many_arguments)]
    pub fn putmem_signal<'a>(
        &self,
        dst: SymHandle,
        src: impl Into<Src<'a>>,
        bytes: usize,
        sig: usize,
        value: u64,
        op: SignalOpKind,
        peer: usize,
    ) -> Result<()> {
        self.put_inner(dst, src.into(), bytes, peer, Some((sig, value, op)), true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn putmem_signal_nbi<'a>(
        &self,
        dst: SymHandle,
        src: impl Into<Src<'a>>,
        bytes: usize,
        sig: usize,
        value: u64,
        op: SignalOpKind,
        peer: usize,
    ) -> Result<()> {
        self.put_inner(dst, src.into(), bytes, peer, Some((sig, value, op)), false)
    }

    fn get_inner(&self, dst: &mut [u8], src: SymHandle, peer: usize, blocking: bool) -> Result<()> {
        self.enter();
        let bytes = dst.len();
        self.check_dst(src, bytes, peer)?;
        self.world.record(
            self.rank(),
            if blocking {
                PrimKind::Get
            } else {
                PrimKind::GetNbi
            },
            Some(peer),
            bytes,
        );
        read_bytes(self.world.slab(peer), src.offset, dst, Ordering::Acquire);
        if let Some(tm) = self.world.timing() {
            let rtt =
                tm.p2p_us(self.ctx.same_node(peer), bytes) + tm.p2p_us(self.ctx.same_node(peer), 0);
            if blocking {
                sched::advance_by(rtt);
            } else {
                let done = sched::clock() + rtt;
                let mut q = self.world.pending[self.rank()].lock();
                q.max_arrival = q.max_arrival.max(done);
                drop(q);
                sched::advance_by(tm.params.issue_us);
            }
        }
        Ok(())
    }

    /// Blocking get of `dst.len()` bytes from `peer`'s replica of `src`.
    pub fn getmem(&self, dst: &mut [u8], src: SymHandle, peer: usize) -> Result<()> {
        self.get_inner(dst, src, peer, true)
    }

    /// Non-blocking get; `dst` holds defined content after the next quiet.
    pub fn getmem_nbi(&self, dst: &mut [u8], src: SymHandle, peer: usize) -> Result<()> {
        self.get_inner(dst, src, peer, false)
    }

    /// Completes every non-blocking operation this rank has issued.
    pub fn quiet(&self) -> Result<()> {
        self.world.record(self.rank(), PrimKind::Quiet, None, 0);
        self.quiet_inner()
    }

    pub(crate) fn quiet_inner(&self) -> Result<()> {
        sched::yield_point();
        self.progress(true);
        let t = {
            let mut q = self.world.pending[self.rank()].lock();
            std::mem::replace(&mut q.max_arrival, 0.0)
        };
        sched::advance_to(t);
        Ok(())
    }

    /// Orders puts issued before the fence ahead of puts issued after it, per destination.
    pub fn fence(&self) -> Result<()> {
        self.enter();
        self.world.record(self.rank(), PrimKind::Fence, None, 0);
        self.world.pending[self.rank()].lock().epoch += 1;
        Ok(())
    }

    fn signal_update(
        &self,
        peer: usize,
        sig: usize,
        op: SignalOpKind,
        value: u64,
        kind: PrimKind,
    ) -> Result<()> {
        self.enter();
        self.world.check_rank(peer)?;
        self.world.check_signal(sig)?;
        self.world.record(self.rank(), kind, Some(peer), 0);
        let (after, arrival) = self.put_times(peer, 0, true);
        apply_signal(self.world, peer, sig, op, value, arrival);
        sched::advance_to(after);
        Ok(())
    }

    /// Atomic remote SET or ADD on signal `sig` of `peer`.
    pub fn signal_op(&self, peer: usize, sig: usize, op: SignalOpKind, value: u64) -> Result<()> {
        self.signal_update(peer, sig, op, value, PrimKind::SignalOp)
    }

    /// `signal_op` with SET.
    pub fn notify(&self, peer: usize, sig: usize, value: u64) -> Result<()> {
        self.signal_op(peer, sig, SignalOpKind::Set, value)
    }

    /// Spins on local signal `sig` until `cond` holds against `value`.
    pub fn signal_wait_until(&self, sig: usize, cond: WaitCond, value: u64) -> Result<u64> {
        self.enter();
        self.world.check_signal(sig)?;
        self.world.record(self.rank(), PrimKind::Wait, None, 0);
        let word = self.world.signal_word(self.rank(), sig);
        let mut sp = self.spinner();
        loop {
            let v = word.load(Ordering::Acquire);
            if cond.holds(v, value) {
                if let Some(ts) = self.world.signal_time(self.rank(), sig) {
                    let t = f64::from_bits(ts.load(Ordering::Acquire));
                    let extra = self
                        .world
                        .timing()
                        .map_or(0.0, |tm| tm.params.signal_pair_cost_us);
                    sched::advance_to(t + extra);
                }
                return Ok(v);
            }
            sp.spin(|| format!("signal {sig} {cond:?} {value} (observed {v})"))?;
            self.progress(false);
        }
    }

    /// Zeroes the caller's own words of `set`. Only sound once every update
    /// aimed at them has been consumed.
    pub fn signal_reset(&self, set: SignalSet) -> Result<()> {
        if set.count > 0 {
            self.world.check_signal(set.base + set.count - 1)?;
        }
        for i in 0..set.count {
            self.world
                .signal_word(self.rank(), set.at(i))
                .store(0, Ordering::Release);
            if let Some(t) = self.world.signal_time(self.rank(), set.at(i)) {
                t.store(0, Ordering::Relaxed);
            }
        }
        Ok(())
    }

    /// `signal_wait_until(EQ)` that yields a token for `consume_token`.
    pub fn wait(&self, sig: usize, value: u64) -> Result<Token> {
        let observed = self.signal_wait_until(sig, WaitCond::Eq, value)?;
        Ok(Token {
            rank: self.rank(),
            sig,
            observed,
            consumed: Arc::new(AtomicBool::new(false)),
        })
    }

    /// Returns `payload` unchanged; reads that follow are ordered after the wait.
    pub fn consume_token<T>(&self, token: &Token, payload: T) -> Result<T> {
        if token.rank != self.rank() {
            return Err(Error::usage(format!(
                "token from rank {} consumed on rank {}",
                token.rank,
                self.rank()
            )));
        }
        if token.consumed.swap(true, Ordering::AcqRel) {
            return Err(Error::usage(format!(
                "token for signal {} consumed twice",
                token.sig
            )));
        }
        debug_assert!(
            self.world.signal_value(self.rank(), token.sig) == token.observed
                || self.world.signal_value(self.rank(), token.sig) != 0,
            "token signal was never set"
        );
        mem_fence(Ordering::Acquire);
        Ok(payload)
    }

    fn atomic_word(&self, peer: usize, sig: usize) -> Result<&'w AtomicU64> {
        self.world.check_rank(peer)?;
        self.world.check_signal(sig)?;
        Ok(self.world.signal_word(peer, sig))
    }

    pub fn atomic_cas(&self, peer: usize, sig: usize, expected: u64, desired: u64) -> Result<u64> {
        self.enter();
        let word = self.atomic_word(peer, sig)?;
        self.world
            .record(self.rank(), PrimKind::AtomicCas, Some(peer), 8);
        Ok(
            match word.compare_exchange(expected, desired, Ordering::AcqRel, Ordering::Acquire) {
                Ok(old) | Err(old) => old,
            },
        )
    }

    pub fn atomic_add(&self, peer: usize, sig: usize, delta: u64) -> Result<u64> {
        self.enter();
        let word = self.atomic_word(peer, sig)?;
        self.world
            .record(self.rank(), PrimKind::AtomicAdd, Some(peer), 8);
        Ok(word.fetch_add(delta, Ordering::AcqRel))
    }

    /// Acquire load of `peer`'s signal word.
    pub fn ld_acquire(&self, peer: usize, sig: usize) -> Result<u64> {
        self.enter();
        let word = self.atomic_word(peer, sig)?;
        self.world
            .record(self.rank(), PrimKind::LdAcquire, Some(peer), 8);
        Ok(word.load(Ordering::Acquire))
    }

    /// Release add: blocking writes issued before it are visible to any
    /// acquire load that observes the add. Non-blocking puts still need quiet.
    pub fn red_release(&self, peer: usize, sig: usize, delta: u64) -> Result<()> {
        self.enter();
        let word = self.atomic_word(peer, sig)?;
        self.world
            .record(self.rank(), PrimKind::RedRelease, Some(peer), 8);
        word.fetch_add(delta, Ordering::Release);
        Ok(())
    }

    /// Single-word atomic store into `peer`'s replica at `dst` (8-byte aligned).
    pub fn int_p(&self, dst: SymHandle, value: u64, peer: usize) -> Result<()> {
        self.enter();
        self.check_dst(dst, WORD, peer)?;
        if !dst.offset.is_multiple_of(WORD) {
            return Err(Error::arg(format!(
                "int_p target offset {} is not word aligned",
                dst.offset
            )));
        }
        self.world
            .record(self.rank(), PrimKind::IntP, Some(peer), WORD);
        let (after, arrival) = self.put_times(peer, WORD, true);
        self.world.slab(peer)[dst.offset / WORD].store(value, Ordering::Release);
        stamp_words(self.world, peer, dst.offset, WORD, arrival);
        sched::advance_to(after);
        Ok(())
    }

    /// Stores the caller's bytes at `src` into `dst` on every rank of its node, self included.
    pub fn multimem_st<'a>(
        &self,
        dst: SymHandle,
        src: impl Into<Src<'a>>,
        bytes: usize,
    ) -> Result<()> {
        self.enter();
        for peer in self.ctx.node_ranks() {
            self.check_dst(dst, bytes, peer)?;
        }
        self.world
            .record(self.rank(), PrimKind::MultimemSt, None, bytes);
        let data = self.source_bytes(src.into(), bytes)?;
        let t = sched::clock()
            + self
                .world
                .timing()
                .map_or(0.0, |tm| tm.params.multimem_cost_us);
        for peer in self.ctx.node_ranks() {
            write_bytes(self.world.slab(peer), dst.offset, &data, Ordering::Release);
            stamp_words(self.world, peer, dst.offset, bytes, t);
        }
        sched::advance_to(t);
        Ok(())
    }

    /// Element-wise sum of `handle` across every replica on the caller's node.
    pub fn multimem_ld_reduce<T: Elem>(&self, handle: SymHandle) -> Result<Vec<T>> {
        self.enter();
        if !handle.len.is_multiple_of(T::WIDTH) || !handle.offset.is_multiple_of(T::WIDTH) {
            return Err(Error::arg(format!(
                "region ({}, {}) is not aligned to element width {}",
                handle.offset,
                handle.len,
                T::WIDTH
            )));
        }
        self.world.check_range(handle.offset, handle.len)?;
        self.world
            .record(self.rank(), PrimKind::MultimemLdReduce, None, handle.len);
        let mut acc = vec![T::default(); handle.len / T::WIDTH];
        let mut buf = vec![0u8; handle.len];
        for peer in self.ctx.node_ranks() {
            read_bytes(
                self.world.slab(peer),
                handle.offset,
                &mut buf,
                Ordering::Acquire,
            );
            for (a, c) in acc.iter_mut().zip(buf.chunks_exact(T::WIDTH)) {
                *a = a.add(T::read_le(c));
            }
        }
        if let Some(tm) = self.world.timing() {
            sched::advance_by(tm.params.multimem_cost_us);
        }
        Ok(acc)
    }

    /// Collective broadcast of `root`'s first `bytes` of `handle` into every replica.
    pub fn broadcast(&self, root: usize, handle: SymHandle, bytes: usize) -> Result<()> {
        self.world.check_rank(root)?;
        self.world
            .record(self.rank(), PrimKind::Broadcast, Some(root), bytes);
        self.world.bcast_roots()[self.rank()].store(root as u64 + 1, Ordering::Release);
        self.sync_all()?;
        let roots = self.world.bcast_roots();
        if let Some(r) =
            (0..self.n_pes()).find(|&r| roots[r].load(Ordering::Acquire) != root as u64 + 1)
        {
            return Err(Error::config(format!(
                "broadcast root mismatch: rank {} passed {}, rank {r} passed {}",
                self.rank(),
                root,
                roots[r].load(Ordering::Acquire) as i64 - 1
            )));
        }
        if self.rank() == root {
            for peer in 0..self.n_pes() {
                if peer != root {
                    self.putmem(handle, Src::Sym(handle), bytes, peer)?;
                }
            }
        }
        self.barrier_all()
    }
}
