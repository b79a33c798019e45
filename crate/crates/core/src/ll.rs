//! Low-latency (LL) protocol: every 4-byte payload word travels with a
//! 4-byte flag inside one 8-byte slot that is written and read as a single
//! atomic unit. A receiver knows a slot has arrived when its flag matches
//! the round's value, so no barrier or quiet is needed on the receive path.
//!
//! Slot layout (little-endian): bytes 0..4 payload, bytes 4..8 flag.

use std::sync::atomic::Ordering;

use crate::error::{Error, Result};
use crate::instrument::PrimKind;
use crate::primitives::Src;
use crate::sched;
use crate::shmem::{Pe, SymHandle, WORD};

pub const SLOT_BYTES: usize = 8;
pub const PAYLOAD_BYTES: usize = 4;

/// Flag for the `iteration`-th round: `iteration + 1`, cycling through every
/// nonzero u32 so a zeroed buffer never matches.
pub fn round_flag(iteration: u64) -> u32 {
    (iteration % u32::MAX as u64) as u32 + 1
}

pub fn slot(payload: u32, flag: u32) -> u64 {
    (flag as u64) << 32 | payload as u64
}

pub fn slot_parts(word: u64) -> (u32, u32) {
    (word as u32, (word >> 32) as u32)
}

fn check_payload(len: usize) -> Result<()> {
    if !len.is_multiple_of(PAYLOAD_BYTES) {
        return Err(Error::arg(format!(
            "LL payload of {len} bytes is not a multiple of 4"
        )));
    }
    Ok(())
}

/// Encodes `payload` into slots; the output is exactly twice as long.
pub fn encode(payload: &[u8], flag: u32) -> Result<Vec<u8>> {
    check_payload(payload.len())?;
    let mut out = Vec::with_capacity(payload.len() * 2);
    for w in payload.chunks_exact(PAYLOAD_BYTES) {
        let p = u32::from_le_bytes(w.try_into().unwrap());
        out.extend_from_slice(&slot(p, flag).to_le_bytes());
    }
    Ok(out)
}

/// Decodes slots, or `None` if any slot carries a different flag.
pub fn decode(slots: &[u8], flag: u32) -> Option<Vec<u8>> {
    if !slots.len().is_multiple_of(SLOT_BYTES) {
        return None;
    }
    let mut out = Vec::with_capacity(slots.len() / 2);
    for s in slots.chunks_exact(SLOT_BYTES) {
        let (p, f) = slot_parts(u64::from_le_bytes(s.try_into().unwrap()));
        if f != flag {
            return None;
        }
        out.extend_from_slice(&p.to_le_bytes());
    }
    Some(out)
}

impl<'w> Pe<'w> {
    fn ll_region(&self, h: SymHandle, slots: usize) -> Result<usize> {
        if !h.offset.is_multiple_of(WORD) {
            return Err(Error::arg(format!(
                "LL buffer offset {} is not 8-byte aligned",
                h.offset
            )));
        }
        if slots * SLOT_BYTES > h.len {
            return Err(Error::Range {
                offset: h.offset,
                len: slots * SLOT_BYTES,
                limit: h.len,
            });
        }
        self.world.check_range(h.offset, slots * SLOT_BYTES)?;
        Ok(h.offset / WORD)
    }

    /// Packs `bytes` of `src` with `flag` into the caller's replica of `dst`,
    /// one 8-byte store per slot.
    pub fn ll_pack<'a>(
        &self,
        dst: SymHandle,
        src: impl Into<Src<'a>>,
        bytes: usize,
        flag: u32,
    ) -> Result<()> {
        sched::yield_point();
        check_payload(bytes)?;
        let payload = match src.into() {
            Src::Local(b) => b
                .get(..bytes)
                .ok_or(Error::Range {
                    offset: 0,
                    len: bytes,
                    limit: b.len(),
                })?
                .to_vec(),
            Src::Sym(h) => {
                if bytes > h.len {
                    return Err(Error::Range {
                        offset: h.offset,
                        len: bytes,
                        limit: h.len,
                    });
                }
                self.local(h.slice(0, bytes)?)?.to_vec()
            }
        };
        let slots = bytes / PAYLOAD_BYTES;
        let base = self.ll_region(dst, slots)?;
        self.world
            .record(self.ctx.rank, PrimKind::LlPack, None, bytes);
        let slab = self.world.slab(self.ctx.rank);
        for (i, w) in payload.chunks_exact(PAYLOAD_BYTES).enumerate() {
            let p = u32::from_le_bytes(w.try_into().unwrap());
            slab[base + i].store(slot(p, flag), Ordering::Release);
        }
        if let Some(tm) = self.world.timing() {
            sched::advance_by(tm.params.ll_step_us);
        }
        Ok(())
    }

    /// Spins on each slot of the caller's replica of `src` until its flag
    /// equals `flag`; returns the slot words and the latest arrival stamp.
    fn ll_spin(
        &self,
        src: SymHandle,
        slots: usize,
        flag: u32,
        what: &str,
    ) -> Result<(Vec<u64>, f64)> {
        let base = self.ll_region(src, slots)?;
        let slab = self.world.slab(self.ctx.rank);
        let times = self
            .world
            .timing()
            .map(|_| self.world.slab_time(self.ctx.rank));
        let mut out = Vec::with_capacity(slots);
        let mut latest = 0.0f64;
        let mut sp = self.spinner();
        for i in 0..slots {
            loop {
                let w = slab[base + i].load(Ordering::Acquire);
                if slot_parts(w).1 == flag {
                    out.push(w);
                    if let Some(t) = times {
                        latest = latest.max(f64::from_bits(t[base + i].load(Ordering::Acquire)));
                    }
                    break;
                }
                sp.spin(|| {
                    format!(
                        "{what}: slot {i} at offset {} to carry flag {flag}",
                        src.offset
                    )
                })?;
                self.progress(false);
            }
        }
        Ok((out, latest))
    }

    fn ll_finish(&self, latest: f64) {
        if let Some(tm) = self.world.timing() {
            sched::advance_to(latest);
            sched::advance_by(tm.params.ll_step_us);
        }
    }

    /// Receives `bytes` of payload from the caller's LL buffer `src`,
    /// stripping flags.
    pub fn recv_ll_unpack(&self, src: SymHandle, bytes: usize, flag: u32) -> Result<Vec<u8>> {
        sched::yield_point();
        check_payload(bytes)?;
        self.world
            .record(self.ctx.rank, PrimKind::LlRecvUnpack, None, bytes);
        let (words, latest) = self.ll_spin(src, bytes / PAYLOAD_BYTES, flag, "recv_ll_unpack")?;
        let mut out = Vec::with_capacity(bytes);
        for w in words {
            out.extend_from_slice(&slot_parts(w).0.to_le_bytes());
        }
        self.ll_finish(latest);
        Ok(out)
    }

    /// Same spin as `recv_ll_unpack`, but copies whole slots into `dst` of
    /// the caller's replica so they can be forwarded as-is. `dst` may equal `src`.
    pub fn recv_ll_pack(
        &self,
        dst: SymHandle,
        src: SymHandle,
        bytes: usize,
        flag: u32,
    ) -> Result<()> {
        sched::yield_point();
        check_payload(bytes)?;
        let slots = bytes / PAYLOAD_BYTES;
        self.world
            .record(self.ctx.rank, PrimKind::LlRecvPack, None, bytes);
        let (words, latest) = self.ll_spin(src, slots, flag, "recv_ll_pack")?;
        let base = self.ll_region(dst, slots)?;
        if dst.offset != src.offset {
            let slab = self.world.slab(self.ctx.rank);
            for (i, w) in words.into_iter().enumerate() {
                slab[base + i].store(w, Ordering::Release);
            }
        }
        self.ll_finish(latest);
        Ok(())
    }
}
