//! Expert-parallel AllToAll: dispatch tokens to the ranks owning their
//! experts and combine the expert outputs back at the source.
//!
//! Dispatch entries are a 16-byte header (token u32, k u32, expert u32,
//! padding) followed by the token payload. Each destination has one region
//! per source rank, sized for the worst case of every (token, k) pair
//! landing there.

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{acquire, ring_order, CollectiveRun, Opts};
use crate::elem::{add_assign_bytes, Elem};
use crate::error::{Error, Result};
use crate::primitives::{SignalOpKind, WaitCond};
use crate::runtime::{launch, LaunchReport, Program, TaskRole};
use crate::shmem::{SignalSet, SymHandle, World};

pub const HEADER_BYTES: usize = 16;

/// `experts[r][t]` lists the top-k experts of token `t` on rank `r`.
/// Expert `e` lives on rank `e / experts_per_rank`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertRouting {
    pub n_experts: usize,
    pub topk: usize,
    pub experts: Vec<Vec<Vec<u32>>>,
}

impl ExpertRouting {
    pub fn experts_per_rank(&self, world: usize) -> usize {
        self.n_experts / world
    }

    pub fn owner(&self, expert: u32, world: usize) -> usize {
        expert as usize / self.experts_per_rank(world)
    }

    pub fn validate(&self, world: usize, tokens: usize) -> Result<()> {
        if world == 0 || self.n_experts == 0 || !self.n_experts.is_multiple_of(world) {
            return Err(Error::arg(format!(
                "{} experts cannot be split evenly over {world} ranks",
                self.n_experts
            )));
        }
        if self.experts.len() != world {
            return Err(Error::arg(format!(
                "routing covers {} ranks, world has {world}",
                self.experts.len()
            )));
        }
        for (r, toks) in self.experts.iter().enumerate() {
            if toks.len() != tokens {
                return Err(Error::arg(format!(
                    "rank {r} routes {} tokens, expected {tokens}",
                    toks.len()
                )));
            }
            for (t, ks) in toks.iter().enumerate() {
                if ks.len() != self.topk {
                    return Err(Error::arg(format!(
                        "rank {r} token {t} has {} experts, topk is {}",
                        ks.len(),
                        self.topk
                    )));
                }
                if let Some(e) = ks.iter().find(|&&e| e as usize >= self.n_experts) {
                    return Err(Error::arg(format!(
                        "rank {r} token {t} routes to expert {e} of {}",
                        self.n_experts
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One dispatched (token, k) pair as seen by the expert's rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Received {
    pub src: usize,
    pub token: u32,
    pub k: u32,
    pub expert: u32,
    pub data: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct A2aBuffers {
    /// `world` regions of `capacity` entries each, indexed by source rank.
    pub dispatch: SymHandle,
    /// One slot per (token, k), written by the expert's rank.
    pub combine: SymHandle,
    /// `S + src` holds `1 + entries` once source `src` has delivered.
    pub dispatch_sig: SignalSet,
    /// Single counter of combined entries received.
    pub combine_sig: SignalSet,
    pub tokens: usize,
    pub topk: usize,
    pub token_bytes: usize,
    pub capacity: usize,
}

impl A2aBuffers {
    pub fn alloc(world: &World, tokens: usize, topk: usize, token_bytes: usize) -> Result<Self> {
        Self::with_capacity(world, tokens, topk, token_bytes, tokens * topk)
    }

    /// Explicit per-source capacity; smaller than `tokens × topk` can overflow.
    pub fn with_capacity(
        world: &World,
        tokens: usize,
        topk: usize,
        token_bytes: usize,
        capacity: usize,
    ) -> Result<Self> {
        let w = world.world_size();
        let entry = HEADER_BYTES + token_bytes;
        Ok(A2aBuffers {
            dispatch: world.alloc_symmetric(w * capacity * entry, 8)?,
            combine: world.alloc_symmetric(tokens * topk * token_bytes, 8)?,
            dispatch_sig: world.alloc_signals(w)?,
            combine_sig: world.alloc_signals(1)?,
            tokens,
            topk,
            token_bytes,
            capacity,
        })
    }

    fn entry_bytes(&self) -> usize {
        HEADER_BYTES + self.token_bytes
    }

    fn entry(&self, src: usize, i: usize) -> SymHandle {
        let region = self.capacity * self.entry_bytes();
        self.dispatch
            .slice(src * region + i * self.entry_bytes(), self.entry_bytes())
            .expect("entry inside dispatch buffer")
    }

    fn combine_slot(&self, token: usize, k: usize) -> SymHandle {
        self.combine
            .chunk(token * self.topk + k, self.token_bytes)
            .expect("slot inside combine buffer")
    }
}

fn encode_entry(token: u32, k: u32, expert: u32, data: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(HEADER_BYTES + data.len());
    v.extend_from_slice(&token.to_le_bytes());
    v.extend_from_slice(&k.to_le_bytes());
    v.extend_from_slice(&expert.to_le_bytes());
    v.extend_from_slice(&[0; 4]);
    v.extend_from_slice(data);
    v
}

fn decode_entry(src: usize, bytes: &[u8]) -> Received {
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    Received {
        src,
        token: word(0),
        k: word(1),
        expert: word(2),
        data: bytes[HEADER_BYTES..].to_vec(),
    }
}

/// Sends every (token, k) pair to its expert's rank. Returns, per rank,
/// the entries it received ordered by (source, token, k).
pub fn alltoall_dispatch(
    world: &World,
    bufs: A2aBuffers,
    routing: &ExpertRouting,
    tokens: &[Vec<u8>],
    opts: &Opts,
) -> Result<(Vec<Vec<Received>>, LaunchReport)> {
    let w = world.world_size();
    routing.validate(w, bufs.tokens)?;
    if routing.topk != bufs.topk {
        return Err(Error::arg(format!(
            "routing topk {} but buffers sized for {}",
            routing.topk, bufs.topk
        )));
    }
    super::check_inputs(
        tokens,
        w,
        bufs.tokens * bufs.token_bytes,
        "alltoall_dispatch",
    )?;

    // outgoing[src][dst]: encoded entries in (token, k) order.
    let mut outgoing = vec![vec![Vec::new(); w]; w];
    for (src, toks) in routing.experts.iter().enumerate() {
        for (t, ks) in toks.iter().enumerate() {
            let data = &tokens[src][t * bufs.token_bytes..(t + 1) * bufs.token_bytes];
            for (k, &e) in ks.iter().enumerate() {
                outgoing[src][routing.owner(e, w)].push(encode_entry(t as u32, k as u32, e, data));
            }
        }
    }
    for (src, row) in outgoing.iter().enumerate() {
        if let Some((dst, v)) = row
            .iter()
            .enumerate()
            .find(|(_, v)| v.len() > bufs.capacity)
        {
            return Err(Error::Capacity {
                what: format!("dispatch region for rank {src} on rank {dst}"),
                needed: v.len(),
                capacity: bufs.capacity,
            });
        }
    }

    let received: Vec<Mutex<Vec<Received>>> = (0..w).map(|_| Mutex::new(Vec::new())).collect();
    let mut prog = Program::new(w);
    for (rank, row) in outgoing.iter().enumerate() {
        let send = prog.stream(rank, TaskRole::CommBlock)?;
        for dst in ring_order(rank, w) {
            let entries = &row[dst];
            prog.task(send, format!("dispatch r{rank}->r{dst}"), move |cx| {
                let pe = cx.pe();
                for (i, e) in entries.iter().enumerate() {
                    pe.putmem_nbi(bufs.entry(rank, i), e, e.len(), dst)?;
                }
                pe.quiet()?;
                pe.signal_op(
                    dst,
                    bufs.dispatch_sig.at(rank),
                    SignalOpKind::Set,
                    entries.len() as u64 + 1,
                )
            })?;
        }
        let recv = prog.stream(rank, TaskRole::Compute)?;
        let out = &received[rank];
        let reset = opts.reset_signals;
        prog.task(recv, format!("dispatch recv r{rank}"), move |cx| {
            let pe = cx.pe();
            let mut got = Vec::new();
            for src in 0..w {
                let count = pe.signal_wait_until(bufs.dispatch_sig.at(src), WaitCond::Ge, 1)? - 1;
                for i in 0..count as usize {
                    got.push(decode_entry(src, &pe.local(bufs.entry(src, i))?.to_vec()));
                }
            }
            if reset {
                pe.signal_reset(bufs.dispatch_sig)?;
            }
            *out.lock() = got;
            Ok(())
        })?;
    }
    let report = launch(world, prog, opts.mode).ok()?;
    Ok((
        received.into_iter().map(Mutex::into_inner).collect(),
        report,
    ))
}

/// Returns each entry's `data` (now the expert output) to the source's
/// combine slot; each source then sums its token's `topk` outputs in
/// ascending k order.
pub fn alltoall_combine<T: Elem>(
    world: &World,
    bufs: A2aBuffers,
    processed: &[Vec<Received>],
    opts: &Opts,
) -> Result<CollectiveRun> {
    let w = world.world_size();
    if processed.len() != w {
        return Err(Error::arg(format!(
            "alltoall_combine: {} ranks of entries for {w} ranks",
            processed.len()
        )));
    }
    if !bufs.token_bytes.is_multiple_of(T::WIDTH) {
        return Err(Error::arg(
            "alltoall_combine: token bytes not a whole number of elements",
        ));
    }
    for e in processed.iter().flatten() {
        if e.src >= w
            || e.token as usize >= bufs.tokens
            || e.k as usize >= bufs.topk
            || e.data.len() != bufs.token_bytes
        {
            return Err(Error::arg(format!(
                "alltoall_combine: malformed entry (src {}, token {}, k {}, {} bytes)",
                e.src,
                e.token,
                e.k,
                e.data.len()
            )));
        }
    }
    let expect = (bufs.tokens * bufs.topk) as u64;
    let mut prog = Program::new(w);
    for (rank, entries) in processed.iter().enumerate() {
        let send = prog.stream(rank, TaskRole::CommBlock)?;
        for src in ring_order(rank, w) {
            prog.task(send, format!("combine r{rank}->r{src}"), move |cx| {
                let pe = cx.pe();
                let mine: Vec<&Received> = entries.iter().filter(|e| e.src == src).collect();
                if mine.is_empty() {
                    return Ok(());
                }
                for e in &mine {
                    pe.putmem_nbi(
                        bufs.combine_slot(e.token as usize, e.k as usize),
                        &e.data,
                        bufs.token_bytes,
                        src,
                    )?;
                }
                pe.quiet()?;
                pe.atomic_add(src, bufs.combine_sig.at(0), mine.len() as u64)
                    .map(drop)
            })?;
        }
        let sum = prog.stream(rank, TaskRole::Compute)?;
        let (sync, reset) = (opts.sync, opts.reset_signals);
        prog.task(sum, format!("combine sum r{rank}"), move |cx| {
            let pe = cx.pe();
            if expect > 0 {
                acquire(pe, bufs.combine_sig.at(0), expect, sync)?;
            }
            if reset {
                pe.signal_reset(bufs.combine_sig)?;
            }
            Ok(())
        })?;
    }
    let report = launch(world, prog, opts.mode).ok()?;
    let outputs = (0..w)
        .map(|r| {
            let all = world.read_symmetric(r, bufs.combine);
            let mut out = vec![0u8; bufs.tokens * bufs.token_bytes];
            for (t, dst) in out.chunks_exact_mut(bufs.token_bytes.max(1)).enumerate() {
                for k in 0..bufs.topk {
                    let at = (t * bufs.topk + k) * bufs.token_bytes;
                    add_assign_bytes::<T>(dst, &all[at..at + bufs.token_bytes]);
                }
            }
            out
        })
        .collect();
    Ok(CollectiveRun { outputs, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elem::{from_bytes, to_bytes};
    use crate::shmem::WorldSpec;

    fn routing() -> ExpertRouting {
        // 2 ranks, 4 experts, 3 tokens per rank, top-2.
        ExpertRouting {
            n_experts: 4,
            topk: 2,
            experts: vec![
                vec![vec![0, 3], vec![1, 2], vec![3, 2]],
                vec![vec![2, 0], vec![0, 1], vec![3, 3]],
            ],
        }
    }

    fn tokens() -> Vec<Vec<u8>> {
        (0..2)
            .map(|r| to_bytes(&[(r * 10), (r * 10 + 1), (r * 10 + 2)]))
            .collect()
    }

    #[test]
    fn dispatch_then_combine_round_trips() {
        let w = World::init(WorldSpec::new(1, 2)).unwrap();
        let b = A2aBuffers::alloc(&w, 3, 2, 4).unwrap();
        let (recv, _) = alltoall_dispatch(&w, b, &routing(), &tokens(), &Opts::default()).unwrap();
        assert_eq!(recv[0].len() + recv[1].len(), 12);
        for (r, entries) in recv.iter().enumerate() {
            for e in entries {
                assert_eq!(e.expert as usize / 2, r);
                assert_eq!(e.data, tokens()[e.src][e.token as usize * 4..][..4]);
            }
        }
        // Expert e multiplies by e + 1.
        let processed: Vec<Vec<Received>> = recv
            .into_iter()
            .map(|v| {
                v.into_iter()
                    .map(|mut e| {
                        let x = from_bytes::<i32>(&e.data)[0];
                        e.data = to_bytes(&[x * (e.expert as i32 + 1)]);
                        e
                    })
                    .collect()
            })
            .collect();
        let run = alltoall_combine::<i32>(&w, b, &processed, &Opts::default()).unwrap();
        let r = routing();
        for src in 0..2 {
            let got = from_bytes::<i32>(&run.outputs[src]);
            for t in 0..3 {
                let x = (src * 10 + t) as i32;
                let want: i32 = r.experts[src][t].iter().map(|&e| x * (e as i32 + 1)).sum();
                assert_eq!(got[t], want);
            }
        }
        assert!(w.signals_all_zero());
    }

    #[test]
    fn overflow_is_capacity_error() {
        let w = World::init(WorldSpec::new(1, 2)).unwrap();
        let b = A2aBuffers::with_capacity(&w, 3, 2, 4, 2).unwrap();
        let err = alltoall_dispatch(&w, b, &routing(), &tokens(), &Opts::default()).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn bad_expert_is_argument_error() {
        let w = World::init(WorldSpec::new(1, 2)).unwrap();
        let b = A2aBuffers::alloc(&w, 3, 2, 4).unwrap();
        let mut r = routing();
        r.experts[0][0][0] = 9;
        assert!(matches!(
            alltoall_dispatch(&w, b, &r, &tokens(), &Opts::default()),
            Err(Error::Argument(_))
        ));
    }
}
