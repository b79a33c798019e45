//! Inter-node AllGather over the LL protocol with multimem broadcast.
//!
//! No barrier and no quiet on the critical path: every receiver spins on
//! the flags of the slots it needs.

use super::{check_inputs, CollectiveRun, Opts};
use crate::error::{Error, Result};
use crate::ll::{round_flag, PAYLOAD_BYTES, SLOT_BYTES};
use crate::primitives::Src;
use crate::runtime::{launch, Program, StreamRef, TaskRole};
use crate::shmem::{SymHandle, World};

/// `ll` has one LL segment (twice the payload) per source rank; `out` one
/// payload chunk per source rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LlAgBuffers {
    pub ll: SymHandle,
    pub out: SymHandle,
    pub chunk: usize,
    pub n_nodes: usize,
    pub local_world: usize,
}

impl LlAgBuffers {
    pub fn alloc(world: &World, chunk: usize) -> Result<Self> {
        if !chunk.is_multiple_of(PAYLOAD_BYTES) {
            return Err(Error::arg(format!(
                "LL chunk of {chunk} bytes is not a multiple of 4"
            )));
        }
        let spec = world.spec();
        let w = spec.world_size;
        Ok(LlAgBuffers {
            ll: world.alloc_symmetric(w * chunk * SLOT_BYTES / PAYLOAD_BYTES, 8)?,
            out: world.alloc_symmetric(w * chunk, 8)?,
            chunk,
            n_nodes: spec.n_nodes,
            local_world: spec.local_world_size,
        })
    }

    fn seg_bytes(&self) -> usize {
        self.chunk * SLOT_BYTES / PAYLOAD_BYTES
    }

    fn seg(&self, r: usize) -> SymHandle {
        self.ll
            .chunk(r, self.seg_bytes())
            .expect("segment inside LL buffer")
    }

    fn out_slot(&self, r: usize) -> SymHandle {
        self.out.chunk(r, self.chunk).expect("slot inside output")
    }
}

/// Three streams per rank. Stream 0 copies the local chunk into its output
/// slot, packs it, sends the LL segment to the same-local rank of every
/// other node and multimem-stores it on its own node. Stream 1 forwards,
/// per remote node, the incoming segment onto this node and unpacks it.
/// Stream 2 unpacks the segments broadcast by node peers.
pub fn allgather_ll_tasks<'a>(
    prog: &mut Program<'a>,
    bufs: LlAgBuffers,
    rank: usize,
    input: &'a [u8],
    round: u64,
) -> Result<[StreamRef; 3]> {
    let flag = round_flag(round);
    let (n, lw) = (bufs.n_nodes, bufs.local_world);
    let (node, local) = (rank / lw, rank % lw);
    let (chunk, seg_bytes) = (bufs.chunk, bufs.seg_bytes());

    let s0 = prog.stream(rank, TaskRole::CommBlock)?;
    prog.task(s0, format!("ll own r{rank}"), move |cx| {
        let pe = cx.pe();
        let seg = bufs.seg(rank);
        pe.local(bufs.out_slot(rank))?.write(0, input)?;
        pe.ll_pack(seg, input, chunk, flag)?;
        for k in 1..n {
            pe.putmem_nbi(seg, Src::Sym(seg), seg_bytes, ((node + k) % n) * lw + local)?;
        }
        pe.multimem_st(seg, Src::Sym(seg), seg_bytes)
    })?;

    let s1 = prog.stream(rank, TaskRole::CommBlock)?;
    for k in 1..n {
        let src = ((node + n - k) % n) * lw + local;
        prog.task(s1, format!("ll forward r{rank}<-r{src}"), move |cx| {
            let pe = cx.pe();
            let seg = bufs.seg(src);
            pe.recv_ll_pack(seg, seg, chunk, flag)?;
            pe.multimem_st(seg, Src::Sym(seg), seg_bytes)?;
            let data = pe.recv_ll_unpack(seg, chunk, flag)?;
            pe.local(bufs.out_slot(src))?.write(0, &data)
        })?;
    }

    let s2 = prog.stream(rank, TaskRole::CommBlock)?;
    for src in (0..n * lw).filter(|s| s % lw != local) {
        prog.task(s2, format!("ll unpack r{rank}<-r{src}"), move |cx| {
            let pe = cx.pe();
            let data = pe.recv_ll_unpack(bufs.seg(src), chunk, flag)?;
            pe.local(bufs.out_slot(src))?.write(0, &data)
        })?;
    }
    Ok([s0, s1, s2])
}

/// Uses `opts.round` for the flag; successive calls on the same buffers
/// must use distinct rounds, which is what makes resets unnecessary.
pub fn allgather_ll_inter(
    world: &World,
    bufs: LlAgBuffers,
    inputs: &[Vec<u8>],
    opts: &Opts,
) -> Result<CollectiveRun> {
    let w = world.world_size();
    if bufs.n_nodes * bufs.local_world != w {
        return Err(Error::arg(
            "allgather_ll_inter: buffers were allocated for another world",
        ));
    }
    if bufs.n_nodes < 2 {
        return Err(Error::config(format!(
            "allgather_ll_inter needs at least 2 nodes, world has {}",
            bufs.n_nodes
        )));
    }
    check_inputs(inputs, w, bufs.chunk, "allgather_ll_inter")?;
    let mut prog = Program::new(w);
    for (rank, input) in inputs.iter().enumerate() {
        allgather_ll_tasks(&mut prog, bufs, rank, input, opts.round)?;
    }
    let report = launch(world, prog, opts.mode).ok()?;
    let outputs = (0..w).map(|r| world.read_symmetric(r, bufs.out)).collect();
    Ok(CollectiveRun { outputs, report })
}
