//! ReduceScatter: intra-node push and the two-level inter-node variant.

use super::{acquire, check_inputs, ring_order, CollectiveRun, Opts};
use crate::elem::{add_assign_bytes, Elem};
use crate::error::{Error, Result};
use crate::primitives::{SignalOpKind, Src, WaitCond};
use crate::runtime::{launch, Program, StreamRef, TaskRole};
use crate::shmem::{SignalSet, SymHandle, World};

/// `l` holds the caller's W chunks (chunk `r` is destined for rank `r`),
/// `t` one landing slot per source rank, `out` the reduced chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RsBuffers {
    pub l: SymHandle,
    pub t: SymHandle,
    pub out: SymHandle,
    pub s: SignalSet,
    pub chunk: usize,
}

impl RsBuffers {
    pub fn alloc(world: &World, chunk: usize) -> Result<Self> {
        let w = world.world_size();
        Ok(RsBuffers {
            l: world.alloc_symmetric(w * chunk, 8)?,
            t: world.alloc_symmetric(w * chunk, 8)?,
            out: world.alloc_symmetric(chunk, 8)?,
            s: world.alloc_signals(w)?,
            chunk,
        })
    }

    fn l_chunk(&self, r: usize) -> SymHandle {
        self.l.chunk(r, self.chunk).expect("chunk inside L")
    }

    fn slot(&self, r: usize) -> SymHandle {
        self.t.chunk(r, self.chunk).expect("slot inside T")
    }
}

/// Push chunk `r` of L into slot RANK on rank `r`, signalling `S + RANK`
/// there. With `ready`, each push first waits for `P + r` to equal 1 on
/// the caller (set by whatever produces L).
pub fn reducescatter_push_tasks<'a, T: Elem>(
    prog: &mut Program<'a>,
    bufs: RsBuffers,
    rank: usize,
    ready: Option<SignalSet>,
    opts: &Opts,
) -> Result<(StreamRef, StreamRef)> {
    let world = prog.world_size();
    let comm = prog.stream(rank, TaskRole::CommBlock)?;
    for peer in ring_order(rank, world) {
        prog.task(comm, format!("rs push r{rank}->r{peer}"), move |cx| {
            let pe = cx.pe();
            if let Some(p) = ready {
                pe.signal_wait_until(p.at(peer), WaitCond::Eq, 1)?;
            }
            pe.putmem_signal(
                bufs.slot(rank),
                Src::Sym(bufs.l_chunk(peer)),
                bufs.chunk,
                bufs.s.at(rank),
                1,
                SignalOpKind::Set,
                peer,
            )
        })?;
    }
    let red = prog.stream(rank, TaskRole::Compute)?;
    let (sync, reset) = (opts.sync, opts.reset_signals);
    prog.task(red, format!("rs reduce r{rank}"), move |cx| {
        let pe = cx.pe();
        let mut acc = vec![0u8; bufs.chunk];
        for j in 0..world {
            acquire(pe, bufs.s.at(j), 1, sync)?;
            let part = pe.local(bufs.slot(j))?.to_vec();
            if j == 0 {
                acc = part;
            } else {
                add_assign_bytes::<T>(&mut acc, &part);
            }
        }
        pe.local(bufs.out)?.write(0, &acc)?;
        if reset {
            pe.signal_reset(bufs.s)?;
        }
        Ok(())
    })?;
    if let (Some(p), true) = (ready, reset) {
        // Only this stream waits on P, so it is the one that may clear it.
        prog.task(comm, format!("rs reset P r{rank}"), move |cx| {
            cx.pe().signal_reset(p)
        })?;
    }
    Ok((comm, red))
}

fn check_width<T: Elem>(chunk: usize, what: &str) -> Result<()> {
    if !chunk.is_multiple_of(T::WIDTH) {
        return Err(Error::arg(format!(
            "{what}: chunk of {chunk} bytes is not a whole number of {}-byte elements",
            T::WIDTH
        )));
    }
    Ok(())
}

/// `inputs[r]` is rank r's full L; rank r receives the sum of every
/// rank's chunk r.
pub fn reducescatter_push_intra<T: Elem>(
    world: &World,
    bufs: RsBuffers,
    inputs: &[Vec<u8>],
    opts: &Opts,
) -> Result<CollectiveRun> {
    let n = world.world_size();
    check_width::<T>(bufs.chunk, "reducescatter_push_intra")?;
    check_inputs(inputs, n, n * bufs.chunk, "reducescatter_push_intra")?;
    let mut prog = Program::new(n);
    for (rank, input) in inputs.iter().enumerate() {
        world.write_symmetric(rank, bufs.l, input)?;
        reducescatter_push_tasks::<T>(&mut prog, bufs, rank, None, opts)?;
    }
    let report = launch(world, prog, opts.mode).ok()?;
    let outputs = (0..n).map(|r| world.read_symmetric(r, bufs.out)).collect();
    Ok(CollectiveRun { outputs, report })
}

/// Buffers of the two-level ReduceScatter. `scatter` holds
/// `n_nodes × local_world` chunks and is never reused within a call;
/// `partial` holds one chunk per source node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterRsBuffers {
    pub l: SymHandle,
    pub scatter: SymHandle,
    pub partial: SymHandle,
    pub out: SymHandle,
    pub chunk: usize,
    pub n_nodes: usize,
    pub local_world: usize,
}

impl InterRsBuffers {
    pub fn alloc(world: &World, chunk: usize) -> Result<Self> {
        let spec = world.spec();
        let (n, lw) = (spec.n_nodes, spec.local_world_size);
        Ok(InterRsBuffers {
            l: world.alloc_symmetric(n * lw * chunk, 8)?,
            scatter: world.alloc_symmetric(n * lw * chunk, 8)?,
            partial: world.alloc_symmetric(n * chunk, 8)?,
            out: world.alloc_symmetric(chunk, 8)?,
            chunk,
            n_nodes: n,
            local_world: lw,
        })
    }

    fn l_chunk(&self, r: usize) -> SymHandle {
        self.l.chunk(r, self.chunk).expect("chunk inside L")
    }

    fn scatter_slot(&self, node: usize, local: usize) -> SymHandle {
        self.scatter
            .chunk(node * self.local_world + local, self.chunk)
            .expect("slot inside scatter buffer")
    }

    fn partial_slot(&self, node: usize) -> SymHandle {
        self.partial
            .chunk(node, self.chunk)
            .expect("slot inside partial buffer")
    }
}

/// Node visiting order for node `node`: every other node first, own node last.
pub(crate) fn inter_node_order(node: usize, n_nodes: usize) -> Vec<usize> {
    (0..n_nodes).map(|i| (node + 1 + i) % n_nodes).collect()
}

/// Stream 0 scatters, per destination node `n`, chunk `r + n·LW` of L to
/// node peer `r`'s `scatter[n][LOCAL_RANK]` and closes the step with an
/// intra-node barrier. Stream 1 reduces `scatter[n][*]` as each step
/// completes, sends the partial to rank `LOCAL_RANK + n·LW` as
/// `partial[NODE_ID]`, then after a world barrier sums the partials.
/// With `ready`, each scatter first waits for `P + c` of every chunk it sends.
pub fn reducescatter_inter_tasks<'a, T: Elem>(
    prog: &mut Program<'a>,
    bufs: InterRsBuffers,
    rank: usize,
    ready: Option<SignalSet>,
    reset: bool,
) -> Result<(StreamRef, StreamRef)> {
    let lw = bufs.local_world;
    let (node, local) = (rank / lw, rank % lw);
    let order = inter_node_order(node, bufs.n_nodes);
    let s0 = prog.stream(rank, TaskRole::CommBlock)?;
    let s1 = prog.stream(rank, TaskRole::CommBlock)?;
    for (i, &n) in order.iter().enumerate() {
        prog.task(s0, format!("rs scatter r{rank} node{n}"), move |cx| {
            let pe = cx.pe();
            for r in 0..lw {
                let dst = node * lw + r;
                if let Some(p) = ready {
                    pe.signal_wait_until(p.at(r + n * lw), WaitCond::Eq, 1)?;
                }
                pe.putmem(
                    bufs.scatter_slot(n, local),
                    Src::Sym(bufs.l_chunk(r + n * lw)),
                    bufs.chunk,
                    dst,
                )?;
            }
            pe.barrier_all_intra_node()
        })?;
        prog.stream_wait_for(s1, s0, i + 1)?;
        prog.task(s1, format!("rs reduce+p2p r{rank} node{n}"), move |cx| {
            let pe = cx.pe();
            let mut acc = pe.local(bufs.scatter_slot(n, 0))?.to_vec();
            for l in 1..lw {
                add_assign_bytes::<T>(&mut acc, &pe.local(bufs.scatter_slot(n, l))?.to_vec());
            }
            pe.putmem_nbi(bufs.partial_slot(node), &acc, bufs.chunk, local + n * lw)
        })?;
    }
    let n_nodes = bufs.n_nodes;
    prog.task(s1, format!("rs final r{rank}"), move |cx| {
        let pe = cx.pe();
        pe.barrier_all()?;
        let mut acc = pe.local(bufs.partial_slot(0))?.to_vec();
        for m in 1..n_nodes {
            add_assign_bytes::<T>(&mut acc, &pe.local(bufs.partial_slot(m))?.to_vec());
        }
        pe.local(bufs.out)?.write(0, &acc)?;
        match ready {
            Some(p) if reset => pe.signal_reset(p),
            _ => Ok(()),
        }
    })?;
    Ok((s0, s1))
}

pub fn reducescatter_inter<T: Elem>(
    world: &World,
    bufs: InterRsBuffers,
    inputs: &[Vec<u8>],
    opts: &Opts,
) -> Result<CollectiveRun> {
    let n = world.world_size();
    if bufs.n_nodes * bufs.local_world != n {
        return Err(Error::arg(
            "reducescatter_inter: buffers were allocated for another world",
        ));
    }
    check_width::<T>(bufs.chunk, "reducescatter_inter")?;
    check_inputs(inputs, n, n * bufs.chunk, "reducescatter_inter")?;
    let mut prog = Program::new(n);
    for (rank, input) in inputs.iter().enumerate() {
        world.write_symmetric(rank, bufs.l, input)?;
        reducescatter_inter_tasks::<T>(&mut prog, bufs, rank, None, opts.reset_signals)?;
    }
    let report = launch(world, prog, opts.mode).ok()?;
    let outputs = (0..n).map(|r| world.read_symmetric(r, bufs.out)).collect();
    Ok(CollectiveRun { outputs, report })
}
