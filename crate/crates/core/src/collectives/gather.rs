//! Intra-node AllGather in push and pull mode.

use super::{acquire, check_inputs, ring_order, CollectiveRun, Opts};
use crate::error::{Error, Result};
use crate::primitives::SignalOpKind;
use crate::runtime::{launch, Program, StreamRef, TaskRole};
use crate::shmem::{SignalSet, SymHandle, World};

/// `T` holds one slot per rank; `S + r` announces slot `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgBuffers {
    pub t: SymHandle,
    pub s: SignalSet,
    pub chunk: usize,
}

impl AgBuffers {
    pub fn alloc(world: &World, chunk: usize) -> Result<Self> {
        Ok(AgBuffers {
            t: world.alloc_symmetric(world.world_size() * chunk, 8)?,
            s: world.alloc_signals(world.world_size())?,
            chunk,
        })
    }

    pub fn slot(&self, r: usize) -> SymHandle {
        self.t.chunk(r, self.chunk).expect("slot inside T")
    }
}

/// Push mode: write the local chunk into slot RANK of every rank, each put
/// followed by a signal on `S + RANK` at the destination.
pub fn allgather_push_tasks<'a>(
    prog: &mut Program<'a>,
    bufs: AgBuffers,
    rank: usize,
    input: &'a [u8],
    order: &[usize],
) -> Result<StreamRef> {
    let s = prog.stream(rank, TaskRole::CommBlock)?;
    for &peer in order {
        prog.task(s, format!("push r{rank}->r{peer}"), move |cx| {
            cx.pe().putmem_signal(
                bufs.slot(rank),
                input,
                bufs.chunk,
                bufs.s.at(rank),
                1,
                SignalOpKind::Set,
                peer,
            )
        })?;
    }
    Ok(s)
}

/// Pull mode: publish the local chunk, `barrier_all`, then copy every other
/// slot from its owner in `order`, signalling `S + r` locally per arrival.
pub fn allgather_pull_tasks<'a>(
    prog: &mut Program<'a>,
    bufs: AgBuffers,
    rank: usize,
    input: &'a [u8],
    order: &[usize],
) -> Result<StreamRef> {
    let s = prog.stream(rank, TaskRole::CommBlock)?;
    prog.task(s, format!("publish r{rank}"), move |cx| {
        let pe = cx.pe();
        pe.putmem(bufs.slot(rank), input, bufs.chunk, rank)?;
        pe.notify(rank, bufs.s.at(rank), 1)?;
        pe.barrier_all()
    })?;
    for &r in order.iter().filter(|&&r| r != rank) {
        prog.task(s, format!("pull r{rank}<-r{r}"), move |cx| {
            let pe = cx.pe();
            let mut buf = vec![0u8; bufs.chunk];
            pe.getmem(&mut buf, bufs.slot(r), r)?;
            pe.local(bufs.slot(r))?.write(0, &buf)?;
            pe.notify(rank, bufs.s.at(r), 1)
        })?;
    }
    Ok(s)
}

fn consumer<'a>(
    prog: &mut Program<'a>,
    bufs: AgBuffers,
    rank: usize,
    world: usize,
    opts: &Opts,
) -> Result<()> {
    let s = prog.stream(rank, TaskRole::Compute)?;
    let (sync, reset) = (opts.sync, opts.reset_signals);
    prog.task(s, format!("consume r{rank}"), move |cx| {
        for j in 0..world {
            acquire(cx.pe(), bufs.s.at(j), 1, sync)?;
        }
        if reset {
            cx.pe().signal_reset(bufs.s)?;
        }
        Ok(())
    })?;
    Ok(())
}

type Builder =
    for<'a> fn(&mut Program<'a>, AgBuffers, usize, &'a [u8], &[usize]) -> Result<StreamRef>;

fn run(
    world: &World,
    bufs: AgBuffers,
    inputs: &[Vec<u8>],
    opts: &Opts,
    build: Builder,
    what: &str,
) -> Result<CollectiveRun> {
    let n = world.world_size();
    check_inputs(inputs, n, bufs.chunk, what)?;
    if bufs.t.len < n * bufs.chunk || bufs.s.count < n {
        return Err(Error::arg(format!(
            "{what}: buffers smaller than {n} slots"
        )));
    }
    let mut prog = Program::new(n);
    for (rank, input) in inputs.iter().enumerate() {
        build(&mut prog, bufs, rank, input, &ring_order(rank, n))?;
        consumer(&mut prog, bufs, rank, n, opts)?;
    }
    let report = launch(world, prog, opts.mode).ok()?;
    let outputs = (0..n).map(|r| world.read_symmetric(r, bufs.t)).collect();
    Ok(CollectiveRun { outputs, report })
}

pub fn allgather_push_intra(
    world: &World,
    bufs: AgBuffers,
    inputs: &[Vec<u8>],
    opts: &Opts,
) -> Result<CollectiveRun> {
    run(
        world,
        bufs,
        inputs,
        opts,
        allgather_push_tasks,
        "allgather_push_intra",
    )
}

pub fn allgather_pull_intra(
    world: &World,
    bufs: AgBuffers,
    inputs: &[Vec<u8>],
    opts: &Opts,
) -> Result<CollectiveRun> {
    run(
        world,
        bufs,
        inputs,
        opts,
        allgather_pull_tasks,
        "allgather_pull_intra",
    )
}
