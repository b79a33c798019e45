//! Async tasks: per-rank programs made of FIFO streams that run in parallel
//! and synchronize through signals and cross-stream waits.
//!
//! A [`Program`] is plain data. [`launch`] runs every stream of every rank on
//! its own context under the chosen [`SchedulerMode`]; the first fault
//! cancels the world and the rest of the run unwinds through cancellation.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::costmodel::{ResourceInfo, Timeline, TimelineEvent};
use crate::error::{Error, Result, SyncFault};
use crate::instrument::PrimKind;
use crate::primitives::{stamp_words, SignalOpKind};
use crate::sched::{self, Baton, CtxGuard, ExecCtx, SchedulerMode};
use crate::shmem::{read_bytes, write_bytes, Pe, SymHandle, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRole {
    Compute,
    CommBlock,
    CopyEngine,
    Host,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamRef {
    pub rank: usize,
    pub index: usize,
}

impl std::fmt::Display for StreamRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}.s{}", self.rank, self.index)
    }
}

/// Completion of one `copy_async`: the copy is the `index`-th task of `stream`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopyHandle {
    pub stream: StreamRef,
    pub index: usize,
}

/// A copy between two replicas, executed by a copy engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopySpec {
    pub src_rank: usize,
    pub src: SymHandle,
    pub dst_rank: usize,
    pub dst: SymHandle,
    pub bytes: usize,
}

/// What a task callback sees.
pub struct TaskCx<'a> {
    pe: Pe<'a>,
    stream: StreamRef,
    role: TaskRole,
}

impl<'a> TaskCx<'a> {
    pub fn pe(&self) -> &Pe<'a> {
        &self.pe
    }

    pub fn stream(&self) -> StreamRef {
        self.stream
    }

    pub fn role(&self) -> TaskRole {
        self.role
    }

    /// Spends `us` of virtual compute time (timed mode only).
    pub fn compute(&self, us: f64) {
        if self.pe.world().timing().is_some() {
            sched::advance_by(us);
        }
    }

    pub fn clock(&self) -> f64 {
        sched::clock()
    }
}

type Body<'a> = Box<dyn FnOnce(&TaskCx<'a>) -> Result<()> + Send + 'a>;

enum TaskBody<'a> {
    Run(Body<'a>),
    Copy(CopySpec),
    Signal {
        peer: usize,
        sig: usize,
        op: SignalOpKind,
        value: u64,
    },
    WaitStream {
        stream: usize,
        count: usize,
    },
}

struct Task<'a> {
    name: String,
    body: TaskBody<'a>,
}

struct StreamDef<'a> {
    role: TaskRole,
    tasks: Vec<Task<'a>>,
}

/// Per-rank streams of tasks.
pub struct Program<'a> {
    ranks: Vec<Vec<StreamDef<'a>>>,
}

impl<'a> Program<'a> {
    pub fn new(world_size: usize) -> Self {
        Program {
            ranks: (0..world_size).map(|_| Vec::new()).collect(),
        }
    }

    pub fn world_size(&self) -> usize {
        self.ranks.len()
    }

    pub fn stream(&mut self, rank: usize, role: TaskRole) -> Result<StreamRef> {
        let streams = self
            .ranks
            .get_mut(rank)
            .ok_or_else(|| Error::arg(format!("rank {rank} not in program")))?;
        streams.push(StreamDef {
            role,
            tasks: Vec::new(),
        });
        Ok(StreamRef {
            rank,
            index: streams.len() - 1,
        })
    }

    fn def(&mut self, s: StreamRef) -> Result<&mut StreamDef<'a>> {
        self.ranks
            .get_mut(s.rank)
            .and_then(|r| r.get_mut(s.index))
            .ok_or_else(|| Error::arg(format!("unknown stream {s}")))
    }

    pub fn role(&self, s: StreamRef) -> Option<TaskRole> {
        self.ranks.get(s.rank)?.get(s.index).map(|d| d.role)
    }

    /// Number of tasks enqueued on `s` so far.
    pub fn len(&self, s: StreamRef) -> usize {
        self.ranks
            .get(s.rank)
            .and_then(|r| r.get(s.index))
            .map_or(0, |d| d.tasks.len())
    }

    fn push(&mut self, s: StreamRef, name: String, body: TaskBody<'a>) -> Result<usize> {
        let d = self.def(s)?;
        d.tasks.push(Task { name, body });
        Ok(d.tasks.len() - 1)
    }

    /// Enqueues a callback. Copy-engine streams cannot run callbacks.
    pub fn task<F>(&mut self, s: StreamRef, name: impl Into<String>, f: F) -> Result<usize>
    where
        F: FnOnce(&TaskCx<'a>) -> Result<()> + Send + 'a,
    {
        if self.role(s) == Some(TaskRole::CopyEngine) {
            return Err(Error::usage(format!(
                "stream {s} is a copy engine and cannot run callbacks"
            )));
        }
        self.push(s, name.into(), TaskBody::Run(Box::new(f)))
    }

    pub fn copy_async(&mut self, s: StreamRef, spec: CopySpec) -> Result<CopyHandle> {
        match self.role(s) {
            Some(TaskRole::CopyEngine) => {}
            Some(other) => {
                return Err(Error::usage(format!(
                    "copy_async on {s}, a {other:?} stream"
                )));
            }
            None => return Err(Error::arg(format!("unknown stream {s}"))),
        }
        let name = format!(
            "copy r{}->r{} {}B",
            spec.src_rank, spec.dst_rank, spec.bytes
        );
        let index = self.push(s, name, TaskBody::Copy(spec))?;
        Ok(CopyHandle { stream: s, index })
    }

    pub fn signal(
        &mut self,
        s: StreamRef,
        peer: usize,
        sig: usize,
        op: SignalOpKind,
        value: u64,
    ) -> Result<usize> {
        let name = format!("signal r{peer}#{sig} {op:?} {value}");
        self.push(
            s,
            name,
            TaskBody::Signal {
                peer,
                sig,
                op,
                value,
            },
        )
    }

    /// Tasks enqueued on `waiter` after this call start only once every task
    /// enqueued on `waitee` before it has finished.
    pub fn stream_wait(&mut self, waiter: StreamRef, waitee: StreamRef) -> Result<()> {
        let count = self.len(waitee);
        if count == 0 {
            self.same_rank(waiter, waitee)?;
            self.def(waitee)?;
            return Ok(());
        }
        self.stream_wait_for(waiter, waitee, count)
    }

    /// Waits for the first `count` tasks of `waitee`, which may not have been
    /// enqueued yet. Misuse can build a wait cycle; `launch` reports it.
    pub fn stream_wait_for(
        &mut self,
        waiter: StreamRef,
        waitee: StreamRef,
        count: usize,
    ) -> Result<()> {
        self.same_rank(waiter, waitee)?;
        self.def(waitee)?;
        let name = format!("wait {waitee}[..{count}]");
        self.push(
            waiter,
            name,
            TaskBody::WaitStream {
                stream: waitee.index,
                count,
            },
        )?;
        Ok(())
    }

    pub fn wait_copy(&mut self, waiter: StreamRef, h: CopyHandle) -> Result<()> {
        self.stream_wait_for(waiter, h.stream, h.index + 1)
    }

    fn same_rank(&self, a: StreamRef, b: StreamRef) -> Result<()> {
        if a.rank != b.rank {
            return Err(Error::usage(format!(
                "stream wait across ranks ({a} waits {b})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Done,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub stream: StreamRef,
    pub index: usize,
    pub name: String,
    pub role: TaskRole,
    pub status: TaskStatus,
    /// Global start and end positions; a total order over the whole run.
    pub start_seq: u64,
    pub end_seq: u64,
    pub start_us: f64,
    pub end_us: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskFault {
    pub stream: StreamRef,
    pub index: usize,
    pub task: String,
    pub error: Error,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaunchReport {
    pub records: Vec<TaskRecord>,
    pub faults: Vec<TaskFault>,
    /// Streams blocked on each other in a cycle, when the run deadlocked.
    pub wait_cycle: Option<Vec<StreamRef>>,
    /// Per-stream task intervals in virtual time (timed mode only).
    pub timeline: Option<Timeline>,
}

impl LaunchReport {
    pub fn is_ok(&self) -> bool {
        self.faults.is_empty()
    }

    /// The fault that started the failure: the earliest one that is not a
    /// cancellation echo.
    pub fn primary_fault(&self) -> Option<&TaskFault> {
        let cancelled =
            |f: &&TaskFault| matches!(f.error.root(), Error::Sync(SyncFault::Cancelled { .. }));
        self.faults
            .iter()
            .filter(|f| !cancelled(f))
            .min_by_key(|f| f.seq)
            .or_else(|| self.faults.iter().min_by_key(|f| f.seq))
    }

    /// `Ok(self)` when every task succeeded, else the primary fault.
    pub fn ok(self) -> Result<LaunchReport> {
        let Some(f) = self.primary_fault() else {
            return Ok(self);
        };
        let mut task = f.task.clone();
        if let Some(cycle) = &self.wait_cycle {
            let names: Vec<String> = cycle.iter().map(|s| s.to_string()).collect();
            task.push_str(&format!(
                " [wait cycle: {} -> {}]",
                names.join(" -> "),
                names[0]
            ));
        }
        Err(Error::Task {
            rank: f.stream.rank,
            stream: f.stream.index,
            task,
            source: Box::new(f.error.clone()),
        })
    }

    pub fn records_of(&self, s: StreamRef) -> impl Iterator<Item = &TaskRecord> {
        self.records.iter().filter(move |r| r.stream == s)
    }

    pub fn record(&self, name: &str) -> Option<&TaskRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Latest task end per rank in virtual time.
    pub fn rank_end_us(&self, rank: usize) -> f64 {
        self.records
            .iter()
            .filter(|r| r.stream.rank == rank)
            .map(|r| r.end_us)
            .fold(0.0, f64::max)
    }
}

const NOT_BLOCKED: usize = usize::MAX;

struct Shared {
    offsets: Vec<usize>,
    refs: Vec<StreamRef>,
    done: Vec<AtomicUsize>,
    end_times: Vec<Mutex<Vec<f64>>>,
    blocked: Vec<AtomicUsize>,
    seq: AtomicU64,
    records: Mutex<Vec<TaskRecord>>,
    faults: Mutex<Vec<TaskFault>>,
}

fn run_copy(pe: &Pe<'_>, spec: &CopySpec) -> Result<()> {
    let w = pe.world();
    w.check_rank(spec.src_rank)?;
    w.check_rank(spec.dst_rank)?;
    for (h, what) in [(spec.src, "source"), (spec.dst, "destination")] {
        if spec.bytes > h.len {
            return Err(Error::Range {
                offset: h.offset,
                len: spec.bytes,
                limit: h.len,
            });
        }
        w.check_range(h.offset, spec.bytes).map_err(|e| match e {
            Error::Range { .. } => e,
            other => Error::arg(format!("copy {what}: {other}")),
        })?;
    }
    sched::yield_point();
    w.record(
        pe.my_pe(),
        PrimKind::CopyAsync,
        Some(spec.dst_rank),
        spec.bytes,
    );
    if spec.bytes == 0 {
        return Ok(());
    }
    let mut buf = vec![0u8; spec.bytes];
    read_bytes(
        w.slab(spec.src_rank),
        spec.src.offset,
        &mut buf,
        Ordering::Acquire,
    );
    if let Some(tm) = w.timing() {
        let same = w.ctx(spec.src_rank).node_id == w.ctx(spec.dst_rank).node_id;
        sched::advance_by(tm.p2p_us(same, spec.bytes));
    }
    write_bytes(
        w.slab(spec.dst_rank),
        spec.dst.offset,
        &buf,
        Ordering::Release,
    );
    stamp_words(
        w,
        spec.dst_rank,
        spec.dst.offset,
        spec.bytes,
        sched::clock(),
    );
    Ok(())
}

fn wait_stream(pe: &Pe<'_>, sh: &Shared, me: usize, target: usize, count: usize) -> Result<()> {
    sh.blocked[me].store(target, Ordering::Release);
    let mut sp = pe.spinner();
    while sh.done[target].load(Ordering::Acquire) < count {
        sp.spin(|| format!("stream {} to finish {count} tasks", sh.refs[target]))?;
        pe.progress(false);
    }
    sh.blocked[me].store(NOT_BLOCKED, Ordering::Release);
    if count > 0 {
        sched::advance_to(sh.end_times[target].lock()[count - 1]);
    }
    Ok(())
}

fn run_stream<'a>(
    world: &'a World,
    sh: &Shared,
    baton: Option<Arc<Baton>>,
    s: StreamRef,
    def: StreamDef<'a>,
) {
    let gid = sh.offsets[s.rank] + s.index;
    let _guard = CtxGuard::enter(ExecCtx {
        id: gid,
        rank: s.rank,
        baton,
        clock: Cell::new(0.0),
    });
    let cx = TaskCx {
        pe: world.pe(s.rank),
        stream: s,
        role: def.role,
    };
    for (index, task) in def.tasks.into_iter().enumerate() {
        let mut rec = TaskRecord {
            stream: s,
            index,
            name: task.name,
            role: def.role,
            status: TaskStatus::Skipped,
            start_seq: 0,
            end_seq: 0,
            start_us: sched::clock(),
            end_us: sched::clock(),
        };
        if world.is_cancelled() {
            sh.records.lock().push(rec);
            continue;
        }
        sched::yield_point();
        rec.start_seq = sh.seq.fetch_add(1, Ordering::AcqRel);
        rec.start_us = sched::clock();
        let res = match task.body {
            TaskBody::Run(f) => f(&cx),
            TaskBody::Copy(spec) => run_copy(&cx.pe, &spec),
            TaskBody::Signal {
                peer,
                sig,
                op,
                value,
            } => cx.pe.signal_op(peer, sig, op, value),
            TaskBody::WaitStream { stream, count } => {
                wait_stream(&cx.pe, sh, gid, sh.offsets[s.rank] + stream, count)
            }
        };
        rec.end_us = sched::clock();
        rec.end_seq = sh.seq.fetch_add(1, Ordering::AcqRel);
        match res {
            Ok(()) => {
                rec.status = TaskStatus::Done;
                sh.end_times[gid].lock().push(rec.end_us);
                sh.done[gid].store(index + 1, Ordering::Release);
            }
            Err(error) => {
                rec.status = TaskStatus::Failed;
                sh.faults.lock().push(TaskFault {
                    stream: s,
                    index,
                    task: rec.name.clone(),
                    error,
                    seq: rec.end_seq,
                });
                world.cancel();
            }
        }
        sh.records.lock().push(rec);
    }
    // Whatever this rank still has in flight completes when its stream ends.
    cx.pe.progress(true);
}

fn find_cycle(sh: &Shared) -> Option<Vec<StreamRef>> {
    let next: Vec<usize> = sh
        .blocked
        .iter()
        .map(|b| b.load(Ordering::Acquire))
        .collect();
    for start in 0..next.len() {
        let mut path = vec![start];
        let mut cur = next[start];
        while cur != NOT_BLOCKED && path.len() <= next.len() {
            if let Some(pos) = path.iter().position(|&p| p == cur) {
                let mut cyc: Vec<StreamRef> = path[pos..].iter().map(|&g| sh.refs[g]).collect();
                let min = cyc
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, s)| **s)
                    .map(|(i, _)| i)
                    .unwrap();
                cyc.rotate_left(min);
                return Some(cyc);
            }
            path.push(cur);
            cur = next[cur];
        }
    }
    None
}

/// Runs `program` on `world` to completion, fault, or timeout.
pub fn launch<'a>(world: &'a World, program: Program<'a>, mode: SchedulerMode) -> LaunchReport {
    assert_eq!(
        program.ranks.len(),
        world.world_size(),
        "program and world sizes differ"
    );
    world.clear_cancel();
    let mut offsets = Vec::with_capacity(program.ranks.len());
    let mut refs = Vec::new();
    let mut roles = Vec::new();
    for (rank, streams) in program.ranks.iter().enumerate() {
        offsets.push(refs.len());
        for (index, d) in streams.iter().enumerate() {
            refs.push(StreamRef { rank, index });
            roles.push(d.role);
        }
    }
    let total = refs.len();
    let sh = Shared {
        offsets,
        done: (0..total).map(|_| AtomicUsize::new(0)).collect(),
        end_times: (0..total).map(|_| Mutex::new(Vec::new())).collect(),
        blocked: (0..total).map(|_| AtomicUsize::new(NOT_BLOCKED)).collect(),
        seq: AtomicU64::new(0),
        records: Mutex::new(Vec::new()),
        faults: Mutex::new(Vec::new()),
        refs: refs.clone(),
    };
    let baton = Baton::new(total, mode);
    std::thread::scope(|scope| {
        let mut gid = 0;
        for (rank, streams) in program.ranks.into_iter().enumerate() {
            for (index, def) in streams.into_iter().enumerate() {
                let (sh, baton) = (&sh, baton.clone());
                let s = StreamRef { rank, index };
                std::thread::Builder::new()
                    .name(format!("{s}"))
                    .spawn_scoped(scope, move || run_stream(world, sh, baton, s, def))
                    .expect("spawn stream thread");
                gid += 1;
            }
        }
        debug_assert_eq!(gid, total);
    });
    let wait_cycle = find_cycle(&sh);
    let mut records = sh.records.into_inner();
    records.sort_by_key(|r| (r.stream, r.index));
    let mut faults = sh.faults.into_inner();
    faults.sort_by_key(|f| f.seq);
    let timeline = world.timing().map(|_| {
        let resources = refs
            .iter()
            .zip(&roles)
            .map(|(s, role)| ResourceInfo {
                name: format!("{s} {role:?}"),
                rank: s.rank,
                exclusive: true,
            })
            .collect();
        let events = records
            .iter()
            .filter(|r| r.status != TaskStatus::Skipped)
            .map(|r| TimelineEvent {
                name: r.name.clone(),
                rank: r.stream.rank,
                resource: refs.iter().position(|s| *s == r.stream).unwrap(),
                start_us: r.start_us,
                dur_us: r.end_us - r.start_us,
                kind: (r.role == TaskRole::CopyEngine && r.name.starts_with("copy"))
                    .then_some(PrimKind::CopyAsync),
            })
            .collect();
        Timeline {
            resources,
            events,
            critical_path: Vec::new(),
        }
    });
    LaunchReport {
        records,
        faults,
        wait_cycle,
        timeline,
    }
}

/// Runs `f` once per rank on a single host stream and collects the results.
pub fn spmd<'a, R, F>(world: &'a World, mode: SchedulerMode, f: F) -> Result<Vec<R>>
where
    R: Send + 'a,
    F: Fn(&Pe<'a>) -> Result<R> + Send + Sync + 'a,
{
    let n = world.world_size();
    let out: Arc<Mutex<Vec<Option<R>>>> = Arc::new(Mutex::new((0..n).map(|_| None).collect()));
    let f = Arc::new(f);
    let mut prog = Program::new(n);
    for r in 0..n {
        let s = prog.stream(r, TaskRole::Host)?;
        let (out, f) = (out.clone(), f.clone());
        prog.task(s, format!("spmd r{r}"), move |cx| {
            let v = f(cx.pe())?;
            out.lock()[r] = Some(v);
            Ok(())
        })?;
    }
    launch(world, prog, mode).ok()?;
    let v = std::mem::take(&mut *out.lock());
    Ok(v.into_iter()
        .map(|x| x.expect("every rank finished"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shmem::{RuntimeConfig, WorldSpec};
    use std::time::Duration;

    fn world(n: usize) -> World {
        World::init(WorldSpec::new(1, n).with_heap(1 << 16)).unwrap()
    }

    #[test]
    fn noop_tasks() {
        let w = world(4);
        let mut p = Program::new(4);
        for r in 0..4 {
            let s = p.stream(r, TaskRole::Compute).unwrap();
            p.task(s, "noop", |_| Ok(())).unwrap();
        }
        let rep = launch(&w, p, SchedulerMode::Free).ok().unwrap();
        assert_eq!(rep.records.len(), 4);
        assert!(rep.records.iter().all(|r| r.status == TaskStatus::Done));
    }

    #[test]
    fn cross_stream_wait_orders_tasks() {
        for mode in [
            SchedulerMode::Free,
            SchedulerMode::RoundRobin,
            SchedulerMode::Random { seed: 3 },
        ] {
            let w = world(1);
            let mut p = Program::new(1);
            let s0 = p.stream(0, TaskRole::Compute).unwrap();
            let s1 = p.stream(0, TaskRole::CommBlock).unwrap();
            let s2 = p.stream(0, TaskRole::CommBlock).unwrap();
            p.task(s0, "A", |_| Ok(())).unwrap();
            p.stream_wait(s1, s0).unwrap();
            p.task(s1, "B", |_| Ok(())).unwrap();
            p.stream_wait(s2, s1).unwrap();
            p.task(s2, "C", |_| Ok(())).unwrap();
            let rep = launch(&w, p, mode).ok().unwrap();
            let (a, b, c) = (
                rep.record("A").unwrap(),
                rep.record("B").unwrap(),
                rep.record("C").unwrap(),
            );
            assert!(a.end_seq < b.start_seq && b.end_seq < c.start_seq);
        }
    }

    #[test]
    fn wait_on_empty_stream_is_noop() {
        let mut p = Program::new(1);
        let s0 = p.stream(0, TaskRole::Compute).unwrap();
        let s1 = p.stream(0, TaskRole::Compute).unwrap();
        p.stream_wait(s1, s0).unwrap();
        assert_eq!(p.len(s1), 0);
    }

    #[test]
    fn cross_rank_wait_is_usage_error() {
        let mut p = Program::new(2);
        let a = p.stream(0, TaskRole::Compute).unwrap();
        let b = p.stream(1, TaskRole::Compute).unwrap();
        assert!(matches!(p.stream_wait(a, b), Err(Error::Usage(_))));
    }

    #[test]
    fn copy_role_rules() {
        let mut p = Program::new(1);
        let c = p.stream(0, TaskRole::CopyEngine).unwrap();
        let k = p.stream(0, TaskRole::Compute).unwrap();
        assert!(matches!(p.task(c, "x", |_| Ok(())), Err(Error::Usage(_))));
        let spec = CopySpec {
            src_rank: 0,
            src: SymHandle { offset: 0, len: 8 },
            dst_rank: 0,
            dst: SymHandle { offset: 8, len: 8 },
            bytes: 8,
        };
        assert!(matches!(p.copy_async(k, spec), Err(Error::Usage(_))));
        assert!(p.copy_async(c, spec).is_ok());
    }

    #[test]
    fn wait_cycle_is_reported() {
        let cfg = RuntimeConfig {
            timeout: Duration::from_millis(100),
            ..Default::default()
        };
        let w = World::with_config(WorldSpec::new(1, 1).with_heap(64), cfg).unwrap();
        let mut p = Program::new(1);
        let s0 = p.stream(0, TaskRole::Compute).unwrap();
        let s1 = p.stream(0, TaskRole::Compute).unwrap();
        p.stream_wait_for(s0, s1, 1).unwrap();
        p.task(s0, "a", |_| Ok(())).unwrap();
        p.stream_wait_for(s1, s0, 2).unwrap();
        p.task(s1, "b", |_| Ok(())).unwrap();
        let rep = launch(&w, p, SchedulerMode::Free);
        assert_eq!(rep.wait_cycle, Some(vec![s0, s1]));
        let err = rep.ok().unwrap_err();
        assert!(err.is_timeout(), "{err}");
        assert!(err.to_string().contains("wait cycle"));
    }

    #[test]
    fn first_fault_cancels_others() {
        let w = world(2);
        let mut p = Program::new(2);
        let a = p.stream(0, TaskRole::Host).unwrap();
        let b = p.stream(1, TaskRole::Host).unwrap();
        p.task(a, "boom", |_| Err(Error::arg("injected"))).unwrap();
        p.task(b, "wait forever", |cx| {
            cx.pe()
                .signal_wait_until(0, crate::WaitCond::Eq, 1)
                .map(|_| ())
        })
        .unwrap();
        let err = launch(&w, p, SchedulerMode::Free).ok().unwrap_err();
        match err {
            Error::Task { rank, task, .. } => {
                assert_eq!(rank, 0);
                assert_eq!(task, "boom");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn spmd_collects_per_rank_results() {
        let w = world(3);
        let v = spmd(&w, SchedulerMode::RoundRobin, |pe| Ok(pe.my_pe() * 10)).unwrap();
        assert_eq!(v, vec![0, 10, 20]);
    }
}
