//! Signal-synchronized AllGather + GEMM and GEMM + ReduceScatter.
//!
//! The compute task of each rank walks a [`TileSchedule`] and acquires each
//! remote chunk with `wait` + `consume_token` on that chunk's signal; no
//! global barrier sits between communication and compute.

use std::collections::HashMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::collectives::{
    allgather_push_tasks, reducescatter_inter_tasks, reducescatter_push_tasks, AgBuffers,
    InterRsBuffers, Opts, RsBuffers,
};
use crate::elem::{from_bytes, to_bytes, Elem};
use crate::error::{Error, Result};
use crate::runtime::{launch, LaunchReport, Program, TaskRole};
use crate::shmem::World;
use crate::swizzle::TileSchedule;

/// `C[M, N] = A[M, K] x B[K, N]` with `dtype_bytes` elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub dtype_bytes: usize,
    pub tile_m: usize,
    pub tile_n: usize,
}

impl ProblemShape {
    pub fn new(m: usize, n: usize, k: usize, dtype_bytes: usize) -> Self {
        ProblemShape {
            m,
            n,
            k,
            dtype_bytes,
            tile_m: 1,
            tile_n: n.max(1),
        }
    }

    pub fn with_tiles(mut self, tile_m: usize, tile_n: usize) -> Self {
        self.tile_m = tile_m;
        self.tile_n = tile_n;
        self
    }

    pub fn validate(&self, world_size: usize) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::arg("matrix dimensions must be positive"));
        }
        if world_size == 0 || !self.m.is_multiple_of(world_size) {
            return Err(Error::arg(format!(
                "M = {} is not divisible by world size {world_size}",
                self.m
            )));
        }
        let rows = self.m / world_size;
        if self.tile_m == 0
            || self.tile_n == 0
            || !rows.is_multiple_of(self.tile_m)
            || !self.n.is_multiple_of(self.tile_n)
        {
            return Err(Error::arg(format!(
                "tiles {}x{} do not cover a {}x{} shard",
                self.tile_m, self.tile_n, rows, self.n
            )));
        }
        Ok(())
    }
}

/// Virtual cost of compute in timed mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    /// Sustained multiply-add throughput, in tera-ops per second.
    pub tops: f64,
    /// Fixed cost per output tile.
    pub tile_overhead_us: f64,
}

impl Default for ComputeModel {
    fn default() -> Self {
        ComputeModel {
            tops: 400.0,
            tile_overhead_us: 0.05,
        }
    }
}

impl ComputeModel {
    fn tile_us(&self, rows: usize, cols: usize, k: usize) -> f64 {
        self.tile_overhead_us + (2 * rows * cols * k) as f64 / (self.tops * 1e6)
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun<T> {
    pub outputs: Vec<Vec<T>>,
    /// Per rank, the (chunk, sub-chunk) pairs in the order compute consumed them.
    pub visits: Vec<Vec<(usize, usize)>>,
    pub report: LaunchReport,
}

/// `c[rows, :] = a_rows × b`, tile by tile.
#[allow(clippy::too_many_arguments)]
fn gemm_rows<T: Elem>(
    a_rows: &[T],
    b: &[T],
    out: &mut [T],
    rows: usize,
    shape: &ProblemShape,
    cost: &ComputeModel,
    cx: &crate::runtime::TaskCx<'_>,
) {
    let (n, k) = (shape.n, shape.k);
    let (tm, tn) = (shape.tile_m.max(1), shape.tile_n.max(1));
    for i0 in (0..rows).step_by(tm) {
        let i1 = (i0 + tm).min(rows);
        for j0 in (0..n).step_by(tn) {
            let j1 = (j0 + tn).min(n);
            for i in i0..i1 {
                for j in j0..j1 {
                    let mut acc = T::default();
                    for p in 0..k {
                        acc = acc.add(a_rows[i * k + p].mul(b[p * n + j]));
                    }
                    out[i * n + j] = acc;
                }
            }
            cx.compute(cost.tile_us(i1 - i0, j1 - j0, k));
        }
    }
}

fn check_common<T: Elem>(
    world: &World,
    b: &[T],
    shape: &ProblemShape,
    schedules: &[TileSchedule],
) -> Result<()> {
    let w = world.world_size();
    shape.validate(w)?;
    if shape.dtype_bytes != T::WIDTH {
        return Err(Error::arg(format!(
            "shape says {}-byte elements, data has {}",
            shape.dtype_bytes,
            T::WIDTH
        )));
    }
    if b.len() != shape.k * shape.n {
        return Err(Error::arg(format!(
            "B has {} elements, expected {}x{}",
            b.len(),
            shape.k,
            shape.n
        )));
    }
    if schedules.len() != w {
        return Err(Error::arg(format!(
            "{} schedules for {w} ranks",
            schedules.len()
        )));
    }
    let rows = shape.m / w;
    for (r, s) in schedules.iter().enumerate() {
        if s.rank != r {
            return Err(Error::arg(format!(
                "schedule {r} belongs to rank {}",
                s.rank
            )));
        }
        s.validate(w)?;
        if !rows.is_multiple_of(s.subchunks) {
            return Err(Error::arg(format!(
                "{rows} rows per rank do not split into {} sub-chunks",
                s.subchunks
            )));
        }
    }
    Ok(())
}

/// AllGather of the A shards fused with `C = A × B`; every rank ends with
/// the full C. Communication is push mode; compute follows the schedule.
#[allow(clippy::too_many_arguments)]
pub fn ag_gemm<T: Elem>(
    world: &World,
    a_shards: &[Vec<T>],
    b: &[T],
    shape: &ProblemShape,
    schedules: &[TileSchedule],
    cost: &ComputeModel,
    opts: &Opts,
) -> Result<PipelineRun<T>> {
    check_common(world, b, shape, schedules)?;
    let w = world.world_size();
    let rows = shape.m / w;
    if let Some((r, a)) = a_shards
        .iter()
        .enumerate()
        .find(|(_, a)| a.len() != rows * shape.k)
    {
        return Err(Error::arg(format!(
            "A shard of rank {r} has {} elements, expected {rows}x{}",
            a.len(),
            shape.k
        )));
    }
    if a_shards.len() != w {
        return Err(Error::arg(format!(
            "{} A shards for {w} ranks",
            a_shards.len()
        )));
    }
    let chunk_bytes = rows * shape.k * T::WIDTH;
    let bufs = AgBuffers::alloc(world, chunk_bytes)?;
    let inputs: Vec<Vec<u8>> = a_shards.iter().map(|a| to_bytes(a)).collect();
    let results: Vec<Mutex<(Vec<T>, Vec<(usize, usize)>)>> = (0..w)
        .map(|_| Mutex::new((Vec::new(), Vec::new())))
        .collect();

    let mut prog = Program::new(w);
    for rank in 0..w {
        let peers: Vec<usize> = (1..w).map(|k| (rank + k) % w).collect();
        allgather_push_tasks(&mut prog, bufs, rank, &inputs[rank], &peers)?;
        let s = prog.stream(rank, TaskRole::Compute)?;
        let (sched, own, out) = (&schedules[rank], &a_shards[rank], &results[rank]);
        let (shape, cost, reset) = (*shape, *cost, opts.reset_signals);
        prog.task(s, format!("ag_gemm compute r{rank}"), move |cx| {
            let pe = cx.pe();
            let mut c = vec![T::default(); shape.m * shape.n];
            let mut got: HashMap<usize, Vec<T>> = HashMap::new();
            let sub_rows = rows / sched.subchunks;
            let visits = sched.visits();
            for &(chunk, sub) in &visits {
                if chunk != rank && !got.contains_key(&chunk) {
                    let tok = pe.wait(bufs.s.at(chunk), 1)?;
                    let bytes = pe.consume_token(&tok, pe.local(bufs.slot(chunk))?.to_vec())?;
                    got.insert(chunk, from_bytes(&bytes));
                }
                let a = if chunk == rank { own } else { &got[&chunk] };
                let r0 = sub * sub_rows;
                let a_rows = &a[r0 * shape.k..(r0 + sub_rows) * shape.k];
                let base = (chunk * rows + r0) * shape.n;
                gemm_rows(
                    a_rows,
                    b,
                    &mut c[base..base + sub_rows * shape.n],
                    sub_rows,
                    &shape,
                    &cost,
                    cx,
                );
            }
            if reset {
                pe.signal_reset(bufs.s)?;
            }
            *out.lock() = (c, visits);
            Ok(())
        })?;
    }
    let report = launch(world, prog, opts.mode).ok()?;
    let (outputs, visits) = results.into_iter().map(Mutex::into_inner).unzip();
    Ok(PipelineRun {
        outputs,
        visits,
        report,
    })
}

#[derive(Clone, Copy)]
enum RsPlan {
    Intra(RsBuffers),
    Inter(InterRsBuffers),
}

/// `C = Σ_r A_r × B` reduce-scattered by row blocks. The producer computes
/// chunks in schedule order and sets `P + c` as each lands in L; the
/// ReduceScatter pushes a chunk as soon as its signal is up. One node uses
/// the intra-node push variant, several nodes the two-level one.
#[allow(clippy::too_many_arguments)]
pub fn gemm_rs<T: Elem>(
    world: &World,
    a: &[Vec<T>],
    b: &[T],
    shape: &ProblemShape,
    schedules: &[TileSchedule],
    cost: &ComputeModel,
    opts: &Opts,
) -> Result<PipelineRun<T>> {
    check_common(world, b, shape, schedules)?;
    let w = world.world_size();
    if a.len() != w {
        return Err(Error::arg(format!("{} A matrices for {w} ranks", a.len())));
    }
    if let Some((r, x)) = a
        .iter()
        .enumerate()
        .find(|(_, x)| x.len() != shape.m * shape.k)
    {
        return Err(Error::arg(format!(
            "A of rank {r} has {} elements, expected {}x{}",
            x.len(),
            shape.m,
            shape.k
        )));
    }
    let rows = shape.m / w;
    let chunk_bytes = rows * shape.n * T::WIDTH;
    let inter = world.spec().n_nodes > 1;
    let p = world.alloc_signals(w)?;
    let plan = if inter {
        RsPlan::Inter(InterRsBuffers::alloc(world, chunk_bytes)?)
    } else {
        RsPlan::Intra(RsBuffers::alloc(world, chunk_bytes)?)
    };
    let (l, out) = match plan {
        RsPlan::Inter(b) => (b.l, b.out),
        RsPlan::Intra(b) => (b.l, b.out),
    };
    let visits: Vec<Mutex<Vec<(usize, usize)>>> = (0..w).map(|_| Mutex::new(Vec::new())).collect();
    let mut prog = Program::new(w);
    for rank in 0..w {
        let s = prog.stream(rank, TaskRole::Compute)?;
        let (sched, ar, vis) = (&schedules[rank], &a[rank], &visits[rank]);
        let (shape, cost) = (*shape, *cost);
        prog.task(s, format!("gemm_rs produce r{rank}"), move |cx| {
            let pe = cx.pe();
            let sub_rows = rows / sched.subchunks;
            let order = sched.visits();
            let mut done = vec![0usize; w];
            let mut blocks: HashMap<usize, Vec<T>> = HashMap::new();
            for &(chunk, sub) in &order {
                let r0 = chunk * rows + sub * sub_rows;
                let o = sub * sub_rows * shape.n;
                let block = blocks
                    .entry(chunk)
                    .or_insert_with(|| vec![T::default(); rows * shape.n]);
                gemm_rows(
                    &ar[r0 * shape.k..(r0 + sub_rows) * shape.k],
                    b,
                    &mut block[o..o + sub_rows * shape.n],
                    sub_rows,
                    &shape,
                    &cost,
                    cx,
                );
                done[chunk] += 1;
                if done[chunk] == sched.subchunks {
                    let block = blocks.remove(&chunk).unwrap_or_default();
                    pe.local(l.chunk(chunk, chunk_bytes)?)?
                        .write(0, &to_bytes(&block))?;
                    pe.notify(rank, p.at(chunk), 1)?;
                }
            }
            *vis.lock() = order;
            Ok(())
        })?;
    }
    for rank in 0..w {
        match plan {
            RsPlan::Inter(bufs) => {
                reducescatter_inter_tasks::<T>(&mut prog, bufs, rank, Some(p), opts.reset_signals)?;
            }
            RsPlan::Intra(bufs) => {
                reducescatter_push_tasks::<T>(&mut prog, bufs, rank, Some(p), opts)?;
            }
        }
    }
    let report = launch(world, prog, opts.mode).ok()?;
    let outputs = (0..w)
        .map(|r| from_bytes(&world.read_symmetric(r, out)))
        .collect();
    let visits = visits.into_iter().map(Mutex::into_inner).collect();
    Ok(PipelineRun {
        outputs,
        visits,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::PrimKind;
    use crate::oracle;
    use crate::shmem::WorldSpec;
    use crate::swizzle::{ag_order_fullmesh, ag_order_switch, rs_inter_order};

    fn mat(len: usize, seed: i64) -> Vec<i64> {
        (0..len as i64)
            .map(|i| (i * 7 + seed * 13) % 11 - 5)
            .collect()
    }

    #[test]
    fn ag_gemm_identity() {
        let w = World::init(WorldSpec::new(1, 2)).unwrap();
        let shape = ProblemShape::new(4, 3, 4, 8);
        let id: Vec<i64> = (0..16).map(|i| i64::from(i % 5 == 0)).collect();
        let shards = vec![id[..8].to_vec(), id[8..].to_vec()];
        let b = mat(12, 1);
        let sch: Vec<_> = (0..2).map(|r| ag_order_switch(r, 2)).collect();
        let run = ag_gemm(
            &w,
            &shards,
            &b,
            &shape,
            &sch,
            &ComputeModel::default(),
            &Opts::default(),
        )
        .unwrap();
        assert_eq!(run.outputs[0], b);
        assert_eq!(run.outputs[1], b);
    }

    #[test]
    fn ag_gemm_schedules_agree_with_oracle() {
        let w = World::init(WorldSpec::new(1, 4).with_heap(1 << 17)).unwrap();
        let shape = ProblemShape::new(16, 8, 8, 8).with_tiles(2, 4);
        let shards: Vec<Vec<i64>> = (0..4).map(|r| mat(4 * 8, r)).collect();
        let b = mat(64, 9);
        let want = oracle::matmul(&shards.concat(), &b, 16, 8, 8);
        let sets: Vec<Vec<TileSchedule>> = vec![
            (0..4).map(|r| ag_order_switch(r, 4)).collect(),
            (0..4)
                .map(|r| ag_order_fullmesh(r, 4, 2).unwrap())
                .collect(),
            (0..4).map(|r| TileSchedule::sequential(r, 4)).collect(),
        ];
        for sch in &sets {
            w.clear_counts();
            let run = ag_gemm(
                &w,
                &shards,
                &b,
                &shape,
                sch,
                &ComputeModel::default(),
                &Opts::default(),
            )
            .unwrap();
            for r in 0..4 {
                assert_eq!(run.outputs[r], want);
                assert_eq!(run.visits[r], sch[r].visits());
                assert_eq!(w.counts(r).get(PrimKind::Wait), 3);
                assert_eq!(w.counts(r).get(PrimKind::BarrierAll), 0);
            }
            assert!(w.signals_all_zero());
        }
    }

    #[test]
    fn gemm_rs_intra_and_inter() {
        for (n, lw) in [(1, 1), (1, 2), (1, 4), (2, 2)] {
            let world = n * lw;
            let w = World::init(WorldSpec::new(n, lw).with_heap(1 << 17)).unwrap();
            let shape = ProblemShape::new(8, 4, 4, 8);
            let a: Vec<Vec<i64>> = (0..world).map(|r| mat(32, r as i64)).collect();
            let b = mat(16, 3);
            let want = oracle::gemm_reduce_scatter(&a, &b, 8, 4, 4);
            let sch: Vec<_> = (0..world).map(|r| rs_inter_order(r, n, lw)).collect();
            let run = gemm_rs(
                &w,
                &a,
                &b,
                &shape,
                &sch,
                &ComputeModel::default(),
                &Opts::default(),
            )
            .unwrap();
            assert_eq!(run.outputs, want, "{n}x{lw}");
            assert!(w.signals_all_zero(), "{n}x{lw}");
        }
    }

    #[test]
    fn shape_errors() {
        let w = World::init(WorldSpec::new(1, 2)).unwrap();
        let shape = ProblemShape::new(3, 2, 2, 8);
        let sch: Vec<_> = (0..2).map(|r| ag_order_switch(r, 2)).collect();
        let r = ag_gemm(
            &w,
            &[vec![0i64; 3], vec![0; 3]],
            &[0; 4],
            &shape,
            &sch,
            &ComputeModel::default(),
            &Opts::default(),
        );
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
