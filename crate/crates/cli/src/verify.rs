//! Functional runs checked bit-exactly against the dense references.

use oneside::collectives::{
    allgather_ll_inter, allgather_pull_intra, allgather_push_intra, alltoall_combine,
    alltoall_dispatch, reducescatter_inter, reducescatter_push_intra, A2aBuffers, AgBuffers,
    ExpertRouting, InterRsBuffers, LlAgBuffers, Received, RsBuffers,
};
use oneside::elem::{from_bytes, to_bytes};
use oneside::{ag_gemm, gemm_rs, oracle, ComputeModel, LaunchReport, Opts, ProblemShape, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::scenario::{Kind, Scenario};
use crate::Failure;

/// Reported mismatches are capped; the count is not.
const MAX_LISTED: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub rank: usize,
    /// Byte offset for collectives, element index for GEMM outputs.
    pub index: usize,
    pub expected: i64,
    pub actual: i64,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub kind: Kind,
    pub world_size: usize,
    pub seed: u64,
    pub scheduler: String,
    pub passed: bool,
    pub compared: usize,
    pub mismatch_count: usize,
    pub mismatches: Vec<Mismatch>,
}

#[derive(Default)]
struct Diff {
    compared: usize,
    count: usize,
    listed: Vec<Mismatch>,
}

impl Diff {
    fn check<T: Copy + PartialEq + Into<i64>>(&mut self, rank: usize, want: &[T], got: &[T]) {
        let n = want.len().max(got.len());
        self.compared += n;
        for i in 0..n {
            let (w, g) = (want.get(i).copied(), got.get(i).copied());
            if w != g {
                self.count += 1;
                if self.listed.len() < MAX_LISTED {
                    self.listed.push(Mismatch {
                        rank,
                        index: i,
                        expected: w.map_or(-1, Into::into),
                        actual: g.map_or(-1, Into::into),
                    });
                }
            }
        }
    }

    fn all<T: Copy + PartialEq + Into<i64>>(&mut self, want: &[Vec<T>], got: &[Vec<T>]) {
        for (r, (w, g)) in want.iter().zip(got).enumerate() {
            self.check(r, w, g);
        }
    }
}

/// Flips one bit of `rank`'s payload so the run diverges from the reference.
fn corrupt_bytes(inputs: &mut [Vec<u8>], rank: Option<usize>) -> Result<(), Failure> {
    if let Some(r) = rank {
        let v = inputs
            .get_mut(r)
            .ok_or_else(|| Failure::config(format!("--corrupt-rank {r} is outside the world")))?;
        if let Some(b) = v.first_mut() {
            *b ^= 1;
        }
    }
    Ok(())
}

fn corrupt_matrix(inputs: &mut [Vec<i64>], rank: Option<usize>) -> Result<(), Failure> {
    if let Some(r) = rank {
        let v = inputs
            .get_mut(r)
            .ok_or_else(|| Failure::config(format!("--corrupt-rank {r} is outside the world")))?;
        if let Some(x) = v.first_mut() {
            *x = x.wrapping_add(1);
        }
    }
    Ok(())
}

fn payloads(rng: &mut ChaCha8Rng, w: usize, len: usize) -> Vec<Vec<u8>> {
    (0..w)
        .map(|_| (0..len).map(|_| rng.gen()).collect())
        .collect()
}

fn matrix(rng: &mut ChaCha8Rng, len: usize) -> Vec<i64> {
    (0..len).map(|_| rng.gen_range(-16..16)).collect()
}

fn to_i64(v: &[Vec<u8>]) -> Vec<Vec<i64>> {
    v.iter()
        .map(|b| b.iter().map(|&x| x as i64).collect())
        .collect()
}

fn flatten(entries: &[Vec<Received>]) -> Vec<Vec<u8>> {
    entries
        .iter()
        .map(|es| {
            es.iter()
                .flat_map(|e| {
                    let mut b = Vec::with_capacity(16 + e.data.len());
                    for v in [e.src as u32, e.token, e.k, e.expert] {
                        b.extend_from_slice(&v.to_le_bytes());
                    }
                    b.extend_from_slice(&e.data);
                    b
                })
                .collect()
        })
        .collect()
}

/// Doubles each element and adds the expert id, so combine results depend on routing.
fn expert_fn(e: u32, x: &[u8]) -> Vec<u8> {
    let v: Vec<i32> = from_bytes::<i32>(x)
        .iter()
        .map(|v| v.wrapping_mul(2).wrapping_add(e as i32))
        .collect();
    to_bytes(&v)
}

pub fn run(
    world: &World,
    sc: &Scenario,
    corrupt: Option<usize>,
) -> Result<(VerifyReport, LaunchReport), Failure> {
    let w = sc.world_size();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed());
    let opts = Opts {
        round: sc.seed(),
        ..Opts::default().with_mode(sc.mode())
    };
    let chunk = sc.chunk_bytes;
    let mut diff = Diff::default();

    let report = match sc.kind {
        Kind::AllgatherPush | Kind::AllgatherPull | Kind::AllgatherLl => {
            let mut inputs = payloads(&mut rng, w, chunk);
            let want = oracle::gather(&inputs);
            corrupt_bytes(&mut inputs, corrupt)?;
            let run = match sc.kind {
                Kind::AllgatherPush => {
                    allgather_push_intra(world, AgBuffers::alloc(world, chunk)?, &inputs, &opts)?
                }
                Kind::AllgatherPull => {
                    allgather_pull_intra(world, AgBuffers::alloc(world, chunk)?, &inputs, &opts)?
                }
                _ => allgather_ll_inter(world, LlAgBuffers::alloc(world, chunk)?, &inputs, &opts)?,
            };
            diff.all(&to_i64(&vec![want; w]), &to_i64(&run.outputs));
            run.report
        }
        Kind::ReducescatterPush | Kind::ReducescatterInter => {
            if !chunk.is_multiple_of(4) {
                return Err(Failure::config(
                    "reduce-scatter chunk_bytes must be a multiple of 4",
                ));
            }
            let mut inputs = payloads(&mut rng, w, w * chunk);
            let want = oracle::reduce_scatter::<i32>(&inputs);
            corrupt_bytes(&mut inputs, corrupt)?;
            let run = if sc.kind == Kind::ReducescatterPush {
                reducescatter_push_intra::<i32>(
                    world,
                    RsBuffers::alloc(world, chunk)?,
                    &inputs,
                    &opts,
                )?
            } else {
                reducescatter_inter::<i32>(
                    world,
                    InterRsBuffers::alloc(world, chunk)?,
                    &inputs,
                    &opts,
                )?
            };
            diff.all(&to_i64(&want), &to_i64(&run.outputs));
            run.report
        }
        Kind::Alltoall => {
            let rc = sc
                .routing
                .ok_or_else(|| Failure::config("alltoall scenario needs a routing block"))?;
            if rc.token_bytes % 4 != 0 {
                return Err(Failure::config("token_bytes must be a multiple of 4"));
            }
            let n_experts = rc.experts_per_rank * w;
            let routing = ExpertRouting {
                n_experts,
                topk: rc.topk,
                experts: (0..w)
                    .map(|_| {
                        (0..rc.tokens)
                            .map(|_| {
                                (0..rc.topk)
                                    .map(|_| rng.gen_range(0..n_experts.max(1) as u32))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect(),
            };
            routing.validate(w, rc.tokens)?;
            let mut xs = payloads(&mut rng, w, rc.tokens * rc.token_bytes);
            let want_recv = oracle::routing_table(&routing, &xs, rc.token_bytes);
            let want = oracle::combine::<i32>(&routing, &xs, rc.token_bytes, expert_fn);
            corrupt_bytes(&mut xs, corrupt)?;
            let bufs = A2aBuffers::alloc(world, rc.tokens, rc.topk, rc.token_bytes)?;
            let (recv, _) = alltoall_dispatch(world, bufs, &routing, &xs, &opts)?;
            diff.all(&to_i64(&flatten(&want_recv)), &to_i64(&flatten(&recv)));
            let processed: Vec<Vec<Received>> = recv
                .into_iter()
                .map(|es| {
                    es.into_iter()
                        .map(|mut e| {
                            e.data = expert_fn(e.expert, &e.data);
                            e
                        })
                        .collect()
                })
                .collect();
            let run = alltoall_combine::<i32>(world, bufs, &processed, &opts)?;
            diff.all(&to_i64(&want), &to_i64(&run.outputs));
            run.report
        }
        Kind::AgGemm | Kind::GemmRs => {
            let s = sc.shape()?;
            let shape = ProblemShape::new(s.m, s.n, s.k, 8).with_tiles(s.tile_m, s.tile_n);
            shape.validate(w)?;
            let b = matrix(&mut rng, s.k * s.n);
            let schedules = sc.schedules()?;
            let cost = ComputeModel::default();
            if sc.kind == Kind::AgGemm {
                let a = matrix(&mut rng, s.m * s.k);
                let mut shards: Vec<Vec<i64>> =
                    a.chunks(s.m / w * s.k).map(<[i64]>::to_vec).collect();
                let want = oracle::matmul(&a, &b, s.m, s.n, s.k);
                corrupt_matrix(&mut shards, corrupt)?;
                let run = ag_gemm(world, &shards, &b, &shape, &schedules, &cost, &opts)?;
                diff.all(&vec![want; w], &run.outputs);
                run.report
            } else {
                let mut a: Vec<Vec<i64>> = (0..w).map(|_| matrix(&mut rng, s.m * s.k)).collect();
                let want = oracle::gemm_reduce_scatter(&a, &b, s.m, s.n, s.k);
                corrupt_matrix(&mut a, corrupt)?;
                let run = gemm_rs(world, &a, &b, &shape, &schedules, &cost, &opts)?;
                diff.all(&want, &run.outputs);
                run.report
            }
        }
        other => {
            return Err(Failure::config(format!(
                "`{}` is a cost-model scenario; use simulate",
                serde_json::to_value(other)
                    .unwrap_or_default()
                    .as_str()
                    .unwrap_or("?")
            )))
        }
    };

    Ok((
        VerifyReport {
            scenario: sc.name.clone(),
            kind: sc.kind,
            world_size: w,
            seed: sc.seed(),
            scheduler: format!("{:?}", sc.mode()),
            passed: diff.count == 0,
            compared: diff.compared,
            mismatch_count: diff.count,
            mismatches: diff.listed,
        },
        report,
    ))
}
