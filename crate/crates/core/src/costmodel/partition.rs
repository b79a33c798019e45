//! SM partitioning between a GEMM and the stages of its fused
//! ReduceScatter.
//!
//! Per iteration the GEMM produces one chunk; the copy engine scatters it;
//! a second stream reduces the scattered partials and sends the result to
//! the peer node. A final reduction over all SMs runs once everything has
//! landed. A stage has a *tail* when it starts later than its input is
//! ready, i.e. when it falls behind the GEMM cadence and builds a backlog.

use serde::{Deserialize, Serialize};

use super::des::{Dag, TaskId, Timeline};
use super::threshold::OverlapThreshold;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourcePartition {
    pub sm_total: u32,
    pub gemm_sms: u32,
    pub p2p_sms: u32,
    pub reduce_sms: u32,
    pub final_reduce_sms: u32,
    /// Scatter runs on the copy engine (no SMs) instead of `scatter_sms` SMs.
    pub scatter_on_copy_engine: bool,
    pub scatter_sms: u32,
}

impl ResourcePartition {
    /// The H800 GEMM + ReduceScatter split: 116 GEMM SMs, 1 SM of P2P,
    /// 16 reduction SMs, a 132-SM final reduction and a copy-engine scatter.
    pub fn h800_gemm_rs() -> Self {
        ResourcePartition {
            sm_total: 132,
            gemm_sms: 116,
            p2p_sms: 1,
            reduce_sms: 16,
            final_reduce_sms: 132,
            scatter_on_copy_engine: true,
            scatter_sms: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let big = [
            ("gemm", self.gemm_sms),
            ("p2p", self.p2p_sms),
            ("reduce", self.reduce_sms),
            ("final reduce", self.final_reduce_sms),
            ("scatter", self.scatter_sms),
        ];
        for (name, sms) in big {
            if sms > self.sm_total {
                return Err(Error::config(format!(
                    "{name} stage wants {sms} SMs, only {} exist",
                    self.sm_total
                )));
            }
        }
        if self.reduce_sms == 0 || self.final_reduce_sms == 0 || self.gemm_sms == 0 {
            return Err(Error::config("compute stages need at least one SM"));
        }
        if !self.scatter_on_copy_engine && self.scatter_sms == 0 {
            return Err(Error::config("SM scatter needs at least one SM"));
        }
        Ok(())
    }
}

/// Per-iteration stage durations in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDurations {
    pub iterations: usize,
    pub gemm_us: f64,
    pub scatter_us: f64,
    pub reduce_us: f64,
    pub p2p_us: f64,
    pub final_reduce_us: f64,
}

impl StageDurations {
    /// Durations implied by the overlap threshold arithmetic: scatter and
    /// P2P times come straight from it; reduction time is the reduction
    /// volume over `reduce_sms × per_sm_gbps`.
    pub fn from_threshold(
        th: &OverlapThreshold,
        iterations: usize,
        gemm_us: f64,
        reduce_sms: u32,
        per_sm_gbps: f64,
        final_reduce_us: f64,
    ) -> Self {
        let bw = reduce_sms as f64 * per_sm_gbps;
        StageDurations {
            iterations,
            gemm_us,
            scatter_us: th.scatter_us,
            reduce_us: th.reduction_gb / bw * 1e6,
            p2p_us: th.p2p_us,
            final_reduce_us,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub sms: u32,
    pub busy_us: f64,
    /// Spare time per GEMM period on the stage's resource (negative when
    /// the stage cannot keep up).
    pub slack_us: f64,
    /// Largest delay between a chunk being ready for this stage and the
    /// stage starting on it.
    pub tail_us: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub timeline: Timeline,
    pub stages: Vec<StageReport>,
    pub makespan_us: f64,
    pub gemm_end_us: f64,
    /// Final all-SM reduction; runs after everything by construction and is
    /// not counted as a tail.
    pub epilogue_us: f64,
    pub peak_sms: u32,
}

impl PartitionReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Largest tail over every stage except the GEMM.
    pub fn max_tail(&self) -> f64 {
        self.stages
            .iter()
            .filter(|s| s.name != "gemm")
            .map(|s| s.tail_us)
            .fold(0.0, f64::max)
    }
}

pub fn simulate_partition(
    part: &ResourcePartition,
    dur: &StageDurations,
) -> Result<PartitionReport> {
    part.validate()?;
    let all = [
        dur.gemm_us,
        dur.scatter_us,
        dur.reduce_us,
        dur.p2p_us,
        dur.final_reduce_us,
    ];
    if all.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::config(
            "stage durations must be finite and non-negative",
        ));
    }
    let iters = dur.iterations;
    let mut d = Dag::new();
    let sm0 = d.resource("stream0 (gemm)", 0, true);
    let ce = d.resource(
        if part.scatter_on_copy_engine {
            "copy_engine"
        } else {
            "scatter"
        },
        0,
        true,
    );
    let s1 = d.resource("stream1 (reduce, p2p)", 0, true);
    let epi = d.resource("epilogue", 0, true);

    let mut gemm: Vec<TaskId> = Vec::new();
    let mut scatter: Vec<TaskId> = Vec::new();
    let mut reduce: Vec<TaskId> = Vec::new();
    let mut p2p: Vec<TaskId> = Vec::new();
    for i in 0..iters {
        gemm.push(d.add(format!("gemm[{i}]"), sm0, dur.gemm_us, &[]));
        scatter.push(d.add(format!("scatter[{i}]"), ce, dur.scatter_us, &[gemm[i]]));
        reduce.push(d.add(format!("reduce[{i}]"), s1, dur.reduce_us, &[scatter[i]]));
        p2p.push(d.add(format!("p2p[{i}]"), s1, dur.p2p_us, &[reduce[i]]));
    }
    let mut deps: Vec<TaskId> = gemm.clone();
    deps.extend(&scatter);
    deps.extend(&p2p);
    let final_reduce = d.add("final_reduce", epi, dur.final_reduce_us, &deps);
    let tl = d.run();

    let sms_of = |name: &str| -> u32 {
        match name.split('[').next().unwrap_or(name) {
            "gemm" => part.gemm_sms,
            "scatter" if !part.scatter_on_copy_engine => part.scatter_sms,
            "reduce" => part.reduce_sms,
            "p2p" => part.p2p_sms,
            "final_reduce" => part.final_reduce_sms,
            _ => 0,
        }
    };
    let peak_sms = peak_occupancy(&tl, sms_of);
    if peak_sms > part.sm_total {
        return Err(Error::config(format!(
            "SM oversubscription: {peak_sms} SMs busy at once, {} available",
            part.sm_total
        )));
    }

    let ev = |id: TaskId| &tl.events[id];
    let tail = |ids: &[TaskId], ready: &dyn Fn(usize) -> f64| {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| ev(id).start_us - ready(i))
            .fold(0.0, f64::max)
    };
    let gemm_end = gemm.last().map_or(0.0, |&g| ev(g).end_us());
    let scale = tl.makespan().max(1.0);
    let clean = |t: f64| if t <= 1e-9 * scale { 0.0 } else { t };

    let period = dur.gemm_us;
    let stages = vec![
        StageReport {
            name: "gemm".into(),
            sms: part.gemm_sms,
            busy_us: tl.busy(sm0),
            slack_us: 0.0,
            tail_us: 0.0,
        },
        StageReport {
            name: "scatter".into(),
            sms: if part.scatter_on_copy_engine {
                0
            } else {
                part.scatter_sms
            },
            busy_us: tl.busy(ce),
            slack_us: period - dur.scatter_us,
            tail_us: clean(tail(&scatter, &|i| ev(gemm[i]).end_us())),
        },
        StageReport {
            name: "reduce".into(),
            sms: part.reduce_sms,
            busy_us: reduce.iter().map(|&r| ev(r).dur_us).sum(),
            slack_us: period - dur.reduce_us - dur.p2p_us,
            tail_us: clean(tail(&reduce, &|i| ev(scatter[i]).end_us())),
        },
        StageReport {
            name: "p2p".into(),
            sms: part.p2p_sms,
            busy_us: p2p.iter().map(|&r| ev(r).dur_us).sum(),
            slack_us: period - dur.reduce_us - dur.p2p_us,
            tail_us: clean(tail(&p2p, &|i| ev(reduce[i]).end_us())),
        },
    ];
    Ok(PartitionReport {
        makespan_us: tl.makespan(),
        gemm_end_us: gemm_end,
        epilogue_us: ev(final_reduce).dur_us,
        peak_sms,
        stages,
        timeline: tl,
    })
}

/// Sweep over event boundaries; ends sort before starts at equal times.
fn peak_occupancy(tl: &Timeline, sms_of: impl Fn(&str) -> u32) -> u32 {
    let mut edges: Vec<(f64, i64)> = Vec::new();
    for e in &tl.events {
        let s = sms_of(&e.name) as i64;
        if s > 0 && e.dur_us > 0.0 {
            edges.push((e.start_us, s));
            edges.push((e.end_us(), -s));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut cur, mut peak) = (0i64, 0i64);
    for (_, delta) in edges {
        cur += delta;
        peak = peak.max(cur);
    }
    peak as u32
}
