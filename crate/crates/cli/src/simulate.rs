//! Timed runs: cost-model schedules and functional collectives in virtual time.

use oneside::costmodel::{
    rs_overlap_threshold, simulate_ag_baseline, simulate_ag_ll, simulate_partition,
    OverlapThreshold, StageDurations, StageReport, Timeline, TimingModel,
};
use oneside::{ProblemShape, World};
use serde::Serialize;

use crate::scenario::{Kind, Scenario};
use crate::verify;
use crate::Failure;

/// Iterations of the GEMM + ReduceScatter loop in the partition scenario.
const PARTITION_ITERS: usize = 8;

#[derive(Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub kind: Kind,
    pub n_nodes: usize,
    pub local_world: usize,
    pub makespan_us: f64,
    pub events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<OverlapThreshold>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tail_us: Option<f64>,
    /// Functional scenarios also check their outputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
}

pub struct Simulated {
    pub summary: Summary,
    pub timeline: Option<Timeline>,
}

fn threshold(sc: &Scenario, tm: &TimingModel) -> Result<OverlapThreshold, Failure> {
    let s = sc.shape()?;
    let shape = ProblemShape::new(s.m, s.n, s.k, s.dtype_bytes);
    Ok(rs_overlap_threshold(
        &shape,
        sc.world_size(),
        &tm.params,
        sc.local_world,
    )?)
}

pub fn run(sc: &Scenario, world: Option<&World>) -> Result<Simulated, Failure> {
    let tm = sc.timing()?;
    let mut summary = Summary {
        scenario: sc.name.clone(),
        kind: sc.kind,
        n_nodes: sc.n_nodes,
        local_world: sc.local_world,
        makespan_us: 0.0,
        events: 0,
        threshold: None,
        stages: Vec::new(),
        max_tail_us: None,
        verified: None,
    };
    let timeline = match sc.kind {
        Kind::AgLl => Some(simulate_ag_ll(&tm.params, sc.n_nodes, sc.local_world)),
        Kind::AgBaseline => Some(simulate_ag_baseline(&tm.params, sc.n_nodes, sc.local_world)),
        Kind::RsThreshold => {
            summary.threshold = Some(threshold(sc, &tm)?);
            None
        }
        Kind::Partition => {
            let th = threshold(sc, &tm)?;
            let part = sc.partition();
            let per_sm = sc.per_sm_gbps.unwrap_or(th.required_gbps / 15.0);
            let d = StageDurations::from_threshold(
                &th,
                PARTITION_ITERS,
                th.scatter_us,
                part.reduce_sms,
                per_sm,
                th.scatter_us,
            );
            let r = simulate_partition(&part, &d)?;
            summary.max_tail_us = Some(r.max_tail());
            summary.stages = r.stages;
            summary.threshold = Some(th);
            Some(r.timeline)
        }
        _ => {
            let world =
                world.ok_or_else(|| Failure::config("functional simulation needs a world"))?;
            let (v, report) = verify::run(world, sc, None)?;
            summary.verified = Some(v.passed);
            report.timeline
        }
    };
    if let Some(t) = &timeline {
        summary.makespan_us = t.makespan();
        summary.events = t.events.len();
    }
    Ok(Simulated { summary, timeline })
}
