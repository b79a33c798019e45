//! Discrete-event timing of communication and computation schedules.
//!
//! Every transfer costs `base_latency + bytes / bandwidth`. Tasks that share
//! an exclusive resource run in the order they were added, so a schedule is
//! a max-plus expression over task durations: raising any duration can never
//! shorten the makespan.

mod ag;
mod des;
mod partition;
pub mod sweep;
mod threshold;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ag::{simulate_ag_baseline, simulate_ag_ll};
pub use des::{Dag, ResourceInfo, TaskId, Timeline, TimelineEvent};
pub use partition::{
    simulate_partition, PartitionReport, ResourcePartition, StageDurations, StageReport,
};
pub use threshold::{rs_overlap_threshold, OverlapThreshold};

const GBPS_TO_BYTES_PER_US: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraKind {
    Switch,
    Fullmesh,
    Pcie,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterLink {
    pub nic_bw_gbps: f64,
    pub base_latency_us: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub intra_kind: IntraKind,
    pub local_world_size: usize,
    /// Per-link unidirectional bandwidth.
    pub intra_link_bw_gbps: f64,
    pub intra_base_latency_us: f64,
    /// Per-rank aggregate egress cap.
    pub aggregate_bw_gbps: f64,
    pub inter: Option<InterLink>,
    pub copy_engines: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    IntraNode,
    InterNode,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must be a positive bandwidth, got {v}"
                )))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must be a non-negative latency, got {v}"
                )))
            }
        };
        positive("intra_link_bw_gbps", self.intra_link_bw_gbps)?;
        positive("aggregate_bw_gbps", self.aggregate_bw_gbps)?;
        non_negative("intra_base_latency_us", self.intra_base_latency_us)?;
        if let Some(inter) = &self.inter {
            positive("inter.nic_bw_gbps", inter.nic_bw_gbps)?;
            non_negative("inter.base_latency_us", inter.base_latency_us)?;
        }
        if self.local_world_size == 0 {
            return Err(Error::config("local_world_size must be at least 1"));
        }
        if self.intra_kind == IntraKind::Fullmesh {
            let expect = (self.local_world_size.saturating_sub(1)) as f64 * self.intra_link_bw_gbps;
            if (expect - self.aggregate_bw_gbps).abs() > 1e-9 * expect.max(1.0) {
                return Err(Error::config(format!(
                    "full-mesh aggregate {} GB/s != (local_world - 1) x link = {expect} GB/s",
                    self.aggregate_bw_gbps
                )));
            }
        }
        Ok(())
    }

    /// Microseconds to move `bytes` over `link`.
    pub fn transfer_time(&self, bytes: usize, link: Link) -> Result<f64> {
        let (lat, bw) = match link {
            Link::IntraNode => (self.intra_base_latency_us, self.intra_link_bw_gbps),
            Link::InterNode => {
                let inter = self
                    .inter
                    .ok_or_else(|| Error::arg("topology has no inter-node link"))?;
                (inter.base_latency_us, inter.nic_bw_gbps)
            }
        };
        Ok(lat + bytes as f64 / (bw * GBPS_TO_BYTES_PER_US))
    }
}

/// Analytic constants, all in microseconds or GB/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub nvlink_small_msg_us: f64,
    pub skew_worst_us: f64,
    pub multimem_cost_us: f64,
    pub nvlink_bw_gbps: f64,
    pub nic_bw_gbps: f64,
    pub signal_pair_cost_us: f64,
    pub inter_small_msg_us: f64,
    pub ll_step_us: f64,
    pub issue_us: f64,
    pub barrier_us: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("nvlink_small_msg_us", self.nvlink_small_msg_us),
            ("skew_worst_us", self.skew_worst_us),
            ("multimem_cost_us", self.multimem_cost_us),
            ("signal_pair_cost_us", self.signal_pair_cost_us),
            ("inter_small_msg_us", self.inter_small_msg_us),
            ("ll_step_us", self.ll_step_us),
            ("issue_us", self.issue_us),
            ("barrier_us", self.barrier_us),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("nvlink_bw_gbps", self.nvlink_bw_gbps),
            ("nic_bw_gbps", self.nic_bw_gbps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Topology plus constants; the document format of the shipped parameter files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingModel {
    pub topology: Topology,
    pub params: CostParams,
}

impl TimingModel {
    pub fn from_json(text: &str) -> Result<TimingModel> {
        let tm: TimingModel =
            serde_json::from_str(text).map_err(|e| Error::config(format!("cost file: {e}")))?;
        tm.validate()?;
        Ok(tm)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.params.validate()
    }

    /// NVSwitch H800 constants.
    pub fn h800() -> TimingModel {
        Self::from_json(include_str!("../../params/h800.json")).expect("shipped h800.json is valid")
    }

    /// Full-mesh MI308X constants.
    pub fn mi308x() -> TimingModel {
        Self::from_json(include_str!("../../params/mi308x.json"))
            .expect("shipped mi308x.json is valid")
    }

    /// Point-to-point cost used by the runtime's timed mode.
    pub fn p2p_us(&self, same_node: bool, bytes: usize) -> f64 {
        let link = if same_node || self.topology.inter.is_none() {
            Link::IntraNode
        } else {
            Link::InterNode
        };
        self.topology
            .transfer_time(bytes, link)
            .expect("link exists")
    }
}
