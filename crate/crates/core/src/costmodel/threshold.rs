//! Reduction bandwidth needed to hide the local reduction of a cross-node
//! ReduceScatter behind its intra-node scatter.
//!
//! With per-rank chunk volume `B` (GB), the scatter takes
//! `(lw - 1) B / nvlink_bw` and the inter-node send takes `B / nic_bw`. The
//! reduction reads `lw` partials and writes one result, `(lw + 1) B` in
//! total, and must fit in the difference:
//!
//! ```text
//! required = (lw + 1) B / ((lw - 1) B / nvlink_bw - B / nic_bw)
//!          = (lw + 1) / ((lw - 1) / nvlink_bw - 1 / nic_bw)
//! ```
//!
//! `B` cancels, so the answer depends only on the link bandwidths. At
//! lw = 8, 170 GB/s and 45 GB/s this gives 9 / (7/170 - 1/45) ~ 474.8 GB/s.

use serde::{Deserialize, Serialize};

use super::CostParams;
use crate::error::{Error, Result};
use crate::pipelines::ProblemShape;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapThreshold {
    /// Per-rank chunk volume B in GB.
    pub volume_gb: f64,
    pub scatter_us: f64,
    pub p2p_us: f64,
    /// Time left for the reduction: `scatter_us - p2p_us`.
    pub window_us: f64,
    pub reduction_gb: f64,
    pub required_gbps: f64,
}

pub fn rs_overlap_threshold(
    shape: &ProblemShape,
    world_size: usize,
    params: &CostParams,
    local_world: usize,
) -> Result<OverlapThreshold> {
    if local_world < 2 {
        return Err(Error::arg("overlap threshold needs local_world >= 2"));
    }
    if world_size == 0 || !shape.m.is_multiple_of(world_size) {
        return Err(Error::arg(format!(
            "M = {} is not divisible by world size {world_size}",
            shape.m
        )));
    }
    let m_per_rank = shape.m / world_size;
    let volume_gb = (m_per_rank * shape.n * shape.dtype_bytes) as f64 / 1e9;
    let lw = local_world as f64;
    let scatter_us = (lw - 1.0) * volume_gb / params.nvlink_bw_gbps * 1e6;
    let p2p_us = volume_gb / params.nic_bw_gbps * 1e6;
    // Relative slack so the exact boundary is not decided by rounding.
    if scatter_us <= p2p_us * (1.0 + 1e-12) {
        return Err(Error::OverlapImpossible { scatter_us, p2p_us });
    }
    let window_us = scatter_us - p2p_us;
    let reduction_gb = (lw + 1.0) * volume_gb;
    Ok(OverlapThreshold {
        volume_gb,
        scatter_us,
        p2p_us,
        window_us,
        reduction_gb,
        required_gbps: reduction_gb / (window_us / 1e6),
    })
}
