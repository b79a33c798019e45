//! Batch evaluation of AllGather timelines over geometries and parameters.

use serde::{Deserialize, Serialize};

use super::ag::{simulate_ag_baseline, simulate_ag_ll};
use super::CostParams;
use crate::par::{par_map, seq_map};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCase {
    pub n_nodes: usize,
    pub local_world: usize,
    pub params: CostParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_nodes: usize,
    pub local_world: usize,
    pub baseline_us: f64,
    pub ll_us: f64,
}

fn eval(c: &SweepCase) -> SweepPoint {
    SweepPoint {
        n_nodes: c.n_nodes,
        local_world: c.local_world,
        baseline_us: simulate_ag_baseline(&c.params, c.n_nodes, c.local_world).makespan(),
        ll_us: simulate_ag_ll(&c.params, c.n_nodes, c.local_world).makespan(),
    }
}

/// Evaluates every case, in parallel when the `parallel` feature is on.
pub fn ag_sweep(cases: &[SweepCase]) -> Vec<SweepPoint> {
    par_map(cases, eval)
}

pub fn ag_sweep_sequential(cases: &[SweepCase]) -> Vec<SweepPoint> {
    seq_map(cases, eval)
}

/// All geometries up to `max_nodes × max_local` with one parameter set.
pub fn grid(params: CostParams, max_nodes: usize, max_local: usize) -> Vec<SweepCase> {
    (1..=max_nodes)
        .flat_map(|n| {
            (1..=max_local).map(move |l| SweepCase {
                n_nodes: n,
                local_world: l,
                params,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::TimingModel;

    #[test]
    fn parallel_equals_sequential() {
        let cases = grid(TimingModel::h800().params, 4, 8);
        assert_eq!(ag_sweep(&cases), ag_sweep_sequential(&cases));
    }

    #[test]
    fn ll_beats_baseline_across_nodes() {
        for p in ag_sweep(&grid(TimingModel::h800().params, 6, 8)) {
            if p.n_nodes > 1 {
                assert!(p.ll_us < p.baseline_us, "{p:?}");
            }
        }
    }
}
