//! Chunk visit orders that line computation up with communication arrival.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One step of a schedule: the chunks visited (optionally restricted to one
/// sub-chunk) and the peers data is pulled from during the step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub chunks: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subchunk: Option<usize>,
    pub peers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSchedule {
    pub rank: usize,
    /// Sub-chunks per chunk; steps without `subchunk` cover all of them.
    pub subchunks: usize,
    pub steps: Vec<Step>,
}

impl TileSchedule {
    /// Every (chunk, sub-chunk) pair in visit order.
    pub fn visits(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in &self.steps {
            for &c in &s.chunks {
                match s.subchunk {
                    Some(sc) => out.push((c, sc)),
                    None => out.extend((0..self.subchunks).map(|sc| (c, sc))),
                }
            }
        }
        out
    }

    /// Chunks in order of first visit.
    pub fn chunk_order(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for (c, _) in self.visits() {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        seen
    }

    /// Checks that the visits are a bijection onto `chunks × subchunks` and
    /// that only the local step lists no peers or the caller itself.
    pub fn validate(&self, chunks: usize) -> Result<()> {
        let mut v = self.visits();
        v.sort_unstable();
        let want: Vec<(usize, usize)> = (0..chunks)
            .flat_map(|c| (0..self.subchunks).map(move |s| (c, s)))
            .collect();
        if v != want {
            return Err(Error::arg(format!(
                "schedule for rank {} is not a permutation of {chunks}x{} visits",
                self.rank, self.subchunks
            )));
        }
        if let Some(s) = self.steps.iter().find(|s| s.peers.contains(&self.rank)) {
            return Err(Error::arg(format!(
                "rank {} pulls from itself at chunks {:?}",
                self.rank, s.chunks
            )));
        }
        Ok(())
    }

    /// Identity order, for tests and as the unswizzled baseline.
    pub fn sequential(rank: usize, chunks: usize) -> Self {
        TileSchedule {
            rank,
            subchunks: 1,
            steps: (0..chunks)
                .map(|c| Step {
                    chunks: vec![c],
                    subchunk: None,
                    peers: if c == rank { vec![] } else { vec![c] },
                })
                .collect(),
        }
    }
}

/// Switch topology: step `k` visits chunk `(rank + k) mod world`, pulled
/// from its owner, so at every step each rank reads from a distinct peer.
pub fn ag_order_switch(rank: usize, world: usize) -> TileSchedule {
    TileSchedule {
        rank,
        subchunks: 1,
        steps: (0..world)
            .map(|k| {
                let c = (rank + k) % world;
                Step {
                    chunks: vec![c],
                    subchunk: None,
                    peers: if k == 0 { vec![] } else { vec![c] },
                }
            })
            .collect(),
    }
}

/// Full mesh: the local chunk first, then per step sub-chunk `s` of every
/// other rank at once, keeping all links busy.
pub fn ag_order_fullmesh(rank: usize, world: usize, subchunks: usize) -> Result<TileSchedule> {
    if subchunks == 0 {
        return Err(Error::arg(
            "full-mesh schedule needs at least one sub-chunk",
        ));
    }
    let others: Vec<usize> = (1..world).map(|k| (rank + k) % world).collect();
    let mut steps = vec![Step {
        chunks: vec![rank],
        subchunk: None,
        peers: vec![],
    }];
    if !others.is_empty() {
        steps.extend((0..subchunks).map(|s| Step {
            chunks: others.clone(),
            subchunk: Some(s),
            peers: others.clone(),
        }));
    }
    Ok(TileSchedule {
        rank,
        subchunks,
        steps,
    })
}

/// GEMM + inter-node ReduceScatter: peer-node blocks first (next node
/// first), own node last; inside a block local indices start at
/// `local_rank + 1`, so the caller's own chunk comes last overall.
pub fn rs_inter_order(rank: usize, n_nodes: usize, local_world: usize) -> TileSchedule {
    let (node, local) = (rank / local_world, rank % local_world);
    let mut steps = Vec::with_capacity(n_nodes * local_world);
    for i in 0..n_nodes {
        let nb = (node + 1 + i) % n_nodes;
        for j in 0..local_world {
            let c = nb * local_world + (local + 1 + j) % local_world;
            steps.push(Step {
                chunks: vec![c],
                subchunk: None,
                peers: if c == rank { vec![] } else { vec![c] },
            });
        }
    }
    TileSchedule {
        rank,
        subchunks: 1,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_ring() {
        assert_eq!(ag_order_switch(1, 4).chunk_order(), vec![1, 2, 3, 0]);
        assert_eq!(ag_order_switch(0, 1).chunk_order(), vec![0]);
    }

    #[test]
    fn fullmesh_first_remote_step() {
        let s = ag_order_fullmesh(0, 4, 2).unwrap();
        assert_eq!(s.steps[1].subchunk, Some(0));
        assert_eq!(s.steps[1].peers, vec![1, 2, 3]);
        s.validate(4).unwrap();
        assert_eq!(ag_order_fullmesh(2, 4, 1).unwrap().steps.len(), 2);
    }

    #[test]
    fn inter_anchors() {
        assert_eq!(
            rs_inter_order(0, 2, 4).chunk_order(),
            vec![5, 6, 7, 4, 1, 2, 3, 0]
        );
        assert_eq!(rs_inter_order(1, 2, 4).chunk_order()[0], 6);
    }

    #[test]
    fn json_shape() {
        let v = serde_json::to_value(ag_order_switch(1, 2)).unwrap();
        assert_eq!(v["rank"], 1);
        assert_eq!(v["steps"][1]["chunks"], serde_json::json!([0]));
        assert_eq!(v["steps"][1]["peers"], serde_json::json!([0]));
        assert!(v["steps"][1].get("subchunk").is_none());
    }
}
