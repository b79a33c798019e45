//! Scenario documents: what to run, on which geometry, with which constants.

use std::path::Path;

use oneside::autotune::Axis;
use oneside::costmodel::{ResourcePartition, TimingModel};
use oneside::{ag_order_fullmesh, ag_order_switch, rs_inter_order, SchedulerMode, TileSchedule};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    AllgatherPush,
    AllgatherPull,
    ReducescatterPush,
    AllgatherLl,
    ReducescatterInter,
    Alltoall,
    AgGemm,
    GemmRs,
    /// Cost-model only: the LL AllGather schedule.
    AgLl,
    /// Cost-model only: the signal-pair AllGather baseline.
    AgBaseline,
    RsThreshold,
    Partition,
}

impl Kind {
    pub fn is_functional(self) -> bool {
        !matches!(
            self,
            Kind::AgLl | Kind::AgBaseline | Kind::RsThreshold | Kind::Partition
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerName {
    Det,
    Random,
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleName {
    Switch,
    Fullmesh,
    Sequential,
    RsInter,
}

/// A named shipped parameter file or an inline one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    Named(String),
    Inline(Box<TimingModel>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeCfg {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    #[serde(default = "d_dtype")]
    pub dtype_bytes: usize,
    #[serde(default = "one")]
    pub tile_m: usize,
    #[serde(default = "d_tile_n")]
    pub tile_n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingCfg {
    pub tokens: usize,
    pub topk: usize,
    pub experts_per_rank: usize,
    pub token_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneCfg {
    pub axes: Vec<Axis>,
    #[serde(default = "d_iters")]
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    #[serde(default = "one")]
    pub n_nodes: usize,
    #[serde(default = "d_local")]
    pub local_world: usize,
    #[serde(default = "d_chunk")]
    pub chunk_bytes: usize,
    #[serde(default = "d_heap")]
    pub heap_bytes: usize,
    #[serde(default)]
    pub shape: Option<ShapeCfg>,
    #[serde(default)]
    pub schedule: Option<ScheduleName>,
    #[serde(default = "one")]
    pub subchunks: usize,
    #[serde(default)]
    pub routing: Option<RoutingCfg>,
    #[serde(default)]
    pub topology: Option<TopologyRef>,
    #[serde(default)]
    pub partition: Option<ResourcePartition>,
    /// Reduction bandwidth per SM; defaults to the threshold spread over 15 SMs.
    #[serde(default)]
    pub per_sm_gbps: Option<f64>,
    #[serde(default)]
    pub scheduler: Option<SchedulerName>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub tune: Option<TuneCfg>,
}

fn one() -> usize {
    1
}
fn d_local() -> usize {
    8
}
fn d_chunk() -> usize {
    64
}
fn d_heap() -> usize {
    1 << 20
}
fn d_dtype() -> usize {
    8
}
fn d_tile_n() -> usize {
    16
}
fn d_iters() -> usize {
    3
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, Failure> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| Failure::config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.n_nodes == 0 || self.local_world == 0 {
            return Err(Failure::config(
                "n_nodes and local_world must be at least 1",
            ));
        }
        if self.subchunks == 0 {
            return Err(Failure::config("subchunks must be at least 1"));
        }
        if self.scheduler == Some(SchedulerName::Random) && self.seed.is_none() {
            return Err(Failure::config(
                "the random scheduler needs an explicit seed",
            ));
        }
        self.timing()?;
        Ok(())
    }

    pub fn world_size(&self) -> usize {
        self.n_nodes * self.local_world
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn mode(&self) -> SchedulerMode {
        match self.scheduler.unwrap_or(SchedulerName::Det) {
            SchedulerName::Det => SchedulerMode::RoundRobin,
            SchedulerName::Random => SchedulerMode::Random { seed: self.seed() },
            SchedulerName::Free => SchedulerMode::Free,
        }
    }

    pub fn timing(&self) -> Result<TimingModel, Failure> {
        let tm = match &self.topology {
            None => TimingModel::h800(),
            Some(TopologyRef::Named(n)) => match n.as_str() {
                "h800" => TimingModel::h800(),
                "mi308x" => TimingModel::mi308x(),
                other => {
                    return Err(Failure::config(format!(
                        "unknown topology `{other}` (h800, mi308x)"
                    )))
                }
            },
            Some(TopologyRef::Inline(tm)) => **tm,
        };
        tm.validate()?;
        Ok(tm)
    }

    pub fn partition(&self) -> ResourcePartition {
        self.partition
            .unwrap_or_else(ResourcePartition::h800_gemm_rs)
    }

    pub fn shape(&self) -> Result<ShapeCfg, Failure> {
        self.shape
            .ok_or_else(|| Failure::config(format!("scenario `{}` needs a shape", self.name)))
    }

    pub fn schedules(&self) -> Result<Vec<TileSchedule>, Failure> {
        let w = self.world_size();
        let default = if self.kind == Kind::GemmRs {
            ScheduleName::RsInter
        } else {
            ScheduleName::Switch
        };
        (0..w)
            .map(|r| {
                Ok(match self.schedule.unwrap_or(default) {
                    ScheduleName::Switch => ag_order_switch(r, w),
                    ScheduleName::Sequential => TileSchedule::sequential(r, w),
                    ScheduleName::Fullmesh => ag_order_fullmesh(r, w, self.subchunks)?,
                    ScheduleName::RsInter => rs_inter_order(r, self.n_nodes, self.local_world),
                })
            })
            .collect()
    }
}

const BUILTIN: &[(&str, &str)] = &[
    (
        "allgather-push",
        r#"{"name":"allgather-push","kind":"allgather-push","local_world":8}"#,
    ),
    (
        "allgather-pull",
        r#"{"name":"allgather-pull","kind":"allgather-pull","local_world":8}"#,
    ),
    (
        "reducescatter-push",
        r#"{"name":"reducescatter-push","kind":"reducescatter-push","local_world":8}"#,
    ),
    (
        "allgather-ll",
        r#"{"name":"allgather-ll","kind":"allgather-ll","n_nodes":2,"local_world":4}"#,
    ),
    (
        "reducescatter-inter",
        r#"{"name":"reducescatter-inter","kind":"reducescatter-inter","n_nodes":2,"local_world":4}"#,
    ),
    (
        "alltoall",
        r#"{"name":"alltoall","kind":"alltoall","local_world":8,
            "routing":{"tokens":16,"topk":2,"experts_per_rank":2,"token_bytes":32}}"#,
    ),
    (
        "ag-gemm",
        r#"{"name":"ag-gemm","kind":"ag-gemm","local_world":4,"shape":{"m":64,"n":64,"k":64},
            "tune":{"axes":[{"name":"tile_n","values":[32,64]}]}}"#,
    ),
    (
        "gemm-rs",
        r#"{"name":"gemm-rs","kind":"gemm-rs","n_nodes":2,"local_world":2,"shape":{"m":32,"n":32,"k":32,"tile_m":2,"tile_n":8},
            "tune":{"axes":[{"name":"tile_m","values":[1,2]},{"name":"tile_n","values":[8,16]}]}}"#,
    ),
    (
        "ag-ll",
        r#"{"name":"ag-ll","kind":"ag-ll","n_nodes":4,"local_world":8}"#,
    ),
    (
        "ag-baseline",
        r#"{"name":"ag-baseline","kind":"ag-baseline","n_nodes":4,"local_world":8}"#,
    ),
    (
        "rs-threshold",
        r#"{"name":"rs-threshold","kind":"rs-threshold","n_nodes":8,"local_world":8,"shape":{"m":8192,"n":8192,"k":8192,"dtype_bytes":2}}"#,
    ),
    (
        "partition",
        r#"{"name":"partition","kind":"partition","n_nodes":8,"local_world":8,"shape":{"m":8192,"n":8192,"k":8192,"dtype_bytes":2}}"#,
    ),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin(name: &str) -> Result<Scenario, Failure> {
    let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        Failure::config(format!("no built-in scenario `{name}`; see list-scenarios"))
    })?;
    Scenario::parse(text)
}
