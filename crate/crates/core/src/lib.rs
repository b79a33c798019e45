//! One-sided communication runtime and cost simulator.
//!
//! Ranks live in one process and share a symmetric heap. Kernels are
//! written against OpenSHMEM-style primitives plus signal, multimem and LL
//! extensions, composed into streams of async tasks, and checked against
//! dense reference implementations. A discrete-event model times the same
//! schedules.

pub mod autotune;
pub mod collectives;
pub mod costmodel;
pub mod elem;
pub mod error;
pub mod instrument;
pub mod ll;
pub mod oracle;
pub mod par;
pub mod pipelines;
pub mod primitives;
pub mod runtime;
pub mod sched;
pub mod shmem;
pub mod swizzle;

pub use autotune::{tune, Config, ConfigSpace, TuneOptions, TuneReport};
pub use collectives::{CollectiveRun, Opts, SyncStyle};
pub use elem::Elem;
pub use error::{Error, Result, SyncFault};
pub use instrument::{Counts, PrimKind, TraceEvent};
pub use pipelines::{ag_gemm, gemm_rs, ComputeModel, PipelineRun, ProblemShape};
pub use primitives::{SignalOpKind, Src, Token, WaitCond};
pub use runtime::{launch, spmd, LaunchReport, Program, StreamRef, TaskCx, TaskRole};
pub use sched::SchedulerMode;
pub use shmem::{
    LocalBuffer, NbiMode, Pe, RankCtx, RuntimeConfig, SignalSet, SymHandle, World, WorldSpec,
};
pub use swizzle::{ag_order_fullmesh, ag_order_switch, rs_inter_order, Step, TileSchedule};
