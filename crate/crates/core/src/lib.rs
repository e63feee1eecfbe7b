//! Streaming, memory-budgeted processing of 3D volumes stored as slice
//! stacks or chunked stores.

pub mod budget;
pub mod context;
pub mod costmodel;
pub mod dtype;
pub mod error;
pub mod exec;
pub mod graph;
pub mod io;
pub mod ops;
pub mod planner;
pub mod slice;
pub mod stage;
pub mod stream;
pub mod volume;

pub use budget::{Budget, MemEstimate};
pub use context::RunContext;
pub use dtype::{Dtype, SliceData, Voxel};
pub use error::{Error, PlanError, Result};
pub use slice::{MemoryMeter, Slice};
pub use stream::{SliceStream, Stream, Window, WindowStream};
pub use volume::{Pattern, PlaneMeta, Volume, VolumeMeta};
pub use exec::{execute, run_graph, run_plan, ExecOptions, FailPoint, RunReport, SinkOutput};
pub use graph::PipelineGraph;
pub use planner::{estimate_pipeline, plan, MemoryLedger, Plan, PlanOptions, RepairAction, Verdict};
pub use stage::{OpKind, PlanStage, Role};
