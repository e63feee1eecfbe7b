//! Spec-file front end for stackstream: parse, plan, explain and run
//! streaming pipelines.

pub mod build;
pub mod commands;
pub mod spec;

pub use build::build;
pub use commands::{cmd_explain, cmd_gen, cmd_plan, cmd_run, Flags, GenArgs, Outcome};
pub use spec::{parse, PipelineSpec, Pos, SyntaxError};
