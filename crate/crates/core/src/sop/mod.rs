//! SOP workflows: step graph validation, scheduling, and run execution.

mod def;
mod drive;
mod graph;
mod provider;
mod ready;
mod run;

pub use def::{CaseArm, JoinRule, StepDef, StepKind};
pub use drive::{run_to_quiescence, DriveError, NoHooks, Providers, RunHooks};
pub use graph::{load_sop, sop_from_steps, SopDef, SopLoadError};
pub use provider::{DecisionProvider, NodeRecord, NodeSnapshot, ProviderError, ReferenceProvider};
pub use ready::{ready_steps, unreachable_steps, RouteMap, StatusMap, StepStatus};
pub use run::{trace_ndjson, Actor, MemoryNodes, NodeStore, RunRecord, RunStatus, SopError, SopRun, TraceEvent};
