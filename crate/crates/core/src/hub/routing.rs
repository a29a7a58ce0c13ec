//! Step assignments for SOP runs, with one totally ordered event log.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStatus {
    Assigned,
    Accepted,
    Done,
}

impl AssignmentStatus {
    pub fn next(self) -> Option<Self> {
        match self {
            Self::Assigned => Some(Self::Accepted),
            Self::Accepted => Some(Self::Done),
            Self::Done => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingAssignment {
    pub sop_run_id: String,
    pub step_uuid: String,
    pub agent_id: String,
    pub status: AssignmentStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEvent {
    /// Position in the hub-wide log.
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub sop_run_id: String,
    pub step_uuid: String,
    pub agent_id: String,
    pub status: AssignmentStatus,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct RunEntry {
    pub(crate) steps: BTreeSet<String>,
    pub(crate) assignments: BTreeMap<String, RoutingAssignment>,
}

#[derive(Debug, Default)]
pub(crate) struct Routing {
    pub(crate) runs: BTreeMap<String, RunEntry>,
    pub(crate) log: Vec<AssignmentEvent>,
}
