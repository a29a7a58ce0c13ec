//! Scheduling rules: which pending steps are ready, and which can never run.
//!
//! For a pending step `S`:
//! * a source `P` *activates* `S` when `P` is completed and, if `P` can also
//!   route to `S`, its recorded route selected `S` (dynamic routing takes
//!   precedence over the static edge);
//! * `S` is *routed* when some completed non-source router selected it;
//! * `join = all`: every source is completed or skipped, no completed
//!   router-source passed over `S`, and `S` is activated by a source or routed;
//! * `join = any`: `S` is activated by some source or routed;
//! * a step without sources is ready only when it is the start step or routed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::def::{JoinRule, StepDef};
use super::graph::SopDef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Ready,
    Running,
    Completed,
    Skipped,
    BlockedOnHuman,
    Failed,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Ready => "ready",
            Self::Running => "running",
            Self::Completed => "completed",
            Self::Skipped => "skipped",
            Self::BlockedOnHuman => "blocked_on_human",
            Self::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Completed | Self::Skipped)
    }
}

pub type StatusMap = BTreeMap<String, StepStatus>;
/// Router uuid -> the targets it selected when it completed.
pub type RouteMap = BTreeMap<String, Vec<String>>;

struct View<'a> {
    def: &'a SopDef,
    status: &'a StatusMap,
    routes: &'a RouteMap,
}

impl View<'_> {
    fn status(&self, uuid: &str) -> StepStatus {
        self.status.get(uuid).copied().unwrap_or(StepStatus::Pending)
    }

    fn selected(&self, router: &str, target: &str) -> bool {
        self.routes
            .get(router)
            .is_some_and(|t| t.iter().any(|x| x == target))
    }

    fn activates(&self, src: &StepDef, s: &StepDef) -> bool {
        self.status(&src.uuid) == StepStatus::Completed
            && (!src.route_targets().contains(&s.uuid.as_str()) || self.selected(&src.uuid, &s.uuid))
    }

    fn vetoed(&self, src: &StepDef, s: &StepDef) -> bool {
        self.status(&src.uuid) == StepStatus::Completed
            && src.route_targets().contains(&s.uuid.as_str())
            && !self.selected(&src.uuid, &s.uuid)
    }

    fn routed(&self, s: &StepDef) -> bool {
        self.def.routers_of(&s.uuid).any(|r| {
            !s.sources.contains(&r.uuid)
                && self.status(&r.uuid) == StepStatus::Completed
                && self.selected(&r.uuid, &s.uuid)
        })
    }

    fn ready(&self, s: &StepDef) -> bool {
        if self.status(&s.uuid) != StepStatus::Pending {
            return false;
        }
        if s.sources.is_empty() {
            return s.start || self.routed(s);
        }
        let sources: Vec<&StepDef> = s.sources.iter().filter_map(|u| self.def.step(u)).collect();
        match s.sources_join {
            JoinRule::All => {
                sources.iter().all(|p| self.status(&p.uuid).is_terminal())
                    && !sources.iter().any(|p| self.vetoed(p, s))
                    && (sources.iter().any(|p| self.activates(p, s)) || self.routed(s))
            }
            JoinRule::Any => sources.iter().any(|p| self.activates(p, s)) || self.routed(s),
        }
    }
}

/// Pending steps that may be scheduled now.
pub fn ready_steps(def: &SopDef, status: &StatusMap, routes: &RouteMap) -> BTreeSet<String> {
    let v = View { def, status, routes };
    def.steps
        .iter()
        .filter(|s| v.ready(s))
        .map(|s| s.uuid.clone())
        .collect()
}

/// Pending steps that can no longer become ready under any future choice
/// of the routers that are still undecided.
///
/// Least fixpoint of "may run": steps that already left `pending` (other
/// than by being skipped) and the start step seed the set; a pending step
/// joins when some path to readiness stays open given the steps already in
/// the set. Whatever is pending and outside the fixpoint must be skipped.
pub fn unreachable_steps(def: &SopDef, status: &StatusMap, routes: &RouteMap) -> BTreeSet<String> {
    let v = View { def, status, routes };
    let mut live: BTreeSet<&str> = def
        .steps
        .iter()
        .filter(|s| {
            let st = v.status(&s.uuid);
            s.start && st == StepStatus::Pending
                || !matches!(st, StepStatus::Pending | StepStatus::Skipped)
        })
        .map(|s| s.uuid.as_str())
        .collect();

    // `p` may still activate `s`: it can run, and if it routes to `s` it has
    // not yet decided against it.
    let may_activate = |live: &BTreeSet<&str>, p: &StepDef, s: &StepDef| {
        live.contains(p.uuid.as_str())
            && (!p.route_targets().contains(&s.uuid.as_str())
                || v.status(&p.uuid) != StepStatus::Completed
                || v.selected(&p.uuid, &s.uuid))
    };
    let may_route = |live: &BTreeSet<&str>, r: &StepDef, s: &StepDef| {
        !s.sources.contains(&r.uuid)
            && live.contains(r.uuid.as_str())
            && (v.status(&r.uuid) != StepStatus::Completed || v.selected(&r.uuid, &s.uuid))
    };

    loop {
        let mut grew = false;
        for s in &def.steps {
            if live.contains(s.uuid.as_str()) || v.status(&s.uuid) != StepStatus::Pending {
                continue;
            }
            let sources: Vec<&StepDef> = s.sources.iter().filter_map(|u| def.step(u)).collect();
            let routed = def.routers_of(&s.uuid).any(|r| may_route(&live, r, s));
            let possible = match s.sources_join {
                _ if sources.is_empty() => routed,
                JoinRule::All => {
                    !sources.iter().any(|p| v.vetoed(p, s))
                        && (sources.iter().any(|p| may_activate(&live, p, s)) || routed)
                }
                JoinRule::Any => sources.iter().any(|p| may_activate(&live, p, s)) || routed,
            };
            if possible {
                live.insert(s.uuid.as_str());
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }

    def.steps
        .iter()
        .filter(|s| v.status(&s.uuid) == StepStatus::Pending && !live.contains(s.uuid.as_str()))
        .map(|s| s.uuid.clone())
        .collect()
}
