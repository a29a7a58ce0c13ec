//! Driving a run to quiescence with one provider per agent id.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::def::{StepDef, StepKind};
use super::provider::DecisionProvider;
use super::run::{Actor, NodeStore, RunStatus, SopError, SopRun};

pub type Providers = BTreeMap<String, Arc<dyn DecisionProvider>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DriveError {
    #[error("no provider registered for agent `{0}`")]
    ProviderMissing(String),
    #[error("{0}")]
    Hook(String),
    #[error(transparent)]
    Sop(#[from] SopError),
}

/// Side effects a run needs from its surroundings while being driven.
pub trait RunHooks {
    /// A ready step was handed to `agent`. Called before the step runs.
    fn assigned(&mut self, _run_id: &str, _step: &StepDef, _agent: &str) -> Result<(), String> {
        Ok(())
    }

    /// The agent finished its part of the step.
    fn finished(&mut self, _run_id: &str, _step: &StepDef, _agent: &str) -> Result<(), String> {
        Ok(())
    }

    /// Opens a human-only gate for `step` and returns its id.
    fn open_gate(&mut self, run_id: &str, step: &StepDef) -> Result<String, String> {
        Ok(format!("gate_{run_id}_{}", step.uuid))
    }
}

/// Hooks that do nothing beyond naming gates.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHooks;

impl RunHooks for NoHooks {}

/// Executes ready steps through their agents' providers until no step is
/// ready. Human gates get their agent's analysis written and then block.
///
/// Every agent id referenced by a step that has not finished must have a
/// provider; otherwise nothing is executed.
pub fn run_to_quiescence(
    run: &mut SopRun,
    providers: &Providers,
    hooks: &mut dyn RunHooks,
    nodes: &mut dyn NodeStore,
) -> Result<RunStatus, DriveError> {
    for s in &run.def().steps {
        let done = run.status_of(&s.uuid).is_some_and(|st| st.is_terminal());
        if !done && !providers.contains_key(s.agent_id()) {
            return Err(DriveError::ProviderMissing(s.agent_id().to_owned()));
        }
    }

    loop {
        let ready = run.ready();
        if ready.is_empty() {
            break;
        }
        for uuid in ready {
            // An earlier step in this batch may have changed this one.
            if run.status_of(&uuid) != Some(super::StepStatus::Ready) {
                continue;
            }
            let Some(step) = run.def().step(&uuid).cloned() else {
                continue;
            };
            let agent = step.agent_id().to_owned();
            let provider = providers[agent.as_str()].as_ref();
            let actor = Actor::agent(&agent);
            hooks.assigned(run.run_id(), &step, &agent).map_err(DriveError::Hook)?;

            let snap = nodes.snapshot().unwrap_or_default();
            let outputs = match provider.step_outputs(&step, &snap) {
                Ok(o) => o,
                Err(e) => {
                    run.fail_step(&uuid, &e.to_string(), &actor)?;
                    continue;
                }
            };
            if step.kind == StepKind::HumanGate {
                let gate = hooks.open_gate(run.run_id(), &step).map_err(DriveError::Hook)?;
                run.open_gate(&uuid, &gate, outputs, &actor, nodes)?;
            } else {
                run.start_step(&uuid, &actor)?;
                // A failure is recorded on the step itself.
                if run.complete_step_single(&uuid, outputs, provider, &actor, nodes).is_err() {
                    continue;
                }
            }
            hooks.finished(run.run_id(), &step, &agent).map_err(DriveError::Hook)?;
        }
    }
    Ok(run.run_status())
}
