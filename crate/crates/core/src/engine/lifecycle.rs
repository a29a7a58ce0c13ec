//! Card lifecycle states and the closed transition table.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleState {
    Created,
    Ready,
    Executing,
    WaitingUi,
    Confirming,
    Completed,
    Failed,
}

impl LifecycleState {
    pub const ALL: [Self; 7] = [
        Self::Created,
        Self::Ready,
        Self::Executing,
        Self::WaitingUi,
        Self::Confirming,
        Self::Completed,
        Self::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Created => "CREATED",
            Self::Ready => "READY",
            Self::Executing => "EXECUTING",
            Self::WaitingUi => "WAITING_UI",
            Self::Confirming => "CONFIRMING",
            Self::Completed => "COMPLETED",
            Self::Failed => "FAILED",
        }
    }

    pub fn is_final(self) -> bool {
        matches!(self, Self::Completed | Self::Failed)
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    /// Card accepted into the registry.
    Register,
    /// Non-sensitive values stored.
    SetForm,
    /// An agent supplied a sensitive field.
    SensitiveViaAgent,
    /// A submit found required sensitive fields missing from the vault.
    SubmitNeedsSensitive,
    /// The UI supplied every awaited sensitive field.
    SensitiveSatisfied,
    /// Action executed successfully.
    Submit,
    /// Action deferred behind a human confirmation gate.
    SubmitNeedsConfirm,
    /// Gate approved by a human; deferred action succeeded.
    Confirm,
    /// Gate denied by a human.
    Cancel,
    /// The action handler reported failure.
    ActionFailed,
    /// A workflow step on this card progressed.
    StepProgress,
    /// A workflow human gate opened.
    GateOpened,
    /// A workflow human gate was resolved; other gates may remain.
    GateResolved,
    /// The workflow reached its end.
    RunFinished,
}

impl LifecycleEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Register => "register",
            Self::SetForm => "set_form",
            Self::SensitiveViaAgent => "sensitive_via_agent",
            Self::SubmitNeedsSensitive => "submit_needs_sensitive",
            Self::SensitiveSatisfied => "sensitive_satisfied",
            Self::Submit => "submit",
            Self::SubmitNeedsConfirm => "submit_needs_confirm",
            Self::Confirm => "confirm",
            Self::Cancel => "cancel",
            Self::ActionFailed => "action_failed",
            Self::StepProgress => "step_progress",
            Self::GateOpened => "gate_opened",
            Self::GateResolved => "gate_resolved",
            Self::RunFinished => "run_finished",
        }
    }
}

use LifecycleEvent as E;
use LifecycleState as S;

/// Every permitted `(from, event, to)` triple. Nothing else may happen.
pub const TRANSITIONS: &[(LifecycleState, LifecycleEvent, LifecycleState)] = &[
    (S::Created, E::Register, S::Ready),
    (S::Ready, E::SetForm, S::Executing),
    (S::Executing, E::SetForm, S::Executing),
    (S::WaitingUi, E::SetForm, S::WaitingUi),
    (S::Ready, E::SensitiveViaAgent, S::WaitingUi),
    (S::Executing, E::SensitiveViaAgent, S::WaitingUi),
    (S::WaitingUi, E::SensitiveViaAgent, S::WaitingUi),
    (S::Ready, E::SubmitNeedsSensitive, S::WaitingUi),
    (S::Executing, E::SubmitNeedsSensitive, S::WaitingUi),
    (S::WaitingUi, E::SensitiveSatisfied, S::Ready),
    (S::WaitingUi, E::SensitiveSatisfied, S::Executing),
    (S::Ready, E::Submit, S::Completed),
    (S::Executing, E::Submit, S::Completed),
    (S::Ready, E::SubmitNeedsConfirm, S::Confirming),
    (S::Executing, E::SubmitNeedsConfirm, S::Confirming),
    (S::Confirming, E::Confirm, S::Completed),
    (S::Confirming, E::Cancel, S::Executing),
    (S::Ready, E::ActionFailed, S::Failed),
    (S::Executing, E::ActionFailed, S::Failed),
    (S::Confirming, E::ActionFailed, S::Failed),
    (S::Ready, E::StepProgress, S::Executing),
    (S::Executing, E::StepProgress, S::Executing),
    (S::Confirming, E::StepProgress, S::Confirming),
    (S::Executing, E::GateOpened, S::Confirming),
    (S::Confirming, E::GateOpened, S::Confirming),
    (S::Confirming, E::GateResolved, S::Executing),
    (S::Confirming, E::GateResolved, S::Confirming),
    (S::Executing, E::RunFinished, S::Completed),
];

/// True when `(from, event, to)` is in [`TRANSITIONS`].
pub fn is_allowed(from: LifecycleState, event: LifecycleEvent, to: LifecycleState) -> bool {
    TRANSITIONS.contains(&(from, event, to))
}

/// Targets reachable from `from` via `event`.
pub fn targets(from: LifecycleState, event: LifecycleEvent) -> impl Iterator<Item = LifecycleState> {
    TRANSITIONS
        .iter()
        .filter(move |(f, e, _)| *f == from && *e == event)
        .map(|(_, _, t)| *t)
}
