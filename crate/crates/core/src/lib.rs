//! ANX protocol and runtime.
//!
//! * [`markup`]: ANX Config and ANX Markup formats, rendering and redaction.
//! * [`bench`]: representation-size comparison against inlined option sets.
//! * [`cli`]: the `anx <cardKey> <action> params` command carrier.
//! * [`engine`]: card registry, lifecycle state machine, vault, nodes, audit.
//! * [`hub`]: publish/discover index, user tokens, step assignments.
//! * [`sop`]: SOP step graphs, scheduling and run execution.
//! * [`runtime`]: SOP runs backed by engine cards and hub assignments.

pub mod bench;
pub mod cli;
pub mod clock;
pub mod engine;
pub mod hub;
pub mod keys;
pub mod markup;
pub mod runtime;
pub mod sop;
pub mod store;
