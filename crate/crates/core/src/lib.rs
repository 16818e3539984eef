//! Event-sourcing kernel for contract-constrained agent workflows.
//!
//! Agents never touch project state directly. They submit envelopes; the
//! orchestrator validates them against schema and boundary contracts, records
//! accepted intentions in an append-only log, applies file effects, and
//! re-derives the `roadmap.json` read-model by folding the log. `verify`
//! replays the log and compares a SHA-256 digest of the canonical projection
//! with the stored one.

pub mod canonical;
pub mod clock;
pub mod contracts;
pub mod event_store;
pub mod orchestrator;
pub mod patch;
pub mod projection;
pub mod sim;
pub mod verify;
