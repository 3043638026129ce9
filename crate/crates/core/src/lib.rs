//! Network intelligence stratum: an orchestrator for network intelligence
//! functions (NIFs) and services (NISs) running over a deterministic,
//! simulated edge/cloud infrastructure.
//!
//! The crate is organised by functional block:
//!
//! * [`descriptors`] parses and validates NIFD/NISD documents and extracts
//!   N-MAPE-K profiles.
//! * [`catalog`] stores onboarded descriptors and versioned model images.
//! * [`pipelines`] is a mock MLOps pipeline (ingest, train, test, package,
//!   register) with seeded training curves.
//! * [`simenv`] provides the logical clock, event queue, simulated nodes,
//!   metric streams and the two scenario NIF behaviours.
//! * [`managers`] holds the NIF Manager and NIF-C Manager (placement,
//!   two-phase reservations, links, health).
//! * [`policy`] detects and resolves conflicts between NIFs, stores policy
//!   rules and gates runtime actions.
//! * [`orchestrator`] drives the creation, instantiation, update and
//!   termination procedures.
//! * [`api`] exposes the event log, the scenario runner and the HTTP service.

pub mod api;
pub mod canonical;
pub mod catalog;
pub mod descriptors;
pub mod managers;
pub mod orchestrator;
pub mod pipelines;
pub mod policy;
pub mod simenv;

/// Logical time and durations, in integer milliseconds.
pub type Millis = u64;
