//! NIF Manager and NIF-C Manager over the simulated infrastructure.
//!
//! Both managers are plain state owners driven by the orchestrator's command
//! loop; the NIF Manager reaches the NIF-C Manager only through the
//! reference it is handed on each call.

mod nif;
mod nifc;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::simenv::Resources;
use crate::Millis;

pub use nif::{HealthReport, HealthVerdict, NifInstance, NifManager, NifSpec, NifState, DEGRADE_AFTER};
pub use nifc::{
    Component, Demand, Link, NifcManager, PlacedDemand, Reservation, ReservationState, DEFAULT_RESERVATION_TTL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManagerError {
    #[error("insufficient resources: {0}")]
    InsufficientResources(String),
    #[error("unknown reservation {0}")]
    UnknownReservation(String),
    #[error("reservation {0} is already committed")]
    AlreadyCommitted(String),
    #[error("unknown NIF instance {0}")]
    UnknownInstance(String),
    #[error("NIF instance {0} is not running")]
    NotRunning(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown link {0}")]
    UnknownLink(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("health report at {at} does not follow the previous one at {last}")]
    StaleHealth { last: Millis, at: Millis },
}

/// Everything the managers hold, for diffing and debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManagerSnapshot {
    pub allocations: BTreeMap<String, Resources>,
    pub reservations: Vec<Reservation>,
    pub instances: Vec<NifInstance>,
    pub components: Vec<Component>,
    pub links: Vec<Link>,
    pub images: Vec<String>,
}

pub fn snapshot(nifm: &NifManager, nifc: &NifcManager) -> ManagerSnapshot {
    ManagerSnapshot {
        allocations: nifc.allocations(),
        reservations: nifc.reservations().cloned().collect(),
        instances: nifm.instances().cloned().collect(),
        components: nifc.components().cloned().collect(),
        links: nifc.links().cloned().collect(),
        images: nifc.images().cloned().collect(),
    }
}

/// Writes `state/managers.json` under `data_dir`.
pub fn dump_state(data_dir: &Path, nifm: &NifManager, nifc: &NifcManager) -> std::io::Result<()> {
    let dir = data_dir.join("state");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("managers.json"), canonical::to_canonical_pretty(&snapshot(nifm, nifc)))
}
