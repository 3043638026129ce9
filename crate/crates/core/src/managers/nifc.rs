use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ManagerError;
use crate::catalog::Catalog;
use crate::descriptors::{ComponentResources, NmapekClass};
use crate::simenv::{Resources, SimEnv};
use crate::Millis;

/// Held reservations lapse after this long unless committed.
pub const DEFAULT_RESERVATION_TTL: Millis = 60_000;

/// A resource demand, optionally pinned to a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    #[serde(default)]
    pub node_id: Option<String>,
    #[serde(flatten)]
    pub resources: Resources,
}

impl Demand {
    pub fn anywhere(resources: Resources) -> Self {
        Demand { node_id: None, resources }
    }

    pub fn on(node: &str, resources: Resources) -> Self {
        Demand { node_id: Some(node.to_string()), resources }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReservationState {
    Held,
    Committed,
    Released,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedDemand {
    pub node_id: String,
    pub resources: Resources,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub reservation_id: String,
    pub demands: Vec<PlacedDemand>,
    pub state: ReservationState,
    pub expiry: Millis,
}

impl Reservation {
    /// Node of the first demand; NIF reservations have exactly one.
    pub fn node(&self) -> Option<&str> {
        self.demands.first().map(|d| d.node_id.as_str())
    }
}

/// One simulated NIF-C process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub nifc_id: String,
    pub nif_instance_id: String,
    pub class: NmapekClass,
    pub node_id: String,
    pub resources: ComponentResources,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub link_id: String,
    pub from_instance: String,
    pub to_instance: String,
    pub bandwidth_mbps: u64,
    pub reservation_id: String,
}

/// NIF-C Manager: node capacities, reservations, components, links and the
/// local image store.
#[derive(Debug, Clone, Default)]
pub struct NifcManager {
    capacity: BTreeMap<String, Resources>,
    reservations: BTreeMap<String, Reservation>,
    components: BTreeMap<String, Component>,
    links: BTreeMap<String, Link>,
    images: BTreeSet<String>,
    ttl: Millis,
    next_reservation: u64,
    next_component: u64,
    next_link: u64,
}

impl NifcManager {
    pub fn new(capacity: BTreeMap<String, Resources>) -> Self {
        NifcManager { capacity, ttl: DEFAULT_RESERVATION_TTL, ..Default::default() }
    }

    pub fn from_env(env: &SimEnv) -> Self {
        Self::new(env.nodes().map(|n| (n.node_id.clone(), n.capacity)).collect())
    }

    pub fn with_ttl(mut self, ttl: Millis) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn nodes(&self) -> impl Iterator<Item = &String> {
        self.capacity.keys()
    }

    pub fn capacity(&self, node: &str) -> Result<Resources, ManagerError> {
        self.capacity.get(node).copied().ok_or_else(|| ManagerError::UnknownNode(node.into()))
    }

    /// Sum of held and committed demands on a node.
    pub fn allocated(&self, node: &str) -> Resources {
        self.reservations
            .values()
            .flat_map(|r| &r.demands)
            .filter(|d| d.node_id == node)
            .fold(Resources::default(), |acc, d| acc.add(&d.resources))
    }

    pub fn available(&self, node: &str) -> Result<Resources, ManagerError> {
        Ok(self.capacity(node)?.saturating_sub(&self.allocated(node)))
    }

    pub fn allocations(&self) -> BTreeMap<String, Resources> {
        self.capacity.keys().map(|n| (n.clone(), self.allocated(n))).collect()
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.reservations.values()
    }

    pub fn reservation(&self, id: &str) -> Option<&Reservation> {
        self.reservations.get(id)
    }

    /// Drops held reservations whose expiry has passed.
    pub fn expire(&mut self, now: Millis) -> Vec<String> {
        let lapsed: Vec<String> = self
            .reservations
            .values()
            .filter(|r| r.state == ReservationState::Held && r.expiry <= now)
            .map(|r| r.reservation_id.clone())
            .collect();
        for id in &lapsed {
            self.reservations.remove(id);
        }
        lapsed
    }

    /// Reserves all demands or none. Unpinned demands go to the first node
    /// (ascending id) with room.
    pub fn reserve(&mut self, demands: &[Demand], now: Millis) -> Result<Reservation, ManagerError> {
        self.expire(now);
        let mut tentative: BTreeMap<String, Resources> = BTreeMap::new();
        let mut placed = Vec::with_capacity(demands.len());
        for d in demands {
            let free = |node: &str, t: &BTreeMap<String, Resources>| -> Result<Resources, ManagerError> {
                let used = t.get(node).copied().unwrap_or_default();
                Ok(self.available(node)?.saturating_sub(&used))
            };
            let node = match &d.node_id {
                Some(n) => {
                    if !d.resources.fits_in(&free(n, &tentative)?) {
                        return Err(ManagerError::InsufficientResources(format!("node {n} cannot hold {:?}", d.resources)));
                    }
                    n.clone()
                }
                None => self
                    .capacity
                    .keys()
                    .find(|n| free(n, &tentative).is_ok_and(|f| d.resources.fits_in(&f)))
                    .cloned()
                    .ok_or_else(|| ManagerError::InsufficientResources(format!("no node can hold {:?}", d.resources)))?,
            };
            let t = tentative.entry(node.clone()).or_default();
            *t = t.add(&d.resources);
            placed.push(PlacedDemand { node_id: node, resources: d.resources });
        }
        self.next_reservation += 1;
        let r = Reservation {
            reservation_id: format!("rsv-{:04}", self.next_reservation),
            demands: placed,
            state: ReservationState::Held,
            expiry: now + self.ttl,
        };
        self.reservations.insert(r.reservation_id.clone(), r.clone());
        Ok(r)
    }

    pub fn commit(&mut self, id: &str, now: Millis) -> Result<(), ManagerError> {
        self.expire(now);
        let r = self.reservations.get_mut(id).ok_or_else(|| ManagerError::UnknownReservation(id.into()))?;
        if r.state == ReservationState::Committed {
            return Err(ManagerError::AlreadyCommitted(id.into()));
        }
        r.state = ReservationState::Committed;
        Ok(())
    }

    /// Returns the reserved capacity. Released reservations are forgotten.
    pub fn release(&mut self, id: &str) -> Result<(), ManagerError> {
        self.reservations.remove(id).map(|_| ()).ok_or_else(|| ManagerError::UnknownReservation(id.into()))
    }

    pub fn create_components(
        &mut self,
        instance: &str,
        classes: &BTreeSet<NmapekClass>,
        resources: ComponentResources,
        node: &str,
    ) -> Vec<String> {
        classes
            .iter()
            .map(|&class| {
                self.next_component += 1;
                let id = format!("nifc-{:04}", self.next_component);
                self.components.insert(
                    id.clone(),
                    Component {
                        nifc_id: id.clone(),
                        nif_instance_id: instance.into(),
                        class,
                        node_id: node.into(),
                        resources,
                    },
                );
                id
            })
            .collect()
    }

    pub fn remove_components(&mut self, instance: &str) {
        self.components.retain(|_, c| c.nif_instance_id != instance);
    }

    pub fn components(&self) -> impl Iterator<Item = &Component> {
        self.components.values()
    }

    /// Reserves link bandwidth on each distinct endpoint node.
    pub fn reserve_link(&mut self, node_a: &str, node_b: &str, bw: u64, now: Millis) -> Result<Reservation, ManagerError> {
        let res = Resources { link_bw_mbps: bw, ..Default::default() };
        let mut demands = vec![Demand::on(node_a, res)];
        if node_a != node_b {
            demands.push(Demand::on(node_b, res));
        }
        self.reserve(&demands, now)
    }

    /// Records a link over an already committed reservation.
    pub fn add_link(&mut self, from: &str, to: &str, bw: u64, reservation_id: &str) -> String {
        self.next_link += 1;
        let id = format!("lnk-{:04}", self.next_link);
        self.links.insert(
            id.clone(),
            Link {
                link_id: id.clone(),
                from_instance: from.into(),
                to_instance: to.into(),
                bandwidth_mbps: bw,
                reservation_id: reservation_id.into(),
            },
        );
        id
    }

    pub fn disconnect(&mut self, link_id: &str) -> Result<(), ManagerError> {
        let link = self.links.remove(link_id).ok_or_else(|| ManagerError::UnknownLink(link_id.into()))?;
        // A missing reservation means it was already returned.
        let _ = self.release(&link.reservation_id);
        Ok(())
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn link(&self, id: &str) -> Option<&Link> {
        self.links.get(id)
    }

    /// Makes a registered image available locally. Idempotent.
    pub fn upload_image(&mut self, model_id: &str, catalog: &Catalog) -> Result<(), ManagerError> {
        if catalog.model(model_id).is_none() {
            return Err(ManagerError::UnknownModel(model_id.into()));
        }
        self.images.insert(model_id.into());
        Ok(())
    }

    pub fn has_image(&self, model_id: &str) -> bool {
        self.images.contains(model_id)
    }

    pub fn images(&self) -> impl Iterator<Item = &String> {
        self.images.iter()
    }
}
