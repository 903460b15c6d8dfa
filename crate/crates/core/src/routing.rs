//! Mesh connectivity and session routing.
//!
//! Offline links follow a disk model with the min-range rule, so edges are
//! undirected. When no offline path exists, two internet-connected gateways
//! can bridge otherwise disconnected components (a hybrid session).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{Event, EventLog};
use crate::messaging::SlowRevealEnvelope;
use crate::sim::DeviceNode;
use crate::trust::{DeviceId, Tick};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("device id {0} appears more than once")]
    DuplicateDeviceId(DeviceId),
    #[error("device {0} is not part of the mesh")]
    UnknownDevice(DeviceId),
    #[error("no offline or hybrid route from {from} to {to}")]
    NoRoute { from: DeviceId, to: DeviceId },
    #[error("link {from} -> {to} is down")]
    LinkDown { from: DeviceId, to: DeviceId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Offline,
    OnlineProximity,
    Hybrid,
}

/// Whether two online devices close to each other talk over the internet
/// or over the mesh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPolicy {
    #[default]
    PreferOffline,
    PreferInternet,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MeshGraph {
    nodes: BTreeSet<DeviceId>,
    /// Sorted neighbor lists.
    adjacency: BTreeMap<DeviceId, Vec<DeviceId>>,
    internet_nodes: BTreeSet<DeviceId>,
}

pub fn build_mesh(nodes: &[DeviceNode]) -> Result<MeshGraph, RoutingError> {
    let mut graph = MeshGraph::default();
    for n in nodes {
        if !graph.nodes.insert(n.id) {
            return Err(RoutingError::DuplicateDeviceId(n.id));
        }
        if n.online() {
            graph.internet_nodes.insert(n.id);
        }
    }
    let mut lists: Vec<Vec<DeviceId>> = vec![Vec::new(); nodes.len()];
    for (i, a) in nodes.iter().enumerate() {
        for (j, b) in nodes.iter().enumerate().skip(i + 1) {
            if a.within(b, a.radio_range.min(b.radio_range)) {
                lists[i].push(b.id);
                lists[j].push(a.id);
            }
        }
    }
    for (n, mut list) in nodes.iter().zip(lists) {
        list.sort_unstable();
        graph.adjacency.insert(n.id, list);
    }
    Ok(graph)
}

impl MeshGraph {
    pub fn nodes(&self) -> &BTreeSet<DeviceId> {
        &self.nodes
    }

    pub fn internet_nodes(&self) -> &BTreeSet<DeviceId> {
        &self.internet_nodes
    }

    pub fn contains(&self, id: DeviceId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn is_online(&self, id: DeviceId) -> bool {
        self.internet_nodes.contains(&id)
    }

    pub fn neighbors(&self, id: DeviceId) -> impl Iterator<Item = DeviceId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, a: DeviceId, b: DeviceId) -> bool {
        self.adjacency
            .get(&a)
            .is_some_and(|n| n.binary_search(&b).is_ok())
    }

    /// Undirected edges, each once as `(smaller, larger)`.
    pub fn edges(&self) -> impl Iterator<Item = (DeviceId, DeviceId)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(a, ns)| ns.iter().filter(move |b| *b > a).map(move |b| (*a, *b)))
    }

    pub fn add_edge(&mut self, a: DeviceId, b: DeviceId) {
        if a == b {
            return;
        }
        for (x, y) in [(a, b), (b, a)] {
            let list = self.adjacency.entry(x).or_default();
            if let Err(pos) = list.binary_search(&y) {
                list.insert(pos, y);
            }
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
    }

    pub fn remove_edge(&mut self, a: DeviceId, b: DeviceId) {
        for (x, y) in [(a, b), (b, a)] {
            if let Some(list) = self.adjacency.get_mut(&x) {
                list.retain(|n| *n != y);
            }
        }
    }

    pub fn set_online(&mut self, id: DeviceId, online: bool) {
        if online {
            self.internet_nodes.insert(id);
        } else {
            self.internet_nodes.remove(&id);
        }
    }

    /// Hop distance from `source` to every node in its component.
    pub fn hop_distances(&self, source: DeviceId) -> BTreeMap<DeviceId, usize> {
        let mut dist = BTreeMap::new();
        if !self.contains(source) {
            return dist;
        }
        let mut queue = VecDeque::from([source]);
        dist.insert(source, 0);
        while let Some(cur) = queue.pop_front() {
            let d = dist[&cur];
            for next in self.neighbors(cur) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(next) {
                    e.insert(d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// Shortest offline path; among equal-length paths, the lexicographically
    /// smallest id sequence.
    pub fn shortest_path(&self, from: DeviceId, to: DeviceId) -> Option<Vec<DeviceId>> {
        let to_target = self.hop_distances(to);
        let mut remaining = *to_target.get(&from)?;
        let mut path = vec![from];
        let mut cur = from;
        while remaining > 0 {
            // neighbors iterate in id order, so the first hit is the smallest
            cur = self
                .neighbors(cur)
                .find(|n| to_target.get(n) == Some(&(remaining - 1)))?;
            path.push(cur);
            remaining -= 1;
        }
        Some(path)
    }

    /// Online node nearest to `from` by hops, ties to the smallest id.
    pub fn nearest_gateway(&self, from: DeviceId) -> Option<DeviceId> {
        self.hop_distances(from)
            .into_iter()
            .filter(|(id, _)| self.is_online(*id))
            .min_by_key(|(id, d)| (*d, *id))
            .map(|(id, _)| id)
    }

    /// Whether any online node shares a component with `id` (itself included).
    pub fn reaches_internet(&self, id: DeviceId) -> bool {
        self.nearest_gateway(id).is_some()
    }

    fn check(&self, id: DeviceId) -> Result<(), RoutingError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(RoutingError::UnknownDevice(id))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub hops: Vec<DeviceId>,
    pub kind: SessionKind,
}

impl Route {
    pub fn sender(&self) -> DeviceId {
        self.hops[0]
    }

    pub fn receiver(&self) -> DeviceId {
        *self.hops.last().expect("route has at least one hop")
    }

    /// Links traversed. The internet bridge counts as one.
    pub fn hop_count(&self) -> usize {
        self.hops.len().saturating_sub(1)
    }

    pub fn intermediates(&self) -> &[DeviceId] {
        if self.hops.len() <= 2 {
            &[]
        } else {
            &self.hops[1..self.hops.len() - 1]
        }
    }
}

pub fn find_route(graph: &MeshGraph, sender: DeviceId, receiver: DeviceId) -> Result<Route, RoutingError> {
    graph.check(sender)?;
    graph.check(receiver)?;
    if let Some(hops) = graph.shortest_path(sender, receiver) {
        return Ok(Route {
            hops,
            kind: SessionKind::Offline,
        });
    }
    let no_route = RoutingError::NoRoute {
        from: sender,
        to: receiver,
    };
    let out_gw = graph.nearest_gateway(sender).ok_or_else(|| no_route.clone())?;
    let in_gw = graph.nearest_gateway(receiver).ok_or(no_route)?;
    let mut hops = graph
        .shortest_path(sender, out_gw)
        .expect("gateway lies in the sender's component");
    hops.extend(
        graph
            .shortest_path(in_gw, receiver)
            .expect("gateway lies in the receiver's component"),
    );
    Ok(Route {
        hops,
        kind: SessionKind::Hybrid,
    })
}

pub fn classify_session(
    graph: &MeshGraph,
    sender: DeviceId,
    receiver: DeviceId,
    both_in_proximity: bool,
    policy: SessionPolicy,
) -> Result<SessionKind, RoutingError> {
    Ok(route_session(graph, sender, receiver, both_in_proximity, policy)?.kind)
}

/// Route for a session, honouring the internet preference for nearby online pairs.
pub fn route_session(
    graph: &MeshGraph,
    sender: DeviceId,
    receiver: DeviceId,
    both_in_proximity: bool,
    policy: SessionPolicy,
) -> Result<Route, RoutingError> {
    graph.check(sender)?;
    graph.check(receiver)?;
    if policy == SessionPolicy::PreferInternet
        && both_in_proximity
        && graph.is_online(sender)
        && graph.is_online(receiver)
    {
        return Ok(Route {
            hops: vec![sender, receiver],
            kind: SessionKind::OnlineProximity,
        });
    }
    find_route(graph, sender, receiver)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub envelope: SlowRevealEnvelope,
    pub route: Route,
    pub delivered_at: Tick,
}

/// Carry `envelope` along `route` over the current graph.
///
/// Relays forward the envelope as opaque bytes and log one `RelayHop` each.
/// Fails with `LinkDown` at the first link that no longer exists.
pub fn relay(
    graph: &MeshGraph,
    route: &Route,
    envelope: &SlowRevealEnvelope,
    log: &mut EventLog,
    now: Tick,
) -> Result<Delivery, RoutingError> {
    for (i, pair) in route.hops.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let bridged =
            route.kind != SessionKind::Offline && graph.is_online(a) && graph.is_online(b);
        if !graph.has_edge(a, b) && !bridged {
            return Err(RoutingError::LinkDown { from: a, to: b });
        }
        if i + 1 < route.hops.len() - 1 {
            log.push(Event::RelayHop {
                tick: now,
                key_id: envelope.key_id.0,
                node: b,
            });
        }
    }
    Ok(Delivery {
        envelope: envelope.clone(),
        route: route.clone(),
        delivered_at: now,
    })
}
