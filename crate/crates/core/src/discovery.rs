//! Simulated peer discovery: range-limited advertisement scanning plus an
//! in-memory zone registry that stands in for an online social network.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::DeviceNode;
use crate::trust::{DeviceId, ProfileKey, TrustStore};

/// Most topics one advertising packet can carry.
pub const MAX_ADVERTISED_TOPICS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum DiscoveryError {
    #[error("unknown registry zone `{0}`")]
    UnknownZone(String),
    #[error("advertising packet holds at most {MAX_ADVERTISED_TOPICS} topics, got {0}")]
    TooManyTopics(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvertisingPacket {
    pub device: DeviceId,
    pub topics: BTreeSet<String>,
    pub accepts_relay: bool,
    pub has_internet: bool,
}

impl AdvertisingPacket {
    pub fn new(
        device: DeviceId,
        topics: BTreeSet<String>,
        accepts_relay: bool,
        has_internet: bool,
    ) -> Result<Self, DiscoveryError> {
        if topics.len() > MAX_ADVERTISED_TOPICS {
            return Err(DiscoveryError::TooManyTopics(topics.len()));
        }
        Ok(AdvertisingPacket {
            device,
            topics,
            accepts_relay,
            has_internet,
        })
    }

    /// The packet a node broadcasts. Interests beyond the packet budget are
    /// dropped in sort order.
    pub fn from_node(node: &DeviceNode) -> Self {
        AdvertisingPacket {
            device: node.id,
            topics: node
                .interests
                .iter()
                .take(MAX_ADVERTISED_TOPICS)
                .cloned()
                .collect(),
            accepts_relay: true,
            has_internet: node.online(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscoveryChannel {
    Offline,
    OnlineRegistry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub peer: DeviceId,
    pub distance: f64,
    pub via: DiscoveryChannel,
    /// Topics the peer advertised (offline) or registered (online).
    pub advertised_topics: BTreeSet<String>,
    pub matched_topics: BTreeSet<String>,
    pub previously_known: bool,
    pub directly_reachable: bool,
}

/// Every other node within the scanner's radio range, ordered by id.
pub fn scan(scanner: &DeviceNode, world: &[DeviceNode], store: &TrustStore) -> Vec<DiscoveryResult> {
    let profile = ProfileKey::default();
    let mut out: Vec<DiscoveryResult> = world
        .iter()
        .filter(|n| n.id != scanner.id)
        .filter_map(|n| {
            let distance = scanner.distance_to(n);
            (distance <= scanner.radio_range).then(|| DiscoveryResult {
                peer: n.id,
                distance,
                via: DiscoveryChannel::Offline,
                advertised_topics: AdvertisingPacket::from_node(n).topics,
                matched_topics: BTreeSet::new(),
                previously_known: store.contains(scanner.id, n.id, &profile),
                directly_reachable: true,
            })
        })
        .collect();
    out.sort_by_key(|r| r.peer);
    out
}

/// Keep results whose advertised topics include `topic`.
pub fn topic_filter(results: Vec<DiscoveryResult>, topic: &str) -> Vec<DiscoveryResult> {
    results
        .into_iter()
        .filter(|r| r.advertised_topics.contains(topic))
        .map(|mut r| {
            r.matched_topics.insert(topic.to_string());
            r
        })
        .collect()
}

/// Scan restricted to peers advertising `topic`.
pub fn scan_topic(
    scanner: &DeviceNode,
    world: &[DeviceNode],
    store: &TrustStore,
    topic: &str,
) -> Vec<DiscoveryResult> {
    let profile = ProfileKey::default();
    let mut out = Vec::new();
    for n in world.iter().filter(|n| n.id != scanner.id) {
        let packet = AdvertisingPacket::from_node(n);
        if !packet.topics.contains(topic) {
            continue;
        }
        let distance = scanner.distance_to(n);
        if distance > scanner.radio_range {
            continue;
        }
        out.push(DiscoveryResult {
            peer: n.id,
            distance,
            via: DiscoveryChannel::Offline,
            advertised_topics: packet.topics,
            matched_topics: [topic.to_string()].into(),
            previously_known: store.contains(scanner.id, n.id, &profile),
            directly_reachable: true,
        });
    }
    out.sort_by_key(|r| r.peer);
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryMember {
    pub id: DeviceId,
    #[serde(default)]
    pub interests: BTreeSet<String>,
}

/// Zone name to registered members.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    #[serde(default)]
    pub zones: BTreeMap<String, Vec<RegistryMember>>,
}

impl Registry {
    pub fn add(&mut self, zone: &str, id: DeviceId, interests: &[&str]) {
        self.zones
            .entry(zone.to_string())
            .or_default()
            .push(RegistryMember {
                id,
                interests: interests.iter().map(|s| s.to_string()).collect(),
            });
    }
}

pub fn registry_lookup(
    registry: &Registry,
    zone: &str,
    topic: &str,
) -> Result<Vec<DeviceId>, DiscoveryError> {
    let members = registry
        .zones
        .get(zone)
        .ok_or_else(|| DiscoveryError::UnknownZone(zone.to_string()))?;
    let ids: BTreeSet<DeviceId> = members
        .iter()
        .filter(|m| m.interests.contains(topic))
        .map(|m| m.id)
        .collect();
    Ok(ids.into_iter().collect())
}

/// Registry matches for `topic` in `zone`, as discovery results. Offline and
/// online results for the same peer are not merged.
pub fn discover_online(
    scanner: &DeviceNode,
    world: &[DeviceNode],
    store: &TrustStore,
    registry: &Registry,
    zone: &str,
    topic: &str,
) -> Result<Vec<DiscoveryResult>, DiscoveryError> {
    let profile = ProfileKey::default();
    let ids = registry_lookup(registry, zone, topic)?;
    let registered: BTreeMap<DeviceId, &RegistryMember> = registry.zones[zone]
        .iter()
        .map(|m| (m.id, m))
        .collect();
    Ok(ids
        .into_iter()
        .filter(|id| *id != scanner.id)
        .filter_map(|id| {
            let node = world.iter().find(|n| n.id == id)?;
            let distance = scanner.distance_to(node);
            Some(DiscoveryResult {
                peer: id,
                distance,
                via: DiscoveryChannel::OnlineRegistry,
                advertised_topics: registered[&id].interests.clone(),
                matched_topics: [topic.to_string()].into(),
                previously_known: store.contains(scanner.id, id, &profile),
                directly_reachable: distance <= scanner.radio_range.min(node.radio_range),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TrustModelParams;

    fn store() -> TrustStore {
        TrustStore::new(TrustModelParams::default())
    }

    fn ids(results: &[DiscoveryResult]) -> Vec<u64> {
        results.iter().map(|r| r.peer.0).collect()
    }

    #[test]
    fn scan_respects_range() {
        let me = DeviceNode::new(1, 0.0, 0.0, 10.0);
        let world = vec![
            me.clone(),
            DeviceNode::new(2, 5.0, 0.0, 10.0),
            DeviceNode::new(3, 15.0, 0.0, 10.0),
        ];
        let found = scan(&me, &world, &store());
        assert_eq!(ids(&found), [2]);
        assert!(found[0].directly_reachable);
        assert_eq!(found[0].via, DiscoveryChannel::Offline);
    }

    #[test]
    fn scan_alone_is_empty() {
        let me = DeviceNode::new(1, 0.0, 0.0, 10.0);
        assert!(scan(&me, std::slice::from_ref(&me), &store()).is_empty());
    }

    #[test]
    fn scan_orders_by_id_and_flags_known_peers() {
        let me = DeviceNode::new(1, 0.0, 0.0, 10.0);
        let world = vec![
            DeviceNode::new(7, 1.0, 0.0, 10.0),
            me.clone(),
            DeviceNode::new(2, 2.0, 0.0, 10.0),
            DeviceNode::new(9, 3.0, 0.0, 10.0),
        ];
        let mut s = store();
        s.set(DeviceId(1), DeviceId(9), ProfileKey::default(), 0.3, 0);
        let found = scan(&me, &world, &s);
        assert_eq!(ids(&found), [2, 7, 9]);
        assert_eq!(
            found.iter().map(|r| r.previously_known).collect::<Vec<_>>(),
            [false, false, true]
        );
    }

    #[test]
    fn topic_filter_examples() {
        let me = DeviceNode::new(1, 0.0, 0.0, 10.0);
        let world = vec![
            me.clone(),
            DeviceNode::new(2, 1.0, 0.0, 10.0).with_interests(["coffee"]),
            DeviceNode::new(3, 1.0, 1.0, 10.0).with_interests(["tea"]),
        ];
        let coffee = topic_filter(scan(&me, &world, &store()), "coffee");
        assert_eq!(ids(&coffee), [2]);
        assert!(coffee[0].matched_topics.contains("coffee"));

        let bare = vec![me.clone(), DeviceNode::new(2, 1.0, 0.0, 10.0)];
        assert!(topic_filter(scan(&me, &bare, &store()), "coffee").is_empty());

        let both = vec![
            me.clone(),
            DeviceNode::new(5, 1.0, 0.0, 10.0).with_interests(["coffee", "tea"]),
            DeviceNode::new(4, 1.0, 1.0, 10.0).with_interests(["coffee"]),
        ];
        assert_eq!(ids(&topic_filter(scan(&me, &both, &store()), "coffee")), [4, 5]);
    }

    #[test]
    fn packet_budget() {
        let topics: BTreeSet<String> = (0..17).map(|i| format!("t{i:02}")).collect();
        assert_eq!(
            AdvertisingPacket::new(DeviceId(1), topics.clone(), true, false),
            Err(DiscoveryError::TooManyTopics(17))
        );
        let node = DeviceNode::new(1, 0.0, 0.0, 1.0).with_interests(topics);
        assert_eq!(AdvertisingPacket::from_node(&node).topics.len(), MAX_ADVERTISED_TOPICS);
    }

    #[test]
    fn registry_examples() {
        let mut reg = Registry::default();
        reg.add("coffee-shop", DeviceId(8), &["coffee"]);
        reg.add("coffee-shop", DeviceId(3), &["coffee", "jazz"]);
        reg.add("coffee-shop", DeviceId(5), &["tea"]);
        assert_eq!(
            registry_lookup(&reg, "coffee-shop", "coffee").unwrap(),
            [DeviceId(3), DeviceId(8)]
        );
        assert_eq!(
            registry_lookup(&reg, "library", "coffee"),
            Err(DiscoveryError::UnknownZone("library".into()))
        );
        assert!(registry_lookup(&reg, "coffee-shop", "chess").unwrap().is_empty());
    }

    #[test]
    fn online_discovery_marks_reachability() {
        let mut reg = Registry::default();
        reg.add("cafe", DeviceId(2), &["coffee"]);
        reg.add("cafe", DeviceId(3), &["coffee"]);
        let me = DeviceNode::new(1, 0.0, 0.0, 10.0);
        let world = vec![
            me.clone(),
            DeviceNode::new(2, 5.0, 0.0, 10.0),
            DeviceNode::new(3, 50.0, 0.0, 10.0),
        ];
        let found = discover_online(&me, &world, &store(), &reg, "cafe", "coffee").unwrap();
        assert_eq!(ids(&found), [2, 3]);
        assert!(found.iter().all(|r| r.via == DiscoveryChannel::OnlineRegistry));
        assert!(found[0].directly_reachable);
        assert!(!found[1].directly_reachable);
    }
}
