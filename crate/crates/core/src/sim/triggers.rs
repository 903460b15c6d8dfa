use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::DeviceNode;
use crate::routing::MeshGraph;
use crate::trust::{DeviceId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    UserInstruction,
    NoInfrastructure,
    PeersInProximity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedInstruction {
    pub tick: Tick,
    pub device: DeviceId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFlip {
    pub tick: Tick,
    pub device: DeviceId,
    pub airplane: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerRules {
    pub no_infrastructure: bool,
    /// Fire when at least this many peers are within radio range.
    pub peers_in_proximity: Option<usize>,
    pub instructions: Vec<ScriptedInstruction>,
    /// Airplane-mode changes, applied at the start of their tick.
    pub mode_flips: Vec<ModeFlip>,
}

impl Default for TriggerRules {
    fn default() -> Self {
        TriggerRules {
            no_infrastructure: true,
            peers_in_proximity: Some(3),
            instructions: Vec::new(),
            mode_flips: Vec::new(),
        }
    }
}

/// Per-tick connectivity the trigger conditions look at.
pub struct TriggerWorld<'a> {
    pub graph: &'a MeshGraph,
    /// Nodes sharing a mesh component with some online node.
    pub reaches_internet: HashSet<DeviceId>,
}

impl<'a> TriggerWorld<'a> {
    pub fn new(graph: &'a MeshGraph) -> Self {
        let mut seen: HashSet<DeviceId> = graph.internet_nodes().iter().copied().collect();
        let mut queue: VecDeque<DeviceId> = seen.iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            for m in graph.neighbors(n) {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        TriggerWorld {
            graph,
            reaches_internet: seen,
        }
    }
}

/// Conditions that hold for `node` at `now`, in kind order.
pub fn evaluate_triggers(
    world: &TriggerWorld<'_>,
    node: &DeviceNode,
    now: Tick,
    rules: &TriggerRules,
) -> Vec<TriggerKind> {
    let mut out = Vec::new();
    if rules
        .instructions
        .iter()
        .any(|i| i.tick == now && i.device == node.id)
    {
        out.push(TriggerKind::UserInstruction);
    }
    if rules.no_infrastructure && !world.reaches_internet.contains(&node.id) {
        out.push(TriggerKind::NoInfrastructure);
    }
    if let Some(n) = rules.peers_in_proximity {
        if world.graph.neighbors(node.id).count() >= n {
            out.push(TriggerKind::PeersInProximity);
        }
    }
    out
}

/// Reports conditions only when they start to hold. Scripted instructions
/// are events rather than conditions and always pass through.
#[derive(Clone, Debug, Default)]
pub struct TriggerTracker {
    active: BTreeMap<DeviceId, BTreeSet<TriggerKind>>,
}

impl TriggerTracker {
    pub fn rising(&mut self, device: DeviceId, holding: &[TriggerKind]) -> Vec<TriggerKind> {
        let now: BTreeSet<TriggerKind> = holding.iter().copied().collect();
        let before = self.active.insert(device, now.clone()).unwrap_or_default();
        holding
            .iter()
            .copied()
            .filter(|k| *k == TriggerKind::UserInstruction || !before.contains(k))
            .collect()
    }
}
