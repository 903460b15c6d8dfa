//! Scenario configuration: JSON text with sections `sim`, `trust`, `nodes`
//! or `node_generator`, `registry`, `triggers`, `interactions`, `messages`
//! and `epidemic`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Arena, DeviceNode, Mobility, Point, TriggerRules};
use crate::discovery::Registry;
use crate::epidemic::EpidemicParams;
use crate::messaging::RevealMode;
use crate::routing::SessionPolicy;
use crate::trust::{DeviceId, InteractionKind, ProfileKey, Tick, TrustModelParams};
use crate::validation::Violation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Mandatory; there is no wall-clock fallback.
    pub seed: Option<u64>,
    pub ticks_total: Tick,
    /// Simulated seconds per tick.
    pub tick_length: f64,
    pub arena: Arena,
    pub contact_radius: f64,
    pub session_policy: SessionPolicy,
    /// CSV of `tick,device_id,x,y` positions, relative to the working directory.
    pub mobility_trace: Option<String>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            seed: None,
            ticks_total: 1000,
            tick_length: 60.0,
            arena: Arena::default(),
            contact_radius: 5.0,
            session_policy: SessionPolicy::default(),
            mobility_trace: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: DeviceId,
    pub x: f64,
    pub y: f64,
    pub radio_range: f64,
    #[serde(default)]
    pub has_internet: bool,
    #[serde(default)]
    pub airplane_mode: bool,
    #[serde(default)]
    pub interests: BTreeSet<String>,
    #[serde(default)]
    pub apps: BTreeSet<String>,
    #[serde(default = "stationary")]
    pub mobility: Mobility,
}

fn stationary() -> Mobility {
    Mobility::Stationary
}

impl NodeSpec {
    pub fn to_node(&self) -> DeviceNode {
        DeviceNode {
            id: self.id,
            position: Point::new(self.x, self.y),
            radio_range: self.radio_range,
            has_internet: self.has_internet,
            airplane_mode: self.airplane_mode,
            interests: self.interests.clone(),
            apps: self.apps.clone(),
            mobility: self.mobility.clone(),
        }
    }
}

/// Random population drawn from the generator stream of the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeGenerator {
    pub count: usize,
    pub first_id: u64,
    pub radio_range: f64,
    pub internet_fraction: f64,
    /// Waypoint speed bounds in meters per tick.
    pub speed_min: f64,
    pub speed_max: f64,
    pub interest_pool: Vec<String>,
    pub interests_per_node: usize,
    pub app_pool: Vec<String>,
    pub apps_per_node: usize,
}

impl Default for NodeGenerator {
    fn default() -> Self {
        NodeGenerator {
            count: 50,
            first_id: 1,
            radio_range: 20.0,
            internet_fraction: 0.1,
            speed_min: 0.5,
            speed_max: 1.5,
            interest_pool: Vec::new(),
            interests_per_node: 0,
            app_pool: Vec::new(),
            apps_per_node: 0,
        }
    }
}

impl NodeGenerator {
    pub fn generate<R: Rng + ?Sized>(&self, arena: &Arena, rng: &mut R) -> Vec<DeviceNode> {
        (0..self.count as u64)
            .map(|i| {
                let p = arena.random_point(rng);
                let mut n = DeviceNode::new(self.first_id + i, p.x, p.y, self.radio_range);
                n.has_internet = rng.gen::<f64>() < self.internet_fraction;
                n.interests = pick(&self.interest_pool, self.interests_per_node, rng);
                n.apps = pick(&self.app_pool, self.apps_per_node, rng);
                let speed = self.speed_min + rng.gen::<f64>() * (self.speed_max - self.speed_min);
                n.mobility = Mobility::RandomWaypoint {
                    speed,
                    target: None,
                };
                n
            })
            .collect()
    }
}

fn pick<R: Rng + ?Sized>(pool: &[String], k: usize, rng: &mut R) -> BTreeSet<String> {
    pool.choose_multiple(rng, k.min(pool.len())).cloned().collect()
}

/// A sensed interaction injected at a fixed tick, e.g. a handshake.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedInteraction {
    pub tick: Tick,
    pub a: DeviceId,
    pub b: DeviceId,
    pub duration: Tick,
    pub distance: f64,
    pub kind: InteractionKind,
    pub quality: f64,
    /// Defaults to the kind's own profile.
    #[serde(default)]
    pub profile: Option<ProfileKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledMessage {
    pub tick: Tick,
    pub sender: DeviceId,
    pub receiver: DeviceId,
    pub text: String,
    #[serde(default = "one")]
    pub partitions: usize,
    #[serde(default)]
    pub tx_threshold: f64,
    #[serde(default)]
    pub rx_threshold: f64,
    #[serde(default = "one_f")]
    pub theta_full: f64,
    #[serde(default = "deterministic")]
    pub mode: RevealMode,
    #[serde(default)]
    pub profile: ProfileKey,
    /// Further ticks at which the receiver retries decoding.
    #[serde(default)]
    pub decode_at: Vec<Tick>,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn deterministic() -> RevealMode {
    RevealMode::Deterministic
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim: SimSection,
    pub trust: TrustModelParams,
    pub nodes: Option<Vec<NodeSpec>>,
    pub node_generator: Option<NodeGenerator>,
    pub registry: Registry,
    pub triggers: TriggerRules,
    pub interactions: Vec<ScriptedInteraction>,
    pub messages: Vec<ScheduledMessage>,
    pub epidemic: EpidemicParams,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config:\n{}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn violations(&self) -> Vec<Violation> {
        match self {
            ConfigError::Invalid(v) => v.clone(),
            ConfigError::Schema { path, message } => vec![Violation::new(path.clone(), message.clone())],
            other => vec![Violation::new("", other.to_string())],
        }
    }
}

/// Parse JSON text into a value, keeping line/column of syntax errors.
pub fn parse_value(text: &str) -> Result<Value, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Set `key=value` on a JSON tree. Keys are dotted paths; array elements are
/// addressed as `nodes[3]` or `nodes.3`. Values parse as JSON when they can
/// and are strings otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Override(assignment.to_string());
    let (key, raw) = assignment.split_once('=').ok_or_else(bad)?;
    let key = key.trim();
    if key.is_empty() {
        return Err(bad());
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<String> = key
        .replace('[', ".")
        .replace(']', "")
        .split('.')
        .map(str::to_string)
        .collect();
    let mut cur = root;
    for seg in &segments {
        if seg.is_empty() {
            return Err(bad());
        }
        cur = match cur {
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| bad())?;
                items.get_mut(i).ok_or_else(bad)?
            }
            Value::Object(map) => map.entry(seg.clone()).or_insert(Value::Null),
            slot @ Value::Null => {
                *slot = Value::Object(Default::default());
                slot.as_object_mut().unwrap().entry(seg.clone()).or_insert(Value::Null)
            }
            _ => return Err(bad()),
        };
    }
    *cur = value;
    Ok(())
}

impl ScenarioConfig {
    /// Parse, apply overrides, then validate.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = parse_value(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config = Self::from_value(value)?;
        let violations = config.validate();
        if violations.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn seed(&self) -> u64 {
        self.sim.seed.unwrap_or_default()
    }

    /// The nodes listed in the config, or the generated population.
    pub fn build_nodes<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DeviceNode> {
        match (&self.nodes, &self.node_generator) {
            (Some(nodes), _) => nodes.iter().map(NodeSpec::to_node).collect(),
            (None, Some(generator)) => generator.generate(&self.sim.arena, rng),
            (None, None) => Vec::new(),
        }
    }

    /// Ids known before the run starts, when the config lists them.
    fn listed_ids(&self) -> Option<BTreeSet<DeviceId>> {
        if let Some(nodes) = &self.nodes {
            return Some(nodes.iter().map(|n| n.id).collect());
        }
        self.node_generator.as_ref().map(|g| {
            (0..g.count as u64)
                .map(|i| DeviceId(g.first_id + i))
                .collect()
        })
    }

    /// Every violated constraint, with the path of the offending field.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: String, msg: &str| out.push(Violation::new(path, msg));

        let sim = &self.sim;
        if sim.seed.is_none() {
            bad("sim.seed".into(), "required");
        }
        if !(sim.tick_length.is_finite() && sim.tick_length > 0.0) {
            bad("sim.tick_length".into(), "must be > 0");
        }
        if !(sim.arena.width.is_finite() && sim.arena.width > 0.0) {
            bad("sim.arena.width".into(), "must be > 0");
        }
        if !(sim.arena.height.is_finite() && sim.arena.height > 0.0) {
            bad("sim.arena.height".into(), "must be > 0");
        }
        if !(sim.contact_radius.is_finite() && sim.contact_radius > 0.0) {
            bad("sim.contact_radius".into(), "must be > 0");
        }

        match (&self.nodes, &self.node_generator) {
            (None, None) => bad("nodes".into(), "either nodes or node_generator is required"),
            (Some(_), Some(_)) => bad("node_generator".into(), "give nodes or node_generator, not both"),
            _ => {}
        }
        if let Some(nodes) = &self.nodes {
            let mut seen = BTreeSet::new();
            for (i, n) in nodes.iter().enumerate() {
                let p = |f: &str| format!("nodes[{i}].{f}");
                if !seen.insert(n.id) {
                    bad(p("id"), "duplicate device id");
                }
                if !(n.radio_range.is_finite() && n.radio_range > 0.0) {
                    bad(p("radio_range"), "must be > 0");
                }
                if !sim.arena.contains(Point::new(n.x, n.y)) {
                    bad(p("x"), "position must lie inside the arena");
                }
                if !(n.mobility.speed().is_finite() && n.mobility.speed() >= 0.0) {
                    bad(p("mobility.speed"), "must be >= 0");
                }
            }
        }
        if let Some(g) = &self.node_generator {
            if g.count == 0 {
                bad("node_generator.count".into(), "must be >= 1");
            }
            if !(g.radio_range.is_finite() && g.radio_range > 0.0) {
                bad("node_generator.radio_range".into(), "must be > 0");
            }
            if !(0.0..=1.0).contains(&g.internet_fraction) {
                bad("node_generator.internet_fraction".into(), "must be in [0, 1]");
            }
            if !(g.speed_min >= 0.0 && g.speed_max >= g.speed_min && g.speed_max.is_finite()) {
                bad("node_generator.speed_max".into(), "need 0 <= speed_min <= speed_max");
            }
        }

        let ids = self.listed_ids().unwrap_or_default();
        let known = |id: &DeviceId| ids.contains(id);

        for (i, r) in self.triggers.instructions.iter().enumerate() {
            if !known(&r.device) {
                bad(format!("triggers.instructions[{i}].device"), "unknown device");
            }
        }
        for (i, f) in self.triggers.mode_flips.iter().enumerate() {
            if !known(&f.device) {
                bad(format!("triggers.mode_flips[{i}].device"), "unknown device");
            }
        }
        for (i, x) in self.interactions.iter().enumerate() {
            let p = |f: &str| format!("interactions[{i}].{f}");
            if !known(&x.a) {
                bad(p("a"), "unknown device");
            }
            if !known(&x.b) {
                bad(p("b"), "unknown device");
            }
            if x.a == x.b {
                bad(p("b"), "must differ from a");
            }
            if !(x.distance.is_finite() && x.distance >= 0.0) {
                bad(p("distance"), "must be >= 0");
            }
            if !(0.0..=1.0).contains(&x.quality) {
                bad(p("quality"), "must be in [0, 1]");
            }
        }
        for (i, m) in self.messages.iter().enumerate() {
            let p = |f: &str| format!("messages[{i}].{f}");
            if !known(&m.sender) {
                bad(p("sender"), "unknown device");
            }
            if !known(&m.receiver) {
                bad(p("receiver"), "unknown device");
            }
            if m.sender == m.receiver {
                bad(p("receiver"), "must differ from sender");
            }
            if m.text.is_empty() {
                bad(p("text"), "must not be empty");
            }
            if m.partitions == 0 {
                bad(p("partitions"), "must be >= 1");
            }
            for (f, v) in [
                ("tx_threshold", m.tx_threshold),
                ("rx_threshold", m.rx_threshold),
                ("theta_full", m.theta_full),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    bad(p(f), "must be in [0, 1]");
                }
            }
            if m.rx_threshold > m.theta_full {
                bad(p("theta_full"), "must be >= rx_threshold");
            }
            if let RevealMode::Probabilistic { temperature } = m.mode {
                if !(temperature.is_finite() && temperature > 0.0) {
                    bad(p("mode.temperature"), "must be > 0");
                }
            }
            if m.decode_at.iter().any(|t| *t < m.tick) {
                bad(p("decode_at"), "decode ticks must not precede the send tick");
            }
        }
        for (zone, members) in &self.registry.zones {
            for (i, m) in members.iter().enumerate() {
                if !known(&m.id) {
                    bad(format!("registry.zones.{zone}[{i}].id"), "unknown device");
                }
            }
        }

        out.extend(self.trust.validate("trust"));
        out.extend(self.epidemic.validate("epidemic"));
        let ep = &self.epidemic;
        for (i, id) in ep.initial_infected.iter().enumerate() {
            if !ids.contains(id) {
                out.push(Violation::new(format!("epidemic.initial_infected[{i}]"), "unknown device"));
            }
        }
        if ep.initial_infected.is_empty() && ep.initial_infected_count > ids.len() {
            out.push(Violation::new(
                "epidemic.initial_infected_count",
                "exceeds the population",
            ));
        }
        if let Some(id) = ep.trace_index {
            if !ids.contains(&id) {
                out.push(Violation::new("epidemic.trace_index", "unknown device"));
            }
        }
        out
    }
}

/// Ids of the initially infectious devices.
pub fn pick_initial_infected<R: Rng + ?Sized>(
    params: &EpidemicParams,
    population: &[DeviceId],
    rng: &mut R,
) -> Vec<DeviceId> {
    let mut out: Vec<DeviceId> = if params.initial_infected.is_empty() {
        population
            .choose_multiple(rng, params.initial_infected_count.min(population.len()))
            .copied()
            .collect()
    } else {
        params.initial_infected.clone()
    };
    out.sort();
    out.dedup();
    out
}

/// Protocol adoption, one draw per device in id order.
pub fn draw_adopters<R: Rng + ?Sized>(rate: f64, population: &[DeviceId], rng: &mut R) -> BTreeSet<DeviceId> {
    population
        .iter()
        .filter(|_| rng.gen::<f64>() < rate)
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "sim": {"seed": 7, "ticks_total": 10},
        "nodes": [
            {"id": 1, "x": 0, "y": 0, "radio_range": 10},
            {"id": 2, "x": 3, "y": 0, "radio_range": 10}
        ]
    }"#;

    #[test]
    fn minimal_config_is_valid() {
        let c = ScenarioConfig::load(MINIMAL, &[]).unwrap();
        assert_eq!(c.seed(), 7);
        assert_eq!(c.nodes.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn missing_seed_is_reported() {
        let err = ScenarioConfig::load(r#"{"nodes": []}"#, &[]).unwrap_err();
        let v = err.violations();
        assert!(v.iter().any(|x| x.to_string() == "sim.seed required"), "{v:?}");
    }

    #[test]
    fn negative_range_names_the_node() {
        let err = ScenarioConfig::load(MINIMAL, &["nodes[1].radio_range=-2".into()]).unwrap_err();
        let paths: Vec<_> = err.violations().into_iter().map(|v| v.path).collect();
        assert_eq!(paths, ["nodes[1].radio_range"]);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ScenarioConfig::load(
            MINIMAL,
            &["epidemic.beta=0.5".into(), "sim.seed=99".into(), "epidemic.mode=trust_proxy".into()],
        )
        .unwrap();
        assert_eq!(c.epidemic.beta, 0.5);
        assert_eq!(c.seed(), 99);
        assert_eq!(c.epidemic.mode, crate::epidemic::TransmissionMode::TrustProxy);
    }

    #[test]
    fn malformed_override() {
        assert!(matches!(
            ScenarioConfig::load(MINIMAL, &["epidemic.beta".into()]),
            Err(ConfigError::Override(_))
        ));
        assert!(matches!(
            ScenarioConfig::load(MINIMAL, &["nodes[7].x=1".into()]),
            Err(ConfigError::Override(_))
        ));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match ScenarioConfig::load("{\n  \"sim\": {,}\n}", &[]) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_path() {
        match ScenarioConfig::load(r#"{"sim": {"seed": "x"}}"#, &[]) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "sim.seed"),
            other => panic!("{other:?}"),
        }
        match ScenarioConfig::load(r#"{"epidemic": {"betta": 1}}"#, &[]) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "epidemic.betta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_references_are_flagged() {
        let text = r#"{
            "sim": {"seed": 1},
            "nodes": [{"id": 1, "x": 0, "y": 0, "radio_range": 5}],
            "messages": [{"tick": 0, "sender": 1, "receiver": 4, "text": "hi"}],
            "epidemic": {"initial_infected": [9]}
        }"#;
        let paths: Vec<_> = ScenarioConfig::load(text, &[])
            .unwrap_err()
            .violations()
            .into_iter()
            .map(|v| v.path)
            .collect();
        assert_eq!(paths, ["messages[0].receiver", "epidemic.initial_infected[0]"]);
    }
}
