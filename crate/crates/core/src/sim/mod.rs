//! Deterministic, single-threaded simulation.
//!
//! Each tick runs the same phases in a fixed order: mode flips, mobility,
//! contact detection, triggers and discovery, trust updates, scheduled
//! messages, then the epidemic step. All randomness comes from per-concern
//! streams derived from the scenario seed, so `(seed, config)` fixes the log.

mod config;
mod contacts;
mod mobility;
mod node;
mod triggers;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use config::{
    apply_override, draw_adopters, parse_value, pick_initial_infected, ConfigError, NodeGenerator,
    NodeSpec, ScenarioConfig, ScheduledMessage, ScriptedInteraction, SimSection,
};
pub use contacts::{ActiveContact, ContactRecord, ContactTracker};
pub use mobility::{step_mobility, Arena, MobilityTrace, TraceLoadError};
pub use node::{DeviceNode, Mobility, Point};
pub use triggers::{
    evaluate_triggers, ModeFlip, ScriptedInstruction, TriggerKind, TriggerRules, TriggerTracker,
    TriggerWorld,
};

use crate::discovery::scan;
use crate::epidemic::{
    edge_coverage, infection_step, issue_alerts, Alert, AlertContext, CompartmentCounts,
    Confirmation, EpidemicParams, EpidemicState, TraceContext, TraceError, TraceMode, TraceReport,
    Transmission, TransmissionMode, TrustHistory,
};
use crate::log::{Event, EventLog, LogError, LogHeader, LOG_VERSION};
use crate::messaging::{
    encode, send, splitmix64, EnvelopeHeader, KeyIssuer, MessagingError, RevealLedger, RevealPlan,
    SecurityKey, SlowRevealEnvelope,
};
use crate::routing::{build_mesh, relay, route_session, MeshGraph, RoutingError};
use crate::trust::{
    observe_interaction, overlap_score, proximity_score, DeviceId, InteractionEvent,
    ProfileKey, SessionContext, Tick, TrustStore,
};

/// Independent random streams, one per concern, so that e.g. adding a
/// message does not shift the mobility draws.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
enum Stream {
    Generator = 1,
    Adoption,
    Seeding,
    Mobility,
    Epidemic,
    Keys,
    Reveal,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ which as u64))
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("mobility trace {path}: {source}")]
    MobilityTrace { path: String, source: TraceLoadError },
    #[error("mobility trace {path}: {source}")]
    MobilityTraceIo { path: String, source: io::Error },
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Recorded in the log header; callers hash the config bytes.
    pub config_hash: String,
}

/// Everything a run produced.
pub struct SimReport {
    pub log: EventLog,
    /// Compartment counts after each tick's epidemic step.
    pub compartments: Vec<(Tick, CompartmentCounts)>,
    pub trust: TrustStore,
    pub epidemic: EpidemicState,
    pub adopters: BTreeSet<DeviceId>,
    pub initial_infected: Vec<DeviceId>,
    pub nodes: Vec<DeviceNode>,
    /// Bidirectional trace of the index case at the end of the run.
    pub trace: Option<TraceReport>,
    pub forward_trace: Option<TraceReport>,
    /// Why there is no trace, or why it is partial.
    pub trace_note: Option<String>,
    pub alerts: Vec<Alert>,
}

/// Headline numbers of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub attack_rate: f64,
    pub coverage_bidirectional: f64,
    pub coverage_forward: f64,
    /// 1 when the estimated patient zero was initially infected, else 0.
    pub patient_zero_hit: f64,
}

impl SimReport {
    pub fn summary(&self) -> RunSummary {
        let fallback = edge_coverage(&BTreeSet::new(), self.epidemic.ledger());
        let hit = self
            .trace
            .as_ref()
            .and_then(|t| t.patient_zero_estimate)
            .is_some_and(|p| self.initial_infected.contains(&p));
        RunSummary {
            seed: self.log.header().map_or(0, |h| h.seed),
            attack_rate: self.epidemic.attack_rate(),
            coverage_bidirectional: self.trace.as_ref().map_or(fallback, |t| t.coverage),
            coverage_forward: self.forward_trace.as_ref().map_or(fallback, |t| t.coverage),
            patient_zero_hit: if hit { 1.0 } else { 0.0 },
        }
    }

    pub fn compartments_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tick", "S", "E", "I", "R"]).expect("in-memory write");
        for (t, c) in &self.compartments {
            w.write_record([t, &(c.s as u64), &(c.e as u64), &(c.i as u64), &(c.r as u64)].map(|v| v.to_string()))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn alerts_jsonl(&self) -> String {
        self.alerts
            .iter()
            .map(|a| serde_json::to_string(a).expect("alerts serialize") + "\n")
            .collect()
    }

    pub fn trace_json(&self) -> String {
        serde_json::to_string_pretty(&self.trace).expect("report serializes") + "\n"
    }

    /// Write the run artifacts into `dir` and return their paths.
    pub fn write_outputs(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            ("events.jsonl", self.log.to_jsonl()),
            ("compartments.csv", self.compartments_csv()),
            ("trust_snapshot.jsonl", self.trust.to_jsonl()),
            ("alerts.jsonl", self.alerts_jsonl()),
            ("trace_report.json", self.trace_json()),
        ];
        let mut out = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body)?;
            out.push(path);
        }
        Ok(out)
    }
}

struct PendingReveal {
    envelope: SlowRevealEnvelope,
    key: SecurityKey,
}

struct World<'c> {
    config: &'c ScenarioConfig,
    nodes: Vec<DeviceNode>,
    index_of: BTreeMap<DeviceId, usize>,
    store: TrustStore,
    log: EventLog,
}

impl World<'_> {
    fn node(&self, id: DeviceId) -> &DeviceNode {
        &self.nodes[self.index_of[&id]]
    }

    fn record_trust(&mut self, from: DeviceId, to: DeviceId, profile: &ProfileKey, score: f64, tick: Tick) {
        self.log.push(Event::TrustUpdate {
            tick,
            from,
            to,
            profile: profile.clone(),
            score,
        });
    }

    /// Both sides fold the interaction into their own score for the other.
    fn observe(&mut self, a: DeviceId, b: DeviceId, profile: &ProfileKey, make: impl Fn(DeviceId, DeviceId) -> InteractionEvent) {
        for (me, peer) in [(a, b), (b, a)] {
            let ctx = session_context(self.node(me), self.node(peer));
            let event = make(me, peer);
            let score = observe_interaction(&mut self.store, me, peer, profile, &ctx, &event);
            self.record_trust(me, peer, profile, score, event.time);
        }
    }

    fn apply_contact(&mut self, c: &ContactRecord, now: Tick) {
        let params = self.store.params().clone();
        let quality = proximity_score(c.duration, c.mean_distance, &params);
        self.observe(c.a, c.b, &ProfileKey::default(), |me, peer| {
            InteractionEvent::new(me, peer, now, c.duration, c.mean_distance, c.kind, quality)
                .expect("contact pairs are distinct with finite distance")
        });
    }
}

/// Overlap factors count only when both sides declared something.
fn session_context(me: &DeviceNode, peer: &DeviceNode) -> SessionContext {
    let factor = |x: &BTreeSet<String>, y: &BTreeSet<String>| {
        (!x.is_empty() && !y.is_empty()).then(|| overlap_score(x, y))
    };
    SessionContext {
        interest_overlap: factor(&me.interests, &peer.interests),
        app_overlap: factor(&me.apps, &peer.apps),
    }
}

fn load_trace(path: &str) -> Result<MobilityTrace, SimError> {
    let file = fs::File::open(path).map_err(|source| SimError::MobilityTraceIo {
        path: path.to_string(),
        source,
    })?;
    MobilityTrace::from_csv(file).map_err(|source| SimError::MobilityTrace {
        path: path.to_string(),
        source,
    })
}

/// Run a validated scenario to completion.
pub fn run(config: &ScenarioConfig, opts: &RunOptions) -> Result<SimReport, SimError> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations).into());
    }
    let seed = config.seed();
    let sim = &config.sim;
    let ep = &config.epidemic;
    let trace = match &sim.mobility_trace {
        Some(path) => Some(load_trace(path)?),
        None => None,
    };

    let mut nodes = config.build_nodes(&mut stream(seed, Stream::Generator));
    nodes.sort_by_key(|n| n.id);
    build_mesh(&nodes)?;
    let population: Vec<DeviceId> = nodes.iter().map(|n| n.id).collect();
    let adopters = draw_adopters(ep.adoption_rate, &population, &mut stream(seed, Stream::Adoption));
    let initial_infected = pick_initial_infected(ep, &population, &mut stream(seed, Stream::Seeding));

    let mut epi = EpidemicState::new(population.iter().copied());
    for &id in &initial_infected {
        epi.seed_infectious(id, 0);
    }
    let mut log = EventLog::new();
    log.push(Event::Header(Box::new(LogHeader {
        version: LOG_VERSION,
        seed,
        config_hash: opts.config_hash.clone(),
        population: population.clone(),
        ticks_total: sim.ticks_total,
        tick_length: sim.tick_length,
        adopters: adopters.iter().copied().collect(),
        initial_infected: initial_infected.clone(),
        trust_params: config.trust.clone(),
        epidemic: ep.clone(),
    })));

    let mut world = World {
        config,
        index_of: nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect(),
        nodes,
        store: TrustStore::new(config.trust.clone()),
        log,
    };

    let mut mobility_rng = stream(seed, Stream::Mobility);
    let mut epidemic_rng = stream(seed, Stream::Epidemic);
    let mut reveal_rng = stream(seed, Stream::Reveal);
    let mut keys = KeyIssuer::new(splitmix64(seed ^ Stream::Keys as u64));
    let mut reveals = RevealLedger::new();
    let mut pending: Vec<PendingReveal> = Vec::new();
    let mut decode_schedule: BTreeMap<Tick, Vec<usize>> = BTreeMap::new();
    let mut contacts = ContactTracker::new(sim.contact_radius);
    let mut trigger_edges = TriggerTracker::default();
    let mut compartments = Vec::with_capacity(sim.ticks_total as usize);

    let by_tick = |t: Tick| move |x: &&ScriptedInteraction| x.tick == t;

    for now in 0..sim.ticks_total {
        for flip in config.triggers.mode_flips.iter().filter(|f| f.tick == now) {
            let i = world.index_of[&flip.device];
            world.nodes[i].airplane_mode = flip.airplane;
            world.log.push(Event::ModeFlip {
                tick: now,
                device: flip.device,
                airplane: flip.airplane,
            });
        }

        if now > 0 {
            for n in world.nodes.iter_mut() {
                step_mobility(n, &sim.arena, &mut mobility_rng);
            }
        }
        if let Some(trace) = &trace {
            for (id, p) in trace.at(now) {
                if let Some(&i) = world.index_of.get(id) {
                    world.nodes[i].position = sim.arena.clamp(*p);
                }
            }
        }

        let (active, closed) = contacts.detect(&world.nodes, now);
        for record in &closed {
            world.log.push(Event::Contact {
                tick: now,
                record: record.clone(),
            });
        }

        let graph = build_mesh(&world.nodes)?;
        fire_triggers(&mut world, &graph, &mut trigger_edges, now);

        for record in &closed {
            world.apply_contact(record, now);
        }
        for x in config.interactions.iter().filter(by_tick(now)) {
            let profile = x.profile.clone().unwrap_or_else(|| x.kind.default_profile());
            world.observe(x.a, x.b, &profile, |me, peer| {
                InteractionEvent::new(me, peer, now, x.duration, x.distance, x.kind, x.quality)
                    .expect("validated interaction")
            });
        }

        for m in config.messages.iter().filter(|m| m.tick == now) {
            if let Some(p) = send_message(&mut world, &graph, m, &mut keys, now) {
                pending.push(p);
                let idx = pending.len() - 1;
                for &t in m.decode_at.iter().filter(|t| **t > now) {
                    decode_schedule.entry(t).or_default().push(idx);
                }
                decode(&mut world, &mut reveals, &pending[idx], now, &mut reveal_rng);
            }
        }
        if let Some(due) = decode_schedule.remove(&now) {
            for idx in due {
                decode(&mut world, &mut reveals, &pending[idx], now, &mut reveal_rng);
            }
        }

        let out = infection_step(&mut epi, &active, &world.store, ep, &config.trust, now, &mut epidemic_rng);
        for t in &out.exposures {
            world.log.push(Event::Exposure {
                tick: now,
                infector: t.infector,
                infectee: t.infectee,
            });
        }
        for &device in &out.onsets {
            world.log.push(Event::Onset { tick: now, device });
        }
        for &(device, onset) in &out.confirmations {
            world.log.push(Event::Confirmed {
                tick: now,
                device,
                onset,
            });
        }
        for &device in &out.recoveries {
            world.log.push(Event::Recovery { tick: now, device });
        }
        compartments.push((now, epi.counts()));
    }

    let end = sim.ticks_total;
    if end > 0 {
        for record in contacts.flush() {
            world.log.push(Event::Contact {
                tick: end,
                record: record.clone(),
            });
            world.apply_contact(&record, end);
        }
    }

    let mut report = SimReport {
        compartments,
        epidemic: epi,
        adopters,
        initial_infected,
        trace: None,
        forward_trace: None,
        trace_note: None,
        alerts: Vec::new(),
        log: EventLog::new(),
        trust: TrustStore::new(config.trust.clone()),
        nodes: Vec::new(),
    };
    if end > 0 {
        end_of_run_trace(&world, &mut report, &mut keys, end);
    }
    report.log = world.log;
    report.trust = world.store;
    report.nodes = world.nodes;
    Ok(report)
}

fn fire_triggers(world: &mut World<'_>, graph: &MeshGraph, edges: &mut TriggerTracker, now: Tick) {
    let tw = TriggerWorld::new(graph);
    let mut scans = Vec::new();
    for node in &world.nodes {
        let holding = evaluate_triggers(&tw, node, now, &world.config.triggers);
        let fired = edges.rising(node.id, &holding);
        if fired.is_empty() {
            continue;
        }
        for trigger in fired {
            scans.push(Event::Trigger {
                tick: now,
                device: node.id,
                trigger,
            });
        }
        let found = scan(node, &world.nodes, &world.store);
        scans.push(Event::Discovery {
            tick: now,
            device: node.id,
            peers: found.iter().map(|r| r.peer).collect(),
            previously_known: found.iter().filter(|r| r.previously_known).count(),
        });
    }
    for e in scans {
        world.log.push(e);
    }
}

fn send_message(
    world: &mut World<'_>,
    graph: &MeshGraph,
    m: &ScheduledMessage,
    keys: &mut KeyIssuer,
    now: Tick,
) -> Option<PendingReveal> {
    let key = keys.issue();
    let plan = RevealPlan {
        partitions: m.partitions,
        tx_threshold: m.tx_threshold,
        rx_threshold: m.rx_threshold,
        theta_full: m.theta_full,
        mode: m.mode,
    };
    let header = EnvelopeHeader::new(m.sender, m.receiver, now).with_profile(m.profile.clone());
    let envelope = encode(m.text.as_bytes(), &plan, &key, header).expect("validated message");
    let failed = |reason: String| Event::DeliveryFailed {
        tick: now,
        key_id: key.key_id.0,
        sender: m.sender,
        receiver: m.receiver,
        reason,
    };
    match send(&world.store, &envelope, now) {
        Err(MessagingError::BelowTransmissionThreshold { score, required }) => {
            world.log.push(Event::MessageBlocked {
                tick: now,
                key_id: key.key_id.0,
                sender: m.sender,
                receiver: m.receiver,
                score,
                required,
            });
            return None;
        }
        Err(e) => {
            world.log.push(failed(e.to_string()));
            return None;
        }
        Ok(_) => {}
    }
    let nearby = graph.has_edge(m.sender, m.receiver);
    let delivered = route_session(graph, m.sender, m.receiver, nearby, world.config.sim.session_policy)
        .and_then(|route| relay(graph, &route, &envelope, &mut world.log, now));
    match delivered {
        Ok(d) => {
            world.log.push(Event::Delivery {
                tick: now,
                key_id: key.key_id.0,
                sender: m.sender,
                receiver: m.receiver,
                session: d.route.kind,
                hops: d.route.hops,
            });
            Some(PendingReveal {
                envelope: d.envelope,
                key,
            })
        }
        Err(e) => {
            world.log.push(failed(e.to_string()));
            None
        }
    }
}

fn decode(
    world: &mut World<'_>,
    reveals: &mut RevealLedger,
    p: &PendingReveal,
    now: Tick,
    rng: &mut ChaCha8Rng,
) {
    let result = reveals
        .attempt_decode(&world.store, &p.envelope, &p.key, now, rng)
        .expect("key issued with the envelope");
    world.log.push(Event::Reveal {
        tick: now,
        key_id: p.key.key_id.0,
        receiver: p.envelope.receiver,
        revealed: result.revealed_partitions.into_iter().collect(),
        complete: result.complete,
    });
}

fn end_of_run_trace(world: &World<'_>, report: &mut SimReport, keys: &mut KeyIssuer, end: Tick) {
    let inputs = TraceInputs::from_log(&world.log).expect("the run's own log has a header");
    let ep = &world.config.epidemic;
    let Some(index) = ep.trace_index.or_else(|| inputs.default_index()) else {
        report.trace_note = Some("no confirmed adopter to trace from".into());
        return;
    };
    let bidirectional = match inputs.trace(index, TraceMode::Bidirectional, None) {
        Ok(r) => r,
        Err(TraceError::CycleDetected { at, partial }) => {
            report.trace_note = Some(format!("inferred chain revisits {at}; chain cut there"));
            *partial
        }
        Err(e) => {
            report.trace_note = Some(e.to_string());
            return;
        }
    };
    report.forward_trace = inputs.trace(index, TraceMode::ForwardOnly, None).ok();

    let confirmed = inputs.confirmations[&index].confirmed;
    let zone_size = ep.alert_zone_size;
    let zone_of = |id: DeviceId| {
        let p = world.node(id).position;
        format!("z{}-{}", (p.x / zone_size).floor() as i64, (p.y / zone_size).floor() as i64)
    };
    let ctx = AlertContext {
        now: end,
        day: (end as f64 * world.config.sim.tick_length / 86_400.0).floor() as u64,
        exposure_window: (confirmed.saturating_sub(ep.trace_window), confirmed),
        zone_of: &zone_of,
    };
    report.alerts = issue_alerts(&bidirectional, &world.store, ep, &ctx, keys);
    report.trace = Some(bidirectional);
}

/// Observable tracing inputs rebuilt from an event log, plus the
/// ground-truth ledger for scoring.
pub struct TraceInputs {
    pub header: LogHeader,
    pub contacts: Vec<ContactRecord>,
    pub confirmations: BTreeMap<DeviceId, Confirmation>,
    pub adopters: BTreeSet<DeviceId>,
    pub ledger: Vec<Transmission>,
    pub history: TrustHistory,
}

impl TraceInputs {
    pub fn from_log(log: &EventLog) -> Result<Self, LogError> {
        let header = log.header().ok_or(LogError::MissingHeader)?.clone();
        let mut inputs = TraceInputs {
            contacts: Vec::new(),
            confirmations: BTreeMap::new(),
            adopters: header.adopters.iter().copied().collect(),
            ledger: Vec::new(),
            history: TrustHistory::new(header.trust_params.clone()),
            header,
        };
        for e in log.events() {
            match e {
                Event::Contact { record, .. } => inputs.contacts.push(record.clone()),
                Event::Confirmed { tick, device, onset } => {
                    inputs.confirmations.insert(
                        *device,
                        Confirmation {
                            onset: *onset,
                            confirmed: *tick,
                        },
                    );
                }
                Event::Exposure {
                    tick,
                    infector,
                    infectee,
                } => inputs.ledger.push(Transmission {
                    infector: *infector,
                    infectee: *infectee,
                    tick: *tick,
                }),
                Event::TrustUpdate {
                    tick,
                    from,
                    to,
                    profile,
                    score,
                } => inputs.history.record(*tick, *from, *to, profile, *score),
                _ => {}
            }
        }
        Ok(inputs)
    }

    /// The most recently confirmed adopter, ties to the smallest id.
    pub fn default_index(&self) -> Option<DeviceId> {
        self.confirmations
            .iter()
            .filter(|(id, _)| self.adopters.contains(id))
            .max_by(|a, b| a.1.confirmed.cmp(&b.1.confirmed).then(b.0.cmp(a.0)))
            .map(|(id, _)| *id)
    }

    pub fn epidemic_params(&self) -> &EpidemicParams {
        &self.header.epidemic
    }

    /// Trace from `index`. `weighting` overrides the contact weighting
    /// recorded in the log header.
    pub fn trace(
        &self,
        index: DeviceId,
        mode: TraceMode,
        weighting: Option<TransmissionMode>,
    ) -> Result<TraceReport, TraceError> {
        if !self.header.population.contains(&index) {
            return Err(TraceError::UnknownDevice(index));
        }
        let params = &self.header.epidemic;
        let ctx = TraceContext::new(
            &self.contacts,
            &self.confirmations,
            &self.adopters,
            params,
            &self.header.trust_params,
            &self.history,
        )
        .with_weighting(weighting.unwrap_or(params.mode));
        crate::epidemic::trace_to_patient_zero(&ctx, index, mode, &self.ledger)
    }
}
