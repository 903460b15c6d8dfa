//! SEIR dynamics on observed contacts, plus contact-tracing analysis.
//!
//! Transmission runs either on contact geometry or on the infector's trust
//! score for the susceptible peer. The ground-truth infection ledger is kept
//! for evaluation only; tracing in [`tracing`] works from observable signals.

pub mod alerts;
pub mod tracing;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::ActiveContact;
use crate::trust::{DeviceId, ProfileKey, Tick, TrustModelParams, TrustView, TICKS_PER_DAY};
use crate::validation::Violation;

pub use alerts::{alert_tier, issue_alerts, Alert, AlertContext, AlertMessage, AlertTier};
pub use tracing::{
    backward_trace, edge_coverage, find_super_spreaders, forward_trace, isolated_groups, trace_to_patient_zero,
    Candidate, Confirmation, SpreaderSource, TraceContext, TraceError, TraceMode, TraceReport,
    TrustHistory,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Compartment {
    S,
    E,
    I,
    R,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransmissionMode {
    #[default]
    ContactBased,
    TrustProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicParams {
    /// Transmission intensity per tick of contact.
    pub beta: f64,
    /// Ticks from exposure to infectiousness (symptom onset).
    pub incubation: Tick,
    /// Ticks from onset to recovery.
    pub infectious_period: Tick,
    /// Ticks from onset until a case is confirmed by a test.
    pub confirmation_delay: Tick,
    pub mode: TransmissionMode,
    pub trace_window: Tick,
    pub trace_threshold: f64,
    pub adoption_rate: f64,
    pub alert_individual: f64,
    pub alert_locality: f64,
    /// Side of the square grid cells locality alerts name, in meters.
    pub alert_zone_size: f64,
    /// Devices infectious at tick 0. Takes precedence over the count.
    pub initial_infected: Vec<DeviceId>,
    /// Seeded random pick when no explicit list is given.
    pub initial_infected_count: usize,
    /// Index case for the end-of-run trace; defaults to the latest confirmed adopter.
    pub trace_index: Option<DeviceId>,
}

impl Default for EpidemicParams {
    fn default() -> Self {
        EpidemicParams {
            beta: 0.05,
            incubation: 3 * TICKS_PER_DAY,
            infectious_period: 7 * TICKS_PER_DAY,
            confirmation_delay: 2 * TICKS_PER_DAY,
            mode: TransmissionMode::ContactBased,
            trace_window: 14 * TICKS_PER_DAY,
            trace_threshold: 0.3,
            adoption_rate: 1.0,
            alert_individual: 0.7,
            alert_locality: 0.3,
            alert_zone_size: 50.0,
            initial_infected: Vec::new(),
            initial_infected_count: 0,
            trace_index: None,
        }
    }
}

impl EpidemicParams {
    pub fn validate(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: &str| out.push(Violation::new(format!("{prefix}.{field}"), msg));
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            bad("beta", "must be a non-negative number");
        }
        if self.incubation < 1 {
            bad("incubation", "must be >= 1");
        }
        if self.infectious_period < 1 {
            bad("infectious_period", "must be >= 1");
        }
        for (field, v) in [
            ("trace_threshold", self.trace_threshold),
            ("adoption_rate", self.adoption_rate),
            ("alert_individual", self.alert_individual),
            ("alert_locality", self.alert_locality),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bad(field, "must be in [0, 1]");
            }
        }
        if !(self.alert_zone_size.is_finite() && self.alert_zone_size > 0.0) {
            bad("alert_zone_size", "must be > 0");
        }
        if self.alert_locality >= self.alert_individual {
            bad("alert_locality", "must be below alert_individual");
        }
        out
    }
}

/// Infection probability over `dt` ticks for a hazard weight in [0, 1].
pub fn infection_probability(beta: f64, dt: f64, weight: f64) -> f64 {
    1.0 - (-beta * dt * weight).exp()
}

/// Per-contact transmission weight. Implement this to try other hazard forms.
pub trait TransmissionHazard {
    fn weight(&self, contact: &ActiveContact, infector: DeviceId, susceptible: DeviceId, now: Tick) -> f64;
}

/// Closeness of the contact: `exp(-distance / distance_scale)`.
pub struct ContactHazard<'a>(pub &'a TrustModelParams);

impl TransmissionHazard for ContactHazard<'_> {
    fn weight(&self, contact: &ActiveContact, _: DeviceId, _: DeviceId, _: Tick) -> f64 {
        (-contact.distance / self.0.distance_scale).exp()
    }
}

/// The infector's current trust score for the susceptible peer.
pub struct TrustHazard<'a, V: TrustView>(pub &'a V);

impl<V: TrustView> TransmissionHazard for TrustHazard<'_, V> {
    fn weight(&self, _: &ActiveContact, infector: DeviceId, susceptible: DeviceId, now: Tick) -> f64 {
        self.0.trust(infector, susceptible, &ProfileKey::default(), now)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub exposed_at: Option<Tick>,
    pub infectious_at: Option<Tick>,
    pub recovered_at: Option<Tick>,
    pub confirmed_at: Option<Tick>,
}

impl Health {
    pub fn compartment(&self) -> Compartment {
        if self.recovered_at.is_some() {
            Compartment::R
        } else if self.infectious_at.is_some() {
            Compartment::I
        } else if self.exposed_at.is_some() {
            Compartment::E
        } else {
            Compartment::S
        }
    }
}

/// One ground-truth transmission.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transmission {
    pub infector: DeviceId,
    pub infectee: DeviceId,
    pub tick: Tick,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompartmentCounts {
    pub s: usize,
    pub e: usize,
    pub i: usize,
    pub r: usize,
}

impl CompartmentCounts {
    pub fn total(&self) -> usize {
        self.s + self.e + self.i + self.r
    }
}

/// What changed during one epidemic step, in the order it happened.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub exposures: Vec<Transmission>,
    pub onsets: Vec<DeviceId>,
    pub confirmations: Vec<(DeviceId, Tick)>,
    pub recoveries: Vec<DeviceId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpidemicState {
    health: BTreeMap<DeviceId, Health>,
    ledger: Vec<Transmission>,
}

impl EpidemicState {
    pub fn new(population: impl IntoIterator<Item = DeviceId>) -> Self {
        EpidemicState {
            health: population.into_iter().map(|id| (id, Health::default())).collect(),
            ledger: Vec::new(),
        }
    }

    /// Make `id` infectious at `now` with no recorded infector.
    pub fn seed_infectious(&mut self, id: DeviceId, now: Tick) {
        if let Some(h) = self.health.get_mut(&id) {
            h.exposed_at = Some(now);
            h.infectious_at = Some(now);
        }
    }

    pub fn health(&self, id: DeviceId) -> Option<&Health> {
        self.health.get(&id)
    }

    pub fn compartment(&self, id: DeviceId) -> Option<Compartment> {
        self.health.get(&id).map(Health::compartment)
    }

    pub fn ledger(&self) -> &[Transmission] {
        &self.ledger
    }

    pub fn population(&self) -> usize {
        self.health.len()
    }

    pub fn counts(&self) -> CompartmentCounts {
        let mut c = CompartmentCounts::default();
        for h in self.health.values() {
            match h.compartment() {
                Compartment::S => c.s += 1,
                Compartment::E => c.e += 1,
                Compartment::I => c.i += 1,
                Compartment::R => c.r += 1,
            }
        }
        c
    }

    /// Fraction of the population ever infected.
    pub fn attack_rate(&self) -> f64 {
        if self.health.is_empty() {
            return 0.0;
        }
        let ever = self.health.values().filter(|h| h.exposed_at.is_some()).count();
        ever as f64 / self.health.len() as f64
    }

    /// Advance one tick: transmissions over `contacts` (sorted, one draw each
    /// in order), then E->I, I->R and confirmation transitions.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        contacts: &[ActiveContact],
        hazard: &dyn TransmissionHazard,
        params: &EpidemicParams,
        now: Tick,
        rng: &mut R,
    ) -> StepOutcome {
        let mut out = StepOutcome::default();
        if params.beta > 0.0 {
            for c in contacts {
                let (ca, cb) = (self.compartment(c.a), self.compartment(c.b));
                let (infector, target) = match (ca, cb) {
                    (Some(Compartment::I), Some(Compartment::S)) => (c.a, c.b),
                    (Some(Compartment::S), Some(Compartment::I)) => (c.b, c.a),
                    _ => continue,
                };
                let weight = hazard.weight(c, infector, target, now).clamp(0.0, 1.0);
                let p = infection_probability(params.beta, 1.0, weight);
                if rng.gen::<f64>() < p {
                    self.health.get_mut(&target).expect("contact in population").exposed_at =
                        Some(now);
                    let t = Transmission {
                        infector,
                        infectee: target,
                        tick: now,
                    };
                    self.ledger.push(t);
                    out.exposures.push(t);
                }
            }
        }
        for (&id, h) in self.health.iter_mut() {
            match h.compartment() {
                Compartment::E => {
                    let since = now - h.exposed_at.expect("exposed");
                    if since >= params.incubation {
                        h.infectious_at = Some(now);
                        out.onsets.push(id);
                    }
                }
                Compartment::I => {
                    let onset = h.infectious_at.expect("infectious");
                    if now - onset >= params.infectious_period {
                        h.recovered_at = Some(now);
                        out.recoveries.push(id);
                    }
                }
                _ => {}
            }
            if let (Some(onset), None) = (h.infectious_at, h.confirmed_at) {
                if now - onset >= params.confirmation_delay {
                    h.confirmed_at = Some(now);
                    out.confirmations.push((id, onset));
                }
            }
        }
        out
    }
}

/// One SEIR step under the configured transmission mode.
#[allow(clippy::too_many_arguments)]
pub fn infection_step<R: Rng + ?Sized>(
    state: &mut EpidemicState,
    contacts: &[ActiveContact],
    trust: &impl TrustView,
    params: &EpidemicParams,
    trust_params: &TrustModelParams,
    now: Tick,
    rng: &mut R,
) -> StepOutcome {
    match params.mode {
        TransmissionMode::ContactBased => {
            state.step(contacts, &ContactHazard(trust_params), params, now, rng)
        }
        TransmissionMode::TrustProxy => state.step(contacts, &TrustHazard(trust), params, now, rng),
    }
}
