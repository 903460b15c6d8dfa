//! Directed, profile-keyed trust scores between devices.
//!
//! A score is computed once from whatever factors are available when two
//! devices first meet ([`initial_trust`]), then evolves with every observed
//! interaction ([`update_on_interaction`]) and relaxes back toward the
//! baseline while the devices are apart ([`decay`]). Decay is applied lazily
//! on read, so the store never needs a background sweep.

mod store;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::validation::Violation;

pub use store::{DirectedTrust, SharedTrustStore, TrustEntry, TrustStore, TrustView};

/// Simulation time in ticks.
pub type Tick = u64;

/// Opaque identifier of a simulated device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u64);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for DeviceId {
    fn from(id: u64) -> Self {
        DeviceId(id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("profile name must not be empty")]
    EmptyProfile,
    #[error("an interaction needs two distinct devices, got {0} twice")]
    SelfInteraction(DeviceId),
    #[error("{field} = {value} is outside [0, 1]")]
    OutOfUnitRange { field: &'static str, value: f64 },
    #[error("distance must be a finite non-negative number, got {0}")]
    InvalidDistance(f64),
}

/// Name of a trust context. Scores in different profiles never interact.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProfileKey(String);

impl ProfileKey {
    pub const DEFAULT: &'static str = "default";
    pub const HEALTH_DATA: &'static str = "health-data";

    pub fn new(name: impl Into<String>) -> Result<Self, TrustError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TrustError::EmptyProfile);
        }
        Ok(ProfileKey(name))
    }

    pub fn health_data() -> Self {
        ProfileKey(Self::HEALTH_DATA.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for ProfileKey {
    fn default() -> Self {
        ProfileKey(Self::DEFAULT.to_string())
    }
}

impl TryFrom<String> for ProfileKey {
    type Error = TrustError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ProfileKey::new(value)
    }
}

impl From<ProfileKey> for String {
    fn from(key: ProfileKey) -> Self {
        key.0
    }
}

impl fmt::Display for ProfileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Relative weight of each trust factor in [`initial_trust`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorWeights {
    pub previous: f64,
    pub mutual_peers: f64,
    pub interests: f64,
    pub apps: f64,
    pub proximity: f64,
    pub physical: f64,
}

impl Default for FactorWeights {
    fn default() -> Self {
        FactorWeights {
            previous: 0.35,
            mutual_peers: 0.25,
            interests: 0.10,
            apps: 0.10,
            proximity: 0.15,
            physical: 0.05,
        }
    }
}

impl FactorWeights {
    fn as_array(&self) -> [f64; 6] {
        [
            self.previous,
            self.mutual_peers,
            self.interests,
            self.apps,
            self.proximity,
            self.physical,
        ]
    }

    pub fn scaled(&self, c: f64) -> Self {
        FactorWeights {
            previous: self.previous * c,
            mutual_peers: self.mutual_peers * c,
            interests: self.interests * c,
            apps: self.apps * c,
            proximity: self.proximity * c,
            physical: self.physical * c,
        }
    }
}

/// Ticks per simulated day at the default 60 s tick.
pub const TICKS_PER_DAY: Tick = 1440;

/// Trust model parameters. Times are in ticks; the defaults assume a 60 s tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustModelParams {
    pub weights: FactorWeights,
    /// Step size of the interaction update, in (0, 1].
    pub learning_rate: f64,
    /// Ticks for the distance to baseline to halve.
    pub half_life: f64,
    /// Score of an unknown peer and the decay target.
    pub baseline: f64,
    /// Minimum score a mutual peer needs before its opinion counts.
    pub peer_cutoff: f64,
    /// A stored score younger than this is reused directly as the session's starting score.
    pub session_window: Tick,
    /// Exposure duration scale of the proximity score, in ticks.
    pub proximity_saturation: f64,
    /// Distance scale of the proximity score, in meters.
    pub distance_scale: f64,
}

impl Default for TrustModelParams {
    fn default() -> Self {
        TrustModelParams {
            weights: FactorWeights::default(),
            learning_rate: 0.2,
            half_life: (30 * TICKS_PER_DAY) as f64,
            baseline: 0.0,
            peer_cutoff: 0.5,
            session_window: 90 * TICKS_PER_DAY,
            proximity_saturation: 30.0,
            distance_scale: 5.0,
        }
    }
}

impl TrustModelParams {
    pub fn validate(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let w = self.weights.as_array();
        let names = [
            "previous",
            "mutual_peers",
            "interests",
            "apps",
            "proximity",
            "physical",
        ];
        for (name, value) in names.iter().zip(w) {
            if !(value.is_finite() && value >= 0.0) {
                out.push(Violation::new(
                    format!("{prefix}.weights.{name}"),
                    "must be a non-negative number",
                ));
            }
        }
        if !w.iter().any(|&v| v > 0.0) {
            out.push(Violation::new(
                format!("{prefix}.weights"),
                "at least one weight must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            out.push(Violation::new(
                format!("{prefix}.learning_rate"),
                "must be in (0, 1]",
            ));
        }
        if !(self.half_life.is_finite() && self.half_life > 0.0) {
            out.push(Violation::new(format!("{prefix}.half_life"), "must be > 0"));
        }
        for (name, v) in [("baseline", self.baseline), ("peer_cutoff", self.peer_cutoff)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation::new(format!("{prefix}.{name}"), "must be in [0, 1]"));
            }
        }
        if !(self.proximity_saturation.is_finite() && self.proximity_saturation > 0.0) {
            out.push(Violation::new(
                format!("{prefix}.proximity_saturation"),
                "must be > 0",
            ));
        }
        if !(self.distance_scale.is_finite() && self.distance_scale > 0.0) {
            out.push(Violation::new(
                format!("{prefix}.distance_scale"),
                "must be > 0",
            ));
        }
        out
    }
}

/// Kind of a sensed interaction between two device owners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Conversation,
    Handshake,
    Wave,
    CoPresence,
    MessageExchange,
    HealthConsult,
}

impl InteractionKind {
    /// Profile an interaction of this kind feeds by default.
    pub fn default_profile(self) -> ProfileKey {
        match self {
            InteractionKind::HealthConsult => ProfileKey::health_data(),
            _ => ProfileKey::default(),
        }
    }
}

/// One observed interaction, as seen by one side of the pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub a: DeviceId,
    pub b: DeviceId,
    pub time: Tick,
    pub duration: Tick,
    pub distance: f64,
    pub kind: InteractionKind,
    pub quality: f64,
}

impl InteractionEvent {
    pub fn new(
        a: DeviceId,
        b: DeviceId,
        time: Tick,
        duration: Tick,
        distance: f64,
        kind: InteractionKind,
        quality: f64,
    ) -> Result<Self, TrustError> {
        if a == b {
            return Err(TrustError::SelfInteraction(a));
        }
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(TrustError::InvalidDistance(distance));
        }
        check_unit("quality", quality)?;
        Ok(InteractionEvent {
            a,
            b,
            time,
            duration,
            distance,
            kind,
            quality,
        })
    }
}

fn check_unit(field: &'static str, value: f64) -> Result<(), TrustError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(TrustError::OutOfUnitRange { field, value })
    }
}

/// One optional input per trust factor. Absent factors drop out of the mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorInputs {
    pub prev_score: Option<f64>,
    pub peer_score: Option<f64>,
    pub interest_overlap: Option<f64>,
    pub app_overlap: Option<f64>,
    pub prox_score: Option<f64>,
    pub phys_score: Option<f64>,
}

impl FactorInputs {
    pub fn validate(&self) -> Result<(), TrustError> {
        let fields = [
            ("prev_score", self.prev_score),
            ("peer_score", self.peer_score),
            ("interest_overlap", self.interest_overlap),
            ("app_overlap", self.app_overlap),
            ("prox_score", self.prox_score),
            ("phys_score", self.phys_score),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                check_unit(name, v)?;
            }
        }
        Ok(())
    }

    fn as_array(&self) -> [Option<f64>; 6] {
        [
            self.prev_score,
            self.peer_score,
            self.interest_overlap,
            self.app_overlap,
            self.prox_score,
            self.phys_score,
        ]
    }
}

/// Saturating exposure in time, exponential falloff in distance.
pub fn proximity_score(duration: Tick, distance: f64, params: &TrustModelParams) -> f64 {
    let exposure = 1.0 - (-(duration as f64) / params.proximity_saturation).exp();
    let closeness = (-distance.max(0.0) / params.distance_scale).exp();
    (exposure * closeness).clamp(0.0, 1.0)
}

/// Jaccard similarity; two empty sets score 0.
pub fn overlap_score<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Opinion of `b` aggregated from `a`'s trusted peers, weighted by how much
/// `a` trusts each of them. Reads stored scores without decay.
pub fn transitive_trust(
    store: &TrustStore,
    a: DeviceId,
    b: DeviceId,
    profile: &ProfileKey,
    params: &TrustModelParams,
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (peer, entry) in store.outgoing(a, profile) {
        if peer == b || entry.score < params.peer_cutoff {
            continue;
        }
        if let Some(opinion) = store.entry(peer, b, profile) {
            num += entry.score * opinion.score;
            den += entry.score;
        }
    }
    if den > 0.0 {
        Some((num / den).clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Weighted mean over the factors that are present, or the baseline when
/// none are.
pub fn initial_trust(inputs: &FactorInputs, params: &TrustModelParams) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, x) in params.weights.as_array().into_iter().zip(inputs.as_array()) {
        if let Some(x) = x {
            num += w * x;
            den += w;
        }
    }
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        params.baseline
    }
}

/// Effective evidence of an interaction: reported quality scaled by proximity.
pub fn effective_quality(event: &InteractionEvent, params: &TrustModelParams) -> f64 {
    event.quality * proximity_score(event.duration, event.distance, params)
}

pub fn update_on_interaction(
    current: f64,
    event: &InteractionEvent,
    params: &TrustModelParams,
) -> f64 {
    let target = effective_quality(event, params);
    (current + params.learning_rate * (target - current)).clamp(0.0, 1.0)
}

pub fn decay(current: f64, elapsed: Tick, params: &TrustModelParams) -> f64 {
    if elapsed == 0 {
        return current;
    }
    let factor = (-(elapsed as f64) / params.half_life).exp2();
    (params.baseline + (current - params.baseline) * factor).clamp(0.0, 1.0)
}

/// Decayed score of `a` for `b`, or the baseline when `a` has never scored `b`.
pub fn get_score(
    store: &TrustStore,
    a: DeviceId,
    b: DeviceId,
    profile: &ProfileKey,
    now: Tick,
) -> f64 {
    store.score(a, b, profile, now)
}

/// Whether `requester` currently trusts `peer` enough in `profile`.
pub fn verify_authority(
    store: &impl TrustView,
    requester: DeviceId,
    peer: DeviceId,
    profile: &ProfileKey,
    threshold: f64,
    now: Tick,
) -> bool {
    store.trust(requester, peer, profile, now) >= threshold
}

/// Context one side brings to an interaction besides the event itself.
#[derive(Clone, Debug, Default)]
pub struct SessionContext {
    pub interest_overlap: Option<f64>,
    pub app_overlap: Option<f64>,
}

/// Score `observer` starts a session with `peer` from.
///
/// A recent stored score is reused as-is. Otherwise the factor model runs on
/// everything known about the peer, and a stale stored score (after decay)
/// acts as a floor.
pub fn session_start_score(
    store: &TrustStore,
    observer: DeviceId,
    peer: DeviceId,
    profile: &ProfileKey,
    now: Tick,
    ctx: &SessionContext,
    event: &InteractionEvent,
) -> (f64, bool) {
    let params = store.params();
    if let Some(entry) = store.entry(observer, peer, profile) {
        if now.saturating_sub(entry.last_updated) <= params.session_window {
            return (store.score(observer, peer, profile, now), true);
        }
    }
    let inputs = FactorInputs {
        prev_score: None,
        peer_score: transitive_trust(store, observer, peer, profile, params),
        interest_overlap: ctx.interest_overlap,
        app_overlap: ctx.app_overlap,
        prox_score: Some(proximity_score(event.duration, event.distance, params)),
        phys_score: match event.kind {
            InteractionKind::CoPresence => None,
            _ => Some(event.quality),
        },
    };
    let fresh = initial_trust(&inputs, params);
    let stale = store
        .entry(observer, peer, profile)
        .map(|_| store.score(observer, peer, profile, now));
    (stale.map_or(fresh, |s| s.max(fresh)), false)
}

/// Fold one interaction into `observer`'s score for `peer` and return the new score.
///
/// The first interaction of a session sets the score from the factor model
/// (which already accounts for this event's proximity); later ones apply the
/// update rule on top of the decayed stored score.
pub fn observe_interaction(
    store: &mut TrustStore,
    observer: DeviceId,
    peer: DeviceId,
    profile: &ProfileKey,
    ctx: &SessionContext,
    event: &InteractionEvent,
) -> f64 {
    let now = event.time;
    let (start, continuing) = session_start_score(store, observer, peer, profile, now, ctx, event);
    let score = if continuing {
        update_on_interaction(start, event, store.params())
    } else {
        start
    };
    store.record(observer, peer, profile.clone(), score, now);
    score
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TrustModelParams {
        TrustModelParams::default()
    }

    fn ev(quality: f64, duration: Tick, distance: f64) -> InteractionEvent {
        InteractionEvent::new(
            DeviceId(1),
            DeviceId(2),
            0,
            duration,
            distance,
            InteractionKind::Conversation,
            quality,
        )
        .unwrap()
    }

    #[test]
    fn proximity_examples() {
        let p = params();
        assert_eq!(proximity_score(0, 0.0, &p), 0.0);
        assert_eq!(proximity_score(0, 123.0, &p), 0.0);
        // 1 - e^-1 and (1 - e^-1) e^-1, evaluated independently.
        assert!((proximity_score(30, 0.0, &p) - 0.632_120_558_828_557_7).abs() < 1e-12);
        assert!((proximity_score(30, 5.0, &p) - 0.232_544_157_934_830_54).abs() < 1e-12);
    }

    #[test]
    fn proximity_is_monotone() {
        let p = params();
        assert!(proximity_score(10, 1.0, &p) < proximity_score(11, 1.0, &p));
        assert!(proximity_score(10, 1.0, &p) > proximity_score(10, 1.5, &p));
    }

    #[test]
    fn overlap_examples() {
        let empty: BTreeSet<&str> = BTreeSet::new();
        assert_eq!(overlap_score(&empty, &empty), 0.0);
        let coffee: BTreeSet<_> = ["coffee"].into();
        assert_eq!(overlap_score(&coffee, &coffee), 1.0);
        let a: BTreeSet<_> = ["a", "b", "c"].into();
        let b: BTreeSet<_> = ["b", "c", "d"].into();
        assert_eq!(overlap_score(&a, &b), 0.5);
    }

    #[test]
    fn initial_trust_examples() {
        let p = params();
        assert_eq!(initial_trust(&FactorInputs::default(), &p), 0.0);
        let only_prev = FactorInputs {
            prev_score: Some(0.8),
            ..Default::default()
        };
        assert!((initial_trust(&only_prev, &p) - 0.8).abs() < 1e-15);
        let two = FactorInputs {
            prev_score: Some(0.8),
            peer_score: Some(1.0 / 1.4),
            ..Default::default()
        };
        // (0.35*0.8 + 0.25/1.4) / 0.6
        assert!((initial_trust(&two, &p) - 0.764_285_714_285_714_3).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_factor_alone_falls_back_to_baseline() {
        let mut p = params();
        p.weights.physical = 0.0;
        p.baseline = 0.25;
        let inputs = FactorInputs {
            phys_score: Some(1.0),
            ..Default::default()
        };
        assert_eq!(initial_trust(&inputs, &p), 0.25);
    }

    #[test]
    fn update_examples() {
        let p = params();
        // long exposure at zero distance makes proximity ~1
        let full = ev(1.0, 10_000, 0.0);
        assert!((update_on_interaction(0.5, &full, &p) - 0.6).abs() < 1e-12);
        assert_eq!(update_on_interaction(1.0, &full, &p), 1.0);
        let e = ev(0.5, 30, 1.0);
        let q = effective_quality(&e, &p);
        assert_eq!(update_on_interaction(q, &e, &p), q);
    }

    #[test]
    fn decay_examples() {
        let mut p = params();
        assert_eq!(decay(0.8, 0, &p), 0.8);
        p.half_life = 30.0;
        assert!((decay(0.8, 30, &p) - 0.4).abs() < 1e-15);
        p.baseline = 0.3;
        assert_eq!(decay(0.3, 12_345, &p), 0.3);
    }

    #[test]
    fn interaction_event_rejects_bad_input() {
        let bad = InteractionEvent::new(
            DeviceId(1),
            DeviceId(1),
            0,
            1,
            0.0,
            InteractionKind::Wave,
            0.5,
        );
        assert_eq!(bad, Err(TrustError::SelfInteraction(DeviceId(1))));
        let bad = InteractionEvent::new(
            DeviceId(1),
            DeviceId(2),
            0,
            1,
            0.0,
            InteractionKind::Wave,
            1.5,
        );
        assert!(matches!(bad, Err(TrustError::OutOfUnitRange { .. })));
    }

    #[test]
    fn empty_profile_rejected() {
        assert_eq!(ProfileKey::new(""), Err(TrustError::EmptyProfile));
        assert_eq!(ProfileKey::default().as_str(), "default");
    }

    #[test]
    fn default_params_validate() {
        assert!(params().validate("trust").is_empty());
        let mut p = params();
        p.weights = FactorWeights::default().scaled(0.0);
        p.learning_rate = 0.0;
        let v = p.validate("trust");
        let paths: Vec<_> = v.iter().map(|v| v.path.as_str()).collect();
        assert_eq!(paths, ["trust.weights", "trust.learning_rate"]);
    }

    #[test]
    fn first_meeting_uses_factor_model_then_updates() {
        let mut store = TrustStore::new(params());
        let profile = ProfileKey::default();
        let e = InteractionEvent::new(
            DeviceId(1),
            DeviceId(2),
            100,
            60,
            1.0,
            InteractionKind::CoPresence,
            0.4,
        )
        .unwrap();
        let ctx = SessionContext::default();
        let first = observe_interaction(&mut store, DeviceId(1), DeviceId(2), &profile, &ctx, &e);
        // only the proximity factor is present
        assert!((first - proximity_score(60, 1.0, store.params())).abs() < 1e-12);
        let second = observe_interaction(&mut store, DeviceId(1), DeviceId(2), &profile, &ctx, &e);
        assert!((second - update_on_interaction(first, &e, store.params())).abs() < 1e-12);
        assert_eq!(store.entry(DeviceId(1), DeviceId(2), &profile).unwrap().interaction_count, 2);
        assert!(store.entry(DeviceId(2), DeviceId(1), &profile).is_none());
    }
}
