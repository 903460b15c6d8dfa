//! Trust-gated "slow reveal" messaging.
//!
//! A sender splits a message into partitions with non-decreasing unlock
//! thresholds. It transmits only if its own score for the receiver clears
//! `tx_threshold`; the receiver decodes only while its score for the sender
//! clears `rx_threshold`, and each partition unlocks once that score crosses
//! the partition's threshold. Unlocked partitions stay unlocked, so a message
//! can reveal itself piecewise as the relationship develops.
//!
//! The partition cipher is a seeded keystream XOR. It is a stand-in for real
//! encryption and offers no security.

mod cipher;
mod wire;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trust::{DeviceId, ProfileKey, Tick, TrustView};

pub use cipher::apply_keystream;
pub(crate) use cipher::splitmix64;
pub use wire::WireError;

#[derive(Debug, Error, PartialEq)]
pub enum MessagingError {
    #[error("plaintext is empty")]
    EmptyPlaintext,
    #[error("a message needs at least one partition")]
    ZeroPartitions,
    #[error("thresholds must satisfy 0 <= tx, 0 <= rx <= theta_full <= 1 (tx {tx}, rx {rx}, theta_full {theta_full})")]
    InvalidThresholds { tx: f64, rx: f64, theta_full: f64 },
    #[error("probabilistic reveal needs a positive temperature, got {0}")]
    InvalidTemperature(f64),
    #[error("score {score} is below the transmission threshold {required}")]
    BelowTransmissionThreshold { score: f64, required: f64 },
    #[error("key {got} does not match envelope key {expected}")]
    KeyMismatch { expected: u64, got: u64 },
    #[error("reveal schedule must be strictly increasing")]
    NonIncreasingSchedule,
    #[error("malformed envelope: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub u64);

/// Key material a sender hands to the receiver out of band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityKey {
    pub key_id: KeyId,
    pub seed: u64,
}

impl SecurityKey {
    pub fn new(key_id: u64, seed: u64) -> Self {
        SecurityKey {
            key_id: KeyId(key_id),
            seed,
        }
    }
}

/// Hands out keys with unique ids and seeded material.
#[derive(Clone, Debug)]
pub struct KeyIssuer {
    next_id: u64,
    rng: ChaCha8Rng,
}

impl KeyIssuer {
    pub fn new(seed: u64) -> Self {
        KeyIssuer {
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn issue(&mut self) -> SecurityKey {
        let id = self.next_id;
        self.next_id += 1;
        SecurityKey::new(id, self.rng.gen())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RevealMode {
    Deterministic,
    Probabilistic { temperature: f64 },
}

/// Addressing fields of an envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeHeader {
    pub sender: DeviceId,
    pub receiver: DeviceId,
    pub profile: ProfileKey,
    pub sent_at: Tick,
}

impl EnvelopeHeader {
    pub fn new(sender: DeviceId, receiver: DeviceId, sent_at: Tick) -> Self {
        EnvelopeHeader {
            sender,
            receiver,
            profile: ProfileKey::default(),
            sent_at,
        }
    }

    pub fn with_profile(mut self, profile: ProfileKey) -> Self {
        self.profile = profile;
        self
    }
}

/// How a message is split and gated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevealPlan {
    pub partitions: usize,
    pub tx_threshold: f64,
    pub rx_threshold: f64,
    /// Threshold of the last partition.
    pub theta_full: f64,
    pub mode: RevealMode,
}

impl RevealPlan {
    pub fn deterministic(partitions: usize, tx: f64, rx: f64, theta_full: f64) -> Self {
        RevealPlan {
            partitions,
            tx_threshold: tx,
            rx_threshold: rx,
            theta_full,
            mode: RevealMode::Deterministic,
        }
    }

    pub fn with_mode(mut self, mode: RevealMode) -> Self {
        self.mode = mode;
        self
    }

    /// Linear spacing from `rx_threshold` up to `theta_full`.
    pub fn thresholds(&self) -> Vec<f64> {
        let k = self.partitions;
        let step = (self.theta_full - self.rx_threshold) / (k.max(2) - 1) as f64;
        (0..k)
            .map(|i| {
                if i + 1 == k && k > 1 {
                    self.theta_full
                } else {
                    self.rx_threshold + i as f64 * step
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<(), MessagingError> {
        if self.partitions == 0 {
            return Err(MessagingError::ZeroPartitions);
        }
        let ok = (0.0..=1.0).contains(&self.tx_threshold)
            && (0.0..=1.0).contains(&self.rx_threshold)
            && self.rx_threshold <= self.theta_full
            && self.theta_full <= 1.0;
        if !ok {
            return Err(MessagingError::InvalidThresholds {
                tx: self.tx_threshold,
                rx: self.rx_threshold,
                theta_full: self.theta_full,
            });
        }
        if let RevealMode::Probabilistic { temperature } = self.mode {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(MessagingError::InvalidTemperature(temperature));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowRevealEnvelope {
    pub sender: DeviceId,
    pub receiver: DeviceId,
    pub profile: ProfileKey,
    pub partitions: Vec<Vec<u8>>,
    pub partition_thresholds: Vec<f64>,
    pub tx_threshold: f64,
    pub rx_threshold: f64,
    pub key_id: KeyId,
    pub sent_at: Tick,
    pub reveal_mode: RevealMode,
}

impl SlowRevealEnvelope {
    pub fn validate(&self) -> Result<(), MessagingError> {
        let bad = |msg: &str| Err(MessagingError::Malformed(msg.to_string()));
        if self.partitions.is_empty() {
            return bad("no partitions");
        }
        if self.partitions.len() != self.partition_thresholds.len() {
            return bad("partition and threshold counts differ");
        }
        if self.partition_thresholds[0] != self.rx_threshold {
            return bad("first partition threshold must equal rx_threshold");
        }
        if self.partition_thresholds.windows(2).any(|w| w[0] > w[1]) {
            return bad("partition thresholds must be non-decreasing");
        }
        if self
            .partition_thresholds
            .iter()
            .any(|t| !(0.0..=1.0).contains(t))
        {
            return bad("partition thresholds must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tx_threshold) {
            return bad("tx_threshold must lie in [0, 1]");
        }
        if let RevealMode::Probabilistic { temperature } = self.reveal_mode {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(MessagingError::InvalidTemperature(temperature));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        wire::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        wire::decode(bytes)
    }

    /// Human-readable rendering with partitions as hex.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let hex = |b: &Vec<u8>| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
        serde_json::json!({
            "sender": self.sender,
            "receiver": self.receiver,
            "profile": self.profile,
            "key_id": self.key_id,
            "sent_at": self.sent_at,
            "tx_threshold": self.tx_threshold,
            "rx_threshold": self.rx_threshold,
            "reveal_mode": self.reveal_mode,
            "partitions": self.partitions.iter().zip(&self.partition_thresholds)
                .map(|(p, t)| serde_json::json!({"threshold": t, "ciphertext": hex(p)}))
                .collect::<Vec<_>>(),
        })
    }
}

/// Split and encrypt `plaintext` into a slow-reveal envelope.
///
/// Blocks are contiguous with size `ceil(n / k)`; trailing blocks may be
/// short or empty so that the envelope always has exactly `k` partitions.
pub fn encode(
    plaintext: &[u8],
    plan: &RevealPlan,
    key: &SecurityKey,
    header: EnvelopeHeader,
) -> Result<SlowRevealEnvelope, MessagingError> {
    if plaintext.is_empty() {
        return Err(MessagingError::EmptyPlaintext);
    }
    plan.validate()?;
    let k = plan.partitions;
    let block = plaintext.len().div_ceil(k);
    let partitions = (0..k)
        .map(|i| {
            let lo = (i * block).min(plaintext.len());
            let hi = ((i + 1) * block).min(plaintext.len());
            let mut bytes = plaintext[lo..hi].to_vec();
            apply_keystream(key, i, &mut bytes);
            bytes
        })
        .collect();
    Ok(SlowRevealEnvelope {
        sender: header.sender,
        receiver: header.receiver,
        profile: header.profile,
        partitions,
        partition_thresholds: plan.thresholds(),
        tx_threshold: plan.tx_threshold,
        rx_threshold: plan.rx_threshold,
        key_id: key.key_id,
        sent_at: header.sent_at,
        reveal_mode: plan.mode,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransmissionDecision {
    pub score: f64,
}

/// Sender-side gate: the sender's current score for the receiver must reach
/// `tx_threshold`.
pub fn send(
    view: &impl TrustView,
    envelope: &SlowRevealEnvelope,
    now: Tick,
) -> Result<TransmissionDecision, MessagingError> {
    let score = view.trust(envelope.sender, envelope.receiver, &envelope.profile, now);
    if score >= envelope.tx_threshold {
        Ok(TransmissionDecision { score })
    } else {
        Err(MessagingError::BelowTransmissionThreshold {
            score,
            required: envelope.tx_threshold,
        })
    }
}

/// Receiver-side hook deciding the reception gate for an envelope.
pub trait ReceptionPolicy: Send + Sync {
    fn reception_threshold(&self, envelope: &SlowRevealEnvelope) -> f64;
}

/// Uses the sender's `rx_threshold` unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct SenderThreshold;

impl ReceptionPolicy for SenderThreshold {
    fn reception_threshold(&self, envelope: &SlowRevealEnvelope) -> f64 {
        envelope.rx_threshold
    }
}

/// Raises the gate to a receiver-chosen floor.
#[derive(Clone, Copy, Debug)]
pub struct ReceiverFloor(pub f64);

impl ReceptionPolicy for ReceiverFloor {
    fn reception_threshold(&self, envelope: &SlowRevealEnvelope) -> f64 {
        envelope.rx_threshold.max(self.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RevealResult {
    pub revealed_partitions: BTreeSet<usize>,
    pub plaintext_fragments: Vec<(usize, Vec<u8>)>,
    pub complete: bool,
}

impl RevealResult {
    /// The whole message, once every partition is revealed.
    pub fn plaintext(&self) -> Option<Vec<u8>> {
        self.complete.then(|| {
            self.plaintext_fragments
                .iter()
                .flat_map(|(_, b)| b.iter().copied())
                .collect()
        })
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability that a partition with threshold `theta` unlocks at trust `trust`.
pub fn reveal_probability(trust: f64, theta: f64, mode: RevealMode) -> f64 {
    match mode {
        RevealMode::Deterministic => {
            if trust >= theta {
                1.0
            } else {
                0.0
            }
        }
        RevealMode::Probabilistic { temperature } => logistic((trust - theta) / temperature),
    }
}

/// Per-(envelope, receiver) record of revealed partitions.
pub struct RevealLedger {
    revealed: BTreeMap<(KeyId, DeviceId), BTreeSet<usize>>,
    policy: Box<dyn ReceptionPolicy>,
}

impl Default for RevealLedger {
    fn default() -> Self {
        RevealLedger::new()
    }
}

impl RevealLedger {
    pub fn new() -> Self {
        RevealLedger::with_policy(SenderThreshold)
    }

    pub fn with_policy(policy: impl ReceptionPolicy + 'static) -> Self {
        RevealLedger {
            revealed: BTreeMap::new(),
            policy: Box::new(policy),
        }
    }

    pub fn revealed(&self, key_id: KeyId, receiver: DeviceId) -> Option<&BTreeSet<usize>> {
        self.revealed.get(&(key_id, receiver))
    }

    /// Try to unlock more of `envelope` with the receiver's current trust.
    ///
    /// Below the reception gate nothing new unlocks, but partitions revealed
    /// by earlier attempts are still returned.
    pub fn attempt_decode<R: Rng + ?Sized>(
        &mut self,
        view: &impl TrustView,
        envelope: &SlowRevealEnvelope,
        key: &SecurityKey,
        now: Tick,
        rng: &mut R,
    ) -> Result<RevealResult, MessagingError> {
        if key.key_id != envelope.key_id {
            return Err(MessagingError::KeyMismatch {
                expected: envelope.key_id.0,
                got: key.key_id.0,
            });
        }
        let trust = view.trust(envelope.receiver, envelope.sender, &envelope.profile, now);
        let gate = self.policy.reception_threshold(envelope);
        let revealed = self
            .revealed
            .entry((envelope.key_id, envelope.receiver))
            .or_default();
        if trust >= gate {
            for (i, &theta) in envelope.partition_thresholds.iter().enumerate() {
                if revealed.contains(&i) {
                    continue;
                }
                let unlocked = match envelope.reveal_mode {
                    RevealMode::Deterministic => trust >= theta,
                    mode => rng.gen::<f64>() < reveal_probability(trust, theta, mode),
                };
                if unlocked {
                    revealed.insert(i);
                }
            }
        }
        Ok(decrypt_revealed(envelope, key, revealed))
    }

    /// Repeated decode attempts at each tick of `schedule`.
    pub fn reveal_over_time<R: Rng + ?Sized>(
        &mut self,
        view: &impl TrustView,
        envelope: &SlowRevealEnvelope,
        key: &SecurityKey,
        schedule: &[Tick],
        rng: &mut R,
    ) -> Result<Vec<RevealResult>, MessagingError> {
        if schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MessagingError::NonIncreasingSchedule);
        }
        schedule
            .iter()
            .map(|&t| self.attempt_decode(view, envelope, key, t, rng))
            .collect()
    }
}

fn decrypt_revealed(
    envelope: &SlowRevealEnvelope,
    key: &SecurityKey,
    revealed: &BTreeSet<usize>,
) -> RevealResult {
    let plaintext_fragments = revealed
        .iter()
        .map(|&i| {
            let mut bytes = envelope.partitions[i].clone();
            apply_keystream(key, i, &mut bytes);
            (i, bytes)
        })
        .collect();
    RevealResult {
        revealed_partitions: revealed.clone(),
        plaintext_fragments,
        complete: revealed.len() == envelope.partitions.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{TrustModelParams, TrustStore};

    const A: DeviceId = DeviceId(1);
    const B: DeviceId = DeviceId(2);

    /// Trust of B for A fixed at a value, regardless of time.
    struct Fixed(f64);

    impl TrustView for Fixed {
        fn trust(&self, _: DeviceId, _: DeviceId, _: &ProfileKey, _: Tick) -> f64 {
            self.0
        }
    }

    /// Trust following a scripted trajectory over time.
    struct Trajectory(Vec<(Tick, f64)>);

    impl TrustView for Trajectory {
        fn trust(&self, _: DeviceId, _: DeviceId, _: &ProfileKey, now: Tick) -> f64 {
            self.0
                .iter()
                .rev()
                .find(|(t, _)| *t <= now)
                .map_or(0.0, |(_, s)| *s)
        }
    }

    fn key() -> SecurityKey {
        SecurityKey::new(42, 0xDEAD_BEEF)
    }

    fn four_way(text: &[u8]) -> SlowRevealEnvelope {
        let plan = RevealPlan::deterministic(4, 0.5, 0.2, 0.8);
        encode(text, &plan, &key(), EnvelopeHeader::new(A, B, 0)).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn thresholds_are_linear() {
        let t = RevealPlan::deterministic(4, 0.0, 0.2, 0.8).thresholds();
        let expected = [0.2, 0.4, 0.6, 0.8];
        for (a, b) in t.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(t[3], 0.8);
        assert_eq!(RevealPlan::deterministic(1, 0.0, 0.3, 0.9).thresholds(), [0.3]);
    }

    #[test]
    fn ceil_block_split() {
        let plan = RevealPlan::deterministic(3, 0.0, 0.0, 0.0);
        let env = encode(b"0123456789", &plan, &key(), EnvelopeHeader::new(A, B, 0)).unwrap();
        let sizes: Vec<_> = env.partitions.iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
        let env = encode(b"abc", &RevealPlan::deterministic(5, 0.0, 0.0, 0.0), &key(), EnvelopeHeader::new(A, B, 0)).unwrap();
        let sizes: Vec<_> = env.partitions.iter().map(Vec::len).collect();
        assert_eq!(sizes, [1, 1, 1, 0, 0]);
        assert!(env.validate().is_ok());
    }

    #[test]
    fn encode_errors() {
        let plan = RevealPlan::deterministic(2, 0.5, 0.2, 0.8);
        let h = || EnvelopeHeader::new(A, B, 0);
        assert_eq!(encode(b"", &plan, &key(), h()), Err(MessagingError::EmptyPlaintext));
        let zero = RevealPlan::deterministic(0, 0.5, 0.2, 0.8);
        assert_eq!(encode(b"x", &zero, &key(), h()), Err(MessagingError::ZeroPartitions));
        let inverted = RevealPlan::deterministic(2, 0.5, 0.9, 0.8);
        assert!(matches!(
            encode(b"x", &inverted, &key(), h()),
            Err(MessagingError::InvalidThresholds { .. })
        ));
        let cold = plan.with_mode(RevealMode::Probabilistic { temperature: 0.0 });
        assert_eq!(encode(b"x", &cold, &key(), h()), Err(MessagingError::InvalidTemperature(0.0)));
    }

    #[test]
    fn send_gate() {
        let mut store = TrustStore::new(TrustModelParams::default());
        let env = four_way(b"payload!");
        let d = ProfileKey::default();
        store.set(A, B, d.clone(), 0.9, 0);
        assert_eq!(send(&store, &env, 0), Ok(TransmissionDecision { score: 0.9 }));
        store.set(A, B, d.clone(), 0.4, 0);
        assert_eq!(
            send(&store, &env, 0),
            Err(MessagingError::BelowTransmissionThreshold { score: 0.4, required: 0.5 })
        );
        store.set(A, B, d, 0.5, 0);
        assert!(send(&store, &env, 0).is_ok());
    }

    #[test]
    fn decode_below_rx_reveals_nothing() {
        let env = four_way(b"0123456789abcdef");
        let mut ledger = RevealLedger::new();
        let r = ledger.attempt_decode(&Fixed(0.1), &env, &key(), 0, &mut rng()).unwrap();
        assert!(r.revealed_partitions.is_empty());
        assert!(!r.complete);
    }

    #[test]
    fn deterministic_partial_reveal() {
        let text = b"0123456789abcdef";
        let env = four_way(text);
        let mut ledger = RevealLedger::new();
        let r = ledger.attempt_decode(&Fixed(0.5), &env, &key(), 0, &mut rng()).unwrap();
        assert_eq!(r.revealed_partitions, [0, 1].into());
        let prefix: Vec<u8> = r.plaintext_fragments.iter().flat_map(|(_, b)| b.clone()).collect();
        assert_eq!(prefix, &text[..8]);
        assert_eq!(r.plaintext(), None);
    }

    #[test]
    fn full_trust_round_trip() {
        let text = b"the whole message";
        let env = four_way(text);
        let mut ledger = RevealLedger::new();
        let r = ledger.attempt_decode(&Fixed(1.0), &env, &key(), 0, &mut rng()).unwrap();
        assert!(r.complete);
        assert_eq!(r.plaintext().unwrap(), text);
    }

    #[test]
    fn wrong_key_rejected() {
        let env = four_way(b"secret");
        let mut ledger = RevealLedger::new();
        let wrong = SecurityKey::new(43, 0xDEAD_BEEF);
        assert_eq!(
            ledger.attempt_decode(&Fixed(1.0), &env, &wrong, 0, &mut rng()),
            Err(MessagingError::KeyMismatch { expected: 42, got: 43 })
        );
    }

    #[test]
    fn reveal_over_rising_trust() {
        let env = four_way(b"0123456789abcdef");
        let view = Trajectory(vec![(0, 0.3), (10, 0.5), (20, 0.9)]);
        let mut ledger = RevealLedger::new();
        let steps = ledger.reveal_over_time(&view, &env, &key(), &[0, 10, 20], &mut rng()).unwrap();
        let sets: Vec<Vec<usize>> = steps
            .iter()
            .map(|r| r.revealed_partitions.iter().copied().collect())
            .collect();
        assert_eq!(sets, vec![vec![0], vec![0, 1], vec![0, 1, 2, 3]]);
    }

    #[test]
    fn constant_trust_constant_set() {
        let env = four_way(b"0123456789abcdef");
        let mut ledger = RevealLedger::new();
        let steps = ledger
            .reveal_over_time(&Fixed(0.45), &env, &key(), &[1, 2, 3], &mut rng())
            .unwrap();
        assert!(steps.iter().all(|r| r.revealed_partitions == [0, 1].into()));
    }

    #[test]
    fn reveals_persist_when_trust_falls() {
        let env = four_way(b"0123456789abcdef");
        let view = Trajectory(vec![(0, 0.7), (10, 0.3), (20, 0.05)]);
        let mut ledger = RevealLedger::new();
        let steps = ledger.reveal_over_time(&view, &env, &key(), &[0, 10, 20], &mut rng()).unwrap();
        for r in &steps {
            assert_eq!(r.revealed_partitions, [0, 1, 2].into());
        }
    }

    #[test]
    fn schedule_must_increase() {
        let env = four_way(b"abcd");
        let mut ledger = RevealLedger::new();
        assert_eq!(
            ledger.reveal_over_time(&Fixed(1.0), &env, &key(), &[5, 5], &mut rng()),
            Err(MessagingError::NonIncreasingSchedule)
        );
    }

    #[test]
    fn receiver_floor_raises_gate() {
        let env = four_way(b"0123456789abcdef");
        let mut ledger = RevealLedger::with_policy(ReceiverFloor(0.6));
        let r = ledger.attempt_decode(&Fixed(0.5), &env, &key(), 0, &mut rng()).unwrap();
        assert!(r.revealed_partitions.is_empty());
    }

    #[test]
    fn key_issuer_ids_unique() {
        let mut issuer = KeyIssuer::new(3);
        let a = issuer.issue();
        let b = issuer.issue();
        assert_ne!(a.key_id, b.key_id);
        let mut again = KeyIssuer::new(3);
        assert_eq!(again.issue(), a);
    }

    #[test]
    fn debug_json_has_hex_partitions() {
        let env = four_way(b"0123456789abcdef");
        let v = env.to_debug_json();
        assert_eq!(v["partitions"].as_array().unwrap().len(), 4);
        assert_eq!(v["partitions"][0]["ciphertext"].as_str().unwrap().len(), 8);
    }
}
