use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{decay, DeviceId, ProfileKey, Tick, TrustModelParams};

/// Anything that can answer "how much does `from` trust `to` right now".
pub trait TrustView {
    fn trust(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey, now: Tick) -> f64;
}

impl<T: TrustView + ?Sized> TrustView for &T {
    fn trust(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey, now: Tick) -> f64 {
        (**self).trust(from, to, profile, now)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustEntry {
    pub score: f64,
    pub last_updated: Tick,
    pub interaction_count: u64,
}

/// Flat record form of one entry, used for snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedTrust {
    pub from: DeviceId,
    pub to: DeviceId,
    pub profile: ProfileKey,
    pub score: f64,
    pub last_updated: Tick,
    pub interaction_count: u64,
}

type Key = (ProfileKey, DeviceId, DeviceId);

/// Keyed map of directed trust entries with lazy decay on read.
///
/// `(a, b, p)` and `(b, a, p)` are independent entries. Entries are ordered by
/// profile, then `from`, then `to`, so iteration is deterministic.
#[derive(Clone, Debug)]
pub struct TrustStore {
    params: TrustModelParams,
    entries: BTreeMap<Key, TrustEntry>,
}

impl TrustStore {
    pub fn new(params: TrustModelParams) -> Self {
        TrustStore {
            params,
            entries: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &TrustModelParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey) -> Option<&TrustEntry> {
        self.entries.get(&(profile.clone(), from, to))
    }

    pub fn contains(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey) -> bool {
        self.entry(from, to, profile).is_some()
    }

    /// Decayed score, or the baseline for a pair that has never been scored.
    pub fn score(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey, now: Tick) -> f64 {
        match self.entry(from, to, profile) {
            Some(e) => decay(e.score, now.saturating_sub(e.last_updated), &self.params),
            None => self.params.baseline,
        }
    }

    /// Overwrite a score without counting an interaction.
    pub fn set(&mut self, from: DeviceId, to: DeviceId, profile: ProfileKey, score: f64, now: Tick) {
        let entry = self
            .entries
            .entry((profile, from, to))
            .or_insert(TrustEntry {
                score: 0.0,
                last_updated: now,
                interaction_count: 0,
            });
        entry.score = score.clamp(0.0, 1.0);
        entry.last_updated = now;
    }

    /// Store the outcome of one interaction.
    pub fn record(&mut self, from: DeviceId, to: DeviceId, profile: ProfileKey, score: f64, now: Tick) {
        let entry = self
            .entries
            .entry((profile, from, to))
            .or_insert(TrustEntry {
                score: 0.0,
                last_updated: now,
                interaction_count: 0,
            });
        entry.score = score.clamp(0.0, 1.0);
        entry.last_updated = now;
        entry.interaction_count += 1;
    }

    /// Every entry `from` holds in `profile`, ordered by target id.
    pub fn outgoing<'a>(
        &'a self,
        from: DeviceId,
        profile: &ProfileKey,
    ) -> impl Iterator<Item = (DeviceId, &'a TrustEntry)> + 'a {
        let lo = (profile.clone(), from, DeviceId(0));
        let hi = (profile.clone(), from, DeviceId(u64::MAX));
        self.entries
            .range((Bound::Included(lo), Bound::Included(hi)))
            .map(|((_, _, to), e)| (*to, e))
    }

    pub fn records(&self) -> impl Iterator<Item = DirectedTrust> + '_ {
        self.entries.iter().map(|((profile, from, to), e)| DirectedTrust {
            from: *from,
            to: *to,
            profile: profile.clone(),
            score: e.score,
            last_updated: e.last_updated,
            interaction_count: e.interaction_count,
        })
    }

    /// One JSON object per line, in store order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.records() {
            out.push_str(&serde_json::to_string(&rec).expect("trust record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(params: TrustModelParams, text: &str) -> Result<Self, serde_json::Error> {
        let mut store = TrustStore::new(params);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: DirectedTrust = serde_json::from_str(line)?;
            store.insert_record(rec);
        }
        Ok(store)
    }

    pub fn insert_record(&mut self, rec: DirectedTrust) {
        self.entries.insert(
            (rec.profile, rec.from, rec.to),
            TrustEntry {
                score: rec.score.clamp(0.0, 1.0),
                last_updated: rec.last_updated,
                interaction_count: rec.interaction_count,
            },
        );
    }
}

impl TrustView for TrustStore {
    fn trust(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey, now: Tick) -> f64 {
        self.score(from, to, profile, now)
    }
}

/// A trust store that can be shared across threads: many readers, one writer.
#[derive(Clone, Debug)]
pub struct SharedTrustStore(Arc<RwLock<TrustStore>>);

impl SharedTrustStore {
    pub fn new(store: TrustStore) -> Self {
        SharedTrustStore(Arc::new(RwLock::new(store)))
    }

    pub fn read<R>(&self, f: impl FnOnce(&TrustStore) -> R) -> R {
        f(&self.0.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut TrustStore) -> R) -> R {
        f(&mut self.0.write().unwrap_or_else(|e| e.into_inner()))
    }
}

impl TrustView for SharedTrustStore {
    fn trust(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey, now: Tick) -> f64 {
        self.read(|s| s.score(from, to, profile, now))
    }
}
