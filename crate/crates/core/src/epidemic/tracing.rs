//! Forward and backward contact tracing over observed contacts.
//!
//! Everything here works from what the protocol can observe: closed contact
//! records, case confirmations (with onset times) and trust scores. The
//! ground-truth ledger is only used to score a finished report.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EpidemicParams, Transmission, TransmissionMode};
use crate::sim::ContactRecord;
use crate::trust::{decay, proximity_score, DeviceId, ProfileKey, Tick, TrustModelParams, TrustView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub onset: Tick,
    pub confirmed: Tick,
}

/// Every trust score ever written, so scores can be read as of any tick.
#[derive(Clone, Debug)]
pub struct TrustHistory {
    params: TrustModelParams,
    updates: BTreeMap<(ProfileKey, DeviceId, DeviceId), Vec<(Tick, f64)>>,
}

impl TrustHistory {
    pub fn new(params: TrustModelParams) -> Self {
        TrustHistory {
            params,
            updates: BTreeMap::new(),
        }
    }

    /// Updates must arrive in non-decreasing tick order per key.
    pub fn record(&mut self, tick: Tick, from: DeviceId, to: DeviceId, profile: &ProfileKey, score: f64) {
        self.updates
            .entry((profile.clone(), from, to))
            .or_default()
            .push((tick, score));
    }

    pub fn score_at(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey, now: Tick) -> f64 {
        let Some(series) = self.updates.get(&(profile.clone(), from, to)) else {
            return self.params.baseline;
        };
        let idx = series.partition_point(|(t, _)| *t <= now);
        if idx == 0 {
            return self.params.baseline;
        }
        let (t, s) = series[idx - 1];
        decay(s, now - t, &self.params)
    }
}

impl TrustView for TrustHistory {
    fn trust(&self, from: DeviceId, to: DeviceId, profile: &ProfileKey, now: Tick) -> f64 {
        self.score_at(from, to, profile, now)
    }
}

/// Observable inputs shared by all tracing queries.
pub struct TraceContext<'a> {
    pub contacts: &'a [ContactRecord],
    pub confirmations: &'a BTreeMap<DeviceId, Confirmation>,
    pub adopters: &'a BTreeSet<DeviceId>,
    pub params: &'a EpidemicParams,
    pub trust_params: &'a TrustModelParams,
    /// How a contact is weighted: by proximity or by the index's trust score.
    pub weighting: TransmissionMode,
    pub trust: &'a dyn TrustView,
    by_device: BTreeMap<DeviceId, Vec<usize>>,
}

impl<'a> TraceContext<'a> {
    pub fn new(
        contacts: &'a [ContactRecord],
        confirmations: &'a BTreeMap<DeviceId, Confirmation>,
        adopters: &'a BTreeSet<DeviceId>,
        params: &'a EpidemicParams,
        trust_params: &'a TrustModelParams,
        trust: &'a dyn TrustView,
    ) -> Self {
        let mut by_device: BTreeMap<DeviceId, Vec<usize>> = BTreeMap::new();
        for (i, c) in contacts.iter().enumerate() {
            by_device.entry(c.a).or_default().push(i);
            by_device.entry(c.b).or_default().push(i);
        }
        TraceContext {
            contacts,
            confirmations,
            adopters,
            params,
            trust_params,
            weighting: params.mode,
            trust,
            by_device,
        }
    }

    pub fn with_weighting(mut self, weighting: TransmissionMode) -> Self {
        self.weighting = weighting;
        self
    }

    fn contacts_of(&self, id: DeviceId) -> impl Iterator<Item = &'a ContactRecord> + '_ {
        self.by_device
            .get(&id)
            .into_iter()
            .flatten()
            .map(|&i| &self.contacts[i])
    }

    fn weight(&self, contact: &ContactRecord, index: DeviceId, peer: DeviceId, at: Tick) -> f64 {
        match self.weighting {
            TransmissionMode::ContactBased => {
                proximity_score(contact.duration, contact.mean_distance, self.trust_params)
            }
            TransmissionMode::TrustProxy => self.trust.trust(index, peer, &ProfileKey::default(), at),
        }
    }

    /// Adopting peers with a qualifying contact overlapping `[at - window, at]`,
    /// as (peer, weight, contact start).
    fn qualifying(&self, index: DeviceId, at: Tick) -> Vec<(DeviceId, f64, Tick)> {
        let lo = at.saturating_sub(self.params.trace_window);
        self.contacts_of(index)
            .filter(|c| c.overlaps(lo, at))
            .filter_map(|c| {
                let peer = c.other(index)?;
                if !self.adopters.contains(&peer) {
                    return None;
                }
                let w = self.weight(c, index, peer, at);
                (w >= self.params.trace_threshold).then_some((peer, w, c.start))
            })
            .collect()
    }
}

/// Peers `index` may have infected: adopting contacts in the window before
/// confirmation whose weight reaches the trace threshold.
pub fn forward_trace(ctx: &TraceContext<'_>, index: DeviceId, t_confirmed: Tick) -> BTreeSet<DeviceId> {
    if !ctx.adopters.contains(&index) {
        return BTreeSet::new();
    }
    ctx.qualifying(index, t_confirmed)
        .into_iter()
        .map(|(peer, _, _)| peer)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub peer: DeviceId,
    pub weight: f64,
    pub contact_start: Tick,
}

/// Likely infectors of `index`, best first: adopting peers with a qualifying
/// contact in the window before onset who had their own onset earlier.
/// Ranked by weight, then earlier contact, then id.
pub fn backward_trace(ctx: &TraceContext<'_>, index: DeviceId, t_onset: Tick) -> Vec<Candidate> {
    if !ctx.adopters.contains(&index) {
        return Vec::new();
    }
    let mut best: BTreeMap<DeviceId, Candidate> = BTreeMap::new();
    for (peer, weight, start) in ctx.qualifying(index, t_onset) {
        let plausible = ctx
            .confirmations
            .get(&peer)
            .is_some_and(|c| c.onset < t_onset);
        if !plausible {
            continue;
        }
        let cand = Candidate {
            peer,
            weight,
            contact_start: start,
        };
        best.entry(peer)
            .and_modify(|b| {
                if (weight, std::cmp::Reverse(start)) > (b.weight, std::cmp::Reverse(b.contact_start)) {
                    *b = cand;
                }
            })
            .or_insert(cand);
    }
    let mut out: Vec<Candidate> = best.into_values().collect();
    out.sort_by(|x, y| {
        y.weight
            .total_cmp(&x.weight)
            .then(x.contact_start.cmp(&y.contact_start))
            .then(x.peer.cmp(&y.peer))
    });
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    ForwardOnly,
    #[default]
    Bidirectional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub index_case: DeviceId,
    pub mode: TraceMode,
    pub forward_set: BTreeSet<DeviceId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub backward_set: Option<BTreeSet<DeviceId>>,
    /// Inferred infection chain, oldest first, ending at the index case.
    pub inferred_chain: Vec<DeviceId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub patient_zero_estimate: Option<DeviceId>,
    /// Fraction of ground-truth transmission edges the trace recovered.
    pub coverage: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("device {0} has no confirmed infection")]
    NotConfirmed(DeviceId),
    #[error("device {0} does not participate in the protocol")]
    NotAdopting(DeviceId),
    #[error("inferred chain revisits {at}")]
    CycleDetected {
        at: DeviceId,
        partial: Box<TraceReport>,
    },
}

/// Walk backward from `index` along top-ranked candidates to an estimated
/// patient zero, tracing forward from every node on the way.
///
/// `ledger` is read only to compute coverage.
pub fn trace_to_patient_zero(
    ctx: &TraceContext<'_>,
    index: DeviceId,
    mode: TraceMode,
    ledger: &[Transmission],
) -> Result<TraceReport, TraceError> {
    let conf = ctx
        .confirmations
        .get(&index)
        .copied()
        .ok_or(TraceError::NotConfirmed(index))?;
    if !ctx.adopters.contains(&index) {
        return Err(TraceError::NotAdopting(index));
    }

    let mut chain = vec![index];
    let mut backward_set = BTreeSet::new();
    let mut cycle_at = None;
    if mode == TraceMode::Bidirectional {
        let mut cur = index;
        let mut onset = conf.onset;
        loop {
            let cands = backward_trace(ctx, cur, onset);
            backward_set.extend(cands.iter().map(|c| c.peer));
            let Some(top) = cands.first() else { break };
            if chain.contains(&top.peer) {
                cycle_at = Some(top.peer);
                break;
            }
            chain.push(top.peer);
            cur = top.peer;
            onset = ctx.confirmations[&cur].onset;
        }
        chain.reverse();
    }

    let mut recovered: BTreeSet<(DeviceId, DeviceId)> =
        chain.windows(2).map(|w| (w[0], w[1])).collect();
    let mut forward_set = BTreeSet::new();
    for &node in &chain {
        let Some(c) = ctx.confirmations.get(&node) else { continue };
        for peer in forward_trace(ctx, node, c.confirmed) {
            recovered.insert((node, peer));
            forward_set.insert(peer);
        }
    }
    for node in &chain {
        forward_set.remove(node);
    }

    let report = TraceReport {
        index_case: index,
        mode,
        forward_set,
        backward_set: (mode == TraceMode::Bidirectional).then_some(backward_set),
        patient_zero_estimate: (mode == TraceMode::Bidirectional).then(|| chain[0]),
        inferred_chain: chain,
        coverage: edge_coverage(&recovered, ledger),
    };
    match cycle_at {
        Some(at) => Err(TraceError::CycleDetected {
            at,
            partial: Box::new(report),
        }),
        None => Ok(report),
    }
}

/// Share of ledger edges present in `recovered`; 1 when there is nothing to recover.
pub fn edge_coverage(recovered: &BTreeSet<(DeviceId, DeviceId)>, ledger: &[Transmission]) -> f64 {
    let truth: BTreeSet<(DeviceId, DeviceId)> =
        ledger.iter().map(|t| (t.infector, t.infectee)).collect();
    if truth.is_empty() {
        return 1.0;
    }
    truth.intersection(recovered).count() as f64 / truth.len() as f64
}

pub enum SpreaderSource<'a, 'b> {
    /// Evaluation: ground-truth out-degree.
    Ledger(&'a [Transmission]),
    /// Inference: number of distinct peers with a qualifying contact.
    Contacts(&'a TraceContext<'b>),
}

/// Highest-degree nodes first, ties to the smaller id. Zero counts are omitted.
pub fn find_super_spreaders(source: SpreaderSource<'_, '_>, top_n: usize) -> Vec<(DeviceId, usize)> {
    let mut degree: BTreeMap<DeviceId, usize> = BTreeMap::new();
    match source {
        SpreaderSource::Ledger(ledger) => {
            for t in ledger {
                *degree.entry(t.infector).or_default() += 1;
            }
        }
        SpreaderSource::Contacts(ctx) => {
            for (a, b) in qualifying_pairs(ctx) {
                *degree.entry(a).or_default() += 1;
                *degree.entry(b).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<_> = degree.into_iter().filter(|(_, n)| *n > 0).collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.truncate(top_n);
    ranked
}

/// Distinct adopting pairs with at least one qualifying contact, any time.
fn qualifying_pairs(ctx: &TraceContext<'_>) -> BTreeSet<(DeviceId, DeviceId)> {
    ctx.contacts
        .iter()
        .filter(|c| ctx.adopters.contains(&c.a) && ctx.adopters.contains(&c.b))
        .filter(|c| {
            let at = c.start + c.duration;
            ctx.weight(c, c.a, c.b, at) >= ctx.params.trace_threshold
        })
        .map(|c| (c.a, c.b))
        .collect()
}

/// Connected components of the qualifying-contact graph over adopters,
/// each sorted, ordered by smallest member.
pub fn isolated_groups(ctx: &TraceContext<'_>) -> Vec<BTreeSet<DeviceId>> {
    let mut adj: BTreeMap<DeviceId, BTreeSet<DeviceId>> =
        ctx.adopters.iter().map(|&a| (a, BTreeSet::new())).collect();
    for (a, b) in qualifying_pairs(ctx) {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    }
    let mut seen = BTreeSet::new();
    let mut groups = Vec::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut group = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &m in &adj[&n] {
                if seen.insert(m) {
                    group.insert(m);
                    stack.push(m);
                }
            }
        }
        groups.push(group);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trust::InteractionKind;

    const Z: DeviceId = DeviceId(1);
    const A: DeviceId = DeviceId(2);
    const B: DeviceId = DeviceId(3);
    const C: DeviceId = DeviceId(4);

    fn contact(a: DeviceId, b: DeviceId, start: Tick, duration: Tick, dist: f64) -> ContactRecord {
        ContactRecord::new(a, b, start, duration, dist, InteractionKind::CoPresence)
    }

    fn params() -> EpidemicParams {
        EpidemicParams {
            incubation: 10,
            confirmation_delay: 5,
            trace_window: 30,
            trace_threshold: 0.3,
            ..Default::default()
        }
    }

    /// z -> a -> b -> c, each infection over a 60-tick contact at 1 m.
    struct Chain {
        contacts: Vec<ContactRecord>,
        confirmations: BTreeMap<DeviceId, Confirmation>,
        ledger: Vec<Transmission>,
    }

    fn chain() -> Chain {
        let onsets = [(Z, 0), (A, 20), (B, 40), (C, 60)];
        let confirmations = onsets
            .iter()
            .map(|&(d, o)| (d, Confirmation { onset: o, confirmed: o + 5 }))
            .collect();
        let contacts = vec![
            contact(Z, A, 2, 60, 1.0),
            contact(A, B, 22, 60, 1.0),
            contact(B, C, 42, 60, 1.0),
        ];
        let ledger = vec![
            Transmission { infector: Z, infectee: A, tick: 10 },
            Transmission { infector: A, infectee: B, tick: 30 },
            Transmission { infector: B, infectee: C, tick: 50 },
        ];
        Chain {
            contacts,
            confirmations,
            ledger,
        }
    }

    fn no_trust() -> TrustHistory {
        TrustHistory::new(TrustModelParams::default())
    }

    #[test]
    fn full_adoption_recovers_patient_zero() {
        let ch = chain();
        let adopters: BTreeSet<_> = [Z, A, B, C].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&ch.contacts, &ch.confirmations, &adopters, &p, &tp, &trust);
        let report = trace_to_patient_zero(&ctx, C, TraceMode::Bidirectional, &ch.ledger).unwrap();
        assert_eq!(report.patient_zero_estimate, Some(Z));
        assert_eq!(report.inferred_chain, [Z, A, B, C]);
        assert_eq!(report.coverage, 1.0);
    }

    #[test]
    fn backward_candidates_for_chain() {
        let ch = chain();
        let adopters: BTreeSet<_> = [Z, A, B, C].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&ch.contacts, &ch.confirmations, &adopters, &p, &tp, &trust);
        let cands: Vec<_> = backward_trace(&ctx, B, 40).iter().map(|c| c.peer).collect();
        assert_eq!(cands, [A]);
        assert!(backward_trace(&ctx, Z, 0).is_empty());
    }

    #[test]
    fn non_adopter_breaks_the_chain() {
        let ch = chain();
        let adopters: BTreeSet<_> = [Z, B, C].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&ch.contacts, &ch.confirmations, &adopters, &p, &tp, &trust);
        let report = trace_to_patient_zero(&ctx, C, TraceMode::Bidirectional, &ch.ledger).unwrap();
        assert_eq!(report.inferred_chain, [B, C]);
        assert_eq!(report.patient_zero_estimate, Some(B));
        assert!(report.coverage < 1.0);
    }

    #[test]
    fn index_without_candidates_is_its_own_estimate() {
        let ch = chain();
        let adopters: BTreeSet<_> = [Z, A, B, C].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&ch.contacts, &ch.confirmations, &adopters, &p, &tp, &trust);
        let report = trace_to_patient_zero(&ctx, Z, TraceMode::Bidirectional, &ch.ledger).unwrap();
        assert_eq!(report.patient_zero_estimate, Some(Z));
        assert_eq!(report.inferred_chain, [Z]);
    }

    #[test]
    fn candidates_rank_by_weight() {
        // two earlier cases meet the index; the closer one ranks first
        let contacts = vec![contact(A, C, 40, 60, 8.0), contact(B, C, 45, 60, 0.5)];
        let confirmations: BTreeMap<_, _> = [
            (A, Confirmation { onset: 0, confirmed: 5 }),
            (B, Confirmation { onset: 1, confirmed: 6 }),
            (C, Confirmation { onset: 60, confirmed: 65 }),
        ]
        .into();
        let adopters: BTreeSet<_> = [A, B, C].into();
        let p = EpidemicParams {
            trace_threshold: 0.0,
            ..params()
        };
        let (tp, trust) = (TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&contacts, &confirmations, &adopters, &p, &tp, &trust);
        let cands = backward_trace(&ctx, C, 60);
        assert_eq!(cands.iter().map(|c| c.peer).collect::<Vec<_>>(), [B, A]);
        assert!(cands[0].weight > cands[1].weight);
    }

    #[test]
    fn forward_trace_examples() {
        let contacts = vec![contact(Z, A, 100, 30, 1.0), contact(Z, B, 100, 30, 1.0)];
        let confirmations: BTreeMap<_, _> = [(Z, Confirmation { onset: 90, confirmed: 130 })].into();
        let adopters: BTreeSet<_> = [Z, A].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&contacts, &confirmations, &adopters, &p, &tp, &trust);
        // 30 min at 1 m scores ~0.5175 >= 0.3; B does not run the protocol
        assert_eq!(forward_trace(&ctx, Z, 130), [A].into());
        assert!(forward_trace(&ctx, Z, 20).is_empty());
    }

    #[test]
    fn trust_weighting_reads_history() {
        let contacts = vec![contact(Z, A, 100, 2, 30.0)];
        let confirmations: BTreeMap<_, _> = [(Z, Confirmation { onset: 90, confirmed: 110 })].into();
        let adopters: BTreeSet<_> = [Z, A].into();
        let p = params();
        let tp = TrustModelParams::default();
        let mut history = TrustHistory::new(tp.clone());
        history.record(50, Z, A, &ProfileKey::default(), 0.9);
        let ctx = TraceContext::new(&contacts, &confirmations, &adopters, &p, &tp, &history)
            .with_weighting(TransmissionMode::TrustProxy);
        assert_eq!(forward_trace(&ctx, Z, 110), [A].into());
        let ctx = TraceContext::new(&contacts, &confirmations, &adopters, &p, &tp, &history);
        assert!(forward_trace(&ctx, Z, 110).is_empty());
    }

    #[test]
    fn forward_only_report_has_no_backward_set() {
        let ch = chain();
        let adopters: BTreeSet<_> = [Z, A, B, C].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&ch.contacts, &ch.confirmations, &adopters, &p, &tp, &trust);
        let report = trace_to_patient_zero(&ctx, B, TraceMode::ForwardOnly, &ch.ledger).unwrap();
        assert_eq!(report.backward_set, None);
        // a's contact with b overlaps b's forward window too
        assert_eq!(report.forward_set, [A, C].into());
        assert!((report.coverage - 1.0 / 3.0).abs() < 1e-12);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("backward_set").is_none());
    }

    #[test]
    fn trace_errors() {
        let ch = chain();
        let adopters: BTreeSet<_> = [Z, A, B].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&ch.contacts, &ch.confirmations, &adopters, &p, &tp, &trust);
        assert_eq!(
            trace_to_patient_zero(&ctx, DeviceId(77), TraceMode::Bidirectional, &ch.ledger),
            Err(TraceError::NotConfirmed(DeviceId(77)))
        );
        assert_eq!(
            trace_to_patient_zero(&ctx, C, TraceMode::Bidirectional, &ch.ledger),
            Err(TraceError::NotAdopting(C))
        );
    }

    #[test]
    fn super_spreaders_from_ledger() {
        let hub = DeviceId(10);
        let ledger: Vec<_> = (0..5)
            .map(|i| Transmission { infector: hub, infectee: DeviceId(20 + i), tick: i })
            .chain([Transmission { infector: DeviceId(20), infectee: DeviceId(30), tick: 9 }])
            .collect();
        let ranked = find_super_spreaders(SpreaderSource::Ledger(&ledger), 3);
        assert_eq!(ranked[0], (hub, 5));
        assert!(find_super_spreaders(SpreaderSource::Ledger(&[]), 3).is_empty());
        let tie = [
            Transmission { infector: DeviceId(9), infectee: DeviceId(1), tick: 0 },
            Transmission { infector: DeviceId(4), infectee: DeviceId(2), tick: 0 },
        ];
        let ranked = find_super_spreaders(SpreaderSource::Ledger(&tie), 2);
        assert_eq!(ranked, [(DeviceId(4), 1), (DeviceId(9), 1)]);
    }

    #[test]
    fn contact_degree_and_groups() {
        let ch = chain();
        let adopters: BTreeSet<_> = [Z, A, B, C, DeviceId(99)].into();
        let (p, tp, trust) = (params(), TrustModelParams::default(), no_trust());
        let ctx = TraceContext::new(&ch.contacts, &ch.confirmations, &adopters, &p, &tp, &trust);
        let ranked = find_super_spreaders(SpreaderSource::Contacts(&ctx), 2);
        assert_eq!(ranked, [(A, 2), (B, 2)]);
        let groups = isolated_groups(&ctx);
        assert_eq!(groups, vec![[Z, A, B, C].into(), [DeviceId(99)].into()]);
    }

    #[test]
    fn history_reads_past_scores() {
        let tp = TrustModelParams { half_life: 10.0, ..Default::default() };
        let mut h = TrustHistory::new(tp);
        let d = ProfileKey::default();
        h.record(10, Z, A, &d, 0.8);
        h.record(30, Z, A, &d, 0.2);
        assert_eq!(h.score_at(Z, A, &d, 5), 0.0);
        assert_eq!(h.score_at(Z, A, &d, 10), 0.8);
        assert!((h.score_at(Z, A, &d, 20) - 0.4).abs() < 1e-15);
        assert_eq!(h.score_at(Z, A, &d, 30), 0.2);
    }
}
