//! Tiered exposure alerts. How much an alert reveals depends on how much the
//! index case trusts the recipient.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EpidemicParams, TraceReport};
use crate::messaging::{encode, EnvelopeHeader, KeyIssuer, RevealPlan, SlowRevealEnvelope};
use crate::trust::{DeviceId, ProfileKey, Tick, TrustView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertTier {
    Individual,
    Locality,
    NoAlert,
}

impl AlertTier {
    /// Trust the recipient needs for this tier, if any alert is sent.
    pub fn threshold(self, params: &EpidemicParams) -> Option<f64> {
        match self {
            AlertTier::Individual => Some(params.alert_individual),
            AlertTier::Locality => Some(params.alert_locality),
            AlertTier::NoAlert => None,
        }
    }
}

pub fn alert_tier(trust: f64, params: &EpidemicParams) -> AlertTier {
    if trust >= params.alert_individual {
        AlertTier::Individual
    } else if trust >= params.alert_locality {
        AlertTier::Locality
    } else {
        AlertTier::NoAlert
    }
}

/// What the recipient learns. Locality messages carry no device identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlertMessage {
    Individual {
        index_case: DeviceId,
        exposure_start: Tick,
        exposure_end: Tick,
    },
    Locality {
        zone: String,
        day: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub tick: Tick,
    /// The index case. Withheld from locality alerts.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sender: Option<DeviceId>,
    pub recipient: DeviceId,
    pub tier: AlertTier,
    /// Sender's trust in the recipient when the tier was chosen.
    pub trust: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<AlertMessage>,
    #[serde(skip)]
    pub envelope: Option<SlowRevealEnvelope>,
}

/// Where and when alerts go out.
pub struct AlertContext<'a> {
    pub now: Tick,
    pub day: u64,
    /// Window in which the index case may have exposed others.
    pub exposure_window: (Tick, Tick),
    /// Zone name for a recipient's current location.
    pub zone_of: &'a dyn Fn(DeviceId) -> String,
}

/// One alert per traced peer of the report, in id order. Sent alerts are
/// wrapped in slow-reveal envelopes gated at their tier's threshold.
pub fn issue_alerts(
    report: &TraceReport,
    trust: &dyn TrustView,
    params: &EpidemicParams,
    ctx: &AlertContext<'_>,
    keys: &mut KeyIssuer,
) -> Vec<Alert> {
    let index = report.index_case;
    let mut peers: BTreeSet<DeviceId> = report.forward_set.clone();
    if let Some(back) = &report.backward_set {
        peers.extend(back);
    }
    peers.remove(&index);

    let profile = ProfileKey::default();
    peers
        .into_iter()
        .map(|peer| {
            let t = trust.trust(index, peer, &profile, ctx.now);
            let tier = alert_tier(t, params);
            let message = match tier {
                AlertTier::Individual => Some(AlertMessage::Individual {
                    index_case: index,
                    exposure_start: ctx.exposure_window.0,
                    exposure_end: ctx.exposure_window.1,
                }),
                AlertTier::Locality => Some(AlertMessage::Locality {
                    zone: (ctx.zone_of)(peer),
                    day: ctx.day,
                }),
                AlertTier::NoAlert => None,
            };
            let envelope = message.as_ref().zip(tier.threshold(params)).map(|(m, theta)| {
                let body = serde_json::to_vec(m).expect("alert messages serialize");
                let plan = RevealPlan::deterministic(1, theta, theta, theta);
                let header = EnvelopeHeader::new(index, peer, ctx.now);
                encode(&body, &plan, &keys.issue(), header).expect("non-empty body, valid plan")
            });
            Alert {
                tick: ctx.now,
                sender: (tier != AlertTier::Locality).then_some(index),
                recipient: peer,
                tier,
                trust: t,
                message,
                envelope,
            }
        })
        .collect()
}
